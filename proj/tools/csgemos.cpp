#include "csgemos/cli.hpp"

int main(int argc, char** argv) { return csgemos::cli::run(argc, argv); }
