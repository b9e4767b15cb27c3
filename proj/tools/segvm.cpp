#include "segvm_cli.hpp"

int main(int argc, char** argv) { return segvm::cli::run(argc, argv); }
