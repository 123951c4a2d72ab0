#include "ptuner/cli.hpp"

int main(int argc, char** argv) { return ptuner::cli::main_entry(argc, argv); }
