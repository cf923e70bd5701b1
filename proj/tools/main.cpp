#include "cli.hpp"

int main(int argc, char** argv) { return morphscope::cli::run(argc, argv); }
