#include "ripo/cli.hpp"

int main(int argc, char** argv) { return ripo::cli::run(argc, argv); }
