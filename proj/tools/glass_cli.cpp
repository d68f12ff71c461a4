#include "glass/cli.hpp"

int main(int argc, char** argv) { return glass::cli::run(argc, argv); }
