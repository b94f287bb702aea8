#include "genboot/cli.hpp"

int main(int argc, char** argv) { return genboot::cli::run(argc, argv); }
