#include "hyperbert/cli.hpp"

int main(int argc, char** argv) { return hyperbert::run_cli(argc, argv); }
