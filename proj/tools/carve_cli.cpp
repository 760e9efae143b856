#include "carve/cli.hpp"

int main(int argc, char** argv) { return carve::run_cli(argc, argv); }
