#include "bodysim/cli.hpp"

int main(int argc, char** argv) { return bodysim::run_cli(argc, argv); }
