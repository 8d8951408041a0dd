#include "omm/cli.hpp"

int main(int argc, char** argv) { return omm::run_cli(argc, argv); }
