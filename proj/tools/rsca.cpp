#include "rsca/cli.hpp"

int main(int argc, char** argv) { return rsca::run_cli(argc, argv); }
