#include "pdon/evalcli/cli.hpp"

int main(int argc, char** argv) { return pdon::evalcli::cli_main(argc, argv); }
