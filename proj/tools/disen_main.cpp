#include "disen/cli.hpp"

int main(int argc, char** argv) { return disen::run_cli(argc, argv); }
