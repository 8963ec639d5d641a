#include "deltaworld/cli.hpp"

int main(int argc, char** argv) { return dw::run_cli(argc, argv); }
