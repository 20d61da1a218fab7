#include "bino/commands.hpp"

int main(int argc, char** argv) { return bino::run_cli(argc, argv); }
