#include "ancor/cli.hpp"

int main(int argc, char** argv) { return ancor::run_cli(argc, argv); }
