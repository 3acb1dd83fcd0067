#include "loomsched/cli.hpp"

int main(int argc, char** argv) { return loomsched::run_cli(argc, argv); }
