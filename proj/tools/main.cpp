#include "rtfseg/cli.hpp"

int main(int argc, char** argv) { return rtfseg::run_cli(argc, argv); }
