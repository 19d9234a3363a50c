#include "lowdens/cli.hpp"

int main(int argc, char** argv) { return lowdens::run_cli(argc, argv); }
