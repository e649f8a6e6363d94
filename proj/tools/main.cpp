#include "rkbf/cli_app.hpp"

int main(int argc, char** argv) { return rkbf::run_cli(argc, argv); }
