#include <countbandit/cli_commands.hpp>

int main(int argc, char** argv) { return countbandit::cli::run_cli(argc, argv); }
