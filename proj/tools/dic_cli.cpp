#include "dic_cli.hpp"

int main(int argc, char** argv) { return dic::cli::parse_and_run(argc, argv); }
