#include "conki/cli.hpp"

int main(int argc, char** argv) { return conki::cli_main(argc, argv); }
