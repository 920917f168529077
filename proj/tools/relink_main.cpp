#include "relink/cli.hpp"

int main(int argc, char** argv) { return relink::run_cli(argc, argv); }
