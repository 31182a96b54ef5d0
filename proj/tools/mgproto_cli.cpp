#include "mgproto/cli.hpp"

int main(int argc, char** argv) { return mgproto::run_cli(argc, argv); }
