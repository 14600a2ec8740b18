#include "llmfs/cli.hpp"

int main(int argc, char** argv) { return llmfs::run_cli(argc, argv); }
