#include "ivddpc/cli.hpp"

int main(int argc, char** argv) { return ivddpc::run_cli(argc, argv); }
