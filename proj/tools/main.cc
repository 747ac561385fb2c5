#include <iostream>

#include "maskfuse/cli.h"

int main(int argc, char** argv) { return maskfuse::RunCli(argc, argv, std::cout, std::cerr); }
