#include "attnpop/cli.hpp"

int main(int argc, char** argv) { return attnpop::cli::dispatch(argc, argv, std::cout, std::cerr); }
