#include "cli.hpp"

int main(int argc, char** argv) { return msnn::cli::run(argc, argv); }
