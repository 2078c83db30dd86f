#include "emgal/cli.hpp"

int main(int argc, char** argv) { return emgal::cli::run(argc, argv); }
