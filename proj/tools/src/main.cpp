#include "roslac/cli/app.hpp"

int main(int argc, char** argv) { return roslac::cli::main(argc, argv); }
