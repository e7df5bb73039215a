#include "cloze/cli/commands.hpp"

int main(int argc, char** argv) { return cloze::cli::run(argc, argv); }
