#include "form2seq/cli.hpp"

int main(int argc, char** argv) { return form2seq::cli::run(argc, argv); }
