#include "cli.hpp"

int main(int argc, char** argv) { return tminfer::app::main_entry(argc, argv); }
