#include "stochrob/harness.hpp"

int main(int argc, char** argv) { return stochrob::run_cli(argc, argv); }
