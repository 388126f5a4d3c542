#include "hybridcal/cli.hpp"

int main(int argc, char** argv) { return hycal::cli::dispatch(argc, argv); }
