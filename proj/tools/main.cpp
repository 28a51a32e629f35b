#include "dlqr/experiment.hpp"

int main(int argc, char** argv) { return dlqr::cli_main(argc, argv); }
