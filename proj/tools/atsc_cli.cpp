#include "atsc/evalcli.hpp"

int main(int argc, char** argv) { return atsc::run_cli(argc, argv); }
