#include "kuda/cli.hpp"

int main(int argc, char** argv) { return kuda::run(argc, argv); }
