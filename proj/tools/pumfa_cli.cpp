// pumfa — patch-based point cloud upsampling: data generation, training,
// inference, evaluation and attention dumps.

#include "pumfa/cli.hpp"

int main(int argc, char** argv) { return pumfa::run_cli(argc, argv); }
