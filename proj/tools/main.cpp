#include "tlpatch/cli.hpp"

int main(int argc, char** argv)
{
    return tlpatch::cli::run(argc, argv);
}
