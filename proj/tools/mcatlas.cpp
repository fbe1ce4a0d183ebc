#include "mcatlas/cli.hpp"

int main(int argc, char** argv)
{
    return mcatlas::cli::run(argc, argv);
}
