#include "cli.hpp"

int main(int argc, char** argv)
{
    return vithd::run_command(argc, argv);
}
