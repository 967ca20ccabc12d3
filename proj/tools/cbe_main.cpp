#include <iostream>
#include <string>
#include <vector>

#include "cbe/cli.hpp"

int main(int argc, char** argv)
{
    return cbe::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
