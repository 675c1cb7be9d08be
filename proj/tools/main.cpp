#include <iostream>

#include "trajcoh/cli.hpp"

int main(int argc, char** argv) {
  return trajcoh::cli_dispatch(argc, argv, std::cout, std::cerr);
}
