#include "vibefuse/pipeline.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return vibefuse::pipeline::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
