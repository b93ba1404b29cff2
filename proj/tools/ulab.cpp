#include <string>
#include <vector>

#include "ulab/cli.hpp"

int main(int argc, char** argv) {
  return ulab::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
