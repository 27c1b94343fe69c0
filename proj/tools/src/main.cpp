#include <string>
#include <vector>

#include "flowplan/cli.hpp"

int main(int argc, char** argv) {
  return flowplan::cli::run(std::vector<std::string>(argv, argv + argc));
}
