#include <string>
#include <vector>

#include "stormuq/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return stormuq::cli::run(args);
}
