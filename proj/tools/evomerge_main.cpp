#include <string>
#include <vector>

#include "evomerge/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return evomerge::cli::run(args);
}
