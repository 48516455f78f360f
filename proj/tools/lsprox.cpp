#include <string>
#include <vector>

#include "lsprox/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return lsprox::cli::run_cli(args);
}
