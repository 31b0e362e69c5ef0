#include "facial_basis/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return facial_basis::cli::run(args);
}
