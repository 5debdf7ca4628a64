// SPDX-License-Identifier: Apache-2.0
#include <string>
#include <vector>

#include "i2c2w/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return i2c2w::dispatch(args);
}
