// Runs the overfit experiment and writes its summary as JSON.
#include <cstdlib>
#include <iostream>

#include "exposura/fileio.hpp"
#include "overfit.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: overfit_pilot <out.json> [steps]\n";
    return 1;
  }
  const int steps = argc > 2 ? std::atoi(argv[2]) : 2000;
  const auto r = exposura::testing::run_overfit(steps);
  exposura::write_file_atomic(argv[1], r.to_json());
  std::cout << r.to_json();
  return 0;
}
