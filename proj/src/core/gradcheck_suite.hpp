#pragma once

#include <string>
#include <vector>

#include "core/gradcheck.hpp"

namespace efcn {

struct SuiteEntry {
  std::string op;
  int shapes = 0;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct SuiteReport {
  std::vector<SuiteEntry> entries;
  double tol = 1e-4;
  bool all_pass() const {
    for (const auto& e : entries)
      if (!e.pass) return false;
    return true;
  }
};

// Runs every differentiable op, plus the fused decoder chain, against central
// finite differences in double precision over randomized small shapes.
SuiteReport run_gradcheck_suite(int shapes_per_op = 20, double eps = 1e-5,
                                double tol = 1e-4, u64 seed = 20200822);

}  // namespace efcn
