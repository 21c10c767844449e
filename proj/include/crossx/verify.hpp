#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

namespace crossx {

struct CheckResult {
  std::string name;
  std::string metric;  // what `observed` measures
  double observed = 0;
  double tolerance = 0;
  bool passed = false;
};

struct SuiteReport {
  std::vector<CheckResult> checks;
  double seconds = 0;

  bool passed() const;
  std::vector<std::string> failures() const;
};

/// Finite-difference checks (double precision, h = 1e-5, five seeds each) of
/// every differentiable op, the blocks, the composed losses and the full
/// objective on a two-sample toy model. Tolerance: relative error 1e-4.
SuiteReport run_gradcheck_suite();

/// Brute-force equivalence checks: pair-sum correlation, per-row KL, naive
/// convolution, matmul, pooling, upsampling, batch norm and gating, plus the
/// closed-form loss values.
SuiteReport run_oracle_suite();

/// Fixed-width table, one line per check, then a summary line.
void print_report(std::ostream& os, const std::string& title, const SuiteReport& report);

}  // namespace crossx
