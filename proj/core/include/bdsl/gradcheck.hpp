#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bdsl/tape.hpp"

namespace bdsl {

using LossBuilder = std::function<Var(TapeF64&)>;

/// Central finite differences with step h = 1e-5 * max(1, |x|) against the
/// tape's analytic gradient, for every element of every parameter.
/// Returns max over parameters of ||analytic - numeric|| / max(||analytic|| +
/// ||numeric||, 1e-12). `analytic_scale` multiplies the analytic gradient (a
/// value other than 1 simulates a broken backward rule).
double gradient_relative_error(const LossBuilder& loss,
                               std::span<BasicParameter<double>* const> params,
                               double analytic_scale = 1.0);

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::size_t seeds = 5;
  double tolerance = 1e-4;
  /// Layer kind whose analytic gradient is deliberately corrupted.
  std::string fault_layer;
};

struct GradCheckCase {
  std::string layer;
  std::string shape;
  std::uint64_t seed = 0;
  double relative_error = 0;
};

struct GradCheckLayer {
  std::string layer;
  std::size_t cases = 0;
  double max_relative_error = 0;
  bool passed = false;
};

struct GradCheckReport {
  double tolerance = 0;
  std::vector<GradCheckCase> cases;
  std::vector<GradCheckLayer> layers;

  bool passed() const;
};

/// Layer kinds covered by run_gradcheck, in report order.
const std::vector<std::string>& gradcheck_layers();

/// Every layer kind and tape primitive, >= 3 shapes x `seeds` seeds each, in f64.
GradCheckReport run_gradcheck(const GradCheckOptions& options);

}  // namespace bdsl
