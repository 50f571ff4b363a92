#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hds/image_io.hpp"

namespace hds {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string expected;
  std::string actual;
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool passed() const;
  int failures() const;
  void append(const std::vector<CheckResult>& more);
};

/// Central-difference checks of every differentiable op in double precision.
/// Inputs are drawn away from kinks so both sides of each difference share
/// one linear piece.
std::vector<CheckResult> op_gradient_checks(std::uint64_t seed, double tolerance = 1e-4);

/// Gradient of the complete objective (both heads, deep supervision, weight
/// decay, dropout with a fixed stream) on a two-level double model.
std::vector<CheckResult> objective_gradient_checks(std::uint64_t seed, double tolerance = 1e-5);

/// 45 main-stream 3x3 convolutions for the paper preset, cls maps of 4x3 and
/// 8x4, full-resolution seg outputs, and agreement of inferred shapes with a
/// real forward pass.
std::vector<CheckResult> shape_checks(std::uint64_t seed);

/// Hand-evaluated MIL costs and per-step reassembly of the total.
std::vector<CheckResult> loss_checks(std::uint64_t seed);

/// LR and eta schedules against closed-form tables at the schedule boundaries.
std::vector<CheckResult> schedule_checks();

/// DSC, SE and FPI on every pair of 3x3 masks, AUC on 20-point score sets,
/// each against a brute-force reimplementation.
std::vector<CheckResult> metric_oracle_checks(std::uint64_t seed, double tolerance = 1e-12);

/// Everything above.
VerifyReport run_verify(std::uint64_t seed);

namespace oracle {
double dsc(const Mask& pred, const Mask& gt);
double sensitivity(const Mask& pred, const Mask& gt);
/// Flood fill from each unvisited predicted pixel.
int false_positive_components(const Mask& pred, const Mask& gt);
/// Average over all positive/negative pairs.
double auc(std::span<const double> scores, std::span<const int> labels);
}  // namespace oracle

}  // namespace hds
