#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sqtag/eval.hpp"
#include "sqtag/model.hpp"

namespace sqtag {

/// Brute-force phrase scoring: every (type, start, end) triple is tested
/// against the label pattern directly, with no left-to-right span builder.
/// Gold is read strictly, predictions leniently (an orphan I- opens a phrase).
ScoreReport oracle_score(std::span<const LabeledPair> pairs);

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t parameters = 0;
};

/// Compares loss_and_gradients against central differences for every
/// parameter of `tagger`. `corrupt` perturbs one analytic entry first.
GradientCheck check_gradients(const Tagger& tagger, std::span<const Vector> inputs,
                              std::span<const std::size_t> gold, const DropoutMasks* masks = nullptr,
                              bool corrupt = false);

struct SelfCheckOptions {
  std::uint64_t seed = 1;
  std::size_t gradient_seeds = 20;
  std::size_t scorer_pairs = 1000;
  double tolerance = 1e-4;
  bool corrupt_gradient = false;  // negative-control hook
};

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct SelfCheckReport {
  std::vector<CheckOutcome> checks;
  double worst_gradient_error = 0.0;

  bool passed() const;
  std::string render() const;
};

SelfCheckReport run_selfcheck(const SelfCheckOptions& options = {});

/// Small random tagger used by the gradient suite: 2-layer Bi-LSTM, H=8,
/// D=10, 4 labels.
Tagger gradient_probe_model(std::uint64_t seed, double dropout = 0.0, CellKind cell = CellKind::Lstm);

}  // namespace sqtag
