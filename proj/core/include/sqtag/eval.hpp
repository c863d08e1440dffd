#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sqtag/corpus.hpp"

namespace sqtag {

/// Harmonic mean of two percentages; 0 when both are 0.
double f1(double precision, double recall);

struct TypeScore {
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t correct = 0;

  // Percentages in full precision; rounding happens only when rendering.
  double precision() const;
  double recall() const;
  double f1() const;

  friend bool operator==(const TypeScore&, const TypeScore&) = default;
};

struct ScoreReport {
  std::map<std::string, TypeScore> per_type;
  TypeScore overall;
  std::size_t tokens = 0;
  std::size_t correct_tokens = 0;

  /// Auxiliary token-level accuracy in percent.
  double token_accuracy() const;

  friend bool operator==(const ScoreReport&, const ScoreReport&) = default;
};

using TypeFilter = std::optional<std::set<std::string>>;

/// Exact (type, start, end) matching of phrases. Predictions must already be
/// valid IOB2 (run repair_iob on raw model output). When a filter is given,
/// entities of other types are treated as O on both sides.
ScoreReport score(std::span<const Sentence> sentences, const TypeFilter& types = std::nullopt);

struct LabeledPair {
  LabelSequence gold;
  LabelSequence predicted;
};

ScoreReport score_sequences(std::span<const LabeledPair> pairs, const TypeFilter& types = std::nullopt);

/// conlleval-style text: summary lines, then one row per type (sorted) and
/// an ALL row; percentages with two decimals.
std::string render(const ScoreReport& report);

/// Reads the conlleval convention: gold label in the second-to-last column,
/// prediction in the last. Gold is validated strictly (in `scheme`), the
/// predictions are repaired.
std::vector<Sentence> read_conlleval(std::istream& in, Scheme scheme = Scheme::Iob2,
                                     const std::string& source_name = "<input>");

TypeFilter parse_type_filter(const std::string& comma_list);

}  // namespace sqtag
