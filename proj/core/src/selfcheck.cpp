#include "sqtag/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace sqtag {

namespace {

std::string type_of(const std::string& label) { return label.size() > 2 ? label.substr(2) : std::string(); }

bool is(const std::string& label, char prefix, const std::string& type) {
  return label.size() > 2 && label[0] == prefix && label[1] == '-' && label.compare(2, std::string::npos, type) == 0;
}

bool is_phrase(std::span<const std::string> labels, std::size_t start, std::size_t end, const std::string& type,
               bool lenient) {
  bool opens = is(labels[start], 'B', type);
  if (!opens && lenient && is(labels[start], 'I', type)) {
    opens = start == 0 || !(is(labels[start - 1], 'B', type) || is(labels[start - 1], 'I', type));
  }
  if (!opens) return false;
  for (std::size_t k = start + 1; k <= end; ++k) {
    if (!is(labels[k], 'I', type)) return false;
  }
  return end + 1 == labels.size() || !is(labels[end + 1], 'I', type);
}

struct Triple {
  std::string type;
  std::size_t start, end;
  bool operator==(const Triple&) const = default;
};

std::vector<Triple> phrases(std::span<const std::string> labels, bool lenient) {
  std::vector<std::string> types;
  for (const auto& l : labels) {
    if (l != "O" && std::find(types.begin(), types.end(), type_of(l)) == types.end()) types.push_back(type_of(l));
  }
  std::vector<Triple> out;
  for (const auto& type : types) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      for (std::size_t j = i; j < labels.size(); ++j) {
        if (is_phrase(labels, i, j, type, lenient)) out.push_back({type, i, j});
      }
    }
  }
  return out;
}

}  // namespace

ScoreReport oracle_score(std::span<const LabeledPair> pairs) {
  ScoreReport report;
  for (const auto& pair : pairs) {
    auto gold = phrases(pair.gold, false);
    auto predicted = phrases(pair.predicted, true);
    for (const auto& g : gold) {
      ++report.per_type[g.type].gold;
      ++report.overall.gold;
      if (std::find(predicted.begin(), predicted.end(), g) != predicted.end()) {
        ++report.per_type[g.type].correct;
        ++report.overall.correct;
      }
    }
    for (const auto& p : predicted) {
      ++report.per_type[p.type].predicted;
      ++report.overall.predicted;
    }
    report.tokens += pair.gold.size();
    for (std::size_t i = 0; i < pair.gold.size(); ++i) {
      if (pair.gold[i] == pair.predicted[i]) ++report.correct_tokens;
    }
  }
  return report;
}

GradientCheck check_gradients(const Tagger& tagger, std::span<const Vector> inputs,
                              std::span<const std::size_t> gold, const DropoutMasks* masks, bool corrupt) {
  auto analytic = loss_and_gradients(tagger, inputs, gold, masks).gradients;
  std::vector<double> flat;
  analytic.for_each_block([&](std::span<const double> block) { flat.insert(flat.end(), block.begin(), block.end()); });
  if (corrupt && !flat.empty()) {
    auto largest = std::max_element(flat.begin(), flat.end(),
                                    [](double a, double b) { return std::abs(a) < std::abs(b); });
    *largest = *largest * 1.01 + 1e-3;
  }

  Tagger probe = tagger;
  std::vector<std::span<double>> blocks;
  probe.for_each_block([&](std::span<double> block) { blocks.push_back(block); });
  auto objective = [&] { return loss(probe, inputs, gold, masks); };

  GradientCheck result;
  std::size_t k = 0;
  for (auto block : blocks) {
    auto numeric = finite_diff_grad(objective, block);
    for (double n : numeric) {
      result.max_relative_error = std::max(result.max_relative_error, relative_error(flat[k++], n));
    }
  }
  result.parameters = k;
  return result;
}

Tagger gradient_probe_model(std::uint64_t seed, double dropout, CellKind cell) {
  TaggerConfig config;
  config.cell = cell;
  config.bidirectional = true;
  config.layers = 2;
  config.hidden = 8;
  config.dropout = dropout;
  config.labels = {"O", "B-PER", "I-PER", "B-LOC"};
  config.input_dim = 10;
  Rng rng(seed);
  Tagger tagger = init_params(config, rng);
  // Nonzero biases so their gradients are exercised away from the init point.
  tagger.for_each_block([&](std::span<double> block) {
    for (double& v : block) v += rng.uniform(-0.1, 0.1);
  });
  return tagger;
}

bool SelfCheckReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckOutcome& c) { return c.passed; });
}

std::string SelfCheckReport::render() const {
  std::ostringstream out;
  for (const auto& c : checks) out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
  char buf[96];
  std::snprintf(buf, sizeof buf, "worst relative gradient error: %.3e\n", worst_gradient_error);
  out << buf << (passed() ? "selfcheck passed\n" : "selfcheck FAILED\n");
  return out.str();
}

SelfCheckReport run_selfcheck(const SelfCheckOptions& options) {
  SelfCheckReport report;
  char buf[192];
  constexpr std::size_t kLength = 5;

  auto gradient_suite = [&](const std::string& name, double dropout) {
    auto started = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::size_t params = 0;
    for (std::size_t s = 0; s < options.gradient_seeds; ++s) {
      const std::uint64_t seed = options.seed * 1000003ULL + s;
      Tagger tagger = gradient_probe_model(seed, dropout);
      Rng rng(seed ^ 0xabcdefULL);
      std::vector<Vector> inputs;
      std::vector<std::size_t> gold;
      for (std::size_t t = 0; t < kLength; ++t) {
        inputs.push_back(uniform_vector(rng, tagger.config.input_dim, 1.0));
        gold.push_back(rng.below(tagger.config.labels.size()));
      }
      DropoutMasks masks;
      if (dropout > 0.0) masks = sample_dropout_masks(tagger.config, kLength, rng);
      auto check = check_gradients(tagger, inputs, gold, dropout > 0.0 ? &masks : nullptr,
                                   options.corrupt_gradient);
      worst = std::max(worst, check.max_relative_error);
      params = check.parameters;
    }
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report.worst_gradient_error = std::max(report.worst_gradient_error, worst);
    std::snprintf(buf, sizeof buf, "%zu seeds x %zu parameters, max relative error %.3e (limit %.0e), %.2fs",
                  options.gradient_seeds, params, worst, options.tolerance, seconds);
    report.checks.push_back({name, worst < options.tolerance, buf});
  };
  gradient_suite("gradient, dropout 0", 0.0);
  gradient_suite("gradient, fixed dropout mask", 0.5);

  // Scorer against the brute-force oracle.
  Rng rng(options.seed);
  const std::vector<std::string> types{"LOC", "MISC", "ORG", "PER"};
  std::vector<LabeledPair> pairs;
  for (std::size_t n = 0; n < options.scorer_pairs; ++n) {
    const std::size_t length = 1 + rng.below(12);
    LabeledPair pair;
    // Gold: valid IOB2 built phrase by phrase.
    while (pair.gold.size() < length) {
      if (rng.bernoulli(0.5)) {
        pair.gold.push_back("O");
        continue;
      }
      const std::string& type = types[rng.below(types.size())];
      std::size_t span = 1 + rng.below(3);
      pair.gold.push_back("B-" + type);
      for (std::size_t k = 1; k < span && pair.gold.size() < length; ++k) pair.gold.push_back("I-" + type);
    }
    // Predicted: arbitrary labels, including orphan I- tags.
    for (std::size_t i = 0; i < length; ++i) {
      std::size_t pick = rng.below(2 * types.size() + 1);
      if (pick == 0) {
        pair.predicted.push_back("O");
      } else {
        pair.predicted.push_back(std::string(pick % 2 ? "B-" : "I-") + types[(pick - 1) / 2]);
      }
    }
    pairs.push_back(std::move(pair));
  }
  std::size_t discrepancies = 0;
  for (const auto& pair : pairs) {
    std::span<const LabeledPair> one(&pair, 1);
    if (!(score_sequences(one) == oracle_score(one))) ++discrepancies;
  }
  bool aggregate_equal = score_sequences(pairs) == oracle_score(pairs);
  std::snprintf(buf, sizeof buf, "%zu random pairs, %zu discrepancies, aggregate %s", pairs.size(), discrepancies,
                aggregate_equal ? "identical" : "differs");
  report.checks.push_back({"scorer oracle", discrepancies == 0 && aggregate_equal, buf});
  return report;
}

}  // namespace sqtag
