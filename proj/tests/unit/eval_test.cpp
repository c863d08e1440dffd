#include <doctest.h>

#include <cmath>
#include <sstream>

#include "sqtag/eval.hpp"
#include "sqtag/selfcheck.hpp"
#include "test_support.hpp"

using namespace sqtag;
using namespace sqtag::testing;

namespace {

// Independent span scorer: spans from the test-side oracle, matched by
// nested loops rather than sorted intersection.
struct Counts {
  std::size_t gold = 0, predicted = 0, correct = 0;
};

Counts naive_counts(const std::vector<LabeledPair>& pairs) {
  Counts c;
  for (const auto& p : pairs) {
    auto gold = oracle_spans(p.gold);
    auto predicted = oracle_spans(repair_iob(p.predicted));
    c.gold += gold.size();
    c.predicted += predicted.size();
    for (const auto& g : gold) {
      for (const auto& q : predicted) {
        if (g.entity_type == q.entity_type && g.start == q.start && g.end == q.end) ++c.correct;
      }
    }
  }
  return c;
}

LabelSequence random_valid(Rng& rng, std::size_t len, const std::vector<std::string>& types) {
  LabelSequence out;
  for (std::size_t i = 0; i < len; ++i) {
    std::size_t r = rng.below(3);
    if (r == 0 || (r == 2 && (out.empty() || out.back() == "O"))) {
      out.push_back("O");
    } else if (r == 1) {
      out.push_back("B-" + types[rng.below(types.size())]);
    } else {
      out.push_back("I-" + out.back().substr(2));
    }
  }
  return out;
}

LabelSequence random_any(Rng& rng, std::size_t len, const std::vector<std::string>& types) {
  LabelSequence out;
  for (std::size_t i = 0; i < len; ++i) {
    std::size_t r = rng.below(2 * types.size() + 1);
    if (r == 0) {
      out.push_back("O");
    } else {
      out.push_back(std::string(r % 2 ? "B-" : "I-") + types[(r - 1) / 2]);
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("reference precision/recall pairs give the expected F1") {
    CHECK(std::abs(f1(91.09, 93.03) - 92.05) <= 0.01);
    CHECK(std::abs(f1(75.88, 72.26) - 74.02) <= 0.01);
    CHECK(f1(0.0, 0.0) == 0.0);
    CHECK(f1(50.0, 50.0) == 50.0);
  }

  TEST_CASE("perfect predictions score 100") {
    std::vector<LabeledPair> pairs{{{"B-PER", "I-PER", "O", "B-LOC"}, {"B-PER", "I-PER", "O", "B-LOC"}}};
    auto r = score_sequences(pairs);
    CHECK(r.overall.f1() == 100.0);
    CHECK(r.overall.precision() == 100.0);
    CHECK(r.token_accuracy() == 100.0);
    CHECK(r.per_type.at("PER").gold == 1);
  }

  TEST_CASE("boundary errors get no partial credit") {
    std::vector<LabeledPair> pairs{{{"B-ORG", "I-ORG", "I-ORG"}, {"B-ORG", "I-ORG", "O"}}};
    auto r = score_sequences(pairs);
    CHECK(r.overall.correct == 0);
    CHECK(r.overall.f1() == 0.0);
    CHECK(r.token_accuracy() == doctest::Approx(200.0 / 3.0));
  }

  TEST_CASE("type filter treats other types as O") {
    std::vector<LabeledPair> pairs{{{"B-PER", "O", "B-MISC"}, {"B-PER", "O", "O"}}};
    CHECK(score_sequences(pairs).overall.recall() == 50.0);
    auto filtered = score_sequences(pairs, parse_type_filter("PER,LOC,ORG"));
    CHECK(filtered.overall.recall() == 100.0);
    CHECK(filtered.per_type.count("MISC") == 0);
    CHECK(parse_type_filter("PER, LOC")->count("LOC") == 1);
  }

  TEST_CASE("random pairs agree with two independent oracles") {
    const std::vector<std::string> types{"PER", "LOC", "ORG", "MISC"};
    Rng rng(2016);
    std::vector<LabeledPair> pairs;
    for (int n = 0; n < 1000; ++n) {
      std::size_t len = 1 + rng.below(12);
      pairs.push_back({random_valid(rng, len, types), random_any(rng, len, types)});
    }
    auto report = score_sequences(pairs);
    CHECK(report == oracle_score(pairs));
    auto naive = naive_counts(pairs);
    CHECK(report.overall.gold == naive.gold);
    CHECK(report.overall.predicted == naive.predicted);
    CHECK(report.overall.correct == naive.correct);
  }

  TEST_CASE("swapping gold and predicted swaps precision and recall") {
    const std::vector<std::string> types{"PER", "LOC"};
    Rng rng(9);
    std::vector<LabeledPair> pairs, swapped;
    for (int n = 0; n < 200; ++n) {
      std::size_t len = 1 + rng.below(8);
      LabeledPair p{random_valid(rng, len, types), random_valid(rng, len, types)};
      pairs.push_back(p);
      swapped.push_back({p.predicted, p.gold});
    }
    auto a = score_sequences(pairs).overall;
    auto b = score_sequences(swapped).overall;
    CHECK(a.precision() == b.recall());
    CHECK(a.recall() == b.precision());
    CHECK(a.f1() == doctest::Approx(b.f1()).epsilon(1e-15));
  }

  TEST_CASE("conlleval input") {
    std::istringstream ok("a N B-PER B-PER\nb N I-PER I-PER\n\nc N O I-LOC\n");
    auto s = read_conlleval(ok);
    REQUIRE(s.size() == 2);
    CHECK(*s[1].tokens[0].predicted_label == "B-LOC");  // repaired
    CHECK(score(s).overall.precision() == 50.0);

    std::istringstream short_line("a B-PER\n");
    auto msg = error_message_of([&] { read_conlleval(short_line, Scheme::Iob2, "pred.txt"); });
    CHECK(msg.find("pred.txt:1") != std::string::npos);

    std::istringstream bad_gold("a N O O\nb N I-PER O\n");
    CHECK(error_code_of([&] { read_conlleval(bad_gold); }) == ErrorCode::InvalidSequence);

    std::istringstream bad_label("a N O Q-PER\n");
    CHECK(error_message_of([&] { read_conlleval(bad_label); }).find("<input>:1") != std::string::npos);
  }

  TEST_CASE("rendered report") {
    std::vector<LabeledPair> pairs{{{"B-PER", "O", "B-LOC"}, {"B-PER", "O", "B-PER"}}};
    auto text = render(score_sequences(pairs));
    CHECK(text.find("processed 3 tokens with 2 phrases; found: 2 phrases; correct: 1.") != std::string::npos);
    CHECK(text.find("FB1:  50.00") != std::string::npos);
    CHECK(text.find("ALL") != std::string::npos);
    CHECK(text.find("LOC") < text.find("PER"));
  }
}
