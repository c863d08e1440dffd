#include <doctest.h>

#include "sqtag/selfcheck.hpp"
#include "test_support.hpp"

using namespace sqtag;

TEST_SUITE("selfcheck") {
  TEST_CASE("a reduced self-check passes") {
    SelfCheckOptions options;
    options.gradient_seeds = 2;
    options.scorer_pairs = 200;
    auto report = run_selfcheck(options);
    CHECK(report.passed());
    CHECK(report.worst_gradient_error < 1e-4);
    auto text = report.render();
    CHECK(text.find("FAIL") == std::string::npos);
    CHECK(text.find("PASS") != std::string::npos);
  }

  TEST_CASE("a corrupted gradient makes it fail") {
    SelfCheckOptions options;
    options.gradient_seeds = 1;
    options.scorer_pairs = 50;
    options.corrupt_gradient = true;
    auto report = run_selfcheck(options);
    CHECK_FALSE(report.passed());
    CHECK(report.render().find("FAIL") != std::string::npos);
  }

  TEST_CASE("oracle score on a hand example") {
    std::vector<LabeledPair> pairs{{{"B-PER", "I-PER", "O"}, {"O", "I-PER", "O"}}};
    auto r = oracle_score(pairs);
    CHECK(r.overall.gold == 1);
    CHECK(r.overall.predicted == 1);
    CHECK(r.overall.correct == 0);
  }
}
