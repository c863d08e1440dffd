#include <benchmark/benchmark.h>

#include "sqtag/eval.hpp"
#include "sqtag/model.hpp"

using namespace sqtag;

namespace {

std::vector<Vector> inputs(Rng& rng, std::size_t length, std::size_t dim) {
  std::vector<Vector> out;
  for (std::size_t t = 0; t < length; ++t) out.push_back(uniform_vector(rng, dim, 1.0));
  return out;
}

Tagger default_tagger(std::size_t input, Rng& rng) {
  TaggerConfig c;
  c.input_dim = input;
  c.labels = {"O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "B-MISC", "I-MISC"};
  return init_params(c, rng);
}

}  // namespace

static void BM_LstmStep(benchmark::State& state) {
  const auto hidden = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  auto params = LstmCellParams::zeros(hidden, 300);
  for (std::size_t g = 0; g < kGateCount; ++g) {
    params.w[g] = uniform_matrix(rng, hidden, hidden, 0.1);
    params.u[g] = uniform_matrix(rng, hidden, 300, 0.1);
  }
  Vector x = uniform_vector(rng, 300, 1.0);
  LstmState s = LstmState::zeros(hidden);
  for (auto _ : state) {
    s = lstm_step(params, x, s);
    benchmark::DoNotOptimize(s.h);
  }
}
BENCHMARK(BM_LstmStep)->Arg(50)->Arg(100)->Arg(200);

// Inference over one sentence at the default shapes (2 Bi-LSTM layers, H=100).
static void BM_Infer(benchmark::State& state) {
  Rng rng(2);
  Tagger t = default_tagger(320, rng);
  auto xs = inputs(rng, static_cast<std::size_t>(state.range(0)), 320);
  for (auto _ : state) benchmark::DoNotOptimize(infer(t, xs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Infer)->Arg(10)->Arg(30)->Arg(132);

static void BM_LossAndGradients(benchmark::State& state) {
  Rng rng(3);
  Tagger t = default_tagger(320, rng);
  const auto length = static_cast<std::size_t>(state.range(0));
  auto xs = inputs(rng, length, 320);
  std::vector<std::size_t> gold(length, 0);
  auto masks = sample_dropout_masks(t.config, length, rng);
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradients(t, xs, gold, &masks));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGradients)->Arg(10)->Arg(30);

static void BM_Score(benchmark::State& state) {
  Rng rng(4);
  const std::vector<std::string> labels{"O", "O", "O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG"};
  std::vector<LabeledPair> pairs;
  for (int n = 0; n < 1000; ++n) {
    LabeledPair p;
    for (int t = 0; t < 25; ++t) {
      p.predicted.push_back(labels[rng.below(labels.size())]);
      p.gold.push_back("O");
    }
    p.gold = repair_iob(p.predicted);
    pairs.push_back(std::move(p));
  }
  for (auto _ : state) benchmark::DoNotOptimize(score_sequences(pairs));
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_Score);
BENCHMARK_MAIN();
