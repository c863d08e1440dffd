#include <doctest.h>

#include <cmath>
#include <sstream>

#include "sqtag/selfcheck.hpp"
#include "sqtag/train.hpp"
#include "test_support.hpp"

using namespace sqtag;
using namespace sqtag::testing;

namespace {

std::string bytes_of(const Tagger& t) {
  std::ostringstream out;
  save(t, out);
  return out.str();
}

TaggerConfig tiny_config(std::size_t input) {
  TaggerConfig c;
  c.hidden = 6;
  c.layers = 1;
  c.dropout = 0.0;
  c.input_dim = input;
  c.labels = {"O", "B-PER", "I-PER"};
  return c;
}

std::vector<Example> random_examples(Rng& rng, std::size_t count, std::size_t dim) {
  std::vector<Example> out;
  for (std::size_t n = 0; n < count; ++n) {
    Example ex;
    std::size_t len = 2 + rng.below(4);
    ex.inputs = random_inputs(rng, len, dim);
    for (std::size_t t = 0; t < len; ++t) ex.gold.push_back(rng.below(2));
    out.push_back(ex);
  }
  return out;
}

// Twenty sentences where every name is a fixed word, so the tags follow from
// word identity alone.
std::vector<Sentence> deterministic_corpus() {
  const std::vector<std::string> names{"An", "Bình", "Cường", "Dũng", "Hà"};
  const std::vector<std::string> fillers{"ăn", "đi", "học", "ngủ"};
  std::vector<Sentence> out;
  for (std::size_t n = 0; n < 20; ++n) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({fillers[n % 4], "V", "B-VP", "O"});
    rows.push_back({names[n % 5], "Np", "B-NP", "B-PER"});
    if (n % 3 == 0) rows.push_back({"Văn", "Np", "I-NP", "I-PER"});
    rows.push_back({fillers[(n + 1) % 4], "V", "B-VP", "O"});
    out.push_back(make_sentence(rows));
  }
  return out;
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("early stopping follows the stated rule") {
    EarlyStopping s(1);
    CHECK(s.observe(1, 50.0));
    CHECK_FALSE(s.should_stop());
    CHECK(s.observe(2, 60.0));
    CHECK_FALSE(s.observe(3, 55.0));
    CHECK(s.should_stop());
    CHECK(s.best_epoch() == 2);

    EarlyStopping ties(2);
    ties.observe(1, 10.0);
    CHECK_FALSE(ties.observe(2, 10.0));
    CHECK_FALSE(ties.observe(3, 10.0));
    CHECK(ties.should_stop());
    CHECK(ties.best_epoch() == 1);
  }

  TEST_CASE("training returns the best checkpoint, not the last") {
    Rng rng(1);
    auto examples = random_examples(rng, 4, 3);
    Tagger init = init_params(tiny_config(3), rng);
    const double scripted[] = {50.0, 60.0, 55.0};
    std::vector<std::string> seen;
    DevEvaluator dev = [&](const Tagger& t) {
      seen.push_back(bytes_of(t));
      return scripted[seen.size() - 1];
    };
    TrainConfig config;
    config.patience = 1;
    auto result = train_examples(init, examples, dev, config);
    CHECK(result.log.epochs.size() == 3);
    CHECK(result.log.best_epoch == 2);
    CHECK(result.log.best_dev_f1 == 60.0);
    CHECK(result.log.stop_reason == StopReason::Patience);
    REQUIRE(seen.size() == 3);
    CHECK(bytes_of(result.model) == seen[1]);
    CHECK(bytes_of(result.model) != seen[2]);
  }

  TEST_CASE("max epochs is a stop reason too") {
    Rng rng(2);
    auto examples = random_examples(rng, 2, 3);
    TrainConfig config;
    config.max_epochs = 3;
    std::size_t calls = 0;
    auto result = train_examples(init_params(tiny_config(3), rng), examples,
                                 [&](const Tagger&) { return static_cast<double>(++calls); }, config);
    CHECK(result.log.stop_reason == StopReason::MaxEpochs);
    CHECK(result.log.best_epoch == 3);
  }

  TEST_CASE("clipping rescales without turning the gradient") {
    Tagger g = gradient_probe_model(3);
    Tagger original = g;
    g.for_each_block([](std::span<double> b) {
      for (double& x : b) x *= 40.0;
    });
    Tagger before = g;
    double norm = clip_gradients(g, 5.0);
    CHECK(norm > 5.0);
    CHECK(global_norm(g) == doctest::Approx(5.0).epsilon(1e-12));

    std::vector<double> a, b;
    before.for_each_block([&](std::span<const double> s) { a.insert(a.end(), s.begin(), s.end()); });
    g.for_each_block([&](std::span<const double> s) { b.insert(b.end(), s.begin(), s.end()); });
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    CHECK(std::abs(ab / std::sqrt(aa * bb) - 1.0) < 1e-12);

    // Below the threshold nothing changes.
    Tagger small = original;
    small.for_each_block([](std::span<double> s) {
      for (double& x : s) x *= 1e-6;
    });
    Tagger copy = small;
    clip_gradients(small, 5.0);
    CHECK(bytes_of(small) == bytes_of(copy));
  }

  TEST_CASE("a small SGD step lowers the loss") {
    int lowered = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
      Tagger t = gradient_probe_model(100 + trial);
      Rng rng(trial);
      auto inputs = random_inputs(rng, 4, 10);
      std::vector<std::size_t> gold;
      for (int i = 0; i < 4; ++i) gold.push_back(rng.below(4));
      auto lg = loss_and_gradients(t, inputs, gold);
      sgd_update(t, lg.gradients, 1e-4);
      if (loss(t, inputs, gold) < lg.loss) ++lowered;
    }
    CHECK(lowered >= 95);
  }

  TEST_CASE("same seed, same data, same model and log") {
    Rng data_rng(4);
    auto examples = random_examples(data_rng, 6, 3);
    Rng init_rng(5);
    TaggerConfig c = tiny_config(3);
    c.dropout = 0.5;
    Tagger init = init_params(c, init_rng);
    TrainConfig config;
    config.max_epochs = 4;
    config.seed = 7;
    DevEvaluator dev = [&](const Tagger& t) {
      double total = 0.0;
      for (const auto& ex : examples) total += loss(t, ex.inputs, ex.gold);
      return -total;
    };
    auto a = train_examples(init, examples, dev, config);
    auto b = train_examples(init, examples, dev, config);
    CHECK(bytes_of(a.model) == bytes_of(b.model));
    CHECK(a.log.same_outcome(b.log));
    CHECK(a.log.render(false) == b.log.render(false));

    config.seed = 8;
    auto c2 = train_examples(init, examples, dev, config);
    CHECK(bytes_of(c2.model) != bytes_of(a.model));
  }

  TEST_CASE("non-finite loss aborts with coordinates") {
    Rng rng(6);
    auto examples = random_examples(rng, 3, 3);
    TrainConfig config;
    config.learning_rate = 1e300;
    config.max_epochs = 5;
    auto run = [&] { train_examples(init_params(tiny_config(3), rng), examples, [](const Tagger&) { return 0.0; }, config); };
    CHECK(error_code_of(run) == ErrorCode::NonFiniteLoss);
    CHECK(error_message_of(run).find("epoch ") != std::string::npos);
    CHECK(error_message_of(run).find("sentence ") != std::string::npos);
  }

  TEST_CASE("bad input is rejected up front") {
    Rng rng(7);
    std::vector<Example> none;
    auto dev = [](const Tagger&) { return 0.0; };
    CHECK(error_code_of([&] { train_examples(init_params(tiny_config(3), rng), none, dev, TrainConfig{}); }) ==
          ErrorCode::EmptyCorpus);
    TrainConfig bad;
    bad.patience = 0;
    auto some = random_examples(rng, 1, 3);
    CHECK(error_code_of([&] { train_examples(init_params(tiny_config(3), rng), some, dev, bad); }) ==
          ErrorCode::BadConfig);
  }

  TEST_CASE("log rendering") {
    TrainLog log;
    log.epochs = {{1, 1.5, 40.0, 0.25}, {2, 0.75, 62.5, 0.5}};
    log.best_epoch = 2;
    log.best_dev_f1 = 62.5;
    log.stop_reason = StopReason::MaxEpochs;
    CHECK(log.render() ==
          "epoch\tloss\tdev_f1\tseconds\n"
          "1\t1.500000\t40.00\t0.250\n"
          "2\t0.750000\t62.50\t0.500\n"
          "# epochs=2 best_epoch=2 best_dev_f1=62.50 stop_reason=max_epochs\n");
    TrainLog other = log;
    other.epochs[0].seconds = 9.0;
    CHECK(log.same_outcome(other));
    other.epochs[0].dev_f1 = 41.0;
    CHECK_FALSE(log.same_outcome(other));
  }

  TEST_CASE("label alphabet") {
    CHECK(label_alphabet({"PER", "LOC"}) == std::vector<std::string>{"O", "B-LOC", "I-LOC", "B-PER", "I-PER"});
  }

  TEST_CASE("a small deterministic corpus is learned exactly") {
    auto corpus = deterministic_corpus();
    FeatureConfig fc;
    fc.mode = EmbeddingMode::OneHot;
    Rng rng(1);
    auto pipeline = FeaturePipeline::build(fc, corpus, nullptr, {}, rng);
    TaggerConfig c;
    c.hidden = 10;
    c.layers = 1;
    c.dropout = 0.0;
    c.labels = label_alphabet({"PER"});
    c.input_dim = pipeline.input_dim();
    TrainConfig config;
    config.max_epochs = 200;
    config.patience = 200;
    config.learning_rate = 0.1;
    std::size_t first_perfect = 0;
    auto result = train(init_params(c, rng), corpus, corpus, pipeline, config, [&](const EpochRecord& e) {
      if (!first_perfect && e.dev_f1 == 100.0) first_perfect = e.epoch;
    });
    CHECK(first_perfect > 0);
    CHECK(first_perfect <= 200);
    CHECK(result.log.best_dev_f1 == 100.0);
    Rng eval_rng(2);
    CHECK(evaluate(result.model, pipeline, corpus, eval_rng).overall.f1() == 100.0);
  }

  TEST_CASE("model bundles carry their feature pipeline") {
    auto corpus = deterministic_corpus();
    FeatureConfig fc;
    fc.features = FeatureSet::parse("word,pos,case");
    fc.word_dim = 8;
    Rng rng(3);
    auto pipeline = FeaturePipeline::build(fc, corpus, nullptr, {}, rng);
    TaggerConfig c = tiny_config(pipeline.input_dim());
    c.labels = label_alphabet({"PER"});
    Tagger t = init_params(c, rng);
    auto restored = unbundle(bundle(t, pipeline));
    Rng r1(4), r2(4);
    CHECK(restored.features.assemble(corpus[0], r1) == pipeline.assemble(corpus[0], r2));

    auto box = bundle(t, pipeline);
    box.tagger.config.input_dim += 1;
    auto msg = error_message_of([&] { unbundle(box); });
    CHECK(msg.find(std::to_string(pipeline.input_dim())) != std::string::npos);
    CHECK(msg.find(std::to_string(pipeline.input_dim() + 1)) != std::string::npos);
  }

  TEST_CASE("row specs") {
    auto r = RowSpec::parse("Uni RNN\tcell=rnn\tbidi=false\tlayers=1\thidden=20\tdropout=0.25\tfeatures=word,chunk");
    CHECK(r.name == "Uni RNN");
    CHECK(*r.cell == CellKind::Rnn);
    CHECK(*r.bidirectional == false);
    CHECK(*r.layers == 1);
    CHECK(*r.hidden == 20);
    CHECK(*r.dropout == 0.25);
    CHECK(r.features.chunk);
    CHECK_FALSE(r.embedding_mode);

    CHECK(error_code_of([] { RowSpec::parse("x\tcolour=red"); }) == ErrorCode::BadConfig);
    CHECK(error_code_of([] { RowSpec::parse("x\tlayers=two"); }) == ErrorCode::BadConfig);
    CHECK(error_code_of([] { RowSpec::parse("x\tbidi"); }) == ErrorCode::BadConfig);

    std::istringstream file("# comment\n\nA\tfeatures=word\nB\tfeatures=word,pos\n");
    CHECK(parse_row_specs(file).size() == 2);
    std::istringstream empty("# nothing\n");
    CHECK(error_code_of([&] { parse_row_specs(empty); }) == ErrorCode::BadConfig);
    std::istringstream bad("A\n\nB\tcell=gru\n");
    CHECK(error_message_of([&] { parse_row_specs(bad); }).find("line 3") != std::string::npos);
  }

  TEST_CASE("presets") {
    CHECK(preset_rows("table3").size() == 3);
    CHECK(preset_rows("table4").size() == 2);
    CHECK(preset_rows("table5").size() == 2);
    CHECK(preset_rows("table6").size() == 2);
    auto t7 = preset_rows("table7");
    REQUIRE(t7.size() == 7);
    CHECK(t7.back().name == "Word+POS+Chunk+Regex");
    CHECK(t7.back().features.to_string() == "word,pos,chunk,regex");
    CHECK(error_code_of([] { preset_rows("table9"); }) == ErrorCode::BadConfig);
  }

  TEST_CASE("a failing ablation row does not stop the others") {
    auto corpus = deterministic_corpus();
    AblationSetup setup;
    setup.tagger.hidden = 4;
    setup.tagger.layers = 1;
    setup.features.word_dim = 6;
    setup.train.max_epochs = 2;
    setup.train_set = corpus;
    setup.dev_set = corpus;
    setup.jobs = 2;
    std::vector<RowSpec> rows{RowSpec::parse("ok\tfeatures=word"), RowSpec::parse("broken\thidden=0"),
                              RowSpec::parse("also ok\tfeatures=word,case")};
    auto results = ablate(setup, rows);
    REQUIRE(results.size() == 3);
    CHECK(results[0].ok);
    CHECK_FALSE(results[1].ok);
    CHECK(results[1].error.find("BadConfig") != std::string::npos);
    CHECK(results[2].ok);
    auto table = render_ablation_table(results);
    CHECK(table.find("broken") != std::string::npos);
    CHECK(table.find("failed") != std::string::npos);
    auto tsv = render_ablation_tsv(results);
    CHECK(tsv.find("also ok\tALL") != std::string::npos);

    // Rows are independent of scheduling.
    setup.jobs = 1;
    auto serial = ablate(setup, rows);
    CHECK(serial[0].report == results[0].report);
    CHECK(serial[2].report == results[2].report);
  }
}
