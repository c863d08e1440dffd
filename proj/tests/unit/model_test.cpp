#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sqtag/model.hpp"
#include "sqtag/selfcheck.hpp"
#include "test_support.hpp"

using namespace sqtag;
using namespace sqtag::testing;

namespace {

TaggerConfig small_config(std::size_t input = 6, std::size_t hidden = 5) {
  TaggerConfig c;
  c.hidden = hidden;
  c.input_dim = input;
  c.labels = {"O", "B-PER", "I-PER"};
  return c;
}

CellParams random_cell(CellKind kind, std::size_t hidden, std::size_t input, Rng& rng) {
  if (kind == CellKind::Lstm) {
    auto p = LstmCellParams::zeros(hidden, input);
    for (std::size_t g = 0; g < kGateCount; ++g) {
      p.w[g] = uniform_matrix(rng, hidden, hidden, 0.5);
      p.u[g] = uniform_matrix(rng, hidden, input, 0.5);
      p.b[g] = uniform_vector(rng, hidden, 0.5);
    }
    return p;
  }
  auto p = RnnCellParams::zeros(hidden, input);
  p.w = uniform_matrix(rng, hidden, hidden, 0.5);
  p.u = uniform_matrix(rng, hidden, input, 0.5);
  p.b = uniform_vector(rng, hidden, 0.5);
  return p;
}

std::string bytes_of(const Tagger& t) {
  std::ostringstream out;
  save(t, out);
  return out.str();
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("gate activations stay in range") {
    Rng rng(1);
    auto params = std::get<LstmCellParams>(random_cell(CellKind::Lstm, 6, 4, rng));
    auto inputs = random_inputs(rng, 12, 4);
    auto trace = run_layer_traced(params, inputs, Direction::Forward);
    for (const auto& s : trace.steps) {
      for (const Vector* gate : {&s.i, &s.f, &s.o}) {
        for (double v : *gate) {
          CHECK(v > 0.0);
          CHECK(v < 1.0);
        }
      }
      for (double v : s.h) CHECK(std::abs(v) < 1.0);
    }
  }

  TEST_CASE("single step from zero state is direction independent") {
    Rng rng(2);
    for (auto kind : {CellKind::Lstm, CellKind::Rnn}) {
      auto params = random_cell(kind, 4, 3, rng);
      auto inputs = random_inputs(rng, 1, 3);
      CHECK(run_layer(params, inputs, Direction::Forward) == run_layer(params, inputs, Direction::Backward));
    }
  }

  TEST_CASE("backward pass equals the reversed forward pass") {
    Rng rng(3);
    for (auto kind : {CellKind::Lstm, CellKind::Rnn}) {
      auto params = random_cell(kind, 5, 3, rng);
      auto inputs = random_inputs(rng, 9, 3);
      auto reversed = inputs;
      std::reverse(reversed.begin(), reversed.end());
      auto fwd_of_reversed = run_layer(params, reversed, Direction::Forward);
      std::reverse(fwd_of_reversed.begin(), fwd_of_reversed.end());
      CHECK(run_layer(params, inputs, Direction::Backward) == fwd_of_reversed);
    }
  }

  TEST_CASE("zero parameters give zero outputs") {
    auto params = CellParams(LstmCellParams::zeros(4, 3));
    Rng rng(4);
    for (const auto& h : run_layer(params, random_inputs(rng, 5, 3), Direction::Forward)) {
      CHECK(h == Vector(4));
    }
  }

  TEST_CASE("empty sequences are rejected") {
    auto params = CellParams(LstmCellParams::zeros(4, 3));
    std::vector<Vector> none;
    CHECK(error_code_of([&] { run_layer(params, none, Direction::Forward); }) == ErrorCode::EmptySequence);
    CHECK(error_code_of([&] { run_bilayer(params, params, none); }) == ErrorCode::EmptySequence);
  }

  TEST_CASE("bilayer is the concatenation of both directions") {
    Rng rng(5);
    auto fwd = random_cell(CellKind::Lstm, 4, 3, rng);
    auto bwd = random_cell(CellKind::Lstm, 4, 3, rng);
    auto inputs = random_inputs(rng, 7, 3);
    auto both = run_bilayer(fwd, bwd, inputs);
    auto f = run_layer(fwd, inputs, Direction::Forward);
    auto b = run_layer(bwd, inputs, Direction::Backward);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      CHECK(both[t].size() == 8);
      CHECK(both[t] == concat(f[t], b[t]));
    }
  }

  TEST_CASE("palindromic input with shared parameters mirrors the two directions") {
    Rng rng(6);
    auto params = random_cell(CellKind::Lstm, 4, 3, rng);
    auto half = random_inputs(rng, 3, 3);
    std::vector<Vector> inputs = half;
    inputs.push_back(uniform_vector(rng, 3, 1.0));
    inputs.insert(inputs.end(), half.rbegin(), half.rend());
    auto out = run_bilayer(params, params, inputs);
    const std::size_t n = inputs.size();
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t k = 0; k < 4; ++k) CHECK(out[t][k] == out[n - 1 - t][4 + k]);
    }
  }

  TEST_CASE("forward produces distributions; inference is deterministic") {
    Rng rng(7);
    Tagger tagger = init_params(small_config(), rng);
    auto inputs = random_inputs(rng, 6, 6);
    auto probs = infer(tagger, inputs);
    for (const auto& p : probs) {
      double sum = 0.0;
      for (double v : p) sum += v;
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    CHECK(infer(tagger, inputs) == probs);

    Tagger no_dropout = tagger;
    no_dropout.config.dropout = 0.0;
    Rng train_rng(1);
    CHECK(forward_train(no_dropout, inputs, train_rng).probabilities == infer(no_dropout, inputs));

    CHECK(error_code_of([&] { infer(tagger, random_inputs(rng, 2, 5)); }) == ErrorCode::DimensionMismatch);
  }

  TEST_CASE("uniform output costs ln L per token") {
    Rng rng(8);
    Tagger tagger = init_params(small_config(), rng);
    tagger.projection = Matrix(tagger.projection.rows(), tagger.projection.cols());
    tagger.projection_bias = Vector(tagger.projection_bias.size());
    auto inputs = random_inputs(rng, 4, 6);
    std::vector<std::size_t> gold{0, 1, 2, 0};
    CHECK(loss(tagger, inputs, gold) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }

  TEST_CASE("confident correct prediction has near-zero loss and gradient") {
    Rng rng(9);
    Tagger tagger = init_params(small_config(), rng);
    tagger.projection = Matrix(tagger.projection.rows(), tagger.projection.cols());
    tagger.projection_bias = Vector{40.0, 0.0, 0.0};
    auto inputs = random_inputs(rng, 3, 6);
    std::vector<std::size_t> gold{0, 0, 0};
    auto lg = loss_and_gradients(tagger, inputs, gold);
    CHECK(lg.loss < 1e-6);
    double largest = 0.0;
    lg.gradients.for_each_block([&](std::span<const double> b) {
      for (double g : b) largest = std::max(largest, std::abs(g));
    });
    CHECK(largest < 1e-6);
  }

  TEST_CASE("label indices are range checked") {
    Rng rng(10);
    Tagger tagger = init_params(small_config(), rng);
    auto inputs = random_inputs(rng, 2, 6);
    std::vector<std::size_t> gold{0, 3};
    CHECK(error_code_of([&] { loss(tagger, inputs, gold); }) == ErrorCode::LabelOutOfRange);
  }

  TEST_CASE("analytic gradients match central differences") {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
      Tagger tagger = gradient_probe_model(seed);
      Rng rng(seed);
      auto inputs = random_inputs(rng, 5, 10);
      std::vector<std::size_t> gold;
      for (int t = 0; t < 5; ++t) gold.push_back(rng.below(4));
      CHECK(check_gradients(tagger, inputs, gold).max_relative_error < 1e-4);

      auto masks = sample_dropout_masks(gradient_probe_model(seed, 0.5).config, 5, rng);
      CHECK(check_gradients(gradient_probe_model(seed, 0.5), inputs, gold, &masks).max_relative_error < 1e-4);
    }
  }

  TEST_CASE("gradients for other shapes: RNN cells, one direction, one layer") {
    Rng rng(14);
    for (auto kind : {CellKind::Rnn, CellKind::Lstm}) {
      TaggerConfig c = small_config(4, 3);
      c.cell = kind;
      c.bidirectional = false;
      c.layers = 1;
      c.dropout = 0.0;
      Tagger tagger = init_params(c, rng);
      auto inputs = random_inputs(rng, 4, 4);
      std::vector<std::size_t> gold{0, 1, 2, 1};
      CHECK(check_gradients(tagger, inputs, gold).max_relative_error < 1e-4);
    }
  }

  TEST_CASE("a corrupted gradient is caught") {
    Tagger tagger = gradient_probe_model(15);
    Rng rng(15);
    auto inputs = random_inputs(rng, 5, 10);
    std::vector<std::size_t> gold{0, 1, 2, 3, 0};
    CHECK(check_gradients(tagger, inputs, gold, nullptr, true).max_relative_error > 1e-4);
  }

  TEST_CASE("initialisation bounds and forget bias") {
    Rng a(16), b(16);
    TaggerConfig c = small_config(6, 5);
    Tagger t = init_params(c, a);
    CHECK(bytes_of(t) == bytes_of(init_params(c, b)));
    for (const auto& layer : t.layers) {
      for (const auto& cell : layer.cells) {
        const auto& p = std::get<LstmCellParams>(cell);
        const double w_bound = std::sqrt(3.0 / static_cast<double>(p.hidden()));
        const double u_bound = std::sqrt(3.0 / static_cast<double>(p.input()));
        for (std::size_t g = 0; g < kGateCount; ++g) {
          for (double v : p.w[g].span()) CHECK(std::abs(v) <= w_bound);
          for (double v : p.u[g].span()) CHECK(std::abs(v) <= u_bound);
          for (double v : p.b[g]) CHECK(v == (g == kForgetGate ? 1.0 : 0.0));
        }
      }
    }
    CHECK(t.layers[1].cells.size() == 2);
    CHECK(input_size(t.layers[1].cells[0]) == 10);
  }

  TEST_CASE("config validation") {
    TaggerConfig c = small_config();
    c.layers = 0;
    CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::BadConfig);
    c = small_config();
    c.dropout = 1.0;
    CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::BadConfig);
    c = small_config();
    c.labels.clear();
    CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::BadConfig);
  }

  TEST_CASE("inverted dropout preserves the expected activation") {
    Rng rng(17);
    TaggerConfig c = small_config(6, 8);
    c.dropout = 0.5;
    Tagger tagger = init_params(c, rng);
    auto inputs = random_inputs(rng, 1, 6);
    Vector h = run_bilayer(tagger.layers[0].cells[0], tagger.layers[0].cells[1], inputs)[0];
    Vector mean(h.size());
    const int n = 10000;
    for (int k = 0; k < n; ++k) {
      auto masks = sample_dropout_masks(c, 1, rng);
      add_into(mean, hadamard(masks[0][0], h));
    }
    mean = scale(mean, 1.0 / n);
    CHECK(l2_norm(sub(mean, h).span()) / l2_norm(h.span()) < 0.02);
  }

  TEST_CASE("save and load round-trip bit for bit") {
    Rng rng(18);
    TaggerConfig c = small_config();
    c.cell = CellKind::Rnn;
    c.bidirectional = false;
    c.layers = 3;
    Tagger t = init_params(c, rng);
    std::string bytes = bytes_of(t);
    std::istringstream in(bytes);
    Tagger back = load(in);
    CHECK(back.config == t.config);
    CHECK(bytes_of(back) == bytes);

    ModelContainer box{t, R"({"note":"x"})", {1.5, -2.0}};
    std::string boxed = save_to_bytes(box);
    std::istringstream bin(boxed);
    auto restored = load_container(bin);
    CHECK(restored.attachment_json == box.attachment_json);
    CHECK(restored.attachment_values == box.attachment_values);
  }

  TEST_CASE("corrupted containers fail with named errors") {
    Rng rng(19);
    std::string bytes = bytes_of(init_params(small_config(), rng));
    auto load_bytes = [](const std::string& b) {
      std::istringstream in(b);
      return load(in);
    };

    std::string magic = bytes;
    magic[0] = 'X';
    CHECK(error_code_of([&] { load_bytes(magic); }) == ErrorCode::BadMagic);

    std::string version = bytes;
    version[4] = 2;
    CHECK(error_code_of([&] { load_bytes(version); }) == ErrorCode::UnsupportedVersion);

    for (std::size_t cut : {std::size_t{2}, std::size_t{6}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
      CHECK(error_code_of([&] { load_bytes(bytes.substr(0, cut)); }) == ErrorCode::TruncatedFile);
    }

    std::string flipped = bytes;
    flipped[bytes.size() - 20] ^= 0x01;
    CHECK(error_code_of([&] { load_bytes(flipped); }) == ErrorCode::ChecksumMismatch);
  }
}
