#include "sqtag/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sqtag/error.hpp"

namespace sqtag {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_width(const Vector& v, std::size_t expected, const char* what) {
  if (v.size() != expected) {
    throw Error(ErrorCode::DimensionMismatch, std::string(what) + ": got width " + std::to_string(v.size()) +
                                                  ", expected " + std::to_string(expected));
  }
}

Vector affine(const Matrix& w, const Vector& h, const Matrix& u, const Vector& x, const Vector& b) {
  Vector a = b;
  matvec_into(a, w, h);
  matvec_into(a, u, x);
  return a;
}

void lstm_step_into(const LstmCellParams& p, const Vector& x, const Vector& h_prev, const Vector& c_prev,
                    LayerTrace::Step& s) {
  const std::size_t hidden = p.hidden();
  require_width(x, p.input(), "lstm_step input");
  require_width(h_prev, hidden, "lstm_step hidden state");
  require_width(c_prev, hidden, "lstm_step cell state");
  s.x = x;
  s.h_prev = h_prev;
  s.c_prev = c_prev;
  s.i = sigmoid(affine(p.w[kInputGate], h_prev, p.u[kInputGate], x, p.b[kInputGate]));
  s.f = sigmoid(affine(p.w[kForgetGate], h_prev, p.u[kForgetGate], x, p.b[kForgetGate]));
  s.g = tanh_elem(affine(p.w[kCellGate], h_prev, p.u[kCellGate], x, p.b[kCellGate]));
  s.c = Vector(hidden);
  for (std::size_t k = 0; k < hidden; ++k) s.c[k] = s.f[k] * c_prev[k] + s.i[k] * s.g[k];
  s.o = sigmoid(affine(p.w[kOutputGate], h_prev, p.u[kOutputGate], x, p.b[kOutputGate]));
  s.tanh_c = tanh_elem(s.c);
  s.h = hadamard(s.o, s.tanh_c);
}

void rnn_step_into(const RnnCellParams& p, const Vector& x, const Vector& h_prev, LayerTrace::Step& s) {
  require_width(x, p.input(), "rnn_step input");
  require_width(h_prev, p.hidden(), "rnn_step hidden state");
  s.x = x;
  s.h_prev = h_prev;
  s.h = tanh_elem(affine(p.w, h_prev, p.u, x, p.b));
}

void visit_cell_blocks(CellParams& cell, const std::function<void(std::span<double>)>& visit) {
  std::visit(overloaded{[&](LstmCellParams& p) {
                          for (std::size_t g = 0; g < kGateCount; ++g) {
                            visit(p.w[g].span());
                            visit(p.u[g].span());
                            visit(p.b[g].span());
                          }
                        },
                        [&](RnnCellParams& p) {
                          visit(p.w.span());
                          visit(p.u.span());
                          visit(p.b.span());
                        }},
             cell);
}

}  // namespace

std::string_view to_string(CellKind kind) { return kind == CellKind::Lstm ? "lstm" : "rnn"; }

std::optional<CellKind> parse_cell_kind(std::string_view name) {
  if (name == "lstm" || name == "LSTM") return CellKind::Lstm;
  if (name == "rnn" || name == "RNN") return CellKind::Rnn;
  return std::nullopt;
}

LstmCellParams LstmCellParams::zeros(std::size_t hidden, std::size_t input) {
  LstmCellParams p;
  for (std::size_t g = 0; g < kGateCount; ++g) {
    p.w[g] = Matrix(hidden, hidden);
    p.u[g] = Matrix(hidden, input);
    p.b[g] = Vector(hidden);
  }
  return p;
}

RnnCellParams RnnCellParams::zeros(std::size_t hidden, std::size_t input) {
  return {Matrix(hidden, hidden), Matrix(hidden, input), Vector(hidden)};
}

std::size_t hidden_size(const CellParams& cell) {
  return std::visit([](const auto& p) { return p.hidden(); }, cell);
}

std::size_t input_size(const CellParams& cell) {
  return std::visit([](const auto& p) { return p.input(); }, cell);
}

CellParams zeros_like(const CellParams& cell) {
  return std::visit(
      [](const auto& p) -> CellParams {
        return std::remove_cvref_t<decltype(p)>::zeros(p.hidden(), p.input());
      },
      cell);
}

LstmState lstm_step(const LstmCellParams& params, const Vector& x, const LstmState& prev) {
  LayerTrace::Step s;
  lstm_step_into(params, x, prev.h, prev.c, s);
  return {std::move(s.h), std::move(s.c)};
}

Vector rnn_step(const RnnCellParams& params, const Vector& x, const Vector& prev_h) {
  LayerTrace::Step s;
  rnn_step_into(params, x, prev_h, s);
  return std::move(s.h);
}

std::vector<Vector> LayerTrace::hidden() const {
  std::vector<Vector> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.h);
  return out;
}

LayerTrace run_layer_traced(const CellParams& params, std::span<const Vector> inputs, Direction direction) {
  if (inputs.empty()) throw Error(ErrorCode::EmptySequence, "run_layer: empty input sequence");
  const std::size_t length = inputs.size();
  const std::size_t hidden = hidden_size(params);
  LayerTrace trace;
  trace.direction = direction;
  trace.steps.resize(length);
  Vector h(hidden), c(hidden);
  for (std::size_t k = 0; k < length; ++k) {
    const std::size_t t = direction == Direction::Forward ? k : length - 1 - k;
    LayerTrace::Step& s = trace.steps[t];
    std::visit(overloaded{[&](const LstmCellParams& p) {
                            lstm_step_into(p, inputs[t], h, c, s);
                            c = s.c;
                          },
                          [&](const RnnCellParams& p) { rnn_step_into(p, inputs[t], h, s); }},
               params);
    h = s.h;
  }
  return trace;
}

std::vector<Vector> run_layer(const CellParams& params, std::span<const Vector> inputs, Direction direction) {
  return run_layer_traced(params, inputs, direction).hidden();
}

std::vector<Vector> backprop_layer(const CellParams& params, const LayerTrace& trace,
                                   std::span<const Vector> d_hidden, CellParams& grads) {
  const std::size_t length = trace.steps.size();
  if (d_hidden.size() != length) {
    throw Error(ErrorCode::DimensionMismatch, "backprop_layer: " + std::to_string(d_hidden.size()) +
                                                  " output gradients for " + std::to_string(length) + " steps");
  }
  const std::size_t hidden = hidden_size(params);
  std::vector<Vector> d_inputs(length);
  Vector dh_next(hidden), dc_next(hidden);

  for (std::size_t k = length; k-- > 0;) {
    const std::size_t t = trace.direction == Direction::Forward ? k : length - 1 - k;
    const LayerTrace::Step& s = trace.steps[t];
    Vector dh = add(d_hidden[t], dh_next);
    Vector dx(input_size(params));
    Vector dh_prev(hidden);

    std::visit(
        overloaded{
            [&](const LstmCellParams& p) {
              auto& gp = std::get<LstmCellParams>(grads);
              std::array<Vector, kGateCount> da;
              for (auto& v : da) v = Vector(hidden);
              Vector dc(hidden);
              for (std::size_t j = 0; j < hidden; ++j) {
                const double d_o = dh[j] * s.tanh_c[j];
                dc[j] = dc_next[j] + dh[j] * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
                const double d_i = dc[j] * s.g[j];
                const double d_f = dc[j] * s.c_prev[j];
                const double d_g = dc[j] * s.i[j];
                da[kInputGate][j] = d_i * s.i[j] * (1.0 - s.i[j]);
                da[kForgetGate][j] = d_f * s.f[j] * (1.0 - s.f[j]);
                da[kCellGate][j] = d_g * (1.0 - s.g[j] * s.g[j]);
                da[kOutputGate][j] = d_o * s.o[j] * (1.0 - s.o[j]);
                dc_next[j] = dc[j] * s.f[j];
              }
              for (std::size_t g = 0; g < kGateCount; ++g) {
                add_outer_into(gp.w[g], da[g], s.h_prev);
                add_outer_into(gp.u[g], da[g], s.x);
                add_into(gp.b[g], da[g]);
                matvec_transposed_into(dh_prev, p.w[g], da[g]);
                matvec_transposed_into(dx, p.u[g], da[g]);
              }
            },
            [&](const RnnCellParams& p) {
              auto& gp = std::get<RnnCellParams>(grads);
              Vector da(hidden);
              for (std::size_t j = 0; j < hidden; ++j) da[j] = dh[j] * (1.0 - s.h[j] * s.h[j]);
              add_outer_into(gp.w, da, s.h_prev);
              add_outer_into(gp.u, da, s.x);
              add_into(gp.b, da);
              matvec_transposed_into(dh_prev, p.w, da);
              matvec_transposed_into(dx, p.u, da);
            }},
        params);

    dh_next = std::move(dh_prev);
    d_inputs[t] = std::move(dx);
  }
  return d_inputs;
}

std::vector<Vector> run_bilayer(const CellParams& forward, const CellParams& backward,
                                std::span<const Vector> inputs) {
  std::vector<Vector> fwd = run_layer(forward, inputs, Direction::Forward);
  std::vector<Vector> bwd = run_layer(backward, inputs, Direction::Backward);
  std::vector<Vector> out;
  out.reserve(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) out.push_back(concat(fwd[t], bwd[t]));
  return out;
}

// --- tagger -------------------------------------------------------------

void TaggerConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::BadConfig, msg); };
  if (layers < 1) fail("layers must be >= 1");
  if (hidden < 1) fail("hidden size must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (labels.empty()) fail("label alphabet is empty");
  if (input_dim < 1) fail("input dim must be >= 1");
}

std::size_t TaggerConfig::label_index(std::string_view label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) {
    throw Error(ErrorCode::LabelOutOfRange, "label '" + std::string(label) + "' not in the model's alphabet");
  }
  return static_cast<std::size_t>(it - labels.begin());
}

void Tagger::for_each_block(const std::function<void(std::span<double>)>& visit) {
  for (auto& layer : layers) {
    for (auto& cell : layer.cells) visit_cell_blocks(cell, visit);
  }
  visit(projection.span());
  visit(projection_bias.span());
}

void Tagger::for_each_block(const std::function<void(std::span<const double>)>& visit) const {
  const_cast<Tagger*>(this)->for_each_block([&](std::span<double> block) { visit(block); });
}

std::size_t Tagger::parameter_count() const {
  std::size_t n = 0;
  for_each_block([&](std::span<const double> block) { n += block.size(); });
  return n;
}

Tagger zeros_like(const Tagger& tagger) {
  Tagger out;
  out.config = tagger.config;
  for (const auto& layer : tagger.layers) {
    LayerParams lp;
    for (const auto& cell : layer.cells) lp.cells.push_back(zeros_like(cell));
    out.layers.push_back(std::move(lp));
  }
  out.projection = Matrix(tagger.projection.rows(), tagger.projection.cols());
  out.projection_bias = Vector(tagger.projection_bias.size());
  return out;
}

namespace {

Tagger allocate(const TaggerConfig& config) {
  Tagger tagger;
  tagger.config = config;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t in = l == 0 ? config.input_dim : config.output_width();
    LayerParams layer;
    for (std::size_t d = 0; d < config.directions(); ++d) {
      if (config.cell == CellKind::Lstm) {
        layer.cells.emplace_back(LstmCellParams::zeros(config.hidden, in));
      } else {
        layer.cells.emplace_back(RnnCellParams::zeros(config.hidden, in));
      }
    }
    tagger.layers.push_back(std::move(layer));
  }
  tagger.projection = Matrix(config.labels.size(), config.output_width());
  tagger.projection_bias = Vector(config.labels.size());
  return tagger;
}

}  // namespace

Tagger init_params(const TaggerConfig& config, Rng& rng) {
  config.validate();
  Tagger tagger;
  tagger.config = config;
  const std::size_t hidden = config.hidden;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::size_t in = l == 0 ? config.input_dim : config.output_width();
    LayerParams layer;
    for (std::size_t d = 0; d < config.directions(); ++d) {
      if (config.cell == CellKind::Lstm) {
        LstmCellParams p;
        for (std::size_t g = 0; g < kGateCount; ++g) {
          p.w[g] = uniform_matrix(rng, hidden, hidden, embedding_bound(hidden));
          p.u[g] = uniform_matrix(rng, hidden, in, embedding_bound(in));
          p.b[g] = Vector(hidden, g == kForgetGate ? 1.0 : 0.0);
        }
        layer.cells.emplace_back(std::move(p));
      } else {
        RnnCellParams p;
        p.w = uniform_matrix(rng, hidden, hidden, embedding_bound(hidden));
        p.u = uniform_matrix(rng, hidden, in, embedding_bound(in));
        p.b = Vector(hidden);
        layer.cells.emplace_back(std::move(p));
      }
    }
    tagger.layers.push_back(std::move(layer));
  }
  const std::size_t width = config.output_width();
  tagger.projection = uniform_matrix(rng, config.labels.size(), width, embedding_bound(width));
  tagger.projection_bias = Vector(config.labels.size());
  return tagger;
}

DropoutMasks sample_dropout_masks(const TaggerConfig& config, std::size_t length, Rng& rng) {
  const double keep = 1.0 - config.dropout;
  DropoutMasks masks(config.layers);
  for (auto& layer : masks) {
    layer.reserve(length);
    for (std::size_t t = 0; t < length; ++t) {
      Vector m(config.output_width());
      for (double& v : m) v = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
      layer.push_back(std::move(m));
    }
  }
  return masks;
}

ForwardResult forward(const Tagger& tagger, std::span<const Vector> inputs, const DropoutMasks* masks) {
  const TaggerConfig& cfg = tagger.config;
  if (inputs.empty()) throw Error(ErrorCode::EmptySequence, "forward: empty sentence");
  for (const auto& x : inputs) require_width(x, cfg.input_dim, "forward input");
  if (masks && masks->size() != tagger.layers.size()) {
    throw Error(ErrorCode::DimensionMismatch, "forward: dropout masks for " + std::to_string(masks->size()) +
                                                  " layers, model has " + std::to_string(tagger.layers.size()));
  }
  const std::size_t length = inputs.size();
  ForwardResult result;
  result.layer_inputs.emplace_back(inputs.begin(), inputs.end());

  for (std::size_t l = 0; l < tagger.layers.size(); ++l) {
    const auto& layer = tagger.layers[l];
    const std::vector<Vector>& x = result.layer_inputs.back();
    std::vector<LayerTrace> traces;
    traces.push_back(run_layer_traced(layer.cells[0], x, Direction::Forward));
    if (layer.cells.size() > 1) traces.push_back(run_layer_traced(layer.cells[1], x, Direction::Backward));

    std::vector<Vector> out(length);
    for (std::size_t t = 0; t < length; ++t) {
      out[t] = traces.size() > 1 ? concat(traces[0].steps[t].h, traces[1].steps[t].h) : traces[0].steps[t].h;
      if (masks) out[t] = hadamard(out[t], (*masks)[l][t]);
    }
    result.traces.push_back(std::move(traces));
    result.layer_inputs.push_back(std::move(out));
  }

  const std::vector<Vector>& top = result.layer_inputs.back();
  result.probabilities.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    Vector logits = tagger.projection_bias;
    matvec_into(logits, tagger.projection, top[t]);
    result.probabilities.push_back(softmax(logits));
  }
  return result;
}

ForwardResult forward_train(const Tagger& tagger, std::span<const Vector> inputs, Rng& rng) {
  if (tagger.config.dropout == 0.0) return forward(tagger, inputs);
  DropoutMasks masks = sample_dropout_masks(tagger.config, inputs.size(), rng);
  return forward(tagger, inputs, &masks);
}

std::vector<Vector> infer(const Tagger& tagger, std::span<const Vector> inputs) {
  return forward(tagger, inputs).probabilities;
}

std::vector<std::size_t> predict(const Tagger& tagger, std::span<const Vector> inputs) {
  std::vector<std::size_t> out;
  for (const auto& p : infer(tagger, inputs)) {
    out.push_back(static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()));
  }
  return out;
}

std::vector<std::string> predict_labels(const Tagger& tagger, std::span<const Vector> inputs) {
  std::vector<std::string> labels;
  for (std::size_t idx : predict(tagger, inputs)) labels.push_back(tagger.config.labels[idx]);
  return labels;
}

namespace {

void check_gold(const Tagger& tagger, std::span<const Vector> inputs, std::span<const std::size_t> gold) {
  if (gold.size() != inputs.size()) {
    throw Error(ErrorCode::DimensionMismatch, "loss: " + std::to_string(gold.size()) + " labels for " +
                                                  std::to_string(inputs.size()) + " tokens");
  }
  const std::size_t num_labels = tagger.config.labels.size();
  for (std::size_t g : gold) {
    if (g >= num_labels) {
      throw Error(ErrorCode::LabelOutOfRange, "label index " + std::to_string(g) + " with " +
                                                  std::to_string(num_labels) + " labels");
    }
  }
}

}  // namespace

LossAndGradients loss_and_gradients(const Tagger& tagger, std::span<const Vector> inputs,
                                    std::span<const std::size_t> gold, const DropoutMasks* masks) {
  check_gold(tagger, inputs, gold);
  ForwardResult fr = forward(tagger, inputs, masks);
  const std::size_t length = inputs.size();
  const double inv_len = 1.0 / static_cast<double>(length);

  LossAndGradients out;
  out.gradients = zeros_like(tagger);
  Tagger& grads = out.gradients;

  const std::vector<Vector>& top = fr.layer_inputs.back();
  std::vector<Vector> d_x(length);
  for (std::size_t t = 0; t < length; ++t) {
    const Vector& p = fr.probabilities[t];
    out.loss -= std::log(p[gold[t]]) * inv_len;
    Vector d_logits = scale(p, inv_len);
    d_logits[gold[t]] -= inv_len;
    add_outer_into(grads.projection, d_logits, top[t]);
    add_into(grads.projection_bias, d_logits);
    d_x[t] = matvec_transposed(tagger.projection, d_logits);
  }

  const std::size_t hidden = tagger.config.hidden;
  for (std::size_t l = tagger.layers.size(); l-- > 0;) {
    const auto& layer = tagger.layers[l];
    const auto& traces = fr.traces[l];
    std::vector<Vector> d_fwd(length), d_bwd;
    if (layer.cells.size() > 1) d_bwd.resize(length);
    for (std::size_t t = 0; t < length; ++t) {
      if (masks) d_x[t] = hadamard(d_x[t], (*masks)[l][t]);
      d_fwd[t] = Vector(std::vector<double>(d_x[t].begin(), d_x[t].begin() + static_cast<std::ptrdiff_t>(hidden)));
      if (!d_bwd.empty()) {
        d_bwd[t] = Vector(std::vector<double>(d_x[t].begin() + static_cast<std::ptrdiff_t>(hidden), d_x[t].end()));
      }
    }
    std::vector<Vector> d_in = backprop_layer(layer.cells[0], traces[0], d_fwd, grads.layers[l].cells[0]);
    if (!d_bwd.empty()) {
      std::vector<Vector> d_in_b = backprop_layer(layer.cells[1], traces[1], d_bwd, grads.layers[l].cells[1]);
      for (std::size_t t = 0; t < length; ++t) add_into(d_in[t], d_in_b[t]);
    }
    d_x = std::move(d_in);
  }
  out.input_gradients = std::move(d_x);
  return out;
}

double loss(const Tagger& tagger, std::span<const Vector> inputs, std::span<const std::size_t> gold,
            const DropoutMasks* masks) {
  check_gold(tagger, inputs, gold);
  ForwardResult fr = forward(tagger, inputs, masks);
  double total = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) total -= std::log(fr.probabilities[t][gold[t]]);
  return total / static_cast<double>(inputs.size());
}

// --- container ----------------------------------------------------------

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr std::string_view kMagic = "SQTG";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::TruncatedFile, std::string("file ends inside ") + what + " (offset " +
                                                std::to_string(pos_) + ")");
    }
    std::string_view out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint64_t u64(const char* what) {
    auto b = take(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

nlohmann::json config_record(const ModelContainer& c) {
  const TaggerConfig& cfg = c.tagger.config;
  nlohmann::json j;
  j["labels"] = cfg.labels;
  j["input_dim"] = cfg.input_dim;
  j["hidden"] = cfg.hidden;
  j["layers"] = cfg.layers;
  j["cell"] = std::string(to_string(cfg.cell));
  j["bidirectional"] = cfg.bidirectional;
  j["dropout"] = cfg.dropout;
  j["attachment"] = nlohmann::json::parse(c.attachment_json);
  j["attachment_values"] = c.attachment_values.size();
  return j;
}

}  // namespace

std::string save_to_bytes(const ModelContainer& c) {
  std::string out(kMagic);
  put_u32(out, kContainerVersion);
  std::string record = config_record(c).dump();
  put_u64(out, record.size());
  out += record;
  c.tagger.for_each_block([&](std::span<const double> block) {
    for (double v : block) put_f64(out, v);
  });
  for (double v : c.attachment_values) put_f64(out, v);
  put_u64(out, fnv1a64(out));
  return out;
}

void save(const ModelContainer& container, std::ostream& out) {
  std::string bytes = save_to_bytes(container);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "failed writing model container");
}

void save(const Tagger& tagger, std::ostream& out) { save(ModelContainer{tagger, "{}", {}}, out); }

void save_file(const ModelContainer& container, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  save(container, out);
}

ModelContainer load_container(std::istream& in) {
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(bytes);
  if (r.take(kMagic.size(), "magic") != kMagic) throw Error(ErrorCode::BadMagic, "not a model container");
  std::uint32_t version = r.u32("version");
  if (version != kContainerVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "container version " + std::to_string(version) + ", supported " +
                                                   std::to_string(kContainerVersion));
  }
  std::uint64_t record_len = r.u64("config record length");
  std::string_view record = r.take(static_cast<std::size_t>(record_len), "config record");

  ModelContainer c;
  std::size_t attachment_count = 0;
  try {
    auto j = nlohmann::json::parse(record);
    TaggerConfig& cfg = c.tagger.config;
    cfg.labels = j.at("labels").get<std::vector<std::string>>();
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.hidden = j.at("hidden").get<std::size_t>();
    cfg.layers = j.at("layers").get<std::size_t>();
    auto cell = parse_cell_kind(j.at("cell").get<std::string>());
    if (!cell) throw Error(ErrorCode::BadConfig, "unknown cell kind");
    cfg.cell = *cell;
    cfg.bidirectional = j.at("bidirectional").get<bool>();
    cfg.dropout = j.at("dropout").get<double>();
    c.attachment_json = j.at("attachment").dump();
    attachment_count = j.at("attachment_values").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("config record: ") + e.what());
  }
  c.tagger.config.validate();

  // Shapes come from the config; values are filled in block order.
  c.tagger = allocate(c.tagger.config);
  c.tagger.for_each_block([&](std::span<double> block) {
    for (double& v : block) v = r.f64("parameter block");
  });
  if (attachment_count > r.remaining() / 8) {
    throw Error(ErrorCode::TruncatedFile, "file ends inside attachment values");
  }
  c.attachment_values.resize(attachment_count);
  for (double& v : c.attachment_values) v = r.f64("attachment values");

  const std::size_t checked = r.position();
  std::uint64_t checksum = r.u64("checksum");
  if (r.remaining() != 0) throw Error(ErrorCode::BadConfig, "trailing bytes after checksum");
  if (checksum != fnv1a64(std::string_view(bytes).substr(0, checked))) {
    throw Error(ErrorCode::ChecksumMismatch, "container checksum does not match its contents");
  }
  bool finite = true;
  c.tagger.for_each_block([&](std::span<const double> block) { finite = finite && all_finite(block); });
  if (!finite) throw Error(ErrorCode::BadConfig, "container holds non-finite parameters");
  return c;
}

Tagger load(std::istream& in) { return load_container(in).tagger; }

ModelContainer load_container_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open model '" + path + "'");
  try {
    return load_container(in);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace sqtag
