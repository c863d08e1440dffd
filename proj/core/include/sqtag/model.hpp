#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sqtag/numerics.hpp"

namespace sqtag {

enum class CellKind { Lstm, Rnn };
enum class Direction { Forward, Backward };

std::string_view to_string(CellKind kind);
std::optional<CellKind> parse_cell_kind(std::string_view name);

/// Gate order used for every per-gate array below.
enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kCellGate = 2, kOutputGate = 3 };
inline constexpr std::size_t kGateCount = 4;

/// W: hidden -> gate (H x H), U: input -> gate (H x D), b: gate bias (H).
struct LstmCellParams {
  std::array<Matrix, kGateCount> w;
  std::array<Matrix, kGateCount> u;
  std::array<Vector, kGateCount> b;

  static LstmCellParams zeros(std::size_t hidden, std::size_t input);
  std::size_t hidden() const { return b[0].size(); }
  std::size_t input() const { return u[0].cols(); }
};

/// h_t = tanh(W h_{t-1} + U x_t + b)
struct RnnCellParams {
  Matrix w;
  Matrix u;
  Vector b;

  static RnnCellParams zeros(std::size_t hidden, std::size_t input);
  std::size_t hidden() const { return b.size(); }
  std::size_t input() const { return u.cols(); }
};

using CellParams = std::variant<LstmCellParams, RnnCellParams>;

std::size_t hidden_size(const CellParams& cell);
std::size_t input_size(const CellParams& cell);
CellParams zeros_like(const CellParams& cell);

struct LstmState {
  Vector h;
  Vector c;

  static LstmState zeros(std::size_t hidden) { return {Vector(hidden), Vector(hidden)}; }
};

/// One application of the gate equations:
///   i = sig(W_i h + U_i x + b_i), f = sig(W_f h + U_f x + b_f),
///   c' = f . c + i . tanh(W_c h + U_c x + b_c),
///   o = sig(W_o h + U_o x + b_o), h' = o . tanh(c').
LstmState lstm_step(const LstmCellParams& params, const Vector& x, const LstmState& prev);
Vector rnn_step(const RnnCellParams& params, const Vector& x, const Vector& prev_h);

/// Everything one layer pass remembers for backpropagation. Step records are
/// indexed by input position, whatever the processing direction.
struct LayerTrace {
  struct Step {
    Vector x, h_prev, c_prev;
    Vector i, f, g, o;  // LSTM gate activations (g = candidate)
    Vector c, tanh_c;
    Vector h;
  };
  Direction direction = Direction::Forward;
  std::vector<Step> steps;

  std::vector<Vector> hidden() const;
};

/// Runs a cell over a sequence from a zero state. Backward processing walks
/// t = T..1 and the result is re-aligned to input positions.
std::vector<Vector> run_layer(const CellParams& params, std::span<const Vector> inputs, Direction direction);
LayerTrace run_layer_traced(const CellParams& params, std::span<const Vector> inputs, Direction direction);

/// BPTT through one traced layer. `d_hidden[t]` is dLoss/dh_t from above.
/// Parameter gradients are accumulated into `grads`; the gradient with
/// respect to each input vector is returned.
std::vector<Vector> backprop_layer(const CellParams& params, const LayerTrace& trace,
                                   std::span<const Vector> d_hidden, CellParams& grads);

/// output[t] = concat(forward[t], backward[t]).
std::vector<Vector> run_bilayer(const CellParams& forward, const CellParams& backward,
                                std::span<const Vector> inputs);

struct TaggerConfig {
  CellKind cell = CellKind::Lstm;
  bool bidirectional = true;
  std::size_t layers = 2;
  std::size_t hidden = 100;
  double dropout = 0.5;
  std::vector<std::string> labels;
  std::size_t input_dim = 0;

  /// Throws BadConfig on an invalid combination.
  void validate() const;
  std::size_t directions() const { return bidirectional ? 2 : 1; }
  std::size_t output_width() const { return directions() * hidden; }
  std::size_t label_index(std::string_view label) const;

  friend bool operator==(const TaggerConfig&, const TaggerConfig&) = default;
};

struct LayerParams {
  // One entry per direction: [forward] or [forward, backward].
  std::vector<CellParams> cells;
};

/// Stacked (bi)recurrent layers with a per-token softmax projection.
/// The same type doubles as the gradient accumulator.
struct Tagger {
  TaggerConfig config;
  std::vector<LayerParams> layers;
  Matrix projection;  // |labels| x (k * H)
  Vector projection_bias;

  /// Visits every parameter block in the fixed serialization order.
  void for_each_block(const std::function<void(std::span<double>)>& visit);
  void for_each_block(const std::function<void(std::span<const double>)>& visit) const;
  std::size_t parameter_count() const;
};

Tagger zeros_like(const Tagger& tagger);

/// Weights ~ U[-sqrt(3/fan_in), +sqrt(3/fan_in)], biases zero except the
/// forget gate bias, which starts at 1.
Tagger init_params(const TaggerConfig& config, Rng& rng);

/// Inverted-dropout masks applied to the output of each layer: entries are
/// 0 or 1/keep. masks[layer][t] has width k * H.
using DropoutMasks = std::vector<std::vector<Vector>>;

DropoutMasks sample_dropout_masks(const TaggerConfig& config, std::size_t length, Rng& rng);

struct ForwardResult {
  std::vector<Vector> probabilities;
  // Cached activations for the backward pass.
  std::vector<std::vector<LayerTrace>> traces;  // [layer][direction]
  std::vector<std::vector<Vector>> layer_inputs;  // input sequence of each layer, then the projection input
};

/// Without masks the pass is the deterministic inference pass.
ForwardResult forward(const Tagger& tagger, std::span<const Vector> inputs,
                      const DropoutMasks* masks = nullptr);
ForwardResult forward_train(const Tagger& tagger, std::span<const Vector> inputs, Rng& rng);
std::vector<Vector> infer(const Tagger& tagger, std::span<const Vector> inputs);
/// Per-token argmax label indices.
std::vector<std::size_t> predict(const Tagger& tagger, std::span<const Vector> inputs);
std::vector<std::string> predict_labels(const Tagger& tagger, std::span<const Vector> inputs);

struct LossAndGradients {
  double loss = 0.0;  // mean per-token cross-entropy
  Tagger gradients;
  std::vector<Vector> input_gradients;
};

LossAndGradients loss_and_gradients(const Tagger& tagger, std::span<const Vector> inputs,
                                    std::span<const std::size_t> gold,
                                    const DropoutMasks* masks = nullptr);
double loss(const Tagger& tagger, std::span<const Vector> inputs, std::span<const std::size_t> gold,
            const DropoutMasks* masks = nullptr);

// --- container file -----------------------------------------------------
//
// "SQTG" | u32 version | u64 length + UTF-8 JSON config record |
// parameter blocks (f64 LE, Tagger::for_each_block order) |
// attachment values (f64 LE, count given in the record) | u64 FNV-1a checksum.

inline constexpr std::uint32_t kContainerVersion = 1;

struct ModelContainer {
  Tagger tagger;
  // Opaque JSON object stored inside the config record, e.g. the feature
  // pipeline, plus its numeric payload.
  std::string attachment_json = "{}";
  std::vector<double> attachment_values;
};

void save(const ModelContainer& container, std::ostream& out);
void save(const Tagger& tagger, std::ostream& out);
std::string save_to_bytes(const ModelContainer& container);
ModelContainer load_container(std::istream& in);
Tagger load(std::istream& in);
ModelContainer load_container_file(const std::string& path);
void save_file(const ModelContainer& container, const std::string& path);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace sqtag
