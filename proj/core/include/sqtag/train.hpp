#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sqtag/corpus.hpp"
#include "sqtag/eval.hpp"
#include "sqtag/features.hpp"
#include "sqtag/model.hpp"

namespace sqtag {

struct TrainConfig {
  double learning_rate = 0.05;
  double clip_norm = 5.0;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  bool shuffle = true;
  // Stop as soon as dev F1 reaches this value (0: never).
  double target_score = 0.0;
  // When set, every improving checkpoint is also written here.
  std::string checkpoint_path;

  void validate() const;
};

enum class StopReason { Patience, MaxEpochs, Target };
std::string_view to_string(StopReason reason);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_f1 = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_dev_f1 = 0.0;
  StopReason stop_reason = StopReason::MaxEpochs;

  /// `epoch<TAB>loss<TAB>dev_f1<TAB>seconds` lines and a `#` summary block.
  std::string render(bool include_timing = true) const;
  /// Equality over everything except wall-clock time.
  bool same_outcome(const TrainLog& other) const;
};

/// Global L2 norm over every gradient block.
double global_norm(const Tagger& gradients);

/// Rescales all blocks by max_norm / norm when the global norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_gradients(Tagger& gradients, double max_norm);

void sgd_update(Tagger& params, const Tagger& gradients, double learning_rate);

/// Tracks the best score and how long it has gone unimproved. Only a strict
/// improvement resets the patience counter.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when `score` is a new best.
  bool observe(std::size_t epoch, double score);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_score() const { return best_score_; }

 private:
  std::size_t patience_;
  std::size_t since_best_ = 0;
  std::size_t best_epoch_ = 0;
  double best_score_ = 0.0;
};

struct Example {
  std::vector<Vector> inputs;
  std::vector<std::size_t> gold;
};

using DevEvaluator = std::function<double(const Tagger&)>;
using EpochObserver = std::function<void(const EpochRecord&)>;

struct TrainResult {
  Tagger model;  // best checkpoint, not the last epoch
  TrainLog log;
};

/// Extra container content written with every checkpoint.
struct Attachment {
  std::string json = "{}";
  std::vector<double> values;
};

/// SGD over pre-assembled examples with global-norm clipping and early
/// stopping on `dev_score`.
TrainResult train_examples(Tagger init, std::span<const Example> train, const DevEvaluator& dev_score,
                           const TrainConfig& config, const EpochObserver& on_epoch = {},
                           const Attachment& attachment = {});

/// Assembles inputs with `features`, then trains with dev phrase F1 as the
/// selection metric.
TrainResult train(Tagger init, std::span<const Sentence> train_set, std::span<const Sentence> dev_set,
                  FeaturePipeline& features, const TrainConfig& config, const EpochObserver& on_epoch = {});

/// O followed by B-/I- pairs for every type, in sorted type order.
std::vector<std::string> label_alphabet(const std::set<std::string>& entity_types);

std::vector<Example> make_examples(std::span<const Sentence> sentences, FeaturePipeline& features,
                                   const TaggerConfig& config, Rng& oov_rng);

/// Predictions (repaired to valid IOB2) written into each token.
std::vector<Sentence> tag_sentences(const Tagger& tagger, FeaturePipeline& features,
                                    std::span<const Sentence> sentences, Rng& oov_rng);

/// A tagger together with the feature pipeline it was trained with.
struct TrainedModel {
  Tagger tagger;
  FeaturePipeline features;
};

ModelContainer bundle(const Tagger& tagger, const FeaturePipeline& features);
TrainedModel unbundle(const ModelContainer& container);
TrainedModel load_model_file(const std::string& path);

ScoreReport evaluate(const Tagger& tagger, FeaturePipeline& features, std::span<const Sentence> sentences,
                     Rng& oov_rng, const TypeFilter& types = std::nullopt);

// --- ablation harness -----------------------------------------------------

/// One row of an experiment table: a named deviation from the base setup.
struct RowSpec {
  std::string name;
  FeatureSet features;
  std::optional<EmbeddingMode> embedding_mode;
  std::optional<CellKind> cell;
  std::optional<bool> bidirectional;
  std::optional<std::size_t> layers;
  std::optional<std::size_t> hidden;
  std::optional<double> dropout;

  /// `NAME<TAB>key=value<TAB>...` with keys features, embedding-mode, cell,
  /// bidi, layers, hidden, dropout.
  static RowSpec parse(std::string_view line);
};

std::vector<RowSpec> parse_row_specs(std::istream& in);

/// table3 (embedding type), table4 (directionality), table5 (depth),
/// table6 (dropout) and table7 (feature sets). Throws BadConfig otherwise.
std::vector<RowSpec> preset_rows(std::string_view preset);

struct AblationSetup {
  TaggerConfig tagger;  // labels and input_dim are filled per row
  FeatureConfig features;
  TrainConfig train;
  std::span<const Sentence> train_set;
  std::span<const Sentence> dev_set;
  std::span<const Sentence> test_set;  // scored when non-empty, else dev
  const EmbeddingTable* pretrained = nullptr;
  RegexRuleSet rules;
  std::size_t jobs = 1;
  // When non-empty, each row's model is saved as <dir>/<row index>.sqtg.
  std::string model_dir;
};

struct AblationRow {
  std::string name;
  bool ok = false;
  std::string error;
  ScoreReport report;
  TrainLog log;
};

/// Trains one model per row with identical seeds. A failing row is recorded
/// and the remaining rows still run.
std::vector<AblationRow> ablate(const AblationSetup& setup, std::span<const RowSpec> rows);

std::string render_ablation_table(std::span<const AblationRow> rows);
std::string render_ablation_tsv(std::span<const AblationRow> rows);

}  // namespace sqtag
