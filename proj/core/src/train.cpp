#include "sqtag/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>
#include <thread>

#include "sqtag/error.hpp"

namespace sqtag {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::BadConfig, "learning rate must be positive");
  }
  if (!(clip_norm > 0.0)) throw Error(ErrorCode::BadConfig, "clip norm must be positive");
  if (max_epochs == 0) throw Error(ErrorCode::BadConfig, "max epochs must be at least 1");
  if (patience == 0) throw Error(ErrorCode::BadConfig, "patience must be at least 1");
}

std::string_view to_string(StopReason reason) {
  switch (reason) {
    case StopReason::Patience:
      return "patience";
    case StopReason::Target:
      return "target";
    case StopReason::MaxEpochs:
      break;
  }
  return "max_epochs";
}

std::string TrainLog::render(bool include_timing) const {
  std::ostringstream out;
  char buf[160];
  out << (include_timing ? "epoch\tloss\tdev_f1\tseconds\n" : "epoch\tloss\tdev_f1\n");
  for (const auto& e : epochs) {
    if (include_timing) {
      std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.2f\t%.3f\n", e.epoch, e.train_loss, e.dev_f1, e.seconds);
    } else {
      std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.2f\n", e.epoch, e.train_loss, e.dev_f1);
    }
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "# epochs=%zu best_epoch=%zu best_dev_f1=%.2f stop_reason=%s\n", epochs.size(),
                best_epoch, best_dev_f1, std::string(to_string(stop_reason)).c_str());
  out << buf;
  return out.str();
}

bool TrainLog::same_outcome(const TrainLog& other) const {
  if (epochs.size() != other.epochs.size() || best_epoch != other.best_epoch ||
      best_dev_f1 != other.best_dev_f1 || stop_reason != other.stop_reason) {
    return false;
  }
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = other.epochs[i];
    if (a.epoch != b.epoch || a.train_loss != b.train_loss || a.dev_f1 != b.dev_f1) return false;
  }
  return true;
}

double global_norm(const Tagger& gradients) {
  double sum = 0.0;
  gradients.for_each_block([&](std::span<const double> block) {
    for (double g : block) sum += g * g;
  });
  return std::sqrt(sum);
}

double clip_gradients(Tagger& gradients, double max_norm) {
  double norm = global_norm(gradients);
  if (norm > max_norm) {
    double factor = max_norm / norm;
    gradients.for_each_block([&](std::span<double> block) {
      for (double& g : block) g *= factor;
    });
  }
  return norm;
}

void sgd_update(Tagger& params, const Tagger& gradients, double learning_rate) {
  std::vector<std::span<const double>> grad_blocks;
  gradients.for_each_block([&](std::span<const double> block) { grad_blocks.push_back(block); });
  std::size_t k = 0;
  params.for_each_block([&](std::span<double> block) {
    if (k >= grad_blocks.size() || grad_blocks[k].size() != block.size()) {
      throw Error(ErrorCode::DimensionMismatch, "gradient layout does not match the parameters");
    }
    const auto& g = grad_blocks[k++];
    for (std::size_t i = 0; i < block.size(); ++i) block[i] -= learning_rate * g[i];
  });
}

bool EarlyStopping::observe(std::size_t epoch, double score) {
  // The first epoch always sets the baseline, whatever its score.
  if (best_epoch_ == 0 || score > best_score_) {
    best_score_ = score;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

TrainResult train_examples(Tagger init, std::span<const Example> train, const DevEvaluator& dev_score,
                           const TrainConfig& config, const EpochObserver& on_epoch,
                           const Attachment& attachment) {
  config.validate();
  init.config.validate();
  if (train.empty()) throw Error(ErrorCode::EmptyCorpus, "no training sentences");

  Rng rng(config.seed);
  Tagger params = std::move(init);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result{params, {}};
  std::string best_bytes;
  EarlyStopping stopping(config.patience);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    auto started = std::chrono::steady_clock::now();
    if (config.shuffle) shuffle_in_place(order, rng);

    double loss_sum = 0.0;
    for (std::size_t n = 0; n < order.size(); ++n) {
      const Example& ex = train[order[n]];
      DropoutMasks masks;
      const DropoutMasks* mask_ptr = nullptr;
      if (params.config.dropout > 0.0) {
        masks = sample_dropout_masks(params.config, ex.inputs.size(), rng);
        mask_ptr = &masks;
      }
      auto lg = loss_and_gradients(params, ex.inputs, ex.gold, mask_ptr);
      double norm = global_norm(lg.gradients);
      if (!std::isfinite(lg.loss) || !std::isfinite(norm)) {
        throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", sentence " +
                                                  std::to_string(order[n]) + " (step " + std::to_string(n + 1) +
                                                  ")");
      }
      clip_gradients(lg.gradients, config.clip_norm);
      sgd_update(params, lg.gradients, config.learning_rate);
      loss_sum += lg.loss;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(order.size());
    record.dev_f1 = dev_score(params);
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.epochs.push_back(record);

    if (stopping.observe(epoch, record.dev_f1)) {
      best_bytes = save_to_bytes(ModelContainer{params, attachment.json, attachment.values});
      if (!config.checkpoint_path.empty()) {
        std::ofstream out(config.checkpoint_path, std::ios::binary);
        if (!out) throw Error(ErrorCode::Io, "cannot write checkpoint " + config.checkpoint_path);
        out << best_bytes;
      }
    }
    if (on_epoch) on_epoch(record);
    if (config.target_score > 0.0 && record.dev_f1 >= config.target_score) {
      result.log.stop_reason = StopReason::Target;
      break;
    }
    if (stopping.should_stop()) {
      result.log.stop_reason = StopReason::Patience;
      break;
    }
  }

  result.log.best_epoch = stopping.best_epoch();
  result.log.best_dev_f1 = stopping.best_score();
  std::istringstream in(best_bytes);
  result.model = load(in);
  return result;
}

std::vector<std::string> label_alphabet(const std::set<std::string>& entity_types) {
  std::vector<std::string> labels{"O"};
  for (const auto& type : entity_types) {
    labels.push_back("B-" + type);
    labels.push_back("I-" + type);
  }
  return labels;
}

std::vector<Example> make_examples(std::span<const Sentence> sentences, FeaturePipeline& features,
                                   const TaggerConfig& config, Rng& oov_rng) {
  std::vector<Example> examples;
  examples.reserve(sentences.size());
  for (const auto& sentence : sentences) {
    if (sentence.tokens.empty()) continue;
    Example ex;
    ex.inputs = features.assemble(sentence, oov_rng);
    for (const auto& label : sentence.gold_labels()) ex.gold.push_back(config.label_index(label));
    examples.push_back(std::move(ex));
  }
  return examples;
}

namespace {

std::vector<LabeledPair> predict_pairs(const Tagger& tagger, std::span<const std::vector<Vector>> inputs,
                                       std::span<const Sentence> sentences) {
  std::vector<LabeledPair> pairs;
  pairs.reserve(inputs.size());
  std::size_t k = 0;
  for (const auto& sentence : sentences) {
    if (sentence.tokens.empty()) continue;
    auto raw = predict_labels(tagger, inputs[k++]);
    pairs.push_back({sentence.gold_labels(), repair_iob(raw)});
  }
  return pairs;
}

}  // namespace

TrainResult train(Tagger init, std::span<const Sentence> train_set, std::span<const Sentence> dev_set,
                  FeaturePipeline& features, const TrainConfig& config, const EpochObserver& on_epoch) {
  Rng oov_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  auto examples = make_examples(train_set, features, init.config, oov_rng);

  std::vector<std::vector<Vector>> dev_inputs;
  for (const auto& sentence : dev_set) {
    if (!sentence.tokens.empty()) dev_inputs.push_back(features.assemble(sentence, oov_rng));
  }
  DevEvaluator dev_score = [&](const Tagger& tagger) {
    auto pairs = predict_pairs(tagger, dev_inputs, dev_set);
    return score_sequences(pairs).overall.f1();
  };
  Attachment attachment{features.metadata_json(), features.payload()};
  return train_examples(std::move(init), examples, dev_score, config, on_epoch, attachment);
}

std::vector<Sentence> tag_sentences(const Tagger& tagger, FeaturePipeline& features,
                                    std::span<const Sentence> sentences, Rng& oov_rng) {
  std::vector<Sentence> out(sentences.begin(), sentences.end());
  for (auto& sentence : out) {
    if (sentence.tokens.empty()) continue;
    auto labels = repair_iob(predict_labels(tagger, features.assemble(sentence, oov_rng)));
    for (std::size_t i = 0; i < labels.size(); ++i) sentence.tokens[i].predicted_label = labels[i];
  }
  return out;
}

ModelContainer bundle(const Tagger& tagger, const FeaturePipeline& features) {
  return ModelContainer{tagger, features.metadata_json(), features.payload()};
}

TrainedModel unbundle(const ModelContainer& container) {
  auto features = FeaturePipeline::from_metadata(container.attachment_json, container.attachment_values);
  if (features.input_dim() != container.tagger.config.input_dim) {
    throw Error(ErrorCode::BadConfig, "feature pipeline width " + std::to_string(features.input_dim()) +
                                          " does not match model input " +
                                          std::to_string(container.tagger.config.input_dim));
  }
  return TrainedModel{container.tagger, std::move(features)};
}

TrainedModel load_model_file(const std::string& path) { return unbundle(load_container_file(path)); }

ScoreReport evaluate(const Tagger& tagger, FeaturePipeline& features, std::span<const Sentence> sentences,
                     Rng& oov_rng, const TypeFilter& types) {
  auto tagged = tag_sentences(tagger, features, sentences, oov_rng);
  return score(tagged, types);
}

// --- ablation -------------------------------------------------------------

namespace {

std::size_t parse_count(std::string_view key, const std::string& value) {
  try {
    std::size_t used = 0;
    unsigned long v = std::stoul(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::BadConfig, "row spec: " + std::string(key) + " expects an integer, got '" + value + "'");
}

double parse_real(std::string_view key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::BadConfig, "row spec: " + std::string(key) + " expects a number, got '" + value + "'");
}

RowSpec row(std::string name, const char* features) {
  RowSpec r;
  r.name = std::move(name);
  r.features = FeatureSet::parse(features);
  return r;
}

}  // namespace

RowSpec RowSpec::parse(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (start <= line.size()) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) tab = line.size();
    fields.emplace_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  if (fields.empty() || fields[0].empty()) throw Error(ErrorCode::BadConfig, "row spec without a name");

  RowSpec spec;
  spec.name = fields[0];
  spec.features = FeatureSet::parse("word");
  for (std::size_t i = 1; i < fields.size(); ++i) {
    const std::string& field = fields[i];
    if (field.empty()) continue;
    auto eq = field.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::BadConfig, "row spec field '" + field + "' lacks '='");
    std::string key = field.substr(0, eq);
    std::string value = field.substr(eq + 1);
    if (key == "features") {
      spec.features = FeatureSet::parse(value);
    } else if (key == "embedding-mode") {
      auto mode = parse_embedding_mode(value);
      if (!mode) throw Error(ErrorCode::BadConfig, "row spec: unknown embedding mode '" + value + "'");
      spec.embedding_mode = *mode;
    } else if (key == "cell") {
      auto cell = parse_cell_kind(value);
      if (!cell) throw Error(ErrorCode::BadConfig, "row spec: unknown cell '" + value + "'");
      spec.cell = *cell;
    } else if (key == "bidi") {
      if (value != "true" && value != "false") {
        throw Error(ErrorCode::BadConfig, "row spec: bidi expects true or false");
      }
      spec.bidirectional = value == "true";
    } else if (key == "layers") {
      spec.layers = parse_count(key, value);
    } else if (key == "hidden") {
      spec.hidden = parse_count(key, value);
    } else if (key == "dropout") {
      spec.dropout = parse_real(key, value);
    } else {
      throw Error(ErrorCode::BadConfig, "row spec: unknown key '" + key + "'");
    }
  }
  return spec;
}

std::vector<RowSpec> parse_row_specs(std::istream& in) {
  std::vector<RowSpec> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    try {
      rows.push_back(RowSpec::parse(line));
    } catch (const Error& e) {
      throw Error(ErrorCode::BadConfig, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (rows.empty()) throw Error(ErrorCode::BadConfig, "row spec file has no rows");
  return rows;
}

std::vector<RowSpec> preset_rows(std::string_view preset) {
  std::vector<RowSpec> rows;
  if (preset == "table3") {
    for (auto [name, mode] : {std::pair{"Skip-Gram", EmbeddingMode::Pretrained},
                              std::pair{"Random", EmbeddingMode::Random},
                              std::pair{"One-hot", EmbeddingMode::OneHot}}) {
      auto r = row(name, "word");
      r.embedding_mode = mode;
      rows.push_back(r);
    }
  } else if (preset == "table4") {
    auto bi = row("Bi-LSTM", "word");
    bi.bidirectional = true;
    auto uni = row("LSTM", "word");
    uni.bidirectional = false;
    rows = {bi, uni};
  } else if (preset == "table5") {
    auto two = row("Two layers", "word");
    two.layers = 2;
    auto one = row("One layer", "word");
    one.layers = 1;
    rows = {two, one};
  } else if (preset == "table6") {
    auto on = row("Dropout = 0.5", "word");
    on.dropout = 0.5;
    auto off = row("Dropout = 0.0", "word");
    off.dropout = 0.0;
    rows = {on, off};
  } else if (preset == "table7") {
    rows = {row("Word", "word"),
            row("Word+POS", "word,pos"),
            row("Word+Chunk", "word,chunk"),
            row("Word+Case", "word,case"),
            row("Word+Regex", "word,regex"),
            row("Word+POS+Chunk+Case+Regex", "word,pos,chunk,case,regex"),
            row("Word+POS+Chunk+Regex", "word,pos,chunk,regex")};
  } else {
    throw Error(ErrorCode::BadConfig, "unknown preset '" + std::string(preset) + "' (table3..table7)");
  }
  return rows;
}

namespace {

AblationRow run_row(const AblationSetup& setup, const RowSpec& spec, std::size_t index) {
  AblationRow out;
  out.name = spec.name;
  try {
    FeatureConfig fc = setup.features;
    fc.features = spec.features;
    if (spec.embedding_mode) fc.mode = *spec.embedding_mode;
    Rng feature_rng(setup.train.seed);
    auto pipeline = FeaturePipeline::build(fc, setup.train_set, setup.pretrained, setup.rules, feature_rng);
    if (fc.mode == EmbeddingMode::Pretrained) {
      std::vector<Sentence> needed(setup.train_set.begin(), setup.train_set.end());
      needed.insert(needed.end(), setup.dev_set.begin(), setup.dev_set.end());
      needed.insert(needed.end(), setup.test_set.begin(), setup.test_set.end());
      pipeline.restrict_vocabulary(needed);
    }

    TaggerConfig tc = setup.tagger;
    if (spec.cell) tc.cell = *spec.cell;
    if (spec.bidirectional) tc.bidirectional = *spec.bidirectional;
    if (spec.layers) tc.layers = *spec.layers;
    if (spec.hidden) tc.hidden = *spec.hidden;
    if (spec.dropout) tc.dropout = *spec.dropout;
    if (tc.labels.empty()) tc.labels = label_alphabet(default_entity_types());
    tc.input_dim = pipeline.input_dim();
    tc.validate();

    Rng init_rng(setup.train.seed);
    TrainConfig train_config = setup.train;
    train_config.checkpoint_path.clear();
    auto result = train(init_params(tc, init_rng), setup.train_set, setup.dev_set, pipeline, train_config);

    auto eval_set = setup.test_set.empty() ? setup.dev_set : setup.test_set;
    Rng eval_rng(setup.train.seed ^ 0x5bd1e995ULL);
    out.report = evaluate(result.model, pipeline, eval_set, eval_rng);
    out.log = std::move(result.log);
    if (!setup.model_dir.empty()) {
      std::filesystem::create_directories(setup.model_dir);
      save_file(bundle(result.model, pipeline),
                (std::filesystem::path(setup.model_dir) / (std::to_string(index) + ".sqtg")).string());
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

}  // namespace

std::vector<AblationRow> ablate(const AblationSetup& setup, std::span<const RowSpec> rows) {
  std::vector<AblationRow> results(rows.size());
  std::size_t jobs = std::clamp<std::size_t>(setup.jobs, 1, std::max<std::size_t>(rows.size(), 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < rows.size(); ++i) results[i] = run_row(setup, rows[i], i);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < rows.size(); i = next++) results[i] = run_row(setup, rows[i], i);
    });
  }
  for (auto& t : workers) t.join();
  return results;
}

std::string render_ablation_table(std::span<const AblationRow> rows) {
  std::ostringstream out;
  char buf[256];
  std::size_t width = 8;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::snprintf(buf, sizeof buf, "%-*s %8s %8s %8s\n", static_cast<int>(width), "Row", "Pre.", "Rec.", "F1");
  out << buf;
  for (const auto& r : rows) {
    if (r.ok) {
      const auto& s = r.report.overall;
      std::snprintf(buf, sizeof buf, "%-*s %8.2f %8.2f %8.2f\n", static_cast<int>(width), r.name.c_str(),
                    s.precision(), s.recall(), s.f1());
    } else {
      std::snprintf(buf, sizeof buf, "%-*s  failed: %s\n", static_cast<int>(width), r.name.c_str(),
                    r.error.c_str());
    }
    out << buf;
  }

  // Per-entity breakdown, one column group per row.
  out << "\nEntity";
  for (const auto& r : rows) out << " | " << r.name << " (Pre. Rec. F1)";
  out << "\n";
  std::set<std::string> types = default_entity_types();
  for (const auto& r : rows) {
    for (const auto& [type, _] : r.report.per_type) types.insert(type);
  }
  auto cells = [&](const std::string& type) {
    out << type;
    for (const auto& r : rows) {
      if (!r.ok) {
        out << " | -";
        continue;
      }
      TypeScore s;
      if (type == "All") {
        s = r.report.overall;
      } else if (auto it = r.report.per_type.find(type); it != r.report.per_type.end()) {
        s = it->second;
      }
      std::snprintf(buf, sizeof buf, " | %.2f %.2f %.2f", s.precision(), s.recall(), s.f1());
      out << buf;
    }
    out << "\n";
  };
  for (const auto& type : types) cells(type);
  cells("All");
  return out.str();
}

std::string render_ablation_tsv(std::span<const AblationRow> rows) {
  std::ostringstream out;
  char buf[256];
  out << "row\ttype\tgold\tfound\tcorrect\tprecision\trecall\tf1\tstatus\n";
  for (const auto& r : rows) {
    if (!r.ok) {
      out << r.name << "\tALL\t\t\t\t\t\t\tfailed: " << r.error << "\n";
      continue;
    }
    auto line = [&](const std::string& type, const TypeScore& s) {
      std::snprintf(buf, sizeof buf, "\t%s\t%zu\t%zu\t%zu\t%.4f\t%.4f\t%.4f\tok\n", type.c_str(), s.gold,
                    s.predicted, s.correct, s.precision(), s.recall(), s.f1());
      out << r.name << buf;
    };
    for (const auto& [type, s] : r.report.per_type) line(type, s);
    line("ALL", r.report.overall);
  }
  return out.str();
}

}  // namespace sqtag
