#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "default_rules.hpp"
#include "sqtag/corpus.hpp"
#include "sqtag/error.hpp"
#include "sqtag/eval.hpp"
#include "sqtag/features.hpp"
#include "sqtag/model.hpp"
#include "sqtag/selfcheck.hpp"
#include "sqtag/train.hpp"

namespace sqtag::cli {

namespace {

using nlohmann::json;

struct Common {
  std::uint64_t seed = 1;
  bool quiet = false;
};

struct ModelFlags {
  std::string train_path;
  std::string dev_path;
  std::string embeddings;
  std::string embedding_mode;  // empty: skipgram with --embeddings, else random
  std::size_t embedding_dim = 300;
  std::string features = "word,pos,chunk,regex";
  std::string regex_file;
  std::size_t hidden = 100;
  std::size_t layers = 2;
  std::string cell = "lstm";
  bool bidi = true;
  double dropout = 0.5;
  double lr = 0.05;
  double clip = 5.0;
  std::size_t patience = 5;
  std::size_t max_epochs = 100;
  double stop_at = 0.0;
  std::string scheme = "iob2";
  std::size_t max_length = 150;
  std::size_t dev_count = 0;  // used only without --dev
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->set_config("--config", "", "Read options from a TOML/INI file; flags given on the command line win");
  cmd->add_option("--seed", common.seed, "Seed for every random draw")->capture_default_str();
  cmd->add_flag("--quiet", common.quiet, "Only print final results");
}

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--train", f.train_path, "Training corpus (CoNLL)")->required();
  cmd->add_option("--dev", f.dev_path, "Development corpus for early stopping (CoNLL)");
  cmd->add_option("--dev-count", f.dev_count,
                  "Without --dev: hold out this many final training sentences (default: 10%)");
  cmd->add_option("--embeddings", f.embeddings, "Word vectors in word2vec text format");
  cmd->add_option("--embedding-mode", f.embedding_mode, "skipgram|random|onehot")
      ->check(CLI::IsMember({"skipgram", "random", "onehot"}));
  cmd->add_option("--embedding-dim", f.embedding_dim, "Word vector width")->capture_default_str();
  cmd->add_option("--features", f.features, "Comma list over word,pos,chunk,case,regex")->capture_default_str();
  cmd->add_option("--regex-file", f.regex_file, "Regex rules (NAME<TAB>SCOPE<TAB>PATTERN); default: built-in");
  cmd->add_option("--hidden", f.hidden, "Hidden units per direction")->capture_default_str();
  cmd->add_option("--layers", f.layers, "Recurrent layers")->capture_default_str();
  cmd->add_option("--cell", f.cell, "lstm|rnn")->check(CLI::IsMember({"lstm", "rnn"}))->capture_default_str();
  cmd->add_flag("--bidi,!--no-bidi", f.bidi, "Bidirectional layers (default on)");
  cmd->add_option("--dropout", f.dropout, "Dropout ratio on layer outputs")->capture_default_str();
  cmd->add_option("--lr", f.lr, "SGD learning rate")->capture_default_str();
  cmd->add_option("--clip", f.clip, "Global gradient norm limit")->capture_default_str();
  cmd->add_option("--patience", f.patience, "Epochs without dev improvement before stopping")
      ->capture_default_str();
  cmd->add_option("--max-epochs", f.max_epochs, "Epoch limit")->capture_default_str();
  cmd->add_option("--stop-at", f.stop_at, "Stop once dev F1 reaches this value (0: off)")->capture_default_str();
  cmd->add_option("--scheme", f.scheme, "Label scheme of the input files: iob1|iob2")
      ->check(CLI::IsMember({"iob1", "iob2"}))
      ->capture_default_str();
  cmd->add_option("--max-length", f.max_length, "Split longer sentences (0: never)")->capture_default_str();
}

// CLI11 only reads the config file of the top-level app, so subcommands
// apply theirs here. Values given on the command line are left alone.
void apply_config_file(CLI::App* cmd) {
  auto* config = cmd->get_config_ptr();
  if (config == nullptr || config->count() == 0) return;
  const std::string path = config->as<std::string>();
  std::vector<CLI::ConfigItem> items;
  try {
    items = cmd->get_config_formatter()->from_file(path);
  } catch (const CLI::FileError&) {
    throw Error(ErrorCode::Io, "cannot read config file '" + path + "'");
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty() && item.parents != std::vector<std::string>{cmd->get_name()}) continue;
    auto* opt = cmd->get_option_no_throw("--" + item.name);
    if (opt == nullptr || opt == config) {
      throw Error(ErrorCode::BadConfig, path + ": unknown setting '" + item.fullname() + "'");
    }
    if (opt->count() > 0) continue;
    try {
      for (const auto& value : item.inputs) opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw Error(ErrorCode::BadConfig, path + ": " + item.name + ": " + e.what());
    }
  }
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "unreadable";
  std::string bytes{std::istreambuf_iterator<char>(in), {}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

class Manifest {
 public:
  Manifest(const CLI::App& cmd, const std::vector<std::string>& args, std::uint64_t seed) {
    record_["tool"] = "sqtag";
    record_["version"] = SQTAG_VERSION;
    record_["command"] = cmd.get_name();
    record_["argv"] = args;
    record_["seed"] = seed;
    record_["config"] = cmd.config_to_str(true, false);
    record_["inputs"] = json::object();
    record_["outputs"] = json::array();
  }

  void input(const std::string& path) {
    if (!path.empty()) record_["inputs"][path] = file_digest(path);
  }
  void output(const std::string& path) { record_["outputs"].push_back(path); }
  void set(const std::string& key, json value) { record_[key] = std::move(value); }

  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write manifest '" + path + "'");
    out << record_.dump(2) << "\n";
  }

 private:
  json record_;
};

Scheme scheme_of(const std::string& name) { return parse_scheme(name).value_or(Scheme::Iob2); }

std::vector<Sentence> read_corpus(const std::string& path, const std::string& scheme, std::size_t max_length) {
  ReadOptions options;
  options.scheme = scheme_of(scheme);
  options.max_length = max_length;
  return read_conll_file(path, options);
}

RegexRuleSet load_rules(const std::string& path) {
  if (!path.empty()) return RegexRuleSet::load_file(path);
  std::istringstream in(kDefaultRegexRules);
  return RegexRuleSet::parse(in, "<built-in rules>");
}

EmbeddingMode resolve_mode(const ModelFlags& f) {
  if (f.embedding_mode.empty()) return f.embeddings.empty() ? EmbeddingMode::Random : EmbeddingMode::Pretrained;
  return *parse_embedding_mode(f.embedding_mode);
}

std::set<std::string> entity_types_of(std::span<const Sentence> a, std::span<const Sentence> b) {
  std::set<std::string> types = default_entity_types();
  for (auto part : {a, b}) {
    for (const auto& [type, _] : stats(part).entities_per_type) types.insert(type);
  }
  return types;
}

/// Everything train and ablate share: corpora, embeddings, rules, configs.
struct Setup {
  std::vector<Sentence> train;
  std::vector<Sentence> dev;
  std::optional<EmbeddingTable> pretrained;
  RegexRuleSet rules;
  FeatureConfig features;
  TaggerConfig tagger;
  TrainConfig training;
};

Setup prepare(const ModelFlags& f, const Common& common, Manifest& manifest) {
  Setup s;
  s.train = read_corpus(f.train_path, f.scheme, f.max_length);
  manifest.input(f.train_path);
  if (!f.dev_path.empty()) {
    s.dev = read_corpus(f.dev_path, f.scheme, f.max_length);
    manifest.input(f.dev_path);
  } else {
    std::size_t count = f.dev_count ? f.dev_count : std::max<std::size_t>(1, s.train.size() / 10);
    auto parts = split(s.train, count);
    s.train = std::move(parts.train);
    s.dev = std::move(parts.dev);
  }
  if (s.train.empty()) throw Error(ErrorCode::EmptyCorpus, "'" + f.train_path + "' contains no sentences");

  s.features.features = FeatureSet::parse(f.features);
  s.features.mode = resolve_mode(f);
  s.features.word_dim = f.embedding_dim;
  if (s.features.mode == EmbeddingMode::Pretrained) {
    if (f.embeddings.empty()) throw Error(ErrorCode::BadConfig, "--embedding-mode skipgram needs --embeddings");
    s.pretrained = load_embeddings_file(f.embeddings, f.embedding_dim);
    manifest.input(f.embeddings);
  }
  if (s.features.features.regex) {
    s.rules = load_rules(f.regex_file);
    manifest.input(f.regex_file);
  }

  s.tagger.cell = *parse_cell_kind(f.cell);
  s.tagger.bidirectional = f.bidi;
  s.tagger.layers = f.layers;
  s.tagger.hidden = f.hidden;
  s.tagger.dropout = f.dropout;
  s.tagger.labels = label_alphabet(entity_types_of(s.train, s.dev));

  s.training.learning_rate = f.lr;
  s.training.clip_norm = f.clip;
  s.training.patience = f.patience;
  s.training.max_epochs = f.max_epochs;
  s.training.target_score = f.stop_at;
  s.training.seed = common.seed;
  s.training.validate();
  return s;
}

int cmd_train(const CLI::App& cmd, const std::vector<std::string>& args, const Common& common,
              const ModelFlags& f, const std::string& out_path, std::string log_path, std::ostream& out) {
  Manifest manifest(cmd, args, common.seed);
  Setup s = prepare(f, common, manifest);

  Rng feature_rng(common.seed);
  auto pipeline = FeaturePipeline::build(s.features, s.train, s.pretrained ? &*s.pretrained : nullptr, s.rules,
                                         feature_rng);
  if (s.features.mode == EmbeddingMode::Pretrained) {
    std::vector<Sentence> needed = s.train;
    needed.insert(needed.end(), s.dev.begin(), s.dev.end());
    pipeline.restrict_vocabulary(needed);
  }
  s.tagger.input_dim = pipeline.input_dim();
  s.tagger.validate();

  Rng init_rng(common.seed);
  Tagger init = init_params(s.tagger, init_rng);
  if (!common.quiet) {
    out << "train: " << s.train.size() << " sentences, dev: " << s.dev.size() << " sentences, input width "
        << s.tagger.input_dim << ", " << init.parameter_count() << " parameters\n";
  }
  EpochObserver progress = [&](const EpochRecord& r) {
    if (common.quiet) return;
    char buf[128];
    std::snprintf(buf, sizeof buf, "epoch %3zu  loss %.6f  dev F1 %6.2f  (%.2fs)\n", r.epoch, r.train_loss, r.dev_f1,
                  r.seconds);
    out << buf << std::flush;
  };
  auto result = train(std::move(init), s.train, s.dev, pipeline, s.training, progress);

  save_file(bundle(result.model, pipeline), out_path);
  if (log_path.empty()) log_path = out_path + ".log";
  {
    std::ofstream log(log_path);
    if (!log) throw Error(ErrorCode::Io, "cannot write log '" + log_path + "'");
    log << result.log.render();
  }
  Rng eval_rng(common.seed ^ 0x5bd1e995ULL);
  ScoreReport dev_report = evaluate(result.model, pipeline, s.dev, eval_rng);

  manifest.output(out_path);
  manifest.output(log_path);
  manifest.set("best_epoch", result.log.best_epoch);
  manifest.set("epochs", result.log.epochs.size());
  manifest.set("stop_reason", std::string(to_string(result.log.stop_reason)));
  manifest.set("resolved", {{"features", s.features.features.to_string()},
                            {"embedding_mode", std::string(to_string(s.features.mode))},
                            {"embedding_dim", pipeline.table().dim()},
                            {"input_dim", s.tagger.input_dim},
                            {"labels", s.tagger.labels},
                            {"regex_rules", s.rules.size()}});
  manifest.write(out_path + ".manifest.json");

  if (!common.quiet) out << render(dev_report);
  char buf[160];
  std::snprintf(buf, sizeof buf, "best epoch %zu of %zu (%s), dev F1 %.2f\n", result.log.best_epoch,
                result.log.epochs.size(), std::string(to_string(result.log.stop_reason)).c_str(),
                dev_report.overall.f1());
  out << buf << "model: " << out_path << "\n";
  return kOk;
}

int cmd_tag(const CLI::App& cmd, const std::vector<std::string>& args, const Common& common,
            const std::string& model_path, const std::string& input_path, const std::string& output_path,
            const std::string& embeddings, const std::string& scheme, std::ostream& out) {
  Manifest manifest(cmd, args, common.seed);
  auto model = load_model_file(model_path);
  manifest.input(model_path);
  if (!embeddings.empty()) {
    if (model.features.table().mode() != EmbeddingMode::Pretrained) {
      throw Error(ErrorCode::BadConfig, "--embeddings only applies to models trained with skipgram vectors");
    }
    model.features.table().merge_missing_from(load_embeddings_file(embeddings, model.features.table().dim()));
    manifest.input(embeddings);
  }
  ReadOptions options;
  options.scheme = scheme_of(scheme);
  options.require_label = false;
  options.max_length = 0;
  auto sentences = read_conll_file(input_path, options);
  manifest.input(input_path);

  Rng oov_rng(common.seed ^ 0x5bd1e995ULL);
  auto tagged = tag_sentences(model.tagger, model.features, sentences, oov_rng);
  if (output_path.empty()) {
    write_conll(out, tagged, true);
  } else {
    std::ofstream file(output_path);
    if (!file) throw Error(ErrorCode::Io, "cannot write '" + output_path + "'");
    write_conll(file, tagged, true);
    manifest.output(output_path);
    manifest.write(output_path + ".manifest.json");
  }
  return kOk;
}

int cmd_eval(const std::string& input_path, const std::string& types, const std::string& scheme,
             std::ostream& out) {
  std::ifstream in(input_path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + input_path + "'");
  auto sentences = read_conlleval(in, scheme_of(scheme), input_path);
  out << render(score(sentences, parse_type_filter(types)));
  return kOk;
}

int cmd_stats(const std::vector<std::string>& inputs, const std::string& scheme, std::ostream& out) {
  std::vector<Sentence> all;
  for (const auto& path : inputs) {
    ReadOptions options;
    options.scheme = scheme_of(scheme);
    options.max_length = 0;
    auto sentences = read_conll_file(path, options);
    if (inputs.size() > 1) out << "== " << path << "\n" << render_stats(stats(sentences)) << "\n";
    all.insert(all.end(), sentences.begin(), sentences.end());
  }
  if (inputs.size() > 1) out << "== total\n";
  out << render_stats(stats(all));
  return kOk;
}

int cmd_ablate(const CLI::App& cmd, const std::vector<std::string>& args, const Common& common,
               const ModelFlags& f, const std::string& preset, const std::string& rows_path,
               const std::string& test_path, std::size_t jobs, const std::string& out_dir, bool keep_models,
               std::ostream& out) {
  Manifest manifest(cmd, args, common.seed);
  std::vector<RowSpec> rows;
  if (!rows_path.empty()) {
    std::ifstream in(rows_path);
    if (!in) throw Error(ErrorCode::Io, "cannot open row spec file '" + rows_path + "'");
    rows = parse_row_specs(in);
    manifest.input(rows_path);
  } else {
    rows = preset_rows(preset);
  }
  // Rows may switch on regex features or pretrained vectors; load both
  // whenever they are available.
  ModelFlags base = f;
  bool any_regex = std::any_of(rows.begin(), rows.end(), [](const RowSpec& r) { return r.features.regex; });
  bool any_pretrained = std::any_of(rows.begin(), rows.end(), [](const RowSpec& r) {
    return r.embedding_mode == EmbeddingMode::Pretrained;
  });
  if (any_regex && base.features.find("regex") == std::string::npos) base.features += ",regex";
  Setup s = prepare(base, common, manifest);
  if (any_pretrained && !s.pretrained && !f.embeddings.empty()) {
    s.pretrained = load_embeddings_file(f.embeddings, f.embedding_dim);
    manifest.input(f.embeddings);
  }
  if (s.features.mode == EmbeddingMode::Pretrained && f.embedding_mode.empty()) {
    // Rows without an explicit mode fall back to random vectors unless asked.
    s.features.mode = EmbeddingMode::Random;
  }
  std::vector<Sentence> test;
  if (!test_path.empty()) {
    test = read_corpus(test_path, f.scheme, f.max_length);
    manifest.input(test_path);
  }

  AblationSetup setup;
  setup.tagger = s.tagger;
  setup.features = s.features;
  setup.train = s.training;
  setup.train_set = s.train;
  setup.dev_set = s.dev;
  setup.test_set = test;
  setup.pretrained = s.pretrained ? &*s.pretrained : nullptr;
  setup.rules = s.rules;
  setup.jobs = jobs;
  std::filesystem::create_directories(out_dir);
  if (keep_models) setup.model_dir = (std::filesystem::path(out_dir) / "models").string();

  auto results = ablate(setup, rows);
  std::string table = render_ablation_table(results);
  std::string tsv = render_ablation_tsv(results);
  auto text_path = (std::filesystem::path(out_dir) / "ablation.txt").string();
  auto tsv_path = (std::filesystem::path(out_dir) / "ablation.tsv").string();
  std::ofstream(text_path) << table;
  std::ofstream(tsv_path) << tsv;
  manifest.output(text_path);
  manifest.output(tsv_path);
  manifest.set("rows", [&] {
    json j = json::array();
    for (const auto& r : results) j.push_back({{"name", r.name}, {"ok", r.ok}, {"error", r.error}});
    return j;
  }());
  manifest.write((std::filesystem::path(out_dir) / "manifest.json").string());

  out << table;
  bool any_ok = std::any_of(results.begin(), results.end(), [](const AblationRow& r) { return r.ok; });
  return any_ok ? kOk : kFailure;
}

int cmd_selfcheck(const Common& common, std::size_t seeds, std::size_t pairs, bool corrupt, std::ostream& out) {
  SelfCheckOptions options;
  options.seed = common.seed;
  options.gradient_seeds = seeds;
  options.scorer_pairs = pairs;
  options.corrupt_gradient = corrupt;
  auto report = run_selfcheck(options);
  out << report.render();
  return report.passed() ? kOk : kSelfCheckFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"sqtag: Bi-LSTM sequence tagger for named entity recognition", "sqtag"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SQTAG_VERSION);

  Common common;
  ModelFlags model_flags;

  auto* train_cmd = app.add_subcommand("train", "Train a tagger and write the model, log and manifest");
  add_common(train_cmd, common);
  add_model_flags(train_cmd, model_flags);
  std::string out_path = "model.sqtg";
  std::string log_path;
  train_cmd->add_option("--out", out_path, "Model file")->capture_default_str();
  train_cmd->add_option("--log", log_path, "Training log (default: <out>.log)");

  auto* tag_cmd = app.add_subcommand("tag", "Append predicted labels to a CoNLL file");
  add_common(tag_cmd, common);
  std::string model_path, input_path, output_path, tag_embeddings, tag_scheme = "iob2";
  tag_cmd->add_option("--model", model_path, "Model file")->required();
  tag_cmd->add_option("--input,input", input_path, "CoNLL input")->required();
  tag_cmd->add_option("--output", output_path, "Output file (default: standard output)");
  tag_cmd->add_option("--embeddings", tag_embeddings, "Extra word vectors for words the model has not seen");
  tag_cmd->add_option("--scheme", tag_scheme, "Label scheme of a gold column, if present")
      ->check(CLI::IsMember({"iob1", "iob2"}));

  auto* eval_cmd = app.add_subcommand("eval", "Score a file with gold and predicted label columns");
  add_common(eval_cmd, common);
  std::string eval_input, types, eval_scheme = "iob2";
  eval_cmd->add_option("--input,input", eval_input, "Tokens with gold (second to last) and predicted (last) labels")
      ->required();
  eval_cmd->add_option("--types", types, "Only score these entity types, e.g. PER,LOC,ORG");
  eval_cmd->add_option("--scheme", eval_scheme, "iob1|iob2")->check(CLI::IsMember({"iob1", "iob2"}));

  auto* ablate_cmd = app.add_subcommand("ablate", "Train one model per row of an experiment table");
  add_common(ablate_cmd, common);
  add_model_flags(ablate_cmd, model_flags);
  std::string preset, rows_path, test_path, out_dir = "ablation";
  std::size_t jobs = 1;
  bool keep_models = false;
  auto* preset_opt = ablate_cmd->add_option("--preset", preset, "table3|table4|table5|table6|table7");
  auto* rows_opt = ablate_cmd->add_option("--rows", rows_path, "Row spec file: NAME<TAB>key=value...");
  preset_opt->excludes(rows_opt);
  ablate_cmd->add_option("--test", test_path, "Corpus to score each row on (default: dev)");
  ablate_cmd->add_option("--jobs", jobs, "Rows trained in parallel")->capture_default_str();
  ablate_cmd->add_option("--out-dir", out_dir, "Directory for tables, manifest and models")->capture_default_str();
  ablate_cmd->add_flag("--keep-models", keep_models, "Save every row's model");

  auto* stats_cmd = app.add_subcommand("stats", "Entity, sentence and token counts");
  add_common(stats_cmd, common);
  std::vector<std::string> stats_inputs;
  std::string stats_scheme = "iob2";
  stats_cmd->add_option("inputs", stats_inputs, "CoNLL files")->required();
  stats_cmd->add_option("--scheme", stats_scheme, "iob1|iob2")->check(CLI::IsMember({"iob1", "iob2"}));

  auto* check_cmd = app.add_subcommand("selfcheck", "Gradient and scorer checks against independent oracles");
  add_common(check_cmd, common);
  std::size_t seeds = 20, pairs = 1000;
  bool corrupt = false;
  check_cmd->add_option("--seeds", seeds, "Random models in the gradient check")->capture_default_str();
  check_cmd->add_option("--pairs", pairs, "Random sequence pairs for the scorer check")->capture_default_str();
  check_cmd->add_flag("--corrupt-gradient", corrupt, "Perturb the analytic gradient (negative control)")
      ->group("");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kOk : kFailure;
  }

  try {
    for (auto* cmd : app.get_subcommands()) apply_config_file(cmd);
    if (train_cmd->parsed()) {
      return cmd_train(*train_cmd, args, common, model_flags, out_path, log_path, out);
    }
    if (tag_cmd->parsed()) {
      return cmd_tag(*tag_cmd, args, common, model_path, input_path, output_path, tag_embeddings, tag_scheme, out);
    }
    if (eval_cmd->parsed()) return cmd_eval(eval_input, types, eval_scheme, out);
    if (ablate_cmd->parsed()) {
      if (preset.empty() && rows_path.empty()) {
        err << "ablate: one of --preset or --rows is required\n";
        return kFailure;
      }
      return cmd_ablate(*ablate_cmd, args, common, model_flags, preset, rows_path, test_path, jobs, out_dir,
                        keep_models, out);
    }
    if (stats_cmd->parsed()) return cmd_stats(stats_inputs, stats_scheme, out);
    if (check_cmd->parsed()) return cmd_selfcheck(common, seeds, pairs, corrupt, out);
  } catch (const Error& e) {
    err << "sqtag: " << e.what() << "\n";
    return e.code() == ErrorCode::NonFiniteLoss ? kNonFiniteLoss : kFailure;
  } catch (const std::exception& e) {
    err << "sqtag: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace sqtag::cli
