#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sqtag/corpus.hpp"
#include "sqtag/numerics.hpp"

namespace sqtag {

enum class EmbeddingMode { Pretrained, Random, OneHot };

std::string_view to_string(EmbeddingMode mode);
/// Accepts "skipgram"/"pretrained", "random" and "onehot"/"one-hot".
std::optional<EmbeddingMode> parse_embedding_mode(std::string_view name);

/// Word -> vector map. Unknown words receive a uniform random vector in
/// [-sqrt(3/dim), +sqrt(3/dim)] that is cached, so the table behaves as if
/// the word had been present all along. In one-hot mode unknown words map
/// to the reserved `<unk>` entry instead.
class EmbeddingTable {
 public:
  static constexpr std::string_view kUnknownWord = "<unk>";

  EmbeddingTable(std::size_t dim, EmbeddingMode mode);
  EmbeddingTable(const EmbeddingTable& other);
  EmbeddingTable& operator=(const EmbeddingTable& other);
  EmbeddingTable(EmbeddingTable&& other) noexcept;
  EmbeddingTable& operator=(EmbeddingTable&& other) noexcept;

  /// Every vocabulary word gets its own draw from the OOV distribution.
  static EmbeddingTable random(std::span<const std::string> vocabulary, std::size_t dim, Rng& rng);
  /// dim = |vocabulary| + 1; the extra slot is `<unk>`.
  static EmbeddingTable one_hot(std::span<const std::string> vocabulary);

  std::size_t dim() const noexcept { return dim_; }
  EmbeddingMode mode() const noexcept { return mode_; }
  std::size_t size() const;

  /// Later inserts of the same word replace earlier ones.
  void insert(const std::string& word, Vector vector);
  bool contains(const std::string& word) const;
  std::optional<Vector> find(const std::string& word) const;

  /// exact -> lowercase -> OOV. Safe to call concurrently; concurrent
  /// lookups of one unknown word all observe the same vector.
  Vector lookup(const std::string& word, Rng& rng);

  /// Words in insertion order.
  std::vector<std::string> words() const;

  /// Copy holding only the given words (and their lowercase fallbacks).
  EmbeddingTable restricted_to(std::span<const std::string> words) const;

  /// Adds entries of `other` this table lacks; dims must agree.
  void merge_missing_from(const EmbeddingTable& other);

 private:
  std::optional<std::size_t> index_of(const std::string& word) const;

  std::size_t dim_;
  EmbeddingMode mode_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> words_;
  std::vector<Vector> vectors_;
  std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
};

/// word2vec text export: optional "count dim" header, then "word v1 .. vd".
EmbeddingTable load_embeddings(std::istream& in, std::size_t expected_dim,
                               const std::string& source_name = "<embeddings>");
EmbeddingTable load_embeddings_file(const std::string& path, std::size_t expected_dim);

// --- categorical features -----------------------------------------------

enum class CaseCategory { AllCaps = 0, InitCap = 1, Lower = 2, Mixed = 3, NoLetter = 4 };
inline constexpr std::size_t kCaseWidth = 5;

/// Underscores join syllables of one Vietnamese word and are ignored; a word
/// whose every syllable is capitalised counts as InitCap.
CaseCategory classify_case(std::string_view surface);
Vector case_feature(std::string_view surface);

/// Tag -> one-hot index in first-seen order, with a trailing UNK slot.
class TagEncoder {
 public:
  TagEncoder() = default;
  explicit TagEncoder(std::vector<std::string> tags);

  std::size_t width() const noexcept { return tags_.size() + 1; }
  std::size_t unk_index() const noexcept { return tags_.size(); }
  std::size_t index(const std::string& tag) const;
  Vector one_hot(const std::string& tag) const;
  const std::vector<std::string>& tags() const noexcept { return tags_; }

 private:
  std::vector<std::string> tags_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct TagEncoders {
  TagEncoder pos;
  TagEncoder chunk;
};

TagEncoders encode_tagset(std::span<const Sentence> sentences);

enum class RuleScope { Self, Prev1, Prev2 };

struct RegexRule {
  std::string name;
  RuleScope scope = RuleScope::Self;
  std::string pattern;
  std::regex compiled;
};

/// Ordered token-level rules, one feature slot each. File format is one
/// `NAME<TAB>SCOPE<TAB>PATTERN` per line, `#` starting a comment line.
class RegexRuleSet {
 public:
  RegexRuleSet() = default;

  static RegexRuleSet parse(std::istream& in, const std::string& source_name = "<rules>");
  static RegexRuleSet load_file(const std::string& path);

  void add(std::string name, RuleScope scope, std::string pattern);
  std::size_t size() const noexcept { return rules_.size(); }
  bool empty() const noexcept { return rules_.empty(); }
  const std::vector<RegexRule>& rules() const noexcept { return rules_; }
  std::string to_text() const;

 private:
  std::vector<RegexRule> rules_;
};

std::vector<Vector> regex_features(const Sentence& sentence, const RegexRuleSet& rules);

// --- input assembly -----------------------------------------------------

enum class Feature { Word, Pos, Chunk, Case, Regex };

struct FeatureSet {
  bool pos = false;
  bool chunk = false;
  bool letter_case = false;
  bool regex = false;

  /// Comma list over word,pos,chunk,case,regex; `word` must be present.
  static FeatureSet parse(std::string_view list);
  std::string to_string() const;
  bool has(Feature f) const;

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

struct FeatureResources {
  EmbeddingTable* table = nullptr;
  const TagEncoders* encoders = nullptr;
  const RegexRuleSet* rules = nullptr;
};

std::size_t input_width(const FeatureSet& features, std::size_t word_dim, const TagEncoders& encoders,
                        const RegexRuleSet& rules);

/// Per token: [word | POS | chunk | case | regex], enabled parts only.
std::vector<Vector> assemble_inputs(const Sentence& sentence, const FeatureSet& features,
                                    const FeatureResources& resources, Rng& oov_rng);

struct FeatureConfig {
  FeatureSet features;
  EmbeddingMode mode = EmbeddingMode::Random;
  std::size_t word_dim = 300;
};

/// Everything needed to turn a sentence into network inputs. Persisted
/// alongside the model so tagging reproduces training-time inputs exactly.
class FeaturePipeline {
 public:
  FeaturePipeline(FeatureSet features, EmbeddingTable table, TagEncoders encoders, RegexRuleSet rules);

  /// Fits encoders and the vocabulary on `train`. `pretrained` is required
  /// in Pretrained mode and ignored otherwise.
  static FeaturePipeline build(const FeatureConfig& config, std::span<const Sentence> train,
                               const EmbeddingTable* pretrained, RegexRuleSet rules, Rng& rng);

  const FeatureSet& features() const noexcept { return features_; }
  EmbeddingTable& table() noexcept { return table_; }
  const EmbeddingTable& table() const noexcept { return table_; }
  const TagEncoders& encoders() const noexcept { return encoders_; }
  const RegexRuleSet& rules() const noexcept { return rules_; }
  std::size_t input_dim() const;

  std::vector<Vector> assemble(const Sentence& sentence, Rng& oov_rng);

  /// Drops embedding entries not needed for the given sentences.
  void restrict_vocabulary(std::span<const Sentence> sentences);

  std::string metadata_json() const;
  std::vector<double> payload() const;
  static FeaturePipeline from_metadata(const std::string& json, std::span<const double> payload);

 private:
  FeatureSet features_;
  EmbeddingTable table_;
  TagEncoders encoders_;
  RegexRuleSet rules_;
};

}  // namespace sqtag
