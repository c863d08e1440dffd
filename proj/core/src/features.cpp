#include "sqtag/features.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "sqtag/error.hpp"
#include "unicode.hpp"

namespace sqtag {

std::string_view to_string(EmbeddingMode mode) {
  switch (mode) {
    case EmbeddingMode::Pretrained: return "skipgram";
    case EmbeddingMode::Random: return "random";
    case EmbeddingMode::OneHot: return "onehot";
  }
  return "random";
}

std::optional<EmbeddingMode> parse_embedding_mode(std::string_view name) {
  if (name == "skipgram" || name == "pretrained" || name == "skip-gram") return EmbeddingMode::Pretrained;
  if (name == "random") return EmbeddingMode::Random;
  if (name == "onehot" || name == "one-hot") return EmbeddingMode::OneHot;
  return std::nullopt;
}

// --- EmbeddingTable -----------------------------------------------------

EmbeddingTable::EmbeddingTable(std::size_t dim, EmbeddingMode mode) : dim_(dim), mode_(mode) {
  if (dim == 0) throw Error(ErrorCode::InvalidDim, "embedding dim must be >= 1");
}

EmbeddingTable::EmbeddingTable(const EmbeddingTable& other) : dim_(other.dim_), mode_(other.mode_) {
  std::lock_guard lock(*other.mutex_);
  index_ = other.index_;
  words_ = other.words_;
  vectors_ = other.vectors_;
}

EmbeddingTable& EmbeddingTable::operator=(const EmbeddingTable& other) {
  if (this != &other) {
    EmbeddingTable copy(other);
    *this = std::move(copy);
  }
  return *this;
}

EmbeddingTable::EmbeddingTable(EmbeddingTable&& other) noexcept
    : dim_(other.dim_),
      mode_(other.mode_),
      index_(std::move(other.index_)),
      words_(std::move(other.words_)),
      vectors_(std::move(other.vectors_)),
      mutex_(std::make_unique<std::mutex>()) {}

EmbeddingTable& EmbeddingTable::operator=(EmbeddingTable&& other) noexcept {
  dim_ = other.dim_;
  mode_ = other.mode_;
  index_ = std::move(other.index_);
  words_ = std::move(other.words_);
  vectors_ = std::move(other.vectors_);
  return *this;
}

EmbeddingTable EmbeddingTable::random(std::span<const std::string> vocabulary, std::size_t dim, Rng& rng) {
  EmbeddingTable table(dim, EmbeddingMode::Random);
  const double bound = embedding_bound(dim);
  for (const auto& word : vocabulary) {
    if (!table.contains(word)) table.insert(word, uniform_vector(rng, dim, bound));
  }
  return table;
}

EmbeddingTable EmbeddingTable::one_hot(std::span<const std::string> vocabulary) {
  std::vector<std::string> words;
  std::unordered_set<std::string> seen;
  for (const auto& w : vocabulary) {
    if (w != kUnknownWord && seen.insert(w).second) words.push_back(w);
  }
  words.emplace_back(kUnknownWord);
  EmbeddingTable table(words.size(), EmbeddingMode::OneHot);
  for (std::size_t i = 0; i < words.size(); ++i) {
    Vector v(words.size());
    v[i] = 1.0;
    table.insert(words[i], std::move(v));
  }
  return table;
}

std::size_t EmbeddingTable::size() const {
  std::lock_guard lock(*mutex_);
  return words_.size();
}

std::optional<std::size_t> EmbeddingTable::index_of(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingTable::insert(const std::string& word, Vector vector) {
  if (vector.size() != dim_) {
    throw Error(ErrorCode::EmbeddingDimMismatch, "vector for '" + word + "' has " +
                                                     std::to_string(vector.size()) + " values, expected " +
                                                     std::to_string(dim_));
  }
  std::lock_guard lock(*mutex_);
  if (auto idx = index_of(word)) {
    vectors_[*idx] = std::move(vector);
    return;
  }
  index_.emplace(word, words_.size());
  words_.push_back(word);
  vectors_.push_back(std::move(vector));
}

bool EmbeddingTable::contains(const std::string& word) const {
  std::lock_guard lock(*mutex_);
  return index_.count(word) > 0;
}

std::optional<Vector> EmbeddingTable::find(const std::string& word) const {
  std::lock_guard lock(*mutex_);
  if (auto idx = index_of(word)) return vectors_[*idx];
  return std::nullopt;
}

Vector EmbeddingTable::lookup(const std::string& word, Rng& rng) {
  std::lock_guard lock(*mutex_);
  if (auto idx = index_of(word)) return vectors_[*idx];
  if (auto idx = index_of(unicode::to_lower(word))) return vectors_[*idx];
  if (mode_ == EmbeddingMode::OneHot) {
    if (auto idx = index_of(std::string(kUnknownWord))) return vectors_[*idx];
  }
  Vector v = uniform_vector(rng, dim_, embedding_bound(dim_));
  index_.emplace(word, words_.size());
  words_.push_back(word);
  vectors_.push_back(v);
  return v;
}

std::vector<std::string> EmbeddingTable::words() const {
  std::lock_guard lock(*mutex_);
  return words_;
}

EmbeddingTable EmbeddingTable::restricted_to(std::span<const std::string> words) const {
  std::unordered_set<std::string> keep(words.begin(), words.end());
  for (const auto& w : words) keep.insert(unicode::to_lower(w));
  keep.insert(std::string(kUnknownWord));
  EmbeddingTable out(dim_, mode_);
  std::lock_guard lock(*mutex_);
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (keep.count(words_[i])) out.insert(words_[i], vectors_[i]);
  }
  return out;
}

void EmbeddingTable::merge_missing_from(const EmbeddingTable& other) {
  if (other.dim() != dim_) {
    throw Error(ErrorCode::EmbeddingDimMismatch, "cannot merge tables of width " + std::to_string(other.dim()) +
                                                     " and " + std::to_string(dim_));
  }
  for (const auto& word : other.words()) {
    if (!contains(word)) insert(word, *other.find(word));
  }
}

EmbeddingTable load_embeddings(std::istream& in, std::size_t expected_dim, const std::string& source_name) {
  EmbeddingTable table(expected_dim, EmbeddingMode::Pretrained);
  std::string line;
  std::size_t line_no = 0;
  auto where = [&] { return source_name + ":" + std::to_string(line_no); };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::vector<std::string> parts;
    for (std::string p; fields >> p;) parts.push_back(std::move(p));
    if (parts.empty()) continue;
    if (line_no == 1 && parts.size() == 2 && expected_dim != 1) {
      // "count dim" header
      char* end = nullptr;
      unsigned long long header_dim = std::strtoull(parts[1].c_str(), &end, 10);
      if (*end == '\0' && parts[0].find_first_not_of("0123456789") == std::string::npos) {
        if (header_dim != expected_dim) {
          throw Error(ErrorCode::EmbeddingDimMismatch, where() + ": header declares " + parts[1] +
                                                           " dimensions, expected " +
                                                           std::to_string(expected_dim));
        }
        continue;
      }
    }
    if (parts.size() - 1 != expected_dim) {
      throw Error(ErrorCode::EmbeddingDimMismatch, where() + ": " + std::to_string(parts.size() - 1) +
                                                       " values, expected " + std::to_string(expected_dim));
    }
    Vector v(expected_dim);
    for (std::size_t i = 0; i < expected_dim; ++i) {
      const char* s = parts[i + 1].c_str();
      char* end = nullptr;
      errno = 0;
      double value = std::strtod(s, &end);
      if (end == s || *end != '\0' || errno == ERANGE || !std::isfinite(value)) {
        throw Error(ErrorCode::UnparseableValue, where() + ": '" + parts[i + 1] + "'");
      }
      v[i] = value;
    }
    table.insert(parts[0], std::move(v));
  }
  return table;
}

EmbeddingTable load_embeddings_file(const std::string& path, std::size_t expected_dim) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open embedding file '" + path + "'");
  return load_embeddings(in, expected_dim, path);
}

// --- case ---------------------------------------------------------------

CaseCategory classify_case(std::string_view surface) {
  std::vector<char32_t> cps = unicode::decode(surface);
  std::vector<std::vector<char32_t>> syllables(1);
  for (char32_t c : cps) {
    if (c == U'_') {
      syllables.emplace_back();
    } else if (unicode::is_cased_letter(c)) {
      syllables.back().push_back(c);
    }
  }
  std::size_t upper = 0, lower = 0;
  for (const auto& syl : syllables) {
    for (char32_t c : syl) (unicode::is_upper(c) ? upper : lower)++;
  }
  if (upper + lower == 0) return CaseCategory::NoLetter;
  if (lower == 0) return upper >= 2 ? CaseCategory::AllCaps : CaseCategory::InitCap;
  if (upper == 0) return CaseCategory::Lower;

  auto capitalized = [](const std::vector<char32_t>& syl) {
    if (syl.empty() || !unicode::is_upper(syl.front())) return false;
    return std::all_of(syl.begin() + 1, syl.end(), unicode::is_lower);
  };
  auto all_lower = [](const std::vector<char32_t>& syl) {
    return std::all_of(syl.begin(), syl.end(), unicode::is_lower);
  };
  auto first = std::find_if(syllables.begin(), syllables.end(), [](const auto& s) { return !s.empty(); });
  if (!capitalized(*first)) return CaseCategory::Mixed;
  for (auto it = std::next(first); it != syllables.end(); ++it) {
    if (!capitalized(*it) && !all_lower(*it)) return CaseCategory::Mixed;
  }
  return CaseCategory::InitCap;
}

Vector case_feature(std::string_view surface) {
  Vector v(kCaseWidth);
  v[static_cast<std::size_t>(classify_case(surface))] = 1.0;
  return v;
}

// --- tag encoders -------------------------------------------------------

TagEncoder::TagEncoder(std::vector<std::string> tags) {
  for (auto& tag : tags) {
    if (index_.emplace(tag, tags_.size()).second) tags_.push_back(std::move(tag));
  }
}

std::size_t TagEncoder::index(const std::string& tag) const {
  auto it = index_.find(tag);
  return it == index_.end() ? unk_index() : it->second;
}

Vector TagEncoder::one_hot(const std::string& tag) const {
  Vector v(width());
  v[index(tag)] = 1.0;
  return v;
}

TagEncoders encode_tagset(std::span<const Sentence> sentences) {
  std::vector<std::string> pos, chunk;
  for (const auto& s : sentences) {
    for (const auto& t : s.tokens) {
      pos.push_back(t.pos);
      chunk.push_back(t.chunk);
    }
  }
  return {TagEncoder(std::move(pos)), TagEncoder(std::move(chunk))};
}

// --- regex rules --------------------------------------------------------

namespace {

std::optional<RuleScope> parse_scope(std::string_view s) {
  if (s == "self") return RuleScope::Self;
  if (s == "prev1") return RuleScope::Prev1;
  if (s == "prev2") return RuleScope::Prev2;
  return std::nullopt;
}

std::string_view scope_name(RuleScope scope) {
  switch (scope) {
    case RuleScope::Self: return "self";
    case RuleScope::Prev1: return "prev1";
    case RuleScope::Prev2: return "prev2";
  }
  return "self";
}

std::size_t scope_offset(RuleScope scope) { return static_cast<std::size_t>(scope); }

}  // namespace

void RegexRuleSet::add(std::string name, RuleScope scope, std::string pattern) {
  for (const auto& r : rules_) {
    if (r.name == name) throw Error(ErrorCode::BadRegex, "duplicate rule name '" + name + "'");
  }
  RegexRule rule;
  try {
    rule.compiled = std::regex(pattern, std::regex::ECMAScript | std::regex::optimize);
  } catch (const std::regex_error& e) {
    throw Error(ErrorCode::BadRegex, "rule '" + name + "': " + e.what());
  }
  rule.name = std::move(name);
  rule.scope = scope;
  rule.pattern = std::move(pattern);
  rules_.push_back(std::move(rule));
}

RegexRuleSet RegexRuleSet::parse(std::istream& in, const std::string& source_name) {
  RegexRuleSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    std::string where = source_name + ":" + std::to_string(line_no);
    if (t2 == std::string::npos) {
      throw Error(ErrorCode::MalformedLine, where + ": expected NAME<TAB>SCOPE<TAB>PATTERN");
    }
    auto scope = parse_scope(std::string_view(line).substr(t1 + 1, t2 - t1 - 1));
    if (!scope) throw Error(ErrorCode::MalformedLine, where + ": scope must be self, prev1 or prev2");
    try {
      set.add(line.substr(0, t1), *scope, line.substr(t2 + 1));
    } catch (const Error& e) {
      throw Error(e.code(), where + ": " + e.what());
    }
  }
  return set;
}

RegexRuleSet RegexRuleSet::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open regex file '" + path + "'");
  return parse(in, path);
}

std::string RegexRuleSet::to_text() const {
  std::string out;
  for (const auto& r : rules_) {
    out += r.name;
    out += '\t';
    out += scope_name(r.scope);
    out += '\t';
    out += r.pattern;
    out += '\n';
  }
  return out;
}

std::vector<Vector> regex_features(const Sentence& sentence, const RegexRuleSet& rules) {
  std::vector<Vector> out(sentence.size(), Vector(rules.size()));
  for (std::size_t r = 0; r < rules.size(); ++r) {
    const RegexRule& rule = rules.rules()[r];
    const std::size_t offset = scope_offset(rule.scope);
    for (std::size_t t = offset; t < sentence.size(); ++t) {
      if (std::regex_search(sentence.tokens[t - offset].surface, rule.compiled)) out[t][r] = 1.0;
    }
  }
  return out;
}

// --- assembly -----------------------------------------------------------

FeatureSet FeatureSet::parse(std::string_view list) {
  FeatureSet set;
  bool word = false;
  std::size_t start = 0;
  while (start <= list.size()) {
    std::size_t comma = list.find(',', start);
    if (comma == std::string_view::npos) comma = list.size();
    std::string_view item = list.substr(start, comma - start);
    if (item == "word") word = true;
    else if (item == "pos") set.pos = true;
    else if (item == "chunk") set.chunk = true;
    else if (item == "case") set.letter_case = true;
    else if (item == "regex") set.regex = true;
    else if (!item.empty()) throw Error(ErrorCode::BadConfig, "unknown feature '" + std::string(item) + "'");
    start = comma + 1;
  }
  if (!word) throw Error(ErrorCode::BadConfig, "feature list must include 'word'");
  return set;
}

std::string FeatureSet::to_string() const {
  std::string out = "word";
  if (pos) out += ",pos";
  if (chunk) out += ",chunk";
  if (letter_case) out += ",case";
  if (regex) out += ",regex";
  return out;
}

bool FeatureSet::has(Feature f) const {
  switch (f) {
    case Feature::Word: return true;
    case Feature::Pos: return pos;
    case Feature::Chunk: return chunk;
    case Feature::Case: return letter_case;
    case Feature::Regex: return regex;
  }
  return false;
}

std::size_t input_width(const FeatureSet& f, std::size_t word_dim, const TagEncoders& encoders,
                        const RegexRuleSet& rules) {
  std::size_t width = word_dim;
  if (f.pos) width += encoders.pos.width();
  if (f.chunk) width += encoders.chunk.width();
  if (f.letter_case) width += kCaseWidth;
  if (f.regex) width += rules.size();
  return width;
}

std::vector<Vector> assemble_inputs(const Sentence& sentence, const FeatureSet& f,
                                    const FeatureResources& res, Rng& oov_rng) {
  const std::size_t width = input_width(f, res.table->dim(), *res.encoders, *res.rules);
  std::vector<Vector> regex;
  if (f.regex) regex = regex_features(sentence, *res.rules);

  std::vector<Vector> out;
  out.reserve(sentence.size());
  for (std::size_t t = 0; t < sentence.size(); ++t) {
    const Token& token = sentence.tokens[t];
    std::vector<double> values;
    values.reserve(width);
    auto append = [&](const Vector& v) { values.insert(values.end(), v.begin(), v.end()); };
    append(res.table->lookup(token.surface, oov_rng));
    if (f.pos) append(res.encoders->pos.one_hot(token.pos));
    if (f.chunk) append(res.encoders->chunk.one_hot(token.chunk));
    if (f.letter_case) append(case_feature(token.surface));
    if (f.regex) append(regex[t]);
    out.emplace_back(std::move(values));
  }
  return out;
}

// --- pipeline -----------------------------------------------------------

FeaturePipeline::FeaturePipeline(FeatureSet features, EmbeddingTable table, TagEncoders encoders,
                                 RegexRuleSet rules)
    : features_(features), table_(std::move(table)), encoders_(std::move(encoders)), rules_(std::move(rules)) {}

FeaturePipeline FeaturePipeline::build(const FeatureConfig& config, std::span<const Sentence> train,
                                       const EmbeddingTable* pretrained, RegexRuleSet rules, Rng& rng) {
  std::vector<std::string> vocabulary;
  for (const auto& s : train) {
    for (const auto& t : s.tokens) vocabulary.push_back(t.surface);
  }
  std::optional<EmbeddingTable> table;
  switch (config.mode) {
    case EmbeddingMode::Pretrained:
      if (!pretrained) throw Error(ErrorCode::BadConfig, "pretrained embedding mode needs an embedding table");
      table.emplace(*pretrained);
      break;
    case EmbeddingMode::Random:
      table.emplace(EmbeddingTable::random(vocabulary, config.word_dim, rng));
      break;
    case EmbeddingMode::OneHot:
      table.emplace(EmbeddingTable::one_hot(vocabulary));
      break;
  }
  if (!config.features.regex) rules = RegexRuleSet{};
  return FeaturePipeline(config.features, std::move(*table), encode_tagset(train), std::move(rules));
}

std::size_t FeaturePipeline::input_dim() const {
  return input_width(features_, table_.dim(), encoders_, rules_);
}

std::vector<Vector> FeaturePipeline::assemble(const Sentence& sentence, Rng& oov_rng) {
  return assemble_inputs(sentence, features_, FeatureResources{&table_, &encoders_, &rules_}, oov_rng);
}

void FeaturePipeline::restrict_vocabulary(std::span<const Sentence> sentences) {
  std::vector<std::string> words;
  for (const auto& s : sentences) {
    for (const auto& t : s.tokens) words.push_back(t.surface);
  }
  table_ = table_.restricted_to(words);
}

std::string FeaturePipeline::metadata_json() const {
  nlohmann::json j;
  j["features"] = features_.to_string();
  j["embedding_mode"] = std::string(to_string(table_.mode()));
  j["embedding_dim"] = table_.dim();
  j["words"] = table_.words();
  j["pos_tags"] = encoders_.pos.tags();
  j["chunk_tags"] = encoders_.chunk.tags();
  j["regex_rules"] = rules_.to_text();
  return j.dump();
}

std::vector<double> FeaturePipeline::payload() const {
  std::vector<double> values;
  if (table_.mode() == EmbeddingMode::OneHot) return values;  // rebuilt from the word list
  for (const auto& w : table_.words()) {
    Vector v = *table_.find(w);
    values.insert(values.end(), v.begin(), v.end());
  }
  return values;
}

FeaturePipeline FeaturePipeline::from_metadata(const std::string& json, std::span<const double> payload) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("feature record: ") + e.what());
  }
  try {
    auto mode = parse_embedding_mode(j.at("embedding_mode").get<std::string>());
    if (!mode) throw Error(ErrorCode::BadConfig, "feature record: unknown embedding mode");
    auto words = j.at("words").get<std::vector<std::string>>();
    std::size_t dim = j.at("embedding_dim").get<std::size_t>();
    std::optional<EmbeddingTable> table;
    if (*mode == EmbeddingMode::OneHot) {
      table.emplace(EmbeddingTable::one_hot(words));
    } else {
      if (payload.size() != words.size() * dim) {
        throw Error(ErrorCode::TruncatedFile, "feature record: embedding payload has " +
                                                  std::to_string(payload.size()) + " values, expected " +
                                                  std::to_string(words.size() * dim));
      }
      table.emplace(dim, *mode);
      for (std::size_t i = 0; i < words.size(); ++i) {
        table->insert(words[i], Vector(std::vector<double>(payload.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                                           payload.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim))));
      }
    }
    TagEncoders encoders{TagEncoder(j.at("pos_tags").get<std::vector<std::string>>()),
                         TagEncoder(j.at("chunk_tags").get<std::vector<std::string>>())};
    std::istringstream rules_text(j.at("regex_rules").get<std::string>());
    return FeaturePipeline(FeatureSet::parse(j.at("features").get<std::string>()), std::move(*table),
                           std::move(encoders), RegexRuleSet::parse(rules_text, "<model>"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("feature record: ") + e.what());
  }
}

}  // namespace sqtag
