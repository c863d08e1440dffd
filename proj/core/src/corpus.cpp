#include "sqtag/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "sqtag/error.hpp"
#include "sqtag/numerics.hpp"

namespace sqtag {

namespace {

std::vector<std::string> split_columns(std::string_view line) {
  std::vector<std::string> columns;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) columns.emplace_back(line.substr(start, i - start));
  }
  return columns;
}

bool is_blank(std::string_view line) {
  return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

std::string position_text(std::size_t i) { return "position " + std::to_string(i); }

class SpanBuilder {
 public:
  void open(std::string type, std::size_t at) {
    close(at);
    type_ = std::move(type);
    start_ = at;
    active_ = true;
  }
  void close(std::size_t at) {
    if (active_) spans_.push_back({type_, start_, at - 1});
    active_ = false;
  }
  bool continues(const std::string& type) const { return active_ && type_ == type; }
  std::vector<EntitySpan> finish(std::size_t length) {
    close(length);
    return std::move(spans_);
  }

 private:
  std::vector<EntitySpan> spans_;
  std::string type_;
  std::size_t start_ = 0;
  bool active_ = false;
};

ParsedLabel require_label(std::string_view label, std::size_t i) {
  auto parsed = parse_label(label);
  if (!parsed) {
    throw Error(ErrorCode::InvalidLabel, "'" + std::string(label) + "' at " + position_text(i));
  }
  return *parsed;
}

LabelSequence spans_to_iob1(std::span<const EntitySpan> spans, std::size_t length) {
  LabelSequence labels(length, "O");
  const EntitySpan* prev = nullptr;
  for (const auto& span : spans) {
    for (std::size_t i = span.start; i <= span.end; ++i) labels[i] = "I-" + span.entity_type;
    bool adjacent_same_type =
        prev && prev->end + 1 == span.start && prev->entity_type == span.entity_type;
    if (adjacent_same_type) labels[span.start] = "B-" + span.entity_type;
    prev = &span;
  }
  return labels;
}

}  // namespace

std::vector<std::string> Sentence::gold_labels() const {
  std::vector<std::string> labels;
  labels.reserve(tokens.size());
  for (const auto& t : tokens) labels.push_back(t.gold_label.empty() ? "O" : t.gold_label);
  return labels;
}

std::vector<std::string> Sentence::predicted_labels() const {
  std::vector<std::string> labels;
  labels.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (!t.predicted_label) {
      throw Error(ErrorCode::MissingPredictions, "token '" + t.surface + "' has no prediction");
    }
    labels.push_back(*t.predicted_label);
  }
  return labels;
}

std::optional<Scheme> parse_scheme(std::string_view name) {
  if (name == "iob1" || name == "IOB1") return Scheme::Iob1;
  if (name == "iob2" || name == "IOB2" || name == "bio" || name == "BIO") return Scheme::Iob2;
  return std::nullopt;
}

const std::set<std::string>& default_entity_types() {
  static const std::set<std::string> types{"LOC", "MISC", "ORG", "PER"};
  return types;
}

std::size_t ColumnMap::highest() const { return std::max({surface, pos, chunk, label}); }

std::optional<ParsedLabel> parse_label(std::string_view label) {
  if (label == "O") return ParsedLabel{'O', {}};
  if (label.size() < 3 || label[1] != '-') return std::nullopt;
  if (label[0] != 'B' && label[0] != 'I') return std::nullopt;
  return ParsedLabel{label[0], std::string(label.substr(2))};
}

std::vector<EntitySpan> extract_spans(std::span<const std::string> labels, Strictness strictness) {
  SpanBuilder builder;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ParsedLabel p = require_label(labels[i], i);
    if (p.prefix == 'O') {
      builder.close(i);
    } else if (p.prefix == 'B') {
      builder.open(p.entity_type, i);
    } else if (!builder.continues(p.entity_type)) {
      if (strictness == Strictness::Strict) {
        throw Error(ErrorCode::InvalidSequence,
                    "'" + labels[i] + "' does not continue an entity at " + position_text(i));
      }
      builder.open(p.entity_type, i);
    }
  }
  return builder.finish(labels.size());
}

std::vector<EntitySpan> extract_spans_iob1(std::span<const std::string> labels,
                                           Strictness strictness) {
  SpanBuilder builder;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ParsedLabel p = require_label(labels[i], i);
    if (p.prefix == 'O') {
      builder.close(i);
    } else if (p.prefix == 'I') {
      if (!builder.continues(p.entity_type)) builder.open(p.entity_type, i);
    } else {
      if (!builder.continues(p.entity_type) && strictness == Strictness::Strict) {
        throw Error(ErrorCode::InvalidSequence,
                    "'" + labels[i] + "' does not follow a same-type entity at " + position_text(i));
      }
      builder.open(p.entity_type, i);
    }
  }
  return builder.finish(labels.size());
}

LabelSequence spans_to_labels(std::span<const EntitySpan> spans, std::size_t length) {
  LabelSequence labels(length, "O");
  for (const auto& span : spans) {
    if (span.start > span.end || span.end >= length) {
      throw Error(ErrorCode::InvalidSequence,
                  "span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                      "] outside sequence of length " + std::to_string(length));
    }
    labels[span.start] = "B-" + span.entity_type;
    for (std::size_t i = span.start + 1; i <= span.end; ++i) labels[i] = "I-" + span.entity_type;
  }
  return labels;
}

bool is_valid_iob2(std::span<const std::string> labels) {
  try {
    extract_spans(labels, Strictness::Strict);
    return true;
  } catch (const Error&) {
    return false;
  }
}

LabelSequence repair_iob(std::span<const std::string> labels) {
  LabelSequence out(labels.begin(), labels.end());
  std::string open_type;  // type of the entity the previous label belongs to
  for (auto& label : out) {
    auto p = parse_label(label);
    if (!p || p->prefix == 'O') {
      open_type.clear();
      continue;
    }
    if (p->prefix == 'I' && open_type != p->entity_type) label = "B-" + p->entity_type;
    open_type = p->entity_type;
  }
  return out;
}

LabelSequence convert_scheme(std::span<const std::string> labels, Scheme from, Scheme to) {
  std::vector<EntitySpan> spans = from == Scheme::Iob1
                                      ? extract_spans_iob1(labels, Strictness::Strict)
                                      : extract_spans(labels, Strictness::Strict);
  return to == Scheme::Iob1 ? spans_to_iob1(spans, labels.size())
                            : spans_to_labels(spans, labels.size());
}

std::vector<Sentence> read_conll(std::istream& in, const ReadOptions& options) {
  std::vector<Sentence> sentences;
  Sentence current;
  std::vector<std::size_t> line_of_token;
  const ColumnMap& map = options.columns;
  const std::size_t needed = options.require_label ? map.highest() + 1 : map.surface + 1;

  auto where = [&](std::size_t line_no) {
    return options.source_name + ":" + std::to_string(line_no);
  };

  auto flush = [&]() {
    if (current.tokens.empty()) return;
    if (options.require_label) {
      LabelSequence labels = current.gold_labels();
      std::vector<EntitySpan> spans;
      try {
        spans = options.scheme == Scheme::Iob1 ? extract_spans_iob1(labels, options.strictness)
                                               : extract_spans(labels, options.strictness);
      } catch (const Error& e) {
        // Map the offending position back to its source line.
        std::string msg = e.what();
        std::size_t at = msg.rfind("position ");
        std::size_t line_no = line_of_token.front();
        if (at != std::string::npos) {
          std::size_t idx = std::stoul(msg.substr(at + 9));
          if (idx < line_of_token.size()) line_no = line_of_token[idx];
        }
        throw Error(ErrorCode::InvalidSequence, where(line_no) + ": " + msg);
      }
      LabelSequence normalized = spans_to_labels(spans, labels.size());
      for (std::size_t i = 0; i < normalized.size(); ++i) current.tokens[i].gold_label = normalized[i];
    }
    if (options.max_length > 0 && current.size() > options.max_length) {
      for (auto& piece : split_long_sentence(current, options.max_length)) {
        sentences.push_back(std::move(piece));
      }
    } else {
      sentences.push_back(std::move(current));
    }
    current = Sentence{};
    line_of_token.clear();
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line)) {
      flush();
      continue;
    }
    if (line.rfind("-DOCSTART-", 0) == 0) {
      flush();
      continue;
    }
    std::vector<std::string> columns = split_columns(line);
    if (columns.size() < needed) {
      throw Error(ErrorCode::MalformedLine, where(line_no) + ": expected at least " +
                                                std::to_string(needed) + " columns, found " +
                                                std::to_string(columns.size()));
    }
    auto column = [&](std::size_t idx) { return idx < columns.size() ? columns[idx] : std::string(); };

    Token token;
    token.surface = column(map.surface);
    token.pos = column(map.pos);
    token.chunk = column(map.chunk);
    if (options.require_label) {
      std::string label = column(map.label);
      auto parsed = parse_label(label);
      bool known = parsed && (parsed->prefix == 'O' || options.entity_types.count(parsed->entity_type));
      if (!known) {
        if (options.strictness == Strictness::Strict) {
          throw Error(ErrorCode::InvalidLabel, where(line_no) + ": '" + label + "'");
        }
        label = "O";
      }
      token.gold_label = std::move(label);
    }
    token.columns = std::move(columns);
    current.tokens.push_back(std::move(token));
    line_of_token.push_back(line_no);
  }
  flush();
  return sentences;
}

std::vector<Sentence> read_conll_file(const std::string& path, ReadOptions options) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  options.source_name = path;
  return read_conll(in, options);
}

void write_conll(std::ostream& out, std::span<const Sentence> sentences, bool append_predictions) {
  bool first = true;
  for (const auto& sentence : sentences) {
    if (!first) out << '\n';
    first = false;
    for (const auto& token : sentence.tokens) {
      std::vector<std::string> columns = token.columns;
      if (columns.empty()) columns = {token.surface, token.pos, token.chunk, token.gold_label};
      for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) out << ' ';
        out << columns[i];
      }
      if (append_predictions) out << ' ' << token.predicted_label.value_or("O");
      out << '\n';
    }
  }
}

std::size_t CorpusStats::total_entities() const {
  std::size_t total = 0;
  for (const auto& [type, count] : entities_per_type) total += count;
  return total;
}

CorpusStats stats(std::span<const Sentence> sentences) {
  CorpusStats s;
  for (const auto& type : default_entity_types()) s.entities_per_type[type] = 0;
  for (const auto& sentence : sentences) {
    ++s.sentences;
    s.tokens += sentence.size();
    for (const auto& span : extract_spans(sentence.gold_labels(), Strictness::Lenient)) {
      ++s.entities_per_type[span.entity_type];
    }
  }
  return s;
}

std::string render_stats(const CorpusStats& s) {
  static const std::map<std::string, std::string> long_names{
      {"LOC", "Location"}, {"ORG", "Organization"}, {"PER", "Person"}, {"MISC", "Miscellaneous names"}};
  std::vector<std::pair<std::string, std::size_t>> rows;
  for (const auto& [type, count] : s.entities_per_type) {
    auto it = long_names.find(type);
    rows.emplace_back(it == long_names.end() ? type : it->second, count);
  }
  std::ostringstream out;
  std::size_t width = 12;
  for (const auto& [name, count] : rows) width = std::max(width, name.size());
  out << std::left << std::setw(static_cast<int>(width)) << "Entity Types" << "  " << std::right
      << std::setw(8) << "Count" << '\n';
  for (const auto& [name, count] : rows) {
    out << std::left << std::setw(static_cast<int>(width)) << name << "  " << std::right
        << std::setw(8) << count << '\n';
  }
  out << std::left << std::setw(static_cast<int>(width)) << "All" << "  " << std::right
      << std::setw(8) << s.total_entities() << '\n';
  out << '\n';
  out << "sentences=" << s.sentences << '\n';
  out << "tokens=" << s.tokens << '\n';
  for (const auto& [type, count] : s.entities_per_type) out << "entities." << type << '=' << count << '\n';
  out << "entities.total=" << s.total_entities() << '\n';
  return out.str();
}

Split split(std::span<const Sentence> sentences, std::size_t dev_count,
            std::optional<std::uint64_t> seed) {
  const std::size_t n = sentences.size();
  if (dev_count > 0 && dev_count >= n) {
    throw Error(ErrorCode::DevTooLarge, "dev size " + std::to_string(dev_count) +
                                            " leaves no training data out of " + std::to_string(n));
  }
  std::vector<bool> in_dev(n, false);
  if (seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(*seed);
    shuffle_in_place(order, rng);
    for (std::size_t i = 0; i < dev_count; ++i) in_dev[order[i]] = true;
  } else {
    for (std::size_t i = n - dev_count; i < n; ++i) in_dev[i] = true;
  }
  Split result;
  for (std::size_t i = 0; i < n; ++i) (in_dev[i] ? result.dev : result.train).push_back(sentences[i]);
  return result;
}

Split split_fraction(std::span<const Sentence> sentences, double dev_fraction,
                     std::optional<std::uint64_t> seed) {
  if (!(dev_fraction >= 0.0 && dev_fraction < 1.0)) {
    throw Error(ErrorCode::DevTooLarge, "dev fraction must lie in [0, 1)");
  }
  auto k = static_cast<std::size_t>(std::llround(dev_fraction * static_cast<double>(sentences.size())));
  return split(sentences, k, seed);
}

std::vector<Sentence> split_long_sentence(const Sentence& sentence, std::size_t max_length) {
  std::vector<Sentence> pieces;
  std::size_t begin = 0;
  const std::size_t n = sentence.size();
  auto starts_inside_entity = [&](std::size_t i) {
    auto p = parse_label(sentence.tokens[i].gold_label);
    return p && p->prefix == 'I';
  };
  while (n - begin > max_length) {
    // Cut at the last entity boundary within the window; an entity longer
    // than the window is cut at the limit as a last resort.
    std::size_t cut = begin + max_length;
    while (cut > begin + 1 && starts_inside_entity(cut)) --cut;
    if (starts_inside_entity(cut)) cut = begin + max_length;
    Sentence piece;
    piece.tokens.assign(sentence.tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                        sentence.tokens.begin() + static_cast<std::ptrdiff_t>(cut));
    pieces.push_back(std::move(piece));
    begin = cut;
  }
  Sentence rest;
  rest.tokens.assign(sentence.tokens.begin() + static_cast<std::ptrdiff_t>(begin), sentence.tokens.end());
  pieces.push_back(std::move(rest));
  for (auto& piece : pieces) {
    // A last-resort cut can leave a leading I- label.
    LabelSequence repaired = repair_iob(piece.gold_labels());
    for (std::size_t i = 0; i < repaired.size(); ++i) {
      if (!piece.tokens[i].gold_label.empty()) piece.tokens[i].gold_label = repaired[i];
    }
  }
  return pieces;
}

}  // namespace sqtag
