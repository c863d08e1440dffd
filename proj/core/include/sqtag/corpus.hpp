#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sqtag {

struct Token {
  std::string surface;
  std::string pos;
  std::string chunk;
  std::string gold_label;
  std::optional<std::string> predicted_label;
  // All columns as read, so a sentence can be written back unchanged.
  std::vector<std::string> columns;
};

struct Sentence {
  std::vector<Token> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  std::vector<std::string> gold_labels() const;
  std::vector<std::string> predicted_labels() const;
};

struct EntitySpan {
  std::string entity_type;
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // inclusive

  auto operator<=>(const EntitySpan&) const = default;
};

using LabelSequence = std::vector<std::string>;

enum class Scheme { Iob1, Iob2 };
enum class Strictness { Strict, Lenient };

std::optional<Scheme> parse_scheme(std::string_view name);

const std::set<std::string>& default_entity_types();

struct ColumnMap {
  std::size_t surface = 0;
  std::size_t pos = 1;
  std::size_t chunk = 2;
  std::size_t label = 3;

  std::size_t highest() const;
};

struct ReadOptions {
  ColumnMap columns;
  Scheme scheme = Scheme::Iob2;
  Strictness strictness = Strictness::Strict;
  std::set<std::string> entity_types = default_entity_types();
  // 0 disables splitting.
  std::size_t max_length = 150;
  // When false, lines without a label column are accepted and gold_label is
  // left empty (used when tagging raw input).
  bool require_label = true;
  // Used in error messages.
  std::string source_name = "<input>";
};

/// Parses CoNLL text. Labels are normalised to IOB2 on ingest.
std::vector<Sentence> read_conll(std::istream& in, const ReadOptions& options = {});
std::vector<Sentence> read_conll_file(const std::string& path, ReadOptions options = {});

/// Writes every column of every token separated by single spaces. With
/// `append_predictions`, the predicted label is added as a final column.
void write_conll(std::ostream& out, std::span<const Sentence> sentences,
                 bool append_predictions = false);

// --- IOB label machinery -------------------------------------------------

struct ParsedLabel {
  char prefix = 'O';  // 'O', 'B' or 'I'
  std::string entity_type;
};

/// Parses "O", "B-X" or "I-X". Returns nullopt for anything else.
std::optional<ParsedLabel> parse_label(std::string_view label);

/// Spans from an IOB2 sequence. In strict mode an I-X that does not continue
/// an X entity raises InvalidSequence; lenient mode treats it as B-X.
std::vector<EntitySpan> extract_spans(std::span<const std::string> labels,
                                      Strictness strictness = Strictness::Strict);

/// Spans from an IOB1 sequence (I-X opens an entity unless it continues one;
/// B-X is only legal directly after an X entity).
std::vector<EntitySpan> extract_spans_iob1(std::span<const std::string> labels,
                                           Strictness strictness = Strictness::Strict);

/// Inverse of extract_spans: an IOB2 sequence of `length` labels.
LabelSequence spans_to_labels(std::span<const EntitySpan> spans, std::size_t length);

bool is_valid_iob2(std::span<const std::string> labels);

/// Rewrites every I-X lacking a valid predecessor to B-X.
LabelSequence repair_iob(std::span<const std::string> labels);

LabelSequence convert_scheme(std::span<const std::string> labels, Scheme from, Scheme to);

// --- corpus utilities ----------------------------------------------------

struct CorpusStats {
  std::map<std::string, std::size_t> entities_per_type;
  std::size_t sentences = 0;
  std::size_t tokens = 0;

  std::size_t total_entities() const;
};

CorpusStats stats(std::span<const Sentence> sentences);

/// Aligned table (one row per entity type plus "All") followed by
/// machine-readable `key=value` lines.
std::string render_stats(const CorpusStats& stats);

struct Split {
  std::vector<Sentence> train;
  std::vector<Sentence> dev;
};

/// Holds out `dev_count` sentences. Without a seed the last sentences are
/// taken; with one, a seeded random subset (original order kept in both parts).
Split split(std::span<const Sentence> sentences, std::size_t dev_count,
            std::optional<std::uint64_t> seed = std::nullopt);
Split split_fraction(std::span<const Sentence> sentences, double dev_fraction,
                     std::optional<std::uint64_t> seed = std::nullopt);

/// Breaks a sentence into pieces of at most `max_length` tokens, cutting after
/// the last O-labelled token before the limit so no entity is divided.
std::vector<Sentence> split_long_sentence(const Sentence& sentence, std::size_t max_length);

}  // namespace sqtag
