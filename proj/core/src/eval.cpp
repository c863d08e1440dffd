#include "sqtag/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <iterator>
#include <sstream>

#include "sqtag/error.hpp"

namespace sqtag {

namespace {

double percent(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

std::vector<EntitySpan> filtered(std::vector<EntitySpan> spans, const TypeFilter& types) {
  if (!types) return spans;
  std::erase_if(spans, [&](const EntitySpan& s) { return types->count(s.entity_type) == 0; });
  return spans;
}

void accumulate(ScoreReport& report, std::span<const std::string> gold_labels,
                std::span<const std::string> predicted_labels, const TypeFilter& types) {
  if (gold_labels.size() != predicted_labels.size()) {
    throw Error(ErrorCode::MissingPredictions, std::to_string(predicted_labels.size()) + " predictions for " +
                                                   std::to_string(gold_labels.size()) + " tokens");
  }
  auto gold = filtered(extract_spans(gold_labels, Strictness::Strict), types);
  auto predicted = filtered(extract_spans(predicted_labels, Strictness::Lenient), types);
  std::sort(gold.begin(), gold.end());
  std::sort(predicted.begin(), predicted.end());

  for (const auto& s : gold) ++report.per_type[s.entity_type].gold;
  for (const auto& s : predicted) ++report.per_type[s.entity_type].predicted;
  std::vector<EntitySpan> common;
  std::set_intersection(gold.begin(), gold.end(), predicted.begin(), predicted.end(), std::back_inserter(common));
  for (const auto& s : common) ++report.per_type[s.entity_type].correct;

  report.overall.gold += gold.size();
  report.overall.predicted += predicted.size();
  report.overall.correct += common.size();
  report.tokens += gold_labels.size();
  for (std::size_t i = 0; i < gold_labels.size(); ++i) {
    if (gold_labels[i] == predicted_labels[i]) ++report.correct_tokens;
  }
}

}  // namespace

double f1(double precision, double recall) {
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double TypeScore::precision() const { return percent(correct, predicted); }
double TypeScore::recall() const { return percent(correct, gold); }
double TypeScore::f1() const { return sqtag::f1(precision(), recall()); }

double ScoreReport::token_accuracy() const { return percent(correct_tokens, tokens); }

ScoreReport score(std::span<const Sentence> sentences, const TypeFilter& types) {
  ScoreReport report;
  for (const auto& sentence : sentences) {
    accumulate(report, sentence.gold_labels(), sentence.predicted_labels(), types);
  }
  return report;
}

ScoreReport score_sequences(std::span<const LabeledPair> pairs, const TypeFilter& types) {
  ScoreReport report;
  for (const auto& p : pairs) accumulate(report, p.gold, p.predicted, types);
  return report;
}

std::string render(const ScoreReport& report) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "processed %zu tokens with %zu phrases; found: %zu phrases; correct: %zu.\n",
                report.tokens, report.overall.gold, report.overall.predicted, report.overall.correct);
  out << buf;
  std::snprintf(buf, sizeof buf, "accuracy: %6.2f%%; precision: %6.2f%%; recall: %6.2f%%; FB1: %6.2f\n",
                report.token_accuracy(), report.overall.precision(), report.overall.recall(),
                report.overall.f1());
  out << buf;
  std::snprintf(buf, sizeof buf, "%-8s %8s %8s %8s %9s %9s %9s\n", "type", "gold", "found", "correct", "prec.",
                "rec.", "F1");
  out << buf;
  auto row = [&](const std::string& name, const TypeScore& s) {
    std::snprintf(buf, sizeof buf, "%-8s %8zu %8zu %8zu %9.2f %9.2f %9.2f\n", name.c_str(), s.gold, s.predicted,
                  s.correct, s.precision(), s.recall(), s.f1());
    out << buf;
  };
  for (const auto& [type, s] : report.per_type) row(type, s);
  row("ALL", report.overall);
  return out.str();
}

std::vector<Sentence> read_conlleval(std::istream& in, Scheme scheme, const std::string& source_name) {
  std::vector<Sentence> sentences;
  Sentence current;
  std::vector<std::size_t> lines;
  auto where = [&](std::size_t line_no) { return source_name + ":" + std::to_string(line_no); };

  auto flush = [&] {
    if (current.tokens.empty()) return;
    LabelSequence gold = current.gold_labels();
    LabelSequence predicted;
    for (const auto& t : current.tokens) predicted.push_back(*t.predicted_label);
    try {
      gold = convert_scheme(gold, scheme, Scheme::Iob2);
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidSequence,
                  where(lines.front()) + ": gold labels of the sentence starting here: " + e.what());
    }
    auto spans = scheme == Scheme::Iob1 ? extract_spans_iob1(predicted, Strictness::Lenient)
                                        : extract_spans(predicted, Strictness::Lenient);
    predicted = spans_to_labels(spans, predicted.size());
    for (std::size_t i = 0; i < gold.size(); ++i) {
      current.tokens[i].gold_label = gold[i];
      current.tokens[i].predicted_label = predicted[i];
    }
    sentences.push_back(std::move(current));
    current = Sentence{};
    lines.clear();
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::vector<std::string> columns{std::istream_iterator<std::string>(fields), {}};
    if (columns.empty() || columns[0] == "-DOCSTART-") {
      flush();
      continue;
    }
    if (columns.size() < 3) {
      throw Error(ErrorCode::MalformedLine, where(line_no) + ": expected at least 3 columns (token, gold, "
                                                              "prediction), found " +
                                                std::to_string(columns.size()));
    }
    const std::string& gold = columns[columns.size() - 2];
    const std::string& predicted = columns.back();
    for (const auto* label : {&gold, &predicted}) {
      if (!parse_label(*label)) throw Error(ErrorCode::InvalidLabel, where(line_no) + ": '" + *label + "'");
    }
    Token token;
    token.surface = columns[0];
    token.gold_label = gold;
    token.predicted_label = predicted;
    token.columns = std::move(columns);
    current.tokens.push_back(std::move(token));
    lines.push_back(line_no);
  }
  flush();
  return sentences;
}

TypeFilter parse_type_filter(const std::string& comma_list) {
  if (comma_list.empty()) return std::nullopt;
  std::set<std::string> types;
  std::size_t start = 0;
  while (start <= comma_list.size()) {
    std::size_t comma = comma_list.find(',', start);
    if (comma == std::string::npos) comma = comma_list.size();
    std::string type = comma_list.substr(start, comma - start);
    type.erase(0, type.find_first_not_of(" \t"));
    type.erase(type.find_last_not_of(" \t") + 1);
    if (!type.empty()) types.insert(type);
    start = comma + 1;
  }
  return types;
}

}  // namespace sqtag
