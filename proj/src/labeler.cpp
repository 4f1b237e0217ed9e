#include <algorithm>
#include <unordered_map>

#include "medvqa/synth.hpp"

namespace medvqa::synth {

std::string_view to_string(FindingState s) {
  switch (s) {
    case FindingState::Unmentioned: return "Unmentioned";
    case FindingState::Negative: return "Negative";
    case FindingState::Uncertain: return "Uncertain";
    case FindingState::Positive: return "Positive";
  }
  return "";
}

namespace {

enum class Kind { Finding, Negation, Uncertainty };

struct Phrase {
  std::vector<std::string> words;
  Kind kind;
  const std::string* finding_id;  // Finding only
};

struct Mention {
  Kind kind;
  std::size_t begin;
  std::size_t end;
  const std::string* finding_id;
};

// Phrases indexed by their first word.
class PhraseIndex {
 public:
  explicit PhraseIndex(const FindingLexicon& lexicon) {
    for (const auto& [id, finding] : lexicon.findings) {
      for (const auto& p : finding.phrases) add(p, Kind::Finding, &id);
    }
    for (const auto& p : lexicon.negation_triggers) add(p, Kind::Negation, nullptr);
    for (const auto& p : lexicon.uncertainty_triggers) add(p, Kind::Uncertainty, nullptr);
  }

  // Longest phrase starting at `pos`; on equal length Finding beats Negation
  // beats Uncertainty.
  const Phrase* match(const std::vector<std::string>& words, std::size_t pos) const {
    const auto it = by_first_.find(words[pos]);
    if (it == by_first_.end()) return nullptr;
    const Phrase* best = nullptr;
    for (const auto& phrase : it->second) {
      const auto n = phrase.words.size();
      if (pos + n > words.size()) continue;
      if (!std::equal(phrase.words.begin(), phrase.words.end(), words.begin() + pos)) continue;
      if (!best || n > best->words.size() ||
          (n == best->words.size() && phrase.kind < best->kind)) {
        best = &phrase;
      }
    }
    return best;
  }

 private:
  void add(const std::string& text, Kind kind, const std::string* id) {
    auto words = split_words(text);
    if (words.empty()) return;
    auto& bucket = by_first_[words.front()];
    bucket.push_back(Phrase{std::move(words), kind, id});
  }

  std::unordered_map<std::string, std::vector<Phrase>> by_first_;
};

std::vector<std::string_view> sentences(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == '.' || text[i] == ';' || text[i] == '\n') {
      if (i > start) out.push_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

void raise(FindingState& slot, FindingState candidate) { slot = std::max(slot, candidate); }

}  // namespace

LabelSet extract_labels(const ReportRecord& report, const FindingLexicon& lexicon) {
  LabelSet labels;
  labels.image_id = report.image_id;
  for (const auto& [id, finding] : lexicon.findings) labels.states[id] = FindingState::Unmentioned;

  const PhraseIndex index(lexicon);
  for (const auto sentence : sentences(report.text)) {
    const auto words = split_words(sentence);
    std::vector<Mention> mentions;
    for (std::size_t pos = 0; pos < words.size();) {
      const auto* phrase = index.match(words, pos);
      if (!phrase) {
        ++pos;
        continue;
      }
      mentions.push_back({phrase->kind, pos, pos + phrase->words.size(), phrase->finding_id});
      pos += phrase->words.size();
    }

    for (const auto& m : mentions) {
      if (m.kind != Kind::Finding) continue;
      // nearest preceding trigger inside the window decides
      const Mention* trigger = nullptr;
      for (const auto& t : mentions) {
        if (t.kind == Kind::Finding || t.end > m.begin) continue;
        if (m.begin - t.end > lexicon.scope_window) continue;
        if (!trigger || t.end > trigger->end) trigger = &t;
      }
      auto state = FindingState::Positive;
      if (trigger) {
        state = trigger->kind == Kind::Negation ? FindingState::Negative : FindingState::Uncertain;
      }
      raise(labels.states[*m.finding_id], state);
    }
  }

  for (const auto& [key, value] : report.metadata.items()) {
    const auto it = labels.states.find(key);
    if (it == labels.states.end()) continue;
    if (value.is_boolean()) {
      raise(it->second, value.get<bool>() ? FindingState::Positive : FindingState::Negative);
    } else if (value.is_number_integer() || value.is_number_unsigned()) {
      const auto v = value.get<long long>();
      if (v == 1) raise(it->second, FindingState::Positive);
      if (v == 0) raise(it->second, FindingState::Negative);
    }
  }
  return labels;
}

}  // namespace medvqa::synth
