#include <gtest/gtest.h>

#include "medvqa/errors.hpp"
#include "medvqa/synth.hpp"

using namespace medvqa;
using namespace medvqa::synth;

namespace {

const std::filesystem::path kData = MEDVQA_TEST_DATA;
const std::filesystem::path kShipped = MEDVQA_SHIPPED_DATA;

const FindingLexicon& lexicon() {
  static const FindingLexicon lex = load_lexicon(kShipped / "lexicon.json");
  return lex;
}

ReportRecord report(const std::string& text, json metadata = json::object()) {
  ReportRecord r;
  r.report_id = "r";
  r.image_id = "img";
  r.text = text;
  r.metadata = std::move(metadata);
  return r;
}

FindingState parse_state(const std::string& s) {
  if (s == "Positive") return FindingState::Positive;
  if (s == "Negative") return FindingState::Negative;
  if (s == "Uncertain") return FindingState::Uncertain;
  return FindingState::Unmentioned;
}

}  // namespace

TEST(Lexicon, ShipsFourteenDisjointFindings) {
  EXPECT_EQ(lexicon().findings.size(), 14u);
  EXPECT_EQ(lexicon().scope_window, 6u);
  EXPECT_NO_THROW(validate(lexicon()));
}

TEST(Lexicon, OverlappingPhrasesRejected) {
  auto lex = lexicon();
  lex.findings["pneumonia"].phrases.push_back("effusion");
  EXPECT_THROW(validate(lex), ConfigError);
}

TEST(Labeler, HandTracedSentences) {
  const auto cases = read_json_file(kData / "labeler_oracle.json");
  ASSERT_EQ(cases.size(), 30u);
  for (const auto& c : cases) {
    const auto labels = extract_labels(report(c["text"].get<std::string>()), lexicon());
    for (const auto& [id, state] : labels.states) {
      const auto want = c["expect"].contains(id) ? parse_state(c["expect"][id].get<std::string>())
                                                 : FindingState::Unmentioned;
      EXPECT_EQ(state, want) << c["text"] << " / " << id << ": got " << to_string(state);
    }
  }
}

TEST(Labeler, SpecExamples) {
  EXPECT_EQ(extract_labels(report("No evidence of pneumonia."), lexicon()).state("pneumonia"),
            FindingState::Negative);
  const auto mixed = extract_labels(report("Possible pleural effusion. There is a calcified granuloma."), lexicon());
  EXPECT_EQ(mixed.state("effusion"), FindingState::Uncertain);
  EXPECT_EQ(mixed.state("calcified_granuloma"), FindingState::Positive);
}

TEST(Labeler, EmptyTextAllUnmentioned) {
  const auto labels = extract_labels(report(""), lexicon());
  ASSERT_EQ(labels.states.size(), lexicon().findings.size());
  for (const auto& [id, s] : labels.states) EXPECT_EQ(s, FindingState::Unmentioned) << id;
}

TEST(Labeler, TotalityOverLexicon) {
  for (const auto* text : {"Cardiomegaly.", "no effusion; possible edema", "fracture\nno fracture"}) {
    const auto labels = extract_labels(report(text), lexicon());
    ASSERT_EQ(labels.states.size(), lexicon().findings.size());
    for (const auto& [id, f] : lexicon().findings) EXPECT_TRUE(labels.states.contains(id));
  }
}

TEST(Labeler, NegationOfEveryPhrase) {
  for (const auto& [id, finding] : lexicon().findings) {
    for (const auto& phrase : finding.phrases) {
      const auto labels = extract_labels(report("no " + phrase), lexicon());
      EXPECT_EQ(labels.state(id), FindingState::Negative) << "no " << phrase;
    }
  }
}

TEST(Labeler, SentenceBoundaryStopsScope) {
  EXPECT_EQ(extract_labels(report("No acute change. Pneumothorax."), lexicon()).state("pneumothorax"),
            FindingState::Positive);
  EXPECT_EQ(extract_labels(report("No acute change; pneumothorax"), lexicon()).state("pneumothorax"),
            FindingState::Positive);
}

TEST(Labeler, MetadataFlagsCountAsMentions) {
  const auto labels = extract_labels(report("", {{"pneumonia", true}, {"effusion", 0}, {"edema", "yes"}}), lexicon());
  EXPECT_EQ(labels.state("pneumonia"), FindingState::Positive);
  EXPECT_EQ(labels.state("effusion"), FindingState::Negative);
  EXPECT_EQ(labels.state("edema"), FindingState::Unmentioned);
  // Text evidence and metadata combine under the same priority.
  EXPECT_EQ(extract_labels(report("Possible pneumonia.", {{"pneumonia", 0}}), lexicon()).state("pneumonia"),
            FindingState::Uncertain);
}
