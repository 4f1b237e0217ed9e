#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medvqa/corpus.hpp"

namespace medvqa::synth {

using corpus::ImageRecord;
using corpus::QAPair;

struct ReportRecord {
  std::string report_id;
  std::string image_id;
  std::string text;
  json metadata = json::object();
  std::string source;
};

ReportRecord report_from_json(const json& j);
std::vector<ReportRecord> load_reports(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Lexicon

struct Finding {
  std::string canonical_name;
  std::vector<std::string> phrases;  // lowercase
};

struct FindingLexicon {
  std::map<std::string, Finding> findings;  // keyed by finding_id
  std::vector<std::string> negation_triggers;
  std::vector<std::string> uncertainty_triggers;
  std::size_t scope_window = 6;
};

/// Checks phrase-set disjointness and non-empty phrases; throws ConfigError.
void validate(const FindingLexicon& lexicon);
FindingLexicon lexicon_from_json(const json& j);
json to_json(const FindingLexicon& lexicon);
FindingLexicon load_lexicon(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Labeling

enum class FindingState { Unmentioned, Negative, Uncertain, Positive };
std::string_view to_string(FindingState s);

struct LabelSet {
  std::string image_id;
  std::map<std::string, FindingState> states;  // one entry per lexicon finding

  FindingState state(const std::string& finding_id) const { return states.at(finding_id); }
};

/// Scoped trigger matcher over the report text.
///
/// Text is cut into sentences at '.', ';' and newlines, and each sentence into
/// words (see split_words). At every word the longest phrase among findings,
/// negation triggers and uncertainty triggers is taken, preferring a finding
/// on equal length. A finding mention is Negative or Uncertain when a trigger
/// of that kind ends at most `scope_window` words before it in the same
/// sentence (the nearest such trigger decides), otherwise Positive.
/// Mentions combine per finding with Positive > Uncertain > Negative.
///
/// Metadata entries whose key is a finding_id and whose value is a boolean
/// (or 0/1) count as one extra Positive/Negative mention.
LabelSet extract_labels(const ReportRecord& report, const FindingLexicon& lexicon);

// ---------------------------------------------------------------------------
// Templates

enum class AnswerRule {
  Presence,     // per finding: Positive -> "Yes", Negative -> "No"
  Modality,     // display name of the image modality
  BodyPart,     // display name of the body part
  Orientation,  // orientation string, verbatim; skipped when absent
  Diagnosis,    // canonical name of the single Positive finding
};

struct QATemplate {
  std::string template_id;
  std::string question_pattern;  // slots: {finding} {body_part} {modality} {orientation}
  AnswerRule rule = AnswerRule::Modality;
  corpus::AnswerType answer_type = corpus::AnswerType::Open;
  std::vector<std::string> findings;  // Presence only; empty means every finding
};

QATemplate template_from_json(const json& j);
std::vector<QATemplate> load_templates(const std::filesystem::path& path);

/// Expands every applicable template. Pair ids are
/// `<id_prefix>:<template_id>[:<finding_id>]`, id_prefix defaulting to the
/// image id. Throws DomainError when labels and image disagree on image_id.
std::vector<QAPair> generate_qa(const ImageRecord& image, const LabelSet& labels,
                                std::span<const QATemplate> templates,
                                const FindingLexicon& lexicon,
                                std::optional<std::string> id_prefix = std::nullopt);

/// Image record implied by a report: metadata may carry modality, body_part,
/// orientation and path; chest X-ray and images/<image_id>.png otherwise.
ImageRecord image_for_report(const ReportRecord& report);

/// All reports of one source turned into a corpus. Reports sharing an image
/// contribute pairs independently (first report defines the ImageRecord);
/// pair ids are prefixed with the report id.
corpus::Corpus synthesize(std::span<const ReportRecord> reports, const FindingLexicon& lexicon,
                          std::span<const QATemplate> templates);

// ---------------------------------------------------------------------------
// Merging

struct SourceCorpus {
  std::string tag;
  corpus::Corpus data;
};

struct SynthesisStats {
  std::map<std::string, std::size_t> pairs_per_source;
  std::map<std::string, std::size_t> pairs_per_answer;
  std::map<std::string, std::size_t> pairs_per_template;  // "original" for non-template pairs
  std::size_t duplicates_removed = 0;
  std::size_t total_pairs = 0;
  std::size_t total_images = 0;

  json to_json() const;
};

struct MergedCorpus {
  corpus::Corpus data;
  SynthesisStats stats;
};

/// Namespaces image ids, pair ids and paths as `<tag>/<id>`, then drops
/// exact (image_id, question, answer) repeats keeping the first. Throws
/// IntegrityError on repeated source tags or colliding ids.
MergedCorpus merge_corpora(std::span<const SourceCorpus> sources);

}  // namespace medvqa::synth
