#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "medvqa/text.hpp"

namespace medvqa::corpus {

enum class Modality { CT, MRI, XRay };
enum class BodyPart { Head, Neck, Chest, Abdomen, Pelvis, Other };
enum class Language { En, Zh };
enum class AnswerType { Open, Closed };
enum class PairSource { Original, Synthesized };

// Parsers accept the SLAKE spellings ("X-Ray", "Pelvic Cavity", ...) as well as
// the enum names, case-insensitively. They throw std::invalid_argument.
Modality parse_modality(std::string_view s);
BodyPart parse_body_part(std::string_view s);
Language parse_language(std::string_view s);
AnswerType parse_answer_type(std::string_view s);
PairSource parse_pair_source(std::string_view s);

// Human-facing spellings, also used as answers by the synthesis templates.
std::string_view display_name(Modality m);   // "CT", "MRI", "X-Ray"
std::string_view display_name(BodyPart b);   // "Head", ..., "Pelvic Cavity"
std::string_view to_string(Language l);      // "en", "zh"
std::string_view to_string(AnswerType t);    // "OPEN", "CLOSED"
std::string_view to_string(PairSource s);    // "original", "synthesized"
std::string_view to_string(BodyPart b);      // "head", ..., "pelvis"

struct ImageRecord {
  std::string image_id;
  std::string path;  // relative to the corpus root
  Modality modality = Modality::XRay;
  BodyPart body_part = BodyPart::Other;
  std::optional<std::string> orientation;
  std::string source;

  bool operator==(const ImageRecord&) const = default;
};

struct Provenance {
  PairSource source = PairSource::Original;
  std::optional<std::string> template_id;

  bool operator==(const Provenance&) const = default;
};

struct QAPair {
  std::string pair_id;
  std::string image_id;
  std::string question;
  std::string answer;
  Language q_lang = Language::En;
  AnswerType answer_type = AnswerType::Open;
  Provenance provenance;

  bool operator==(const QAPair&) const = default;
};

json to_json(const ImageRecord& image);
json to_json(const QAPair& pair);
// Both throw std::invalid_argument on missing keys or invariant violations.
ImageRecord image_from_json(const json& j);
QAPair pair_from_json(const json& j);

struct Corpus {
  std::vector<ImageRecord> images;
  std::vector<QAPair> pairs;
};

/// Loads `<root>/images.jsonl` and `<root>/qa.jsonl`.
///
/// qa.jsonl is mandatory (CorpusNotFoundError otherwise); a missing
/// images.jsonl is read as an empty image table, so any pair then fails the
/// referential check. Line-level problems raise ParseError with the 1-based
/// line number; duplicate ids, paths escaping the root and dangling image_ids
/// raise IntegrityError. With `language_filter` set, pairs in other languages
/// are dropped after validation; images are always returned in full.
Corpus load_corpus(const std::filesystem::path& root,
                   std::optional<Language> language_filter = std::nullopt);

void save_corpus(const std::filesystem::path& root, const Corpus& corpus);

// ---------------------------------------------------------------------------
// Splitting

enum class SplitPart { Train, Val, Test };
std::string_view to_string(SplitPart p);
SplitPart parse_split_part(std::string_view s);

using Ratios = std::array<double, 3>;
inline constexpr Ratios kDefaultRatios{0.70, 0.15, 0.15};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  Ratios ratios = kDefaultRatios;
  std::uint64_t seed = 0;

  const std::vector<std::string>& part(SplitPart p) const;
  bool operator==(const DatasetSplit&) const = default;
};

json to_json(const DatasetSplit& split);
DatasetSplit split_from_json(const json& j);

struct SplitResult {
  DatasetSplit split;
  std::vector<std::string> warnings;
};

/// Largest-remainder apportionment of n items over (train, val, test).
/// Seats left after flooring go to the largest fractional parts; equal
/// fractions are served train, then val, then test.
std::array<std::size_t, 3> largest_remainder(std::size_t n, const Ratios& ratios);

/// Image-level split, stratified per (body_part, modality). Within a stratum
/// the sorted image_ids are shuffled with a seed derived from (seed, stratum)
/// and cut at the largest-remainder sizes. Strata with fewer than 3 images go
/// entirely to train and produce a warning. Each output list is sorted.
SplitResult split_corpus(std::span<const ImageRecord> images, const Ratios& ratios,
                         std::uint64_t seed);

/// Pairs whose image belongs to `part`, preserving input order.
std::vector<QAPair> select_pairs(std::span<const QAPair> pairs, const DatasetSplit& split,
                                 SplitPart part);

// ---------------------------------------------------------------------------
// Answer vocabulary

enum class UnkPolicy { Reject, MapToReserved };

class AnswerVocabulary {
 public:
  static constexpr std::string_view kReservedAnswer = "<unk>";

  AnswerVocabulary() = default;
  // `answers` must be distinct under normalize_answer.
  explicit AnswerVocabulary(std::vector<std::string> answers,
                            UnkPolicy policy = UnkPolicy::Reject);

  std::size_t size() const noexcept { return answers_.size(); }
  bool empty() const noexcept { return answers_.empty(); }
  const std::vector<std::string>& answers() const noexcept { return answers_; }
  const std::string& answer(std::size_t index) const { return answers_.at(index); }
  UnkPolicy unk_policy() const noexcept { return policy_; }

  /// Case- and whitespace-insensitive lookup. Unknown answers give nullopt
  /// under Reject and the reserved slot under MapToReserved.
  std::optional<std::size_t> index_of(std::string_view answer) const;
  /// Exact membership, ignoring the reserved slot.
  bool contains(std::string_view answer) const;

  json to_json() const;
  static AnswerVocabulary from_json(const json& j);
  void save(const std::filesystem::path& path) const;
  static AnswerVocabulary load(const std::filesystem::path& path);

  bool operator==(const AnswerVocabulary& other) const {
    return answers_ == other.answers_ && policy_ == other.policy_;
  }

 private:
  std::vector<std::string> answers_;
  std::unordered_map<std::string, std::size_t> index_;
  UnkPolicy policy_ = UnkPolicy::Reject;
};

/// Answers with frequency >= min_freq, ordered by descending frequency with
/// ties broken lexicographically on the normalized form. Spellings that
/// normalize equal count together; the most common spelling is kept.
/// Throws DomainError for no pairs, VocabularyError when nothing survives.
AnswerVocabulary build_vocab(std::span<const QAPair> train_pairs, std::size_t min_freq = 1,
                             UnkPolicy policy = UnkPolicy::Reject);

// ---------------------------------------------------------------------------
// Question tokens

class TextVocabulary {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;

  TextVocabulary();
  explicit TextVocabulary(const std::vector<std::string>& words);

  std::size_t size() const noexcept { return words_.size(); }
  int id_of(const std::string& word) const;
  const std::vector<std::string>& words() const noexcept { return words_; }

  json to_json() const;
  static TextVocabulary from_json(const json& j);

 private:
  std::vector<std::string> words_;  // words_[0] = "<pad>", words_[1] = "<unk>"
  std::unordered_map<std::string, int> ids_;
};

/// Word vocabulary over the given questions (descending frequency,
/// lexicographic ties), after the two reserved entries.
TextVocabulary build_text_vocab(std::span<const QAPair> pairs, std::size_t min_freq = 1);

struct TokenSequence {
  std::vector<int> ids;  // always max_len long
  std::size_t length = 0;
  int pad_id = TextVocabulary::kPadId;
  int unk_id = TextVocabulary::kUnkId;

  bool operator==(const TokenSequence&) const = default;
};

TokenSequence tokenize(std::string_view question, const TextVocabulary& vocab,
                       std::size_t max_len);

// ---------------------------------------------------------------------------
// Batching

using Batch = std::vector<std::size_t>;  // indices into the pair sequence

/// Single-consumer stream over the pairs of one split part. The order is a
/// permutation drawn from (seed, epoch) alone; the last batch may be short.
class BatchStream {
 public:
  BatchStream(std::span<const QAPair> pairs, const DatasetSplit& split, SplitPart part,
              std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

  std::optional<Batch> next();
  std::size_t batch_count() const noexcept;

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

/// Convenience: drains a BatchStream.
std::vector<Batch> batches(std::span<const QAPair> pairs, const DatasetSplit& split,
                           SplitPart part, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t epoch);

}  // namespace medvqa::corpus
