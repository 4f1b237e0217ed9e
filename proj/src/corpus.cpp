#include "medvqa/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "medvqa/errors.hpp"
#include "medvqa/rng.hpp"

namespace medvqa::corpus {

namespace fs = std::filesystem;

namespace {

std::string squash(std::string_view s) {
  // lowercase and drop separators so "X-Ray", "xray" and "X Ray" agree
  std::string out;
  for (char c : to_lower(s)) {
    if (c != '-' && c != '_' && c != ' ') out.push_back(c);
  }
  return out;
}

const std::string& required_string(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw std::invalid_argument(std::string("missing string field '") + key + "'");
  }
  return it->get_ref<const std::string&>();
}

std::optional<std::string> optional_string(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw std::invalid_argument(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

bool escapes_root(const std::string& rel) {
  const fs::path p(rel);
  if (rel.empty() || p.is_absolute() || p.has_root_name()) return true;
  int depth = 0;
  for (const auto& part : p.lexically_normal()) {
    if (part == "..") {
      if (--depth < 0) return true;
    } else if (part != "." && !part.empty()) {
      ++depth;
    }
  }
  return false;
}

}  // namespace

Modality parse_modality(std::string_view s) {
  const auto k = squash(s);
  if (k == "ct") return Modality::CT;
  if (k == "mri" || k == "mr") return Modality::MRI;
  if (k == "xray" || k == "cxr") return Modality::XRay;
  throw std::invalid_argument("unknown modality '" + std::string(s) + "'");
}

BodyPart parse_body_part(std::string_view s) {
  const auto k = squash(s);
  if (k == "head" || k == "brain") return BodyPart::Head;
  if (k == "neck") return BodyPart::Neck;
  if (k == "chest" || k == "lung") return BodyPart::Chest;
  if (k == "abdomen") return BodyPart::Abdomen;
  if (k == "pelvis" || k == "pelviccavity") return BodyPart::Pelvis;
  if (k == "other") return BodyPart::Other;
  throw std::invalid_argument("unknown body part '" + std::string(s) + "'");
}

Language parse_language(std::string_view s) {
  const auto k = to_lower(s);
  if (k == "en") return Language::En;
  if (k == "zh") return Language::Zh;
  throw std::invalid_argument("unknown language '" + std::string(s) + "'");
}

AnswerType parse_answer_type(std::string_view s) {
  const auto k = to_lower(s);
  if (k == "open") return AnswerType::Open;
  if (k == "closed") return AnswerType::Closed;
  throw std::invalid_argument("unknown answer_type '" + std::string(s) + "'");
}

PairSource parse_pair_source(std::string_view s) {
  const auto k = to_lower(s);
  if (k == "original") return PairSource::Original;
  if (k == "synthesized") return PairSource::Synthesized;
  throw std::invalid_argument("unknown provenance source '" + std::string(s) + "'");
}

std::string_view display_name(Modality m) {
  switch (m) {
    case Modality::CT: return "CT";
    case Modality::MRI: return "MRI";
    case Modality::XRay: return "X-Ray";
  }
  return "";
}

std::string_view display_name(BodyPart b) {
  switch (b) {
    case BodyPart::Head: return "Head";
    case BodyPart::Neck: return "Neck";
    case BodyPart::Chest: return "Chest";
    case BodyPart::Abdomen: return "Abdomen";
    case BodyPart::Pelvis: return "Pelvic Cavity";
    case BodyPart::Other: return "Other";
  }
  return "";
}

std::string_view to_string(BodyPart b) {
  switch (b) {
    case BodyPart::Head: return "head";
    case BodyPart::Neck: return "neck";
    case BodyPart::Chest: return "chest";
    case BodyPart::Abdomen: return "abdomen";
    case BodyPart::Pelvis: return "pelvis";
    case BodyPart::Other: return "other";
  }
  return "";
}

std::string_view to_string(Language l) { return l == Language::En ? "en" : "zh"; }
std::string_view to_string(AnswerType t) { return t == AnswerType::Open ? "OPEN" : "CLOSED"; }
std::string_view to_string(PairSource s) {
  return s == PairSource::Original ? "original" : "synthesized";
}

json to_json(const ImageRecord& image) {
  json j;
  j["image_id"] = image.image_id;
  j["path"] = image.path;
  j["modality"] = display_name(image.modality);
  j["body_part"] = to_string(image.body_part);
  j["orientation"] = image.orientation ? json(*image.orientation) : json(nullptr);
  j["source"] = image.source;
  return j;
}

json to_json(const QAPair& pair) {
  json j;
  j["pair_id"] = pair.pair_id;
  j["image_id"] = pair.image_id;
  j["question"] = pair.question;
  j["answer"] = pair.answer;
  j["q_lang"] = to_string(pair.q_lang);
  j["answer_type"] = to_string(pair.answer_type);
  j["provenance"] = {
      {"source", to_string(pair.provenance.source)},
      {"template_id",
       pair.provenance.template_id ? json(*pair.provenance.template_id) : json(nullptr)}};
  return j;
}

ImageRecord image_from_json(const json& j) {
  ImageRecord r;
  r.image_id = required_string(j, "image_id");
  if (r.image_id.empty()) throw std::invalid_argument("empty image_id");
  r.path = required_string(j, "path");
  r.modality = parse_modality(required_string(j, "modality"));
  r.body_part = parse_body_part(required_string(j, "body_part"));
  r.orientation = optional_string(j, "orientation");
  r.source = optional_string(j, "source").value_or("");
  return r;
}

QAPair pair_from_json(const json& j) {
  QAPair p;
  p.pair_id = required_string(j, "pair_id");
  p.image_id = required_string(j, "image_id");
  p.question = required_string(j, "question");
  p.answer = required_string(j, "answer");
  if (p.question.empty()) throw std::invalid_argument("empty question");
  if (p.answer.empty()) throw std::invalid_argument("empty answer");
  p.q_lang = parse_language(required_string(j, "q_lang"));
  p.answer_type = parse_answer_type(required_string(j, "answer_type"));
  if (const auto it = j.find("provenance"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw std::invalid_argument("provenance must be an object");
    p.provenance.source = parse_pair_source(required_string(*it, "source"));
    p.provenance.template_id = optional_string(*it, "template_id");
  }
  if (p.answer_type == AnswerType::Closed) {
    const auto a = normalize_answer(p.answer);
    if (a != "yes" && a != "no") {
      throw std::invalid_argument("CLOSED pair must answer Yes or No, got '" + p.answer + "'");
    }
  }
  if (p.provenance.source == PairSource::Synthesized && !p.provenance.template_id) {
    throw std::invalid_argument("synthesized pair without template_id");
  }
  return p;
}

Corpus load_corpus(const fs::path& root, std::optional<Language> language_filter) {
  const auto qa_path = root / "qa.jsonl";
  const auto images_path = root / "images.jsonl";
  if (!fs::is_regular_file(qa_path)) {
    throw CorpusNotFoundError("corpus not found: " + qa_path.string() + " does not exist");
  }

  Corpus corpus;
  std::unordered_set<std::string> image_ids;
  if (fs::is_regular_file(images_path)) {
    read_jsonl(images_path, [&](const json& j, std::size_t line) {
      auto image = image_from_json(j);
      if (escapes_root(image.path)) {
        throw IntegrityError(images_path.string() + ":" + std::to_string(line) + ": path '" +
                             image.path + "' does not resolve under the corpus root");
      }
      if (!image_ids.insert(image.image_id).second) {
        throw IntegrityError(images_path.string() + ":" + std::to_string(line) +
                             ": duplicate image_id '" + image.image_id + "'");
      }
      corpus.images.push_back(std::move(image));
    });
  }

  std::unordered_set<std::string> pair_ids;
  read_jsonl(qa_path, [&](const json& j, std::size_t line) {
    auto pair = pair_from_json(j);
    if (!image_ids.contains(pair.image_id)) {
      throw IntegrityError(qa_path.string() + ":" + std::to_string(line) + ": pair '" +
                           pair.pair_id + "' refers to unknown image_id '" + pair.image_id + "'");
    }
    if (!pair_ids.insert(pair.pair_id).second) {
      throw IntegrityError(qa_path.string() + ":" + std::to_string(line) +
                           ": duplicate pair_id '" + pair.pair_id + "'");
    }
    if (!language_filter || pair.q_lang == *language_filter) corpus.pairs.push_back(std::move(pair));
  });
  return corpus;
}

void save_corpus(const fs::path& root, const Corpus& corpus) {
  std::vector<json> images;
  images.reserve(corpus.images.size());
  for (const auto& i : corpus.images) images.push_back(to_json(i));
  std::vector<json> pairs;
  pairs.reserve(corpus.pairs.size());
  for (const auto& p : corpus.pairs) pairs.push_back(to_json(p));
  write_jsonl(root / "images.jsonl", images);
  write_jsonl(root / "qa.jsonl", pairs);
}

// ---------------------------------------------------------------------------

std::string_view to_string(SplitPart p) {
  switch (p) {
    case SplitPart::Train: return "train";
    case SplitPart::Val: return "val";
    case SplitPart::Test: return "test";
  }
  return "";
}

SplitPart parse_split_part(std::string_view s) {
  const auto k = to_lower(s);
  if (k == "train") return SplitPart::Train;
  if (k == "val" || k == "validation") return SplitPart::Val;
  if (k == "test") return SplitPart::Test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

const std::vector<std::string>& DatasetSplit::part(SplitPart p) const {
  switch (p) {
    case SplitPart::Train: return train;
    case SplitPart::Val: return val;
    case SplitPart::Test: return test;
  }
  return train;
}

json to_json(const DatasetSplit& split) {
  return json{{"seed", split.seed},
              {"ratios", split.ratios},
              {"train", split.train},
              {"val", split.val},
              {"test", split.test}};
}

DatasetSplit split_from_json(const json& j) {
  DatasetSplit s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.ratios = j.at("ratios").get<Ratios>();
  s.train = j.at("train").get<std::vector<std::string>>();
  s.val = j.at("val").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

std::array<std::size_t, 3> largest_remainder(std::size_t n, const Ratios& ratios) {
  constexpr double kTie = 1e-9;
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> fractions{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = static_cast<double>(n) * ratios[i];
    // absorb representation error such as 0.7 * 100 = 69.999...
    const double whole = std::floor(quota + kTie);
    sizes[i] = static_cast<std::size_t>(whole);
    fractions[i] = std::max(0.0, quota - whole);
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return fractions[a] > fractions[b] + kTie;
  });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++sizes[order[k]];
  return sizes;
}

SplitResult split_corpus(std::span<const ImageRecord> images, const Ratios& ratios,
                         std::uint64_t seed) {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw DomainError("split ratios must be finite and >= 0");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DomainError("split ratios must sum to 1");

  std::map<std::pair<BodyPart, Modality>, std::vector<std::string>> strata;
  std::unordered_set<std::string> seen;
  for (const auto& image : images) {
    if (!seen.insert(image.image_id).second) {
      throw IntegrityError("duplicate image_id '" + image.image_id + "'");
    }
    strata[{image.body_part, image.modality}].push_back(image.image_id);
  }

  SplitResult result;
  result.split.ratios = ratios;
  result.split.seed = seed;
  for (auto& [key, ids] : strata) {
    const auto name = std::string(to_string(key.first)) + "/" + std::string(display_name(key.second));
    std::sort(ids.begin(), ids.end());
    if (ids.size() < 3) {
      result.warnings.push_back("stratum " + name + " has " + std::to_string(ids.size()) +
                                " image(s); all assigned to train");
      result.split.train.insert(result.split.train.end(), ids.begin(), ids.end());
      continue;
    }
    Engine engine(mix_seed(seed, fnv1a(name)));
    shuffle_in_place(ids, engine);
    const auto sizes = largest_remainder(ids.size(), ratios);
    auto it = ids.begin();
    result.split.train.insert(result.split.train.end(), it, it + sizes[0]);
    it += sizes[0];
    result.split.val.insert(result.split.val.end(), it, it + sizes[1]);
    it += sizes[1];
    result.split.test.insert(result.split.test.end(), it, it + sizes[2]);
  }
  std::sort(result.split.train.begin(), result.split.train.end());
  std::sort(result.split.val.begin(), result.split.val.end());
  std::sort(result.split.test.begin(), result.split.test.end());
  return result;
}

std::vector<QAPair> select_pairs(std::span<const QAPair> pairs, const DatasetSplit& split,
                                 SplitPart part) {
  const auto& ids = split.part(part);
  const std::unordered_set<std::string> members(ids.begin(), ids.end());
  std::vector<QAPair> out;
  for (const auto& p : pairs) {
    if (members.contains(p.image_id)) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------

AnswerVocabulary::AnswerVocabulary(std::vector<std::string> answers, UnkPolicy policy)
    : answers_(std::move(answers)), policy_(policy) {
  if (policy_ == UnkPolicy::MapToReserved &&
      (answers_.empty() || answers_.back() != kReservedAnswer)) {
    answers_.emplace_back(kReservedAnswer);
  }
  for (std::size_t i = 0; i < answers_.size(); ++i) {
    if (!index_.emplace(normalize_answer(answers_[i]), i).second) {
      throw VocabularyError("answer '" + answers_[i] + "' duplicates an earlier entry");
    }
  }
}

std::optional<std::size_t> AnswerVocabulary::index_of(std::string_view answer) const {
  const auto it = index_.find(normalize_answer(answer));
  if (it != index_.end()) return it->second;
  if (policy_ == UnkPolicy::MapToReserved) return answers_.size() - 1;
  return std::nullopt;
}

bool AnswerVocabulary::contains(std::string_view answer) const {
  const auto it = index_.find(normalize_answer(answer));
  if (it == index_.end()) return false;
  return !(policy_ == UnkPolicy::MapToReserved && it->second == answers_.size() - 1);
}

json AnswerVocabulary::to_json() const {
  return json{{"answers", answers_},
              {"unk_policy", policy_ == UnkPolicy::Reject ? "reject" : "map_to_reserved"}};
}

AnswerVocabulary AnswerVocabulary::from_json(const json& j) {
  auto policy = UnkPolicy::Reject;
  if (const auto it = j.find("unk_policy"); it != j.end()) {
    const auto s = it->get<std::string>();
    if (s == "map_to_reserved") {
      policy = UnkPolicy::MapToReserved;
    } else if (s != "reject") {
      throw VocabularyError("unknown unk_policy '" + s + "'");
    }
  }
  return AnswerVocabulary(j.at("answers").get<std::vector<std::string>>(), policy);
}

void AnswerVocabulary::save(const fs::path& path) const { write_text_file(path, to_json().dump(2) + "\n"); }

AnswerVocabulary AnswerVocabulary::load(const fs::path& path) {
  try {
    return from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw VocabularyError("invalid vocabulary file " + path.string() + ": " + e.what());
  }
}

AnswerVocabulary build_vocab(std::span<const QAPair> train_pairs, std::size_t min_freq,
                             UnkPolicy policy) {
  if (train_pairs.empty()) throw DomainError("cannot build a vocabulary from zero pairs");
  struct Entry {
    std::size_t count = 0;
    std::map<std::string, std::size_t> spellings;
  };
  std::map<std::string, Entry> entries;
  for (const auto& p : train_pairs) {
    auto& e = entries[normalize_answer(p.answer)];
    ++e.count;
    ++e.spellings[p.answer];
  }
  std::vector<std::pair<std::string, const Entry*>> kept;
  for (const auto& [key, e] : entries) {
    if (e.count >= std::max<std::size_t>(min_freq, 1)) kept.emplace_back(key, &e);
  }
  if (kept.empty()) {
    throw VocabularyError("empty vocabulary: no answer reaches min_freq=" + std::to_string(min_freq));
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second->count > b.second->count;  // entries are already key-ordered
  });
  std::vector<std::string> answers;
  answers.reserve(kept.size());
  for (const auto& [key, e] : kept) {
    const auto best = std::max_element(
        e->spellings.begin(), e->spellings.end(),
        [](const auto& a, const auto& b) { return a.second < b.second; });  // first max wins
    answers.push_back(best->first);
  }
  return AnswerVocabulary(std::move(answers), policy);
}

// ---------------------------------------------------------------------------

TextVocabulary::TextVocabulary() : TextVocabulary(std::vector<std::string>{}) {}

TextVocabulary::TextVocabulary(const std::vector<std::string>& words) {
  words_ = {"<pad>", "<unk>"};
  for (const auto& w : words) {
    if (w == "<pad>" || w == "<unk>") continue;
    words_.push_back(w);
  }
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!ids_.emplace(words_[i], static_cast<int>(i)).second) {
      throw VocabularyError("duplicate word '" + words_[i] + "' in text vocabulary");
    }
  }
}

int TextVocabulary::id_of(const std::string& word) const {
  const auto it = ids_.find(word);
  return it == ids_.end() ? kUnkId : it->second;
}

json TextVocabulary::to_json() const {
  return json(std::vector<std::string>(words_.begin() + 2, words_.end()));
}

TextVocabulary TextVocabulary::from_json(const json& j) {
  return TextVocabulary(j.get<std::vector<std::string>>());
}

TextVocabulary build_text_vocab(std::span<const QAPair> pairs, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& p : pairs) {
    for (auto& w : split_words(p.question)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [w, c] : counts) {
    if (c >= min_freq) kept.emplace_back(w, c);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [w, c] : kept) words.push_back(std::move(w));
  return TextVocabulary(words);
}

TokenSequence tokenize(std::string_view question, const TextVocabulary& vocab,
                       std::size_t max_len) {
  if (max_len < 1) throw DomainError("max_len must be >= 1");
  TokenSequence seq;
  seq.ids.assign(max_len, TextVocabulary::kPadId);
  const auto words = split_words(question);
  seq.length = std::min(words.size(), max_len);
  for (std::size_t i = 0; i < seq.length; ++i) seq.ids[i] = vocab.id_of(words[i]);
  return seq;
}

// ---------------------------------------------------------------------------

BatchStream::BatchStream(std::span<const QAPair> pairs, const DatasetSplit& split,
                         SplitPart part, std::size_t batch_size, std::uint64_t seed,
                         std::uint64_t epoch)
    : batch_size_(batch_size) {
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  const auto& ids = split.part(part);
  const std::unordered_set<std::string> members(ids.begin(), ids.end());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (members.contains(pairs[i].image_id)) order_.push_back(i);
  }
  Engine engine(mix_seed(seed, epoch));
  shuffle_in_place(order_, engine);
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const auto end = std::min(order_.size(), cursor_ + batch_size_);
  Batch batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
              order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return batch;
}

std::size_t BatchStream::batch_count() const noexcept {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<Batch> batches(std::span<const QAPair> pairs, const DatasetSplit& split,
                           SplitPart part, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t epoch) {
  BatchStream stream(pairs, split, part, batch_size, seed, epoch);
  std::vector<Batch> out;
  while (auto b = stream.next()) out.push_back(std::move(*b));
  return out;
}

}  // namespace medvqa::corpus
