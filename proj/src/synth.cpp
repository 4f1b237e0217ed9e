#include <set>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

#include "medvqa/errors.hpp"
#include "medvqa/synth.hpp"

namespace medvqa::synth {

using corpus::AnswerType;
using corpus::Corpus;

namespace {

std::string fill(const std::string& pattern, const ImageRecord& image, const std::string* finding) {
  std::string out;
  std::size_t pos = 0;
  while (pos < pattern.size()) {
    const auto open = pattern.find('{', pos);
    if (open == std::string::npos) {
      out.append(pattern, pos, std::string::npos);
      break;
    }
    const auto close = pattern.find('}', open);
    out.append(pattern, pos, open - pos);
    const auto slot = pattern.substr(open + 1, close - open - 1);
    if (slot == "finding" && finding) {
      out += *finding;
    } else if (slot == "modality") {
      out += corpus::display_name(image.modality);
    } else if (slot == "body_part") {
      out += to_lower(corpus::display_name(image.body_part));
    } else if (slot == "orientation" && image.orientation) {
      out += *image.orientation;
    } else {
      throw ConfigError("cannot fill slot {" + slot + "}");
    }
    pos = close + 1;
  }
  return out;
}

bool slots_resolvable(const std::string& pattern, const ImageRecord& image) {
  return pattern.find("{orientation}") == std::string::npos || image.orientation.has_value();
}

QAPair make_pair(const std::string& id, const ImageRecord& image, std::string question,
                 std::string answer, const QATemplate& t) {
  QAPair p;
  p.pair_id = id;
  p.image_id = image.image_id;
  p.question = std::move(question);
  p.answer = std::move(answer);
  p.q_lang = corpus::Language::En;
  p.answer_type = t.answer_type;
  p.provenance.source = corpus::PairSource::Synthesized;
  p.provenance.template_id = t.template_id;
  return p;
}

std::string namespaced(const std::string& tag, const std::string& id) {
  return tag.empty() ? id : tag + "/" + id;
}

}  // namespace

std::vector<QAPair> generate_qa(const ImageRecord& image, const LabelSet& labels,
                                std::span<const QATemplate> templates,
                                const FindingLexicon& lexicon, std::optional<std::string> id_prefix) {
  if (labels.image_id != image.image_id) {
    throw DomainError("labels for '" + labels.image_id + "' applied to image '" + image.image_id + "'");
  }
  const auto prefix = id_prefix.value_or(image.image_id);
  std::vector<QAPair> out;
  for (const auto& t : templates) {
    if (!slots_resolvable(t.question_pattern, image)) continue;
    const auto base_id = prefix + ":" + t.template_id;
    switch (t.rule) {
      case AnswerRule::Presence: {
        std::vector<std::string> ids = t.findings;
        if (ids.empty()) {
          for (const auto& [id, f] : lexicon.findings) ids.push_back(id);
        }
        for (const auto& id : ids) {
          const auto f = lexicon.findings.find(id);
          const auto s = labels.states.find(id);
          if (f == lexicon.findings.end() || s == labels.states.end()) {
            throw ConfigError("template '" + t.template_id + "' names unknown finding '" + id + "'");
          }
          if (s->second != FindingState::Positive && s->second != FindingState::Negative) continue;
          out.push_back(make_pair(base_id + ":" + id, image,
                                  fill(t.question_pattern, image, &f->second.canonical_name),
                                  s->second == FindingState::Positive ? "Yes" : "No", t));
        }
        break;
      }
      case AnswerRule::Modality:
        out.push_back(make_pair(base_id, image, fill(t.question_pattern, image, nullptr),
                                std::string(corpus::display_name(image.modality)), t));
        break;
      case AnswerRule::BodyPart:
        out.push_back(make_pair(base_id, image, fill(t.question_pattern, image, nullptr),
                                std::string(corpus::display_name(image.body_part)), t));
        break;
      case AnswerRule::Orientation:
        if (image.orientation && !image.orientation->empty()) {
          out.push_back(make_pair(base_id, image, fill(t.question_pattern, image, nullptr),
                                  *image.orientation, t));
        }
        break;
      case AnswerRule::Diagnosis: {
        const std::string* only = nullptr;
        std::size_t positives = 0;
        for (const auto& [id, state] : labels.states) {
          if (state != FindingState::Positive) continue;
          ++positives;
          only = &lexicon.findings.at(id).canonical_name;
        }
        if (positives == 1) {
          out.push_back(make_pair(base_id, image, fill(t.question_pattern, image, nullptr), *only, t));
        }
        break;
      }
    }
  }
  return out;
}

ImageRecord image_for_report(const ReportRecord& report) {
  ImageRecord image;
  image.image_id = report.image_id;
  image.source = report.source;
  image.modality = corpus::Modality::XRay;
  image.body_part = corpus::BodyPart::Chest;
  image.path = "images/" + report.image_id + ".png";
  const auto& m = report.metadata;
  try {
    if (auto it = m.find("modality"); it != m.end() && it->is_string()) {
      image.modality = corpus::parse_modality(it->get<std::string>());
    }
    if (auto it = m.find("body_part"); it != m.end() && it->is_string()) {
      image.body_part = corpus::parse_body_part(it->get<std::string>());
    }
  } catch (const std::invalid_argument& e) {
    throw IntegrityError("report '" + report.report_id + "': " + e.what());
  }
  if (auto it = m.find("orientation"); it != m.end() && it->is_string()) {
    image.orientation = it->get<std::string>();
  }
  if (auto it = m.find("path"); it != m.end() && it->is_string()) image.path = it->get<std::string>();
  return image;
}

Corpus synthesize(std::span<const ReportRecord> reports, const FindingLexicon& lexicon,
                  std::span<const QATemplate> templates) {
  Corpus out;
  std::unordered_map<std::string, std::size_t> image_slot;
  std::unordered_set<std::string> report_ids;
  for (const auto& report : reports) {
    if (!report_ids.insert(report.report_id).second) {
      throw IntegrityError("duplicate report_id '" + report.report_id + "'");
    }
    auto [it, fresh] = image_slot.emplace(report.image_id, out.images.size());
    if (fresh) out.images.push_back(image_for_report(report));
    const auto& image = out.images[it->second];
    const auto labels = extract_labels(report, lexicon);
    auto pairs = generate_qa(image, labels, templates, lexicon, report.report_id);
    out.pairs.insert(out.pairs.end(), std::make_move_iterator(pairs.begin()),
                     std::make_move_iterator(pairs.end()));
  }
  return out;
}

json SynthesisStats::to_json() const {
  return json{{"pairs_per_source", pairs_per_source},
              {"pairs_per_answer", pairs_per_answer},
              {"pairs_per_template", pairs_per_template},
              {"duplicates_removed", duplicates_removed},
              {"total_pairs", total_pairs},
              {"total_images", total_images}};
}

MergedCorpus merge_corpora(std::span<const SourceCorpus> sources) {
  MergedCorpus merged;
  std::set<std::string> tags;
  std::unordered_set<std::string> image_ids;
  std::unordered_set<std::string> pair_ids;
  std::set<std::tuple<std::string, std::string, std::string>> triples;

  for (const auto& source : sources) {
    if (!tags.insert(source.tag).second) {
      throw IntegrityError("source tag '" + source.tag + "' used twice");
    }
    std::unordered_set<std::string> local_images;
    for (const auto& image : source.data.images) {
      auto copy = image;
      copy.image_id = namespaced(source.tag, image.image_id);
      copy.path = namespaced(source.tag, image.path);
      if (copy.source.empty()) copy.source = source.tag;
      if (!image_ids.insert(copy.image_id).second) {
        throw IntegrityError("image_id '" + copy.image_id + "' collides after namespacing");
      }
      local_images.insert(image.image_id);
      merged.data.images.push_back(std::move(copy));
    }
    auto& source_count = merged.stats.pairs_per_source[source.tag];
    for (const auto& pair : source.data.pairs) {
      if (!local_images.contains(pair.image_id)) {
        throw IntegrityError("source '" + source.tag + "': pair '" + pair.pair_id +
                             "' refers to unknown image_id '" + pair.image_id + "'");
      }
      auto copy = pair;
      copy.image_id = namespaced(source.tag, pair.image_id);
      copy.pair_id = namespaced(source.tag, pair.pair_id);
      if (!pair_ids.insert(copy.pair_id).second) {
        throw IntegrityError("pair_id '" + copy.pair_id + "' collides after namespacing");
      }
      if (!triples.emplace(copy.image_id, copy.question, copy.answer).second) {
        ++merged.stats.duplicates_removed;
        continue;
      }
      ++source_count;
      ++merged.stats.pairs_per_answer[copy.answer];
      ++merged.stats.pairs_per_template[copy.provenance.template_id.value_or("original")];
      merged.data.pairs.push_back(std::move(copy));
    }
  }
  merged.stats.total_pairs = merged.data.pairs.size();
  merged.stats.total_images = merged.data.images.size();
  return merged;
}

}  // namespace medvqa::synth
