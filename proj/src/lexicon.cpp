#include <fstream>
#include <set>
#include <unordered_map>

#include "medvqa/errors.hpp"
#include "medvqa/synth.hpp"

namespace medvqa::synth {

namespace {

std::string normalize_phrase(const std::string& phrase) {
  std::string out;
  for (const auto& w : split_words(phrase)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::vector<std::string> normalized_list(const json& j, const char* key) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  for (const auto& p : j.at(key)) {
    auto n = normalize_phrase(p.get<std::string>());
    if (n.empty()) throw ConfigError(std::string("empty phrase in '") + key + "'");
    out.push_back(std::move(n));
  }
  return out;
}

}  // namespace

ReportRecord report_from_json(const json& j) {
  ReportRecord r;
  r.report_id = j.at("report_id").get<std::string>();
  r.image_id = j.at("image_id").get<std::string>();
  if (r.report_id.empty()) throw std::invalid_argument("empty report_id");
  if (r.image_id.empty()) throw std::invalid_argument("empty image_id");
  if (const auto it = j.find("text"); it != j.end() && !it->is_null()) r.text = it->get<std::string>();
  if (const auto it = j.find("metadata"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw std::invalid_argument("metadata must be an object");
    r.metadata = *it;
  }
  if (const auto it = j.find("source"); it != j.end() && !it->is_null()) r.source = it->get<std::string>();
  return r;
}

std::vector<ReportRecord> load_reports(const std::filesystem::path& path) {
  std::vector<ReportRecord> reports;
  std::set<std::string> ids;
  read_jsonl(path, [&](const json& j, std::size_t line) {
    auto r = report_from_json(j);
    if (!ids.insert(r.report_id).second) {
      throw IntegrityError(path.string() + ":" + std::to_string(line) + ": duplicate report_id '" +
                           r.report_id + "'");
    }
    reports.push_back(std::move(r));
  });
  return reports;
}

void validate(const FindingLexicon& lexicon) {
  if (lexicon.scope_window == 0) throw ConfigError("scope_window must be >= 1");
  std::unordered_map<std::string, std::string> owner;
  for (const auto& [id, finding] : lexicon.findings) {
    if (finding.phrases.empty()) throw ConfigError("finding '" + id + "' has no phrases");
    if (finding.canonical_name.empty()) throw ConfigError("finding '" + id + "' has no canonical_name");
    for (const auto& phrase : finding.phrases) {
      if (phrase.empty()) throw ConfigError("finding '" + id + "' has an empty phrase");
      const auto [it, inserted] = owner.emplace(phrase, id);
      if (!inserted && it->second != id) {
        throw ConfigError("phrase '" + phrase + "' belongs to both '" + it->second + "' and '" + id + "'");
      }
    }
  }
}

FindingLexicon lexicon_from_json(const json& j) {
  FindingLexicon lex;
  try {
    lex.scope_window = j.value("scope_window", std::size_t{6});
    lex.negation_triggers = normalized_list(j, "negation_triggers");
    lex.uncertainty_triggers = normalized_list(j, "uncertainty_triggers");
    for (const auto& [id, f] : j.at("findings").items()) {
      Finding finding;
      finding.canonical_name = f.at("canonical_name").get<std::string>();
      std::set<std::string> unique;
      for (auto& p : normalized_list(f, "phrases")) {
        if (unique.insert(p).second) finding.phrases.push_back(std::move(p));
      }
      lex.findings.emplace(id, std::move(finding));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid lexicon: ") + e.what());
  }
  validate(lex);
  return lex;
}

json to_json(const FindingLexicon& lexicon) {
  json findings = json::object();
  for (const auto& [id, f] : lexicon.findings) {
    findings[id] = {{"canonical_name", f.canonical_name}, {"phrases", f.phrases}};
  }
  return json{{"scope_window", lexicon.scope_window},
              {"negation_triggers", lexicon.negation_triggers},
              {"uncertainty_triggers", lexicon.uncertainty_triggers},
              {"findings", findings}};
}

FindingLexicon load_lexicon(const std::filesystem::path& path) {
  return lexicon_from_json(read_json_file(path));
}

QATemplate template_from_json(const json& j) {
  QATemplate t;
  try {
    t.template_id = j.at("template_id").get<std::string>();
    t.question_pattern = j.at("question_pattern").get<std::string>();
    const auto rule = j.at("rule").get<std::string>();
    if (rule == "presence") {
      t.rule = AnswerRule::Presence;
    } else if (rule == "modality") {
      t.rule = AnswerRule::Modality;
    } else if (rule == "body_part") {
      t.rule = AnswerRule::BodyPart;
    } else if (rule == "orientation") {
      t.rule = AnswerRule::Orientation;
    } else if (rule == "diagnosis") {
      t.rule = AnswerRule::Diagnosis;
    } else {
      throw ConfigError("template '" + t.template_id + "': unknown rule '" + rule + "'");
    }
    t.answer_type = corpus::parse_answer_type(j.at("answer_type").get<std::string>());
    if (j.contains("findings")) t.findings = j.at("findings").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid template: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid template: ") + e.what());
  }
  if (t.template_id.empty()) throw ConfigError("template without template_id");
  const bool closed = t.rule == AnswerRule::Presence;
  if (closed != (t.answer_type == corpus::AnswerType::Closed)) {
    throw ConfigError("template '" + t.template_id + "': only presence templates are CLOSED");
  }
  // every {slot} must be one we know how to fill
  for (std::size_t pos = t.question_pattern.find('{'); pos != std::string::npos;
       pos = t.question_pattern.find('{', pos + 1)) {
    const auto close = t.question_pattern.find('}', pos);
    if (close == std::string::npos) throw ConfigError("template '" + t.template_id + "': unclosed slot");
    const auto slot = t.question_pattern.substr(pos + 1, close - pos - 1);
    if (slot != "finding" && slot != "body_part" && slot != "modality" && slot != "orientation") {
      throw ConfigError("template '" + t.template_id + "': unknown slot {" + slot + "}");
    }
    if (slot == "finding" && t.rule != AnswerRule::Presence) {
      throw ConfigError("template '" + t.template_id + "': {finding} needs the presence rule");
    }
  }
  return t;
}

std::vector<QATemplate> load_templates(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  const auto& list = j.is_object() ? j.at("templates") : j;
  std::vector<QATemplate> out;
  std::set<std::string> ids;
  for (const auto& t : list) {
    out.push_back(template_from_json(t));
    if (!ids.insert(out.back().template_id).second) {
      throw ConfigError("duplicate template_id '" + out.back().template_id + "'");
    }
  }
  return out;
}

}  // namespace medvqa::synth
