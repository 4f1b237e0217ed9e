// medvqa command-line front end: synth, split, train, eval, pretrain, report, serve.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "medvqa/errors.hpp"
#include "medvqa/image_io.hpp"
#include "medvqa/pretrain.hpp"
#include "medvqa/server.hpp"
#include "medvqa/synth.hpp"
#include "medvqa/trainer.hpp"

namespace fs = std::filesystem;
using namespace medvqa;

namespace {

server::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

std::optional<corpus::Language> language_of(const json& cfg) {
  if (!cfg.contains("language") || cfg["language"].is_null()) return corpus::Language::En;
  const auto s = cfg["language"].get<std::string>();
  if (s == "all") return std::nullopt;
  return corpus::parse_language(s);
}

corpus::Ratios ratios_of(const json& cfg) {
  if (!cfg.contains("ratios")) return corpus::kDefaultRatios;
  const auto v = cfg["ratios"].get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError("ratios must have three entries");
  return {v[0], v[1], v[2]};
}

// Split from the config: an explicit file, or a fresh stratified split.
corpus::DatasetSplit split_of(const json& cfg, const fs::path& base, const corpus::Corpus& data) {
  if (cfg.contains("split")) return corpus::split_from_json(read_json_file(base / cfg["split"].get<std::string>()));
  auto result = corpus::split_corpus(data.images, ratios_of(cfg), cfg.value("split_seed", std::uint64_t{0}));
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  return result.split;
}

fs::path config_dir(const fs::path& config_path) {
  const auto dir = config_path.parent_path();
  return dir.empty() ? fs::path(".") : dir;
}

fs::path corpus_root(const json& cfg, const fs::path& base) {
  const fs::path p = cfg.at("corpus").get<std::string>();
  if (p.is_absolute()) return p;
  if (std::getenv("MEDVQA_DATA_DIR")) return server::resolve_data_path(p);
  return base / p;
}

int run_synth(const std::vector<std::string>& reports, const std::string& lexicon_path,
              const std::string& templates_path, const std::string& out, const std::string& base) {
  const auto lexicon = synth::load_lexicon(lexicon_path);
  const auto templates = synth::load_templates(templates_path);
  std::vector<synth::SourceCorpus> sources;
  if (!base.empty()) sources.push_back({"", corpus::load_corpus(server::resolve_data_path(base), std::nullopt)});
  for (const auto& r : reports) {
    const auto records = synth::load_reports(r);
    sources.push_back({fs::path(r).stem().string(), synth::synthesize(records, lexicon, templates)});
  }
  const auto merged = synth::merge_corpora(sources);

  const fs::path qa = out;
  const auto dir = qa.parent_path().empty() ? fs::path(".") : qa.parent_path();
  std::vector<json> rows;
  for (const auto& p : merged.data.pairs) rows.push_back(corpus::to_json(p));
  write_jsonl(qa, rows);
  rows.clear();
  for (const auto& i : merged.data.images) rows.push_back(corpus::to_json(i));
  write_jsonl(dir / "images.jsonl", rows);
  write_text_file(dir / "synth_stats.json", merged.stats.to_json().dump(2) + "\n");
  std::cout << merged.stats.total_pairs << " pairs over " << merged.stats.total_images << " images -> " << qa.string()
            << '\n';
  return 0;
}

int run_split(const std::string& corpus_dir, const std::string& out, std::uint64_t seed,
              const std::vector<double>& ratios) {
  const auto data = corpus::load_corpus(server::resolve_data_path(corpus_dir));
  if (ratios.size() != 3) throw ConfigError("--ratios takes three values");
  const auto result = corpus::split_corpus(data.images, {ratios[0], ratios[1], ratios[2]}, seed);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  write_text_file(out, corpus::to_json(result.split).dump(2) + "\n");
  std::cout << "train " << result.split.train.size() << ", val " << result.split.val.size() << ", test "
            << result.split.test.size() << '\n';
  return 0;
}

int run_train(const std::string& config_path) {
  const auto cfg = read_json_file(config_path);
  const auto base = config_dir(config_path);
  const auto root = corpus_root(cfg, base);
  const auto data = corpus::load_corpus(root, language_of(cfg));
  const auto split = split_of(cfg, base, data);
  const auto model_cfg = encoders::ModelConfig::from_json(cfg.value("model", json::object()));
  const auto train_cfg = trainer::TrainConfig::from_json(cfg.value("train", json::object()));
  const fs::path out = base / cfg.value("out", std::string("run"));

  const auto store = trainer::load_images(root, data.images, model_cfg.image_side, model_cfg.image_channels);
  auto result = trainer::train({data.images, data.pairs, split, &store}, model_cfg, train_cfg);

  result.best_checkpoint.meta["answers"] = result.vocab.to_json();
  result.best_checkpoint.meta["corpus"] = fs::absolute(root).string();
  result.best_checkpoint.meta["split"] = corpus::to_json(split);
  fs::create_directories(out);
  save_checkpoint(result.best_checkpoint, out / "model.ckpt");
  result.vocab.save(out / "vocab.json");
  write_text_file(out / "split.json", corpus::to_json(split).dump(2) + "\n");
  write_text_file(out / "curves.csv", trainer::curves_csv(result.report.curves));
  write_text_file(out / "report.json", result.report.to_json().dump(2) + "\n");

  const auto& row = result.report.rows.front();
  std::cout << "best epoch " << result.best_epoch;
  if (row.val_accuracy) std::cout << ", val " << *row.val_accuracy;
  if (row.test_accuracy) std::cout << ", test " << *row.test_accuracy;
  std::cout << " -> " << out.string() << '\n';
  return 0;
}

int run_eval(const std::string& checkpoint_path, const std::string& part_name, std::string corpus_dir,
             const std::string& vocab_path, const std::string& split_path) {
  const auto ckpt = load_checkpoint(server::resolve_data_path(checkpoint_path));
  const auto model = Model::from_checkpoint(ckpt);
  corpus::AnswerVocabulary vocab;
  if (!vocab_path.empty()) {
    vocab = corpus::AnswerVocabulary::load(vocab_path);
  } else if (ckpt.meta.contains("answers")) {
    vocab = corpus::AnswerVocabulary::from_json(ckpt.meta["answers"]);
  } else {
    throw ConfigError("checkpoint carries no answer vocabulary; pass --vocab");
  }
  if (corpus_dir.empty()) {
    if (!ckpt.meta.contains("corpus")) throw ConfigError("checkpoint carries no corpus path; pass --corpus");
    corpus_dir = ckpt.meta["corpus"].get<std::string>();
  }
  const auto root = server::resolve_data_path(corpus_dir);
  const auto data = corpus::load_corpus(root);
  corpus::DatasetSplit split;
  if (!split_path.empty()) {
    split = corpus::split_from_json(read_json_file(split_path));
  } else if (ckpt.meta.contains("split")) {
    split = corpus::split_from_json(ckpt.meta["split"]);
  } else {
    throw ConfigError("checkpoint carries no split; pass --split-file");
  }
  const auto pairs = corpus::select_pairs(data.pairs, split, corpus::parse_split_part(part_name));
  const auto store =
      trainer::load_images(root, data.images, model.config().image_side, model.config().image_channels);
  const auto r = trainer::evaluate(model, pairs, vocab, data.images, store);
  std::cout << r.to_json().dump(2) << '\n';
  return 0;
}

int run_pretrain(const std::string& config_path) {
  const auto cfg = read_json_file(config_path);
  const auto base = config_dir(config_path);
  const auto root = corpus_root(cfg, base);
  const auto data = corpus::load_corpus(root, language_of(cfg));
  const auto split = split_of(cfg, base, data);
  auto model_cfg = encoders::ModelConfig::from_json(cfg.value("model", json::object()));
  const auto p = cfg.value("pretrain", json::object());
  encoders::PretrainOptions options;
  options.steps = p.value("steps", options.steps);
  options.batch_size = p.value("batch_size", options.batch_size);
  options.temperature = p.value("temperature", options.temperature);
  options.seed = p.value("seed", options.seed);
  options.optimizer = trainer::TrainConfig::from_json(json{{"optimizer", p.value("optimizer", json::object())}}).optimizer;

  // Image/question pairs from the train split only.
  const auto train_pairs = corpus::select_pairs(data.pairs, split, corpus::SplitPart::Train);
  const auto text_vocab = corpus::build_text_vocab(train_pairs);
  const auto store = trainer::load_images(root, data.images, model_cfg.image_side, model_cfg.image_channels);
  std::vector<encoders::PretrainPair> pairs;
  for (const auto& q : train_pairs) {
    pairs.push_back({store.at(q.image_id), corpus::tokenize(q.question, text_vocab, model_cfg.max_question_len)});
  }
  const auto result = encoders::pretrain(pairs, model_cfg, text_vocab, options);
  const fs::path out = base / cfg.value("out", std::string("pretrained.ckpt"));
  save_checkpoint(result.checkpoint, out);
  std::cout << "contrastive loss " << result.initial_loss << " -> " << result.final_loss << " -> " << out.string()
            << '\n';
  return 0;
}

int run_report(const std::vector<std::string>& inputs, const std::string& out_dir) {
  std::vector<trainer::EvalReport> runs;
  for (const auto& in : inputs) runs.push_back(trainer::EvalReport::from_json(read_json_file(in)));
  if (runs.empty()) throw ConfigError("report needs at least one run");
  const auto table = trainer::compile_report(runs);
  write_text_file(fs::path(out_dir) / "table.csv", table.csv);
  write_text_file(fs::path(out_dir) / "table.txt", table.text);
  std::cout << table.text;
  return 0;
}

int run_serve(const std::string& checkpoint_path, const std::string& vocab_path, const std::string& host, int port) {
  const auto service =
      server::Service::load(server::resolve_data_path(checkpoint_path), server::resolve_data_path(vocab_path));
  server::HttpServer http(service);
  const int bound = http.bind(host, port);
  g_server = &http;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving " << service.model_id() << " on " << host << ":" << bound << std::endl;
  http.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Medical visual question answering toolkit"};
  app.require_subcommand(1);

  std::vector<std::string> reports;
  std::string lexicon = "data/lexicon.json", templates = "data/templates.json", synth_out = "qa.jsonl", synth_base;
  auto* synth_cmd = app.add_subcommand("synth", "Generate QA pairs from radiology reports");
  synth_cmd->add_option("--reports", reports, "Report JSONL files, one source each")->required();
  synth_cmd->add_option("--lexicon", lexicon, "Finding lexicon JSON");
  synth_cmd->add_option("--templates", templates, "Question templates JSON");
  synth_cmd->add_option("--out", synth_out, "Output qa.jsonl (images.jsonl is written beside it)");
  synth_cmd->add_option("--base", synth_base, "Existing corpus directory to merge with");

  std::string split_corpus, split_out = "split.json";
  std::uint64_t split_seed = 0;
  std::vector<double> split_ratios{0.70, 0.15, 0.15};
  auto* split_cmd = app.add_subcommand("split", "Stratified train/val/test split of a corpus");
  split_cmd->add_option("--corpus", split_corpus, "Corpus directory")->required();
  split_cmd->add_option("--out", split_out, "Output split JSON");
  split_cmd->add_option("--seed", split_seed, "Shuffle seed");
  split_cmd->add_option("--ratios", split_ratios, "Train, val and test fractions")->expected(3);

  std::string train_config;
  auto* train_cmd = app.add_subcommand("train", "Train a VQA model");
  train_cmd->add_option("--config", train_config, "Run config JSON")->required();

  std::string eval_ckpt, eval_part = "test", eval_corpus, eval_vocab, eval_split_file;
  auto* eval_cmd = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint on one split part");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval_cmd->add_option("--split", eval_part, "train, val or test");
  eval_cmd->add_option("--corpus", eval_corpus, "Corpus directory (default: recorded in the checkpoint)");
  eval_cmd->add_option("--vocab", eval_vocab, "Answer vocabulary (default: recorded in the checkpoint)");
  eval_cmd->add_option("--split-file", eval_split_file, "Split JSON (default: recorded in the checkpoint)");

  std::string pretrain_config;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Contrastive image/question pretraining");
  pretrain_cmd->add_option("--config", pretrain_config, "Pretraining config JSON")->required();

  std::vector<std::string> report_inputs;
  std::string report_out = ".";
  auto* report_cmd = app.add_subcommand("report", "Comparison table over training runs");
  report_cmd->add_option("--runs", report_inputs, "report.json files")->required();
  report_cmd->add_option("--out", report_out, "Directory for table.csv and table.txt");

  std::string serve_ckpt, serve_vocab, serve_host = "127.0.0.1";
  int serve_port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP inference service");
  serve_cmd->add_option("--checkpoint", serve_ckpt, "Model checkpoint")->required();
  serve_cmd->add_option("--vocab", serve_vocab, "Answer vocabulary JSON")->required();
  serve_cmd->add_option("--port", serve_port, "TCP port");
  serve_cmd->add_option("--host", serve_host, "Bind address");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) return run_synth(reports, lexicon, templates, synth_out, synth_base);
    if (*split_cmd) return run_split(split_corpus, split_out, split_seed, split_ratios);
    if (*train_cmd) return run_train(train_config);
    if (*eval_cmd) return run_eval(eval_ckpt, eval_part, eval_corpus, eval_vocab, eval_split_file);
    if (*pretrain_cmd) return run_pretrain(pretrain_config);
    if (*report_cmd) return run_report(report_inputs, report_out);
    if (*serve_cmd) return run_serve(serve_ckpt, serve_vocab, serve_host, serve_port);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
