#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "medvqa/adadelta.hpp"
#include "medvqa/checkpoint.hpp"
#include "medvqa/corpus.hpp"
#include "medvqa/model.hpp"

namespace medvqa::trainer {

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 32;
  AdaDeltaOptions optimizer;
  std::uint64_t seed = 0;      // batch order
  std::size_t patience = 0;    // 0 disables early stopping
  std::size_t min_freq = 1;    // answer vocabulary cutoff

  void validate() const;
  json to_json() const;
  static TrainConfig from_json(const json& j);
};

using ImageStore = std::unordered_map<std::string, encoders::ImageTensor>;

/// Decodes every image of the corpus at the model's resolution.
ImageStore load_images(const std::filesystem::path& root, std::span<const corpus::ImageRecord> images,
                       std::size_t side, std::size_t channels);

struct CurveRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct ReportRow {
  std::string image_encoder;
  std::string text_encoder;
  std::optional<double> val_accuracy;
  std::optional<double> test_accuracy;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::vector<CurveRow> curves;

  json to_json() const;
  static EvalReport from_json(const json& j);
};

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct EvalResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t out_of_vocabulary = 0;  // gold answers the model cannot produce
  double mean_loss = 0.0;             // over in-vocabulary pairs; NaN if none
  std::map<std::string, Tally> by_answer_type;  // "OPEN" / "CLOSED"
  std::map<std::string, Tally> by_stratum;      // "<modality>/<body_part>"

  json to_json() const;
};

/// Top-1 accuracy: a pair counts when the highest-probability answer
/// (lowest index on ties) equals the gold answer after normalize_answer.
/// Gold answers outside the vocabulary are misses and tallied separately.
/// DomainError for no pairs; IntegrityError for an image missing from
/// `images` or `store`.
EvalResult evaluate(const Model& model, std::span<const corpus::QAPair> pairs,
                    const corpus::AnswerVocabulary& vocab, std::span<const corpus::ImageRecord> images,
                    const ImageStore& store);

struct TrainInputs {
  std::span<const corpus::ImageRecord> images;
  std::span<const corpus::QAPair> pairs;
  corpus::DatasetSplit split;
  const ImageStore* store = nullptr;
};

struct TrainResult {
  Checkpoint best_checkpoint;  // highest validation accuracy, earliest on ties
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  Model final_model;
  corpus::AnswerVocabulary vocab;
  EvalReport report;
};

/// Builds the answer vocabulary and the question word vocabulary from the
/// train split, then runs `epochs` passes of mean-loss minibatch AdaDelta.
/// Frozen encoder groups are excluded from the optimizer. Each epoch appends
/// one curve row; the checkpoint with the best validation accuracy is kept
/// (the last epoch when there is no validation data). ConfigError for an
/// empty train split or vocabulary, before any step.
TrainResult train(const TrainInputs& inputs, const encoders::ModelConfig& model_config,
                  const TrainConfig& config);

// ---------------------------------------------------------------------------
// Reporting

std::string curves_csv(std::span<const CurveRow> curves);

struct ReportTable {
  std::vector<ReportRow> rows;
  std::vector<bool> best;  // rows sharing the highest test accuracy
  std::string csv;
  std::string text;
};

/// Flattens the runs' rows into one comparison table. Every row whose test
/// accuracy equals the maximum is flagged.
ReportTable compile_report(std::span<const EvalReport> runs);

}  // namespace medvqa::trainer
