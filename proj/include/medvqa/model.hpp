#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "medvqa/checkpoint.hpp"
#include "medvqa/corpus.hpp"
#include "medvqa/encoders.hpp"
#include "medvqa/fusion.hpp"

namespace medvqa {

enum class ParamGroup { Image, Text, Head };

/// Image encoder + question encoder + fusion + answer head, with the question
/// word vocabulary the embedding rows refer to.
class Model {
 public:
  struct Cache {
    encoders::SmallCnn::Cache image;
    encoders::TextEncoder::Cache text;
    fusion::Head::Cache head;
    Vector image_emb;
    Vector text_emb;
    fusion::FusedVector fused;
  };

  Model() = default;

  /// Fresh model from config.seed. For the *_checkpoint encoder kinds the
  /// matching "image."/"text." tensors are copied from the configured
  /// checkpoint; pretrained text weights also bring their own word vocabulary,
  /// which replaces `text_vocab`.
  static Model create(encoders::ModelConfig config, corpus::TextVocabulary text_vocab,
                      std::size_t classes);

  /// Rebuilds a model saved by to_checkpoint. FormatError for missing
  /// metadata or tensors, ShapeError for tensors of the wrong shape.
  static Model from_checkpoint(const Checkpoint& checkpoint);

  /// Float32 snapshot of every parameter, plus the config, word vocabulary,
  /// class count and the extra meta entries given.
  Checkpoint to_checkpoint(const json& extra_meta = json::object()) const;

  /// Copies every "<group>." tensor present in `source`; ShapeError on
  /// mismatch, FormatError when the checkpoint has none for that group.
  void load_group(ParamGroup group, const Checkpoint& source);

  /// Same architecture, all weights zero; used as a gradient accumulator.
  Model zeros_like() const;

  std::vector<ParamRef> params();
  std::vector<ParamRef> params(ParamGroup group);
  static ParamGroup group_of(const std::string& param_name);

  const encoders::ModelConfig& config() const { return config_; }
  encoders::ModelConfig& mutable_config() { return config_; }
  const corpus::TextVocabulary& text_vocab() const { return text_vocab_; }
  std::size_t classes() const { return head_.classes(); }
  const fusion::Head& head() const { return head_; }

  corpus::TokenSequence tokenize(std::string_view question) const;

  Vector encode_image(const encoders::ImageTensor& image, encoders::SmallCnn::Cache* cache = nullptr) const;
  Vector encode_text(const corpus::TokenSequence& tokens,
                     encoders::TextEncoder::Cache* cache = nullptr) const;

  /// Logits for precomputed embeddings (fills cache.fused and cache.head).
  Vector logits_from(const Vector& image_emb, const Vector& text_emb, Cache* cache = nullptr) const;
  Vector logits(const encoders::ImageTensor& image, const corpus::TokenSequence& tokens,
                Cache* cache = nullptr) const;

  /// Backpropagates d_logits through head and fusion. Returns gradients for
  /// the two embeddings; head gradients accumulate into `grads`.
  std::pair<Vector, Vector> backward_head(const Cache& cache, const Vector& d_logits, Model& grads) const;
  void backward_image(const encoders::SmallCnn::Cache& cache, const Vector& d_emb, Model& grads) const;
  void backward_text(const encoders::TextEncoder::Cache& cache, const Vector& d_emb, Model& grads) const;

 private:
  encoders::ModelConfig config_;
  corpus::TextVocabulary text_vocab_;
  encoders::SmallCnn image_;
  encoders::TextEncoder text_;
  fusion::Head head_;
};

/// encode -> fuse -> classify -> top-k.
fusion::Prediction predict(const encoders::ImageTensor& image, std::string_view question,
                           const Model& model, const corpus::AnswerVocabulary& vocab, std::size_t k);

/// Probability vector behind predict().
Vector answer_probabilities(const encoders::ImageTensor& image, std::string_view question,
                            const Model& model, const corpus::AnswerVocabulary& vocab);

}  // namespace medvqa
