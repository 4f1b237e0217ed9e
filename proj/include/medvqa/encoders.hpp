#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "medvqa/corpus.hpp"
#include "medvqa/rng.hpp"
#include "medvqa/tensor.hpp"

namespace medvqa::encoders {

enum class ImageEncoderKind { SmallCnn, PretrainedCheckpoint };
enum class TextEncoderKind { BiLstm, PooledTransformerStub, PretrainedCheckpoint };
enum class FusionKind { Product, Concat };

std::string_view to_string(ImageEncoderKind k);
std::string_view to_string(TextEncoderKind k);
std::string_view to_string(FusionKind k);

struct ModelConfig {
  ImageEncoderKind image_encoder = ImageEncoderKind::SmallCnn;
  TextEncoderKind text_encoder = TextEncoderKind::BiLstm;
  std::size_t d = 256;
  std::size_t text_vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 64;
  bool freeze_image = false;
  bool freeze_text = false;
  FusionKind fusion = FusionKind::Product;
  std::uint64_t seed = 0;

  std::size_t image_side = 64;
  std::size_t image_channels = 1;
  std::array<std::size_t, 4> cnn_channels{8, 16, 16, 32};
  std::size_t max_question_len = 24;
  std::size_t head_hidden = 0;  // 0: single linear layer
  // Source of pretrained weights for the *_checkpoint encoder kinds.
  std::string image_checkpoint;
  std::string text_checkpoint;

  /// Architecture actually instantiated for the text channel. Pretrained text
  /// weights are BiLSTM weights.
  TextEncoderKind text_architecture() const {
    return text_encoder == TextEncoderKind::PooledTransformerStub
               ? TextEncoderKind::PooledTransformerStub
               : TextEncoderKind::BiLstm;
  }

  /// Throws ConfigError on d = 0, unsupported sides or channel counts, or a
  /// pretrained kind without a checkpoint path.
  void validate() const;

  json to_json() const;
  static ModelConfig from_json(const json& j);  // missing keys keep defaults
};

// H x W x C, row-major (channel fastest), values in [0, 1].
struct ImageTensor {
  std::size_t side = 0;
  std::size_t channels = 1;
  std::vector<double> data;

  ImageTensor() = default;
  ImageTensor(std::size_t s, std::size_t c) : side(s), channels(c), data(s * s * c, 0.0) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * side + x) * channels + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * side + x) * channels + c]; }
};

/// ShapeError when the tensor does not match the config, DomainError for a
/// value outside [0,1] or non-finite.
void check_image(const ImageTensor& image, const ModelConfig& config);

// Fresh weights are uniform in +-1/sqrt(fan_in) from the supplied engine.
void init_uniform(Tensor& t, std::size_t fan_in, Engine& engine);

// ---------------------------------------------------------------------------

/// Four conv3x3(pad 1) -> tanh -> 2x2 average-pool stages, global average
/// pooling, then a linear projection to d.
class SmallCnn {
 public:
  struct Cache {
    // per stage: stage input, tanh output
    std::array<Tensor, 4> inputs;
    std::array<Tensor, 4> activations;
    Vector pooled;
  };

  SmallCnn() = default;
  explicit SmallCnn(const ModelConfig& config);  // zero weights

  void init(Engine& engine);
  std::vector<ParamRef> params(const std::string& prefix);

  Vector forward(const ImageTensor& image, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients into `grads` (same architecture).
  void backward(const Cache& cache, const Vector& d_out, SmallCnn& grads) const;

  std::size_t out_dim() const { return proj_w_.shape.at(0); }

 private:
  std::size_t side_ = 0;
  std::size_t in_channels_ = 1;
  std::array<Tensor, 4> conv_w_;  // (out, in, 3, 3)
  std::array<Tensor, 4> conv_b_;
  Tensor proj_w_;  // (d, c4)
  Tensor proj_b_;
};

/// Text channel: BiLSTM, or the mean-pooled embedding stub.
///
/// BiLSTM: token embeddings feed a forward and a backward LSTM that run over
/// the first `length` positions only; the final hidden states are
/// concatenated and projected to d. Gate order in the stacked weights is
/// input, forget, cell, output. With length 0 both states are zero and the
/// output is the projection bias.
class TextEncoder {
 public:
  struct Cache {
    std::vector<int> tokens;  // first `length` ids
    // per direction, per step: x, gates (post-nonlinearity), c, tanh(c), h
    struct Step {
      Vector x, i, f, g, o, c, tanh_c, h, c_prev, h_prev;
    };
    std::vector<Step> fwd, bwd;
    Vector joined;  // [h_fwd; h_bwd] or mean embedding
  };

  TextEncoder() = default;
  explicit TextEncoder(const ModelConfig& config);

  void init(Engine& engine);
  std::vector<ParamRef> params(const std::string& prefix);

  /// VocabularyError for ids outside [0, vocab_size).
  Vector forward(const corpus::TokenSequence& tokens, Cache* cache = nullptr) const;
  void backward(const Cache& cache, const Vector& d_out, TextEncoder& grads) const;

  TextEncoderKind kind() const { return kind_; }
  std::size_t vocab_size() const { return embedding_.shape.empty() ? 0 : embedding_.shape[0]; }

 private:
  struct Lstm {
    Tensor w_x;  // (4H, E)
    Tensor w_h;  // (4H, H)
    Tensor b;    // (4H)
  };

  void run(const Lstm& lstm, const std::vector<int>& ids, bool reverse,
           std::vector<Cache::Step>* steps, Vector& h_out) const;
  void back_run(const Lstm& lstm, const std::vector<Cache::Step>& steps, const Vector& d_h_final,
                Lstm& grads, Tensor& d_embedding, const std::vector<int>& ids, bool reverse) const;

  TextEncoderKind kind_ = TextEncoderKind::BiLstm;
  std::size_t hidden_ = 0;
  Tensor embedding_;  // (V, E)
  Lstm fwd_, bwd_;
  Tensor proj_w_;  // (d, 2H) or (d, E)
  Tensor proj_b_;
};

}  // namespace medvqa::encoders
