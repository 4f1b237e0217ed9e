#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "medvqa/adadelta.hpp"
#include "medvqa/checkpoint.hpp"
#include "medvqa/corpus.hpp"
#include "medvqa/encoders.hpp"

namespace medvqa::encoders {

struct PretrainPair {
  ImageTensor image;
  corpus::TokenSequence tokens;
};

struct PretrainOptions {
  std::size_t steps = 200;
  std::size_t batch_size = 32;
  double temperature = 0.07;
  std::uint64_t seed = 0;  // batch order; weights come from ModelConfig::seed
  trainer::AdaDeltaOptions optimizer;
};

struct PretrainResult {
  Checkpoint checkpoint;     // "image." and "text." tensors plus config/text_vocab meta
  double initial_loss = 0.0;  // full-set contrastive loss before the first step
  double final_loss = 0.0;    // and after the last
  std::vector<double> step_losses;
};

/// Contrastive (symmetric InfoNCE) training of both encoder channels with
/// AdaDelta. Minibatches come from a (seed, pass)-seeded permutation; a tail
/// shorter than 2 pairs is folded into the next pass. Frozen channels in
/// `config` are left untouched. DomainError for fewer than 2 pairs.
PretrainResult pretrain(std::span<const PretrainPair> pairs, const ModelConfig& config,
                        const corpus::TextVocabulary& text_vocab, const PretrainOptions& options);

/// Full-set contrastive loss of the encoders stored in a model checkpoint or
/// a pretraining checkpoint.
double contrastive_eval(std::span<const PretrainPair> pairs, const Checkpoint& checkpoint,
                        double temperature);

}  // namespace medvqa::encoders
