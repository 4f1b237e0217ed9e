#include "medvqa/pretrain.hpp"

#include "medvqa/contrastive.hpp"
#include "medvqa/errors.hpp"
#include "medvqa/model.hpp"

namespace medvqa::encoders {

namespace {

struct Embedded {
  RowMatrix image;
  RowMatrix text;
  std::vector<SmallCnn::Cache> image_caches;
  std::vector<TextEncoder::Cache> text_caches;
};

Embedded embed(const Model& model, std::span<const PretrainPair> pairs,
               const std::vector<std::size_t>& rows, bool keep_caches) {
  const auto d = static_cast<Eigen::Index>(model.config().d);
  Embedded e;
  e.image.resize(static_cast<Eigen::Index>(rows.size()), d);
  e.text.resize(static_cast<Eigen::Index>(rows.size()), d);
  if (keep_caches) {
    e.image_caches.resize(rows.size());
    e.text_caches.resize(rows.size());
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& p = pairs[rows[r]];
    const auto ri = static_cast<Eigen::Index>(r);
    e.image.row(ri) = model.encode_image(p.image, keep_caches ? &e.image_caches[r] : nullptr).transpose();
    e.text.row(ri) = model.encode_text(p.tokens, keep_caches ? &e.text_caches[r] : nullptr).transpose();
  }
  return e;
}

double full_loss(const Model& model, std::span<const PretrainPair> pairs, double temperature) {
  std::vector<std::size_t> all(pairs.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto e = embed(model, pairs, all, false);
  return contrastive_loss(e.image, e.text, temperature).loss;
}

}  // namespace

PretrainResult pretrain(std::span<const PretrainPair> pairs, const ModelConfig& config,
                        const corpus::TextVocabulary& text_vocab, const PretrainOptions& options) {
  if (pairs.size() < 2) throw DomainError("contrastive pretraining needs at least 2 pairs");
  if (options.batch_size < 2) throw ConfigError("pretraining batch_size must be >= 2");
  if (!(options.temperature > 0.0)) throw DomainError("temperature must be positive");

  Model model = Model::create(config, text_vocab, 1);
  Model grads = model.zeros_like();

  std::vector<ParamRef> trainable, trainable_grads;
  const auto collect = [&](ParamGroup g) {
    for (auto& p : model.params(g)) trainable.push_back(p);
    for (auto& p : grads.params(g)) trainable_grads.push_back(p);
  };
  if (!config.freeze_image) collect(ParamGroup::Image);
  if (!config.freeze_text) collect(ParamGroup::Text);
  trainer::AdaDelta optimizer(trainable, options.optimizer);

  PretrainResult result;
  result.initial_loss = full_loss(model, pairs, options.temperature);

  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::uint64_t pass = 0;
  for (std::size_t step = 0; step < options.steps; ++step) {
    if (pairs.size() - cursor < 2 || order.empty()) {
      Engine engine(mix_seed(options.seed, pass++));
      order = permutation(pairs.size(), engine);
      cursor = 0;
    }
    auto take = std::min(options.batch_size, pairs.size() - cursor);
    if (pairs.size() - (cursor + take) == 1) ++take;  // do not strand a single pair
    const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                        order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
    cursor += take;

    auto e = embed(model, pairs, rows, true);
    const auto loss = contrastive_loss(e.image, e.text, options.temperature);
    result.step_losses.push_back(loss.loss);

    for (auto& g : grads.params()) g.tensor->zero();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto ri = static_cast<Eigen::Index>(r);
      if (!config.freeze_image) model.backward_image(e.image_caches[r], loss.d_image.row(ri).transpose(), grads);
      if (!config.freeze_text) model.backward_text(e.text_caches[r], loss.d_text.row(ri).transpose(), grads);
    }
    if (!trainable.empty()) optimizer.step(trainable_grads);
  }

  result.final_loss = full_loss(model, pairs, options.temperature);
  result.checkpoint = model.to_checkpoint(json{{"kind", "contrastive_pretrain"},
                                               {"temperature", options.temperature},
                                               {"steps", options.steps}});
  return result;
}

double contrastive_eval(std::span<const PretrainPair> pairs, const Checkpoint& checkpoint,
                        double temperature) {
  return full_loss(Model::from_checkpoint(checkpoint), pairs, temperature);
}

}  // namespace medvqa::encoders
