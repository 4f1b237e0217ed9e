#include "medvqa/model.hpp"

#include "medvqa/errors.hpp"

namespace medvqa {

using encoders::ImageEncoderKind;
using encoders::ModelConfig;
using encoders::TextEncoderKind;

namespace {

std::string_view prefix_of(ParamGroup g) {
  switch (g) {
    case ParamGroup::Image: return "image.";
    case ParamGroup::Text: return "text.";
    case ParamGroup::Head: return "head.";
  }
  return "";
}

std::size_t fused_dim(const ModelConfig& c) {
  return c.fusion == encoders::FusionKind::Product ? c.d : 2 * c.d;
}

void copy_into(Tensor& dst, const NamedTensor& src) {
  std::vector<std::size_t> shape(src.shape.begin(), src.shape.end());
  if (shape != dst.shape) throw ShapeError("tensor '" + src.name + "' has an incompatible shape");
  for (std::size_t i = 0; i < src.data.size(); ++i) dst.data[i] = static_cast<double>(src.data[i]);
}

}  // namespace

Model Model::create(ModelConfig config, corpus::TextVocabulary text_vocab, std::size_t classes) {
  if (classes == 0) throw ConfigError("the answer head needs at least one class");
  Checkpoint text_source;
  if (config.text_encoder == TextEncoderKind::PretrainedCheckpoint) {
    text_source = load_checkpoint(config.text_checkpoint);
    if (!text_source.meta.contains("text_vocab")) {
      throw FormatError("pretrained text checkpoint carries no text_vocab");
    }
    text_vocab = corpus::TextVocabulary::from_json(text_source.meta["text_vocab"]);
  }
  config.text_vocab_size = text_vocab.size();
  config.validate();

  Model m;
  m.config_ = config;
  m.text_vocab_ = std::move(text_vocab);
  m.image_ = encoders::SmallCnn(config);
  m.text_ = encoders::TextEncoder(config);
  m.head_ = fusion::Head(fused_dim(config), config.head_hidden, classes);

  Engine engine(config.seed);
  m.image_.init(engine);
  m.text_.init(engine);
  m.head_.init(engine);

  if (config.image_encoder == ImageEncoderKind::PretrainedCheckpoint) {
    m.load_group(ParamGroup::Image, load_checkpoint(config.image_checkpoint));
  }
  if (config.text_encoder == TextEncoderKind::PretrainedCheckpoint) {
    m.load_group(ParamGroup::Text, text_source);
  }
  return m;
}

Model Model::from_checkpoint(const Checkpoint& checkpoint) {
  const auto& meta = checkpoint.meta;
  if (!meta.contains("config") || !meta.contains("text_vocab") || !meta.contains("classes")) {
    throw FormatError("checkpoint lacks model metadata (config, text_vocab, classes)");
  }
  auto config = ModelConfig::from_json(meta["config"]);
  auto vocab = corpus::TextVocabulary::from_json(meta["text_vocab"]);
  config.text_vocab_size = vocab.size();
  config.validate();

  Model m;
  m.config_ = config;
  m.text_vocab_ = std::move(vocab);
  m.image_ = encoders::SmallCnn(config);
  m.text_ = encoders::TextEncoder(config);
  m.head_ = fusion::Head(fused_dim(config), config.head_hidden, meta["classes"].get<std::size_t>());
  for (auto& p : m.params()) copy_into(*p.tensor, checkpoint.at(p.name));
  return m;
}

Checkpoint Model::to_checkpoint(const json& extra_meta) const {
  Checkpoint ckpt;
  ckpt.meta = extra_meta.is_object() ? extra_meta : json::object();
  ckpt.meta["config"] = config_.to_json();
  ckpt.meta["text_vocab"] = text_vocab_.to_json();
  ckpt.meta["classes"] = head_.classes();
  for (const auto& p : const_cast<Model&>(*this).params()) {
    NamedTensor t;
    t.name = p.name;
    t.shape.assign(p.tensor->shape.begin(), p.tensor->shape.end());
    t.data.reserve(p.tensor->size());
    for (double v : p.tensor->data) t.data.push_back(static_cast<float>(v));
    ckpt.add(std::move(t));
  }
  return ckpt;
}

void Model::load_group(ParamGroup group, const Checkpoint& source) {
  std::size_t loaded = 0;
  for (auto& p : params(group)) {
    if (const auto* t = source.find(p.name)) {
      copy_into(*p.tensor, *t);
      ++loaded;
    }
  }
  if (loaded == 0) {
    throw FormatError("checkpoint has no '" + std::string(prefix_of(group)) + "' tensors");
  }
}

Model Model::zeros_like() const {
  Model z = *this;
  for (auto& p : z.params()) p.tensor->zero();
  return z;
}

std::vector<ParamRef> Model::params() {
  auto out = image_.params("image.");
  for (auto& p : text_.params("text.")) out.push_back(std::move(p));
  for (auto& p : head_.params("head.")) out.push_back(std::move(p));
  return out;
}

std::vector<ParamRef> Model::params(ParamGroup group) {
  switch (group) {
    case ParamGroup::Image: return image_.params("image.");
    case ParamGroup::Text: return text_.params("text.");
    case ParamGroup::Head: return head_.params("head.");
  }
  return {};
}

ParamGroup Model::group_of(const std::string& name) {
  if (name.starts_with("image.")) return ParamGroup::Image;
  if (name.starts_with("text.")) return ParamGroup::Text;
  return ParamGroup::Head;
}

corpus::TokenSequence Model::tokenize(std::string_view question) const {
  return corpus::tokenize(question, text_vocab_, config_.max_question_len);
}

Vector Model::encode_image(const encoders::ImageTensor& image, encoders::SmallCnn::Cache* cache) const {
  encoders::check_image(image, config_);
  return image_.forward(image, cache);
}

Vector Model::encode_text(const corpus::TokenSequence& tokens, encoders::TextEncoder::Cache* cache) const {
  return text_.forward(tokens, cache);
}

Vector Model::logits_from(const Vector& image_emb, const Vector& text_emb, Cache* cache) const {
  auto fused = fusion::fuse(image_emb, text_emb, config_.fusion);
  Vector out = head_.logits(fused.values, cache ? &cache->head : nullptr);
  if (cache) {
    cache->image_emb = image_emb;
    cache->text_emb = text_emb;
    cache->fused = std::move(fused);
  }
  return out;
}

Vector Model::logits(const encoders::ImageTensor& image, const corpus::TokenSequence& tokens,
                     Cache* cache) const {
  const Vector img = encode_image(image, cache ? &cache->image : nullptr);
  const Vector txt = encode_text(tokens, cache ? &cache->text : nullptr);
  return logits_from(img, txt, cache);
}

std::pair<Vector, Vector> Model::backward_head(const Cache& cache, const Vector& d_logits, Model& grads) const {
  const Vector d_fused = head_.backward(cache.head, d_logits, grads.head_);
  return fusion::fuse_backward(cache.image_emb, cache.text_emb, config_.fusion, d_fused);
}

void Model::backward_image(const encoders::SmallCnn::Cache& cache, const Vector& d_emb, Model& grads) const {
  image_.backward(cache, d_emb, grads.image_);
}

void Model::backward_text(const encoders::TextEncoder::Cache& cache, const Vector& d_emb, Model& grads) const {
  text_.backward(cache, d_emb, grads.text_);
}

Vector answer_probabilities(const encoders::ImageTensor& image, std::string_view question,
                            const Model& model, const corpus::AnswerVocabulary& vocab) {
  const auto tokens = model.tokenize(question);
  const Vector img = model.encode_image(image);
  const Vector txt = model.encode_text(tokens);
  const auto fused = fusion::fuse(img, txt, model.config().fusion);
  return fusion::classify(fused, model.head(), vocab);
}

fusion::Prediction predict(const encoders::ImageTensor& image, std::string_view question,
                           const Model& model, const corpus::AnswerVocabulary& vocab, std::size_t k) {
  if (k < 1) throw DomainError("k must be >= 1");
  return fusion::top_k(answer_probabilities(image, question, model, vocab), vocab, k);
}

}  // namespace medvqa
