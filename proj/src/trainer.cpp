#include "medvqa/trainer.hpp"

#include <cmath>
#include <limits>
#include <unordered_set>

#include "medvqa/errors.hpp"
#include "medvqa/image_io.hpp"

namespace medvqa::trainer {

using corpus::QAPair;
using corpus::SplitPart;

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (min_freq == 0) throw ConfigError("min_freq must be >= 1");
  optimizer.validate();
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"patience", patience},
          {"min_freq", min_freq},
          {"optimizer", {{"rho", optimizer.rho}, {"eps", optimizer.eps}, {"lr", optimizer.lr}}}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.patience = j.value("patience", c.patience);
  c.min_freq = j.value("min_freq", c.min_freq);
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    c.optimizer.rho = o.value("rho", c.optimizer.rho);
    c.optimizer.eps = o.value("eps", c.optimizer.eps);
    c.optimizer.lr = o.value("lr", c.optimizer.lr);
  }
  c.validate();
  return c;
}

ImageStore load_images(const std::filesystem::path& root, std::span<const corpus::ImageRecord> images,
                       std::size_t side, std::size_t channels) {
  ImageStore store;
  store.reserve(images.size());
  for (const auto& img : images) {
    store.emplace(img.image_id, image_io::load_image(root / img.path, side, channels));
  }
  return store;
}

json EvalReport::to_json() const {
  json j;
  j["rows"] = json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"image_encoder", r.image_encoder},
                         {"text_encoder", r.text_encoder},
                         {"val_accuracy", r.val_accuracy ? json(*r.val_accuracy) : json(nullptr)},
                         {"test_accuracy", r.test_accuracy ? json(*r.test_accuracy) : json(nullptr)}});
  }
  j["curves"] = json::array();
  for (const auto& c : curves) {
    const auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    j["curves"].push_back({{"epoch", c.epoch},
                           {"train_loss", num(c.train_loss)},
                           {"train_acc", num(c.train_acc)},
                           {"val_loss", num(c.val_loss)},
                           {"val_acc", num(c.val_acc)}});
  }
  return j;
}

EvalReport EvalReport::from_json(const json& j) {
  const auto opt = [](const json& v) -> std::optional<double> {
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  const auto num = [](const json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  EvalReport r;
  for (const auto& row : j.at("rows")) {
    r.rows.push_back({row.at("image_encoder").get<std::string>(), row.at("text_encoder").get<std::string>(),
                      opt(row.value("val_accuracy", json(nullptr))),
                      opt(row.value("test_accuracy", json(nullptr)))});
  }
  if (j.contains("curves")) {
    for (const auto& c : j["curves"]) {
      r.curves.push_back({c.at("epoch").get<std::size_t>(), num(c.at("train_loss")), num(c.at("train_acc")),
                          num(c.at("val_loss")), num(c.at("val_acc"))});
    }
  }
  return r;
}

json EvalResult::to_json() const {
  const auto tallies = [](const std::map<std::string, Tally>& m) {
    json j = json::object();
    for (const auto& [k, t] : m) j[k] = {{"correct", t.correct}, {"total", t.total}, {"accuracy", t.accuracy()}};
    return j;
  };
  return {{"accuracy", accuracy},
          {"correct", correct},
          {"total", total},
          {"out_of_vocabulary", out_of_vocabulary},
          {"mean_loss", std::isfinite(mean_loss) ? json(mean_loss) : json(nullptr)},
          {"by_answer_type", tallies(by_answer_type)},
          {"by_stratum", tallies(by_stratum)}};
}

namespace {

std::size_t argmax(const Vector& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<std::size_t>(best);
}

const encoders::ImageTensor& image_of(const ImageStore& store, const std::string& id) {
  const auto it = store.find(id);
  if (it == store.end()) throw IntegrityError("no decoded image for '" + id + "'");
  return it->second;
}

}  // namespace

EvalResult evaluate(const Model& model, std::span<const QAPair> pairs, const corpus::AnswerVocabulary& vocab,
                    std::span<const corpus::ImageRecord> images, const ImageStore& store) {
  if (pairs.empty()) throw DomainError("evaluate: no pairs");
  if (vocab.size() != model.classes()) throw ShapeError("answer vocabulary does not match the model head");
  std::unordered_map<std::string, const corpus::ImageRecord*> by_id;
  for (const auto& img : images) by_id.emplace(img.image_id, &img);

  // Image embeddings are shared by every question on the same image.
  std::unordered_map<std::string, Vector> emb;
  EvalResult r;
  double loss_sum = 0.0;
  std::size_t loss_n = 0;
  for (const auto& p : pairs) {
    const auto rec = by_id.find(p.image_id);
    if (rec == by_id.end()) throw IntegrityError("pair '" + p.pair_id + "' refers to unknown image");
    auto it = emb.find(p.image_id);
    if (it == emb.end()) it = emb.emplace(p.image_id, model.encode_image(image_of(store, p.image_id))).first;
    const Vector probs = fusion::softmax(model.logits_from(it->second, model.encode_text(model.tokenize(p.question))));

    const auto gold = vocab.contains(p.answer) ? vocab.index_of(p.answer) : std::nullopt;
    const bool hit = gold && argmax(probs) == *gold;
    if (gold) {
      loss_sum += fusion::nll_loss(probs, *gold).loss;
      ++loss_n;
    } else {
      ++r.out_of_vocabulary;
    }
    ++r.total;
    r.correct += hit;
    auto& at = r.by_answer_type[std::string(corpus::to_string(p.answer_type))];
    ++at.total;
    at.correct += hit;
    auto& st = r.by_stratum[std::string(corpus::display_name(rec->second->modality)) + "/" +
                            std::string(corpus::display_name(rec->second->body_part))];
    ++st.total;
    st.correct += hit;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  r.mean_loss = loss_n ? loss_sum / static_cast<double>(loss_n) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

TrainResult train(const TrainInputs& inputs, const encoders::ModelConfig& model_config,
                  const TrainConfig& config) {
  config.validate();
  if (inputs.store == nullptr) throw ConfigError("train: no image store");
  const auto train_pairs = corpus::select_pairs(inputs.pairs, inputs.split, SplitPart::Train);
  const auto val_pairs = corpus::select_pairs(inputs.pairs, inputs.split, SplitPart::Val);
  const auto test_pairs = corpus::select_pairs(inputs.pairs, inputs.split, SplitPart::Test);
  if (train_pairs.empty()) throw ConfigError("the train split has no QA pairs");

  corpus::AnswerVocabulary vocab;
  try {
    vocab = corpus::build_vocab(train_pairs, config.min_freq);
  } catch (const VocabularyError& e) {
    throw ConfigError(std::string("empty answer vocabulary: ") + e.what());
  }

  Model model = Model::create(model_config, corpus::build_text_vocab(train_pairs), vocab.size());
  Model grads = model.zeros_like();
  const auto& mc = model.config();

  std::vector<ParamRef> trainable, trainable_grads;
  for (auto g : {ParamGroup::Image, ParamGroup::Text, ParamGroup::Head}) {
    if ((g == ParamGroup::Image && mc.freeze_image) || (g == ParamGroup::Text && mc.freeze_text)) continue;
    for (auto& p : model.params(g)) trainable.push_back(p);
    for (auto& p : grads.params(g)) trainable_grads.push_back(p);
  }
  AdaDelta optimizer(trainable, config.optimizer);

  // Targets and tokens do not change between epochs.
  std::vector<std::optional<std::size_t>> targets(train_pairs.size());
  std::vector<corpus::TokenSequence> tokens(train_pairs.size());
  for (std::size_t i = 0; i < train_pairs.size(); ++i) {
    if (vocab.contains(train_pairs[i].answer)) targets[i] = vocab.index_of(train_pairs[i].answer);
    tokens[i] = model.tokenize(train_pairs[i].question);
  }
  // With a frozen image encoder the embeddings are constant for the whole run.
  std::unordered_map<std::string, Vector> frozen_emb;
  if (mc.freeze_image) {
    for (const auto& p : train_pairs) {
      if (!frozen_emb.contains(p.image_id)) {
        frozen_emb.emplace(p.image_id, model.encode_image(image_of(*inputs.store, p.image_id)));
      }
    }
  }

  // Batching runs over train pairs only, so hand BatchStream a split whose
  // train part covers every image.
  corpus::DatasetSplit train_only;
  for (const auto& p : train_pairs) train_only.train.push_back(p.image_id);

  TrainResult result;
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  double best_val = -1.0;
  std::size_t since_best = 0;

  struct ImageSlot {
    Vector emb;
    encoders::SmallCnn::Cache cache;
    Vector d_emb;
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    corpus::BatchStream stream(train_pairs, train_only, SplitPart::Train, config.batch_size, config.seed,
                               epoch - 1);
    double loss_sum = 0.0;
    std::size_t seen = 0, hits = 0;
    while (auto batch = stream.next()) {
      std::vector<std::size_t> rows;
      for (auto i : *batch) {
        if (targets[i]) rows.push_back(i);
      }
      if (rows.empty()) continue;
      const double scale = 1.0 / static_cast<double>(rows.size());

      for (auto& g : trainable_grads) g.tensor->zero();
      std::unordered_map<std::string, ImageSlot> slots;
      std::vector<std::string> slot_order;
      for (auto i : rows) {
        const auto& id = train_pairs[i].image_id;
        if (slots.contains(id)) continue;
        ImageSlot s;
        if (mc.freeze_image) {
          s.emb = frozen_emb.at(id);
        } else {
          s.emb = model.encode_image(image_of(*inputs.store, id), &s.cache);
        }
        s.d_emb = Vector::Zero(s.emb.size());
        slots.emplace(id, std::move(s));
        slot_order.push_back(id);
      }

      for (auto i : rows) {
        auto& slot = slots.at(train_pairs[i].image_id);
        Model::Cache cache;
        const Vector text_emb = model.encode_text(tokens[i], &cache.text);
        const Vector probs = fusion::softmax(model.logits_from(slot.emb, text_emb, &cache));
        const auto loss = fusion::nll_loss(probs, *targets[i]);
        loss_sum += loss.loss;
        ++seen;
        hits += argmax(probs) == *targets[i];

        const auto [d_img, d_txt] = model.backward_head(cache, loss.d_logits * scale, grads);
        if (!mc.freeze_image) slot.d_emb += d_img;
        if (!mc.freeze_text) model.backward_text(cache.text, d_txt, grads);
      }
      if (!mc.freeze_image) {
        for (const auto& id : slot_order) {
          const auto& s = slots.at(id);
          model.backward_image(s.cache, s.d_emb, grads);
        }
      }
      optimizer.step(trainable_grads);
    }

    CurveRow row;
    row.epoch = epoch;
    row.train_loss = seen ? loss_sum / static_cast<double>(seen) : nan;
    row.train_acc = seen ? static_cast<double>(hits) / static_cast<double>(seen) : nan;
    row.val_loss = nan;
    row.val_acc = nan;
    if (!val_pairs.empty()) {
      const auto v = evaluate(model, val_pairs, vocab, inputs.images, *inputs.store);
      row.val_loss = v.mean_loss;
      row.val_acc = v.accuracy;
    }
    result.report.curves.push_back(row);

    const bool last = epoch == config.epochs;
    if (!val_pairs.empty()) {
      if (row.val_acc > best_val) {
        best_val = row.val_acc;
        since_best = 0;
        result.best_epoch = epoch;
        result.best_checkpoint = model.to_checkpoint({{"kind", "vqa"}, {"epoch", epoch}});
      } else {
        ++since_best;
      }
    }
    const bool stop = config.patience > 0 && since_best >= config.patience;
    if (val_pairs.empty() && (last || stop)) {
      result.best_epoch = epoch;
      result.best_checkpoint = model.to_checkpoint({{"kind", "vqa"}, {"epoch", epoch}});
    }
    if (stop) break;
  }

  result.best_val_accuracy = val_pairs.empty() ? nan : best_val;
  ReportRow report_row;
  report_row.image_encoder = std::string(encoders::to_string(mc.image_encoder));
  report_row.text_encoder = std::string(encoders::to_string(mc.text_encoder));
  if (!val_pairs.empty()) report_row.val_accuracy = best_val;
  if (!test_pairs.empty()) {
    const auto best = Model::from_checkpoint(result.best_checkpoint);
    report_row.test_accuracy = evaluate(best, test_pairs, vocab, inputs.images, *inputs.store).accuracy;
  }
  result.report.rows.push_back(report_row);
  result.vocab = std::move(vocab);
  result.final_model = std::move(model);
  return result;
}

}  // namespace medvqa::trainer
