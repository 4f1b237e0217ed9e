#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "medvqa/corpus.hpp"
#include "medvqa/encoders.hpp"
#include "medvqa/image_io.hpp"
#include "medvqa/model.hpp"
#include "medvqa/rng.hpp"
#include "medvqa/trainer.hpp"

namespace medvqa::fixtures {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Engine e(fnv1a(tag) ^ static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(this)));
    path_ = std::filesystem::temp_directory_path() / ("medvqa-" + tag + "-" + std::to_string(e() % 1000000007));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline encoders::ImageTensor random_image(std::size_t side, std::size_t channels, Engine& engine) {
  encoders::ImageTensor t(side, channels);
  for (auto& v : t.data) v = uniform_unit(engine);
  return t;
}

// Piecewise-constant image on a blocks x blocks grid, so the content
// survives the encoder's pooling.
inline encoders::ImageTensor block_image(std::size_t side, std::size_t blocks, Engine& engine) {
  std::vector<double> level(blocks * blocks);
  for (auto& v : level) v = uniform_unit(engine);
  encoders::ImageTensor t(side, 1);
  const std::size_t cell = side / blocks;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) t.at(y, x, 0) = level[(y / cell) * blocks + x / cell];
  }
  return t;
}

// 20 images x 5 questions = 100 pairs over 10 answers. Answers are assigned
// so that each (image, question) cell is arbitrary but every answer occurs.
struct OverfitFixture {
  std::vector<corpus::ImageRecord> images;
  std::vector<corpus::QAPair> pairs;
  corpus::DatasetSplit split;  // everything in train
  trainer::ImageStore store;
};

inline encoders::ModelConfig overfit_model_config() {
  encoders::ModelConfig c;
  c.image_encoder = encoders::ImageEncoderKind::SmallCnn;
  c.text_encoder = encoders::TextEncoderKind::BiLstm;
  c.fusion = encoders::FusionKind::Product;
  c.d = 32;
  c.embed_dim = 16;
  c.hidden_dim = 16;
  c.image_side = 16;
  c.image_channels = 1;
  c.cnn_channels = {4, 8, 8, 16};
  c.max_question_len = 12;
  c.seed = 7;
  return c;
}

inline OverfitFixture overfit_fixture(std::uint64_t seed = 11) {
  static const std::vector<std::string> questions = {
      "What modality is used to take this image?",
      "Which part of the body does this image belong to?",
      "What disease is visible in this image?",
      "Does the picture contain pneumonia?",
      "Where is the abnormality located?",
  };
  static const std::vector<std::string> answers = {"X-Ray", "CT",   "MRI",        "Chest",    "Head",
                                                   "Yes",   "No",   "pneumonia", "left lung", "effusion"};
  Engine engine(seed);
  OverfitFixture f;
  for (std::size_t i = 0; i < 20; ++i) {
    corpus::ImageRecord img;
    img.image_id = "img" + std::to_string(i);
    img.path = "images/" + img.image_id + ".png";
    img.modality = static_cast<corpus::Modality>(i % 3);
    img.body_part = static_cast<corpus::BodyPart>(i % 4);
    f.images.push_back(img);
    f.split.train.push_back(img.image_id);
    f.store.emplace(img.image_id, block_image(16, 4, engine));
  }
  std::sort(f.split.train.begin(), f.split.train.end());
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t q = 0; q < questions.size(); ++q) {
      corpus::QAPair p;
      p.image_id = f.images[i].image_id;
      p.pair_id = p.image_id + ":q" + std::to_string(q);
      p.question = questions[q];
      // Arbitrary per cell; all ten answers occur.
      const std::size_t a = (i * 3 + q * 7 + (i / 5) * q) % answers.size();
      p.answer = answers[a];
      p.answer_type = (p.answer == "Yes" || p.answer == "No") ? corpus::AnswerType::Closed : corpus::AnswerType::Open;
      f.pairs.push_back(p);
    }
  }
  return f;
}

// 8-bit PNG of a tensor, so that the decoded image equals the tensor up to
// quantization.
inline std::string png_of(const encoders::ImageTensor& t) {
  image_io::RawImage raw;
  raw.width = raw.height = t.side;
  raw.channels = t.channels;
  for (double v : t.data) raw.pixels.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  return image_io::encode_png(raw);
}

// A briefly trained model over the overfit fixture plus 50 requests
// (10 images x 5 questions) for the serving tests.
struct ServiceFixture {
  Model model;
  corpus::AnswerVocabulary vocab;
  std::vector<std::string> pngs;
  std::vector<std::string> questions;
};

inline ServiceFixture service_fixture() {
  const auto f = overfit_fixture();
  trainer::TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 4;
  auto result = trainer::train({f.images, f.pairs, f.split, &f.store}, overfit_model_config(), cfg);
  ServiceFixture s{Model::from_checkpoint(result.best_checkpoint), result.vocab, {}, {}};
  for (std::size_t i = 0; i < 10; ++i) s.pngs.push_back(png_of(f.store.at(f.images[i].image_id)));
  for (std::size_t q = 0; q < 5; ++q) s.questions.push_back(f.pairs[q].question);
  return s;
}

// Per-tensor relative error used by every gradient check.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / std::max(scale, 1e-12);
}

// Central differences of `loss` with respect to every entry of `values`.
inline std::vector<double> numeric_gradient(std::vector<double>& values, const std::function<double()>& loss,
                                            double step = 1e-5) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + step;
    const double up = loss();
    values[i] = keep - step;
    const double down = loss();
    values[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace medvqa::fixtures
