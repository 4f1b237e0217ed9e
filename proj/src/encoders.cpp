#include "medvqa/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "medvqa/errors.hpp"

namespace medvqa::encoders {

std::string_view to_string(ImageEncoderKind k) {
  return k == ImageEncoderKind::SmallCnn ? "small_cnn" : "pretrained_checkpoint";
}

std::string_view to_string(TextEncoderKind k) {
  switch (k) {
    case TextEncoderKind::BiLstm: return "bilstm";
    case TextEncoderKind::PooledTransformerStub: return "pooled_transformer_stub";
    case TextEncoderKind::PretrainedCheckpoint: return "pretrained_checkpoint";
  }
  return "";
}

std::string_view to_string(FusionKind k) { return k == FusionKind::Product ? "product" : "concat"; }

namespace {

ImageEncoderKind parse_image_kind(const std::string& s) {
  if (s == "small_cnn") return ImageEncoderKind::SmallCnn;
  if (s == "pretrained_checkpoint") return ImageEncoderKind::PretrainedCheckpoint;
  throw ConfigError("unknown image_encoder '" + s + "'");
}

TextEncoderKind parse_text_kind(const std::string& s) {
  if (s == "bilstm") return TextEncoderKind::BiLstm;
  if (s == "pooled_transformer_stub") return TextEncoderKind::PooledTransformerStub;
  if (s == "pretrained_checkpoint") return TextEncoderKind::PretrainedCheckpoint;
  throw ConfigError("unknown text_encoder '" + s + "'");
}

FusionKind parse_fusion(const std::string& s) {
  if (s == "product") return FusionKind::Product;
  if (s == "concat") return FusionKind::Concat;
  throw ConfigError("unknown fusion '" + s + "'");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y (cout, n, n) = conv3x3(x (cin, n, n), zero padding) + bias
void conv_forward(const double* x, std::size_t cin, std::size_t n, const Tensor& w, const Tensor& b,
                  double* y) {
  const std::size_t cout = w.shape[0];
  const std::size_t plane = n * n;
  for (std::size_t o = 0; o < cout; ++o) {
    double* yo = y + o * plane;
    std::fill(yo, yo + plane, b.data[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const double* xc = x + c * plane;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = w.data[((o * cin + c) * 3 + ky) * 3 + kx];
          const int dy = ky - 1;
          const int dx = kx - 1;
          const auto n_i = static_cast<int>(n);
          const int i0 = std::max(0, -dy), i1 = std::min(n_i, n_i - dy);
          const int j0 = std::max(0, -dx), j1 = std::min(n_i, n_i - dx);
          for (int i = i0; i < i1; ++i) {
            double* yrow = yo + i * n_i;
            const double* xrow = xc + (i + dy) * n_i + dx;
            for (int j = j0; j < j1; ++j) yrow[j] += wv * xrow[j];
          }
        }
      }
    }
  }
}

// Accumulates dW, db, and (when dx != nullptr) dx from dpre.
void conv_backward(const double* x, std::size_t cin, std::size_t n, const Tensor& w,
                   const double* dpre, Tensor& dw, Tensor& db, double* dx) {
  const std::size_t cout = w.shape[0];
  const std::size_t plane = n * n;
  const auto n_i = static_cast<int>(n);
  for (std::size_t o = 0; o < cout; ++o) {
    const double* go = dpre + o * plane;
    double sum = 0.0;
    for (std::size_t k = 0; k < plane; ++k) sum += go[k];
    db.data[o] += sum;
    for (std::size_t c = 0; c < cin; ++c) {
      const double* xc = x + c * plane;
      double* dxc = dx ? dx + c * plane : nullptr;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const std::size_t widx = ((o * cin + c) * 3 + ky) * 3 + kx;
          const double wv = w.data[widx];
          const int dy = ky - 1;
          const int dxo = kx - 1;
          const int i0 = std::max(0, -dy), i1 = std::min(n_i, n_i - dy);
          const int j0 = std::max(0, -dxo), j1 = std::min(n_i, n_i - dxo);
          double acc = 0.0;
          for (int i = i0; i < i1; ++i) {
            const double* grow = go + i * n_i;
            const double* xrow = xc + (i + dy) * n_i + dxo;
            for (int j = j0; j < j1; ++j) acc += grow[j] * xrow[j];
            if (dxc) {
              double* dxrow = dxc + (i + dy) * n_i + dxo;
              for (int j = j0; j < j1; ++j) dxrow[j] += wv * grow[j];
            }
          }
          dw.data[widx] += acc;
        }
      }
    }
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (d == 0) throw ConfigError("d must be > 0");
  if (image_side == 0 || image_side % 16 != 0) {
    throw ConfigError("image_side must be a positive multiple of 16");
  }
  if (image_channels != 1 && image_channels != 3) throw ConfigError("image_channels must be 1 or 3");
  for (auto c : cnn_channels) {
    if (c == 0) throw ConfigError("cnn_channels entries must be > 0");
  }
  if (text_vocab_size < 2) throw ConfigError("text_vocab_size must cover the reserved pad/unk ids");
  if (embed_dim == 0 || hidden_dim == 0) throw ConfigError("embed_dim and hidden_dim must be > 0");
  if (max_question_len == 0) throw ConfigError("max_question_len must be >= 1");
  if (image_encoder == ImageEncoderKind::PretrainedCheckpoint && image_checkpoint.empty()) {
    throw ConfigError("image_encoder=pretrained_checkpoint needs image_checkpoint");
  }
  if (text_encoder == TextEncoderKind::PretrainedCheckpoint && text_checkpoint.empty()) {
    throw ConfigError("text_encoder=pretrained_checkpoint needs text_checkpoint");
  }
}

json ModelConfig::to_json() const {
  return json{{"image_encoder", to_string(image_encoder)},
              {"text_encoder", to_string(text_encoder)},
              {"d", d},
              {"text_vocab_size", text_vocab_size},
              {"embed_dim", embed_dim},
              {"hidden_dim", hidden_dim},
              {"freeze_image", freeze_image},
              {"freeze_text", freeze_text},
              {"fusion", to_string(fusion)},
              {"seed", seed},
              {"image_side", image_side},
              {"image_channels", image_channels},
              {"cnn_channels", cnn_channels},
              {"max_question_len", max_question_len},
              {"head_hidden", head_hidden},
              {"image_checkpoint", image_checkpoint},
              {"text_checkpoint", text_checkpoint}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    if (j.contains("image_encoder")) c.image_encoder = parse_image_kind(j["image_encoder"].get<std::string>());
    if (j.contains("text_encoder")) c.text_encoder = parse_text_kind(j["text_encoder"].get<std::string>());
    if (j.contains("fusion")) c.fusion = parse_fusion(j["fusion"].get<std::string>());
    c.d = j.value("d", c.d);
    c.text_vocab_size = j.value("text_vocab_size", c.text_vocab_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.freeze_image = j.value("freeze_image", c.freeze_image);
    c.freeze_text = j.value("freeze_text", c.freeze_text);
    c.seed = j.value("seed", c.seed);
    c.image_side = j.value("image_side", c.image_side);
    c.image_channels = j.value("image_channels", c.image_channels);
    c.cnn_channels = j.value("cnn_channels", c.cnn_channels);
    c.max_question_len = j.value("max_question_len", c.max_question_len);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.image_checkpoint = j.value("image_checkpoint", c.image_checkpoint);
    c.text_checkpoint = j.value("text_checkpoint", c.text_checkpoint);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid model config: ") + e.what());
  }
  return c;
}

void check_image(const ImageTensor& image, const ModelConfig& config) {
  if (image.side != config.image_side || image.channels != config.image_channels ||
      image.data.size() != image.side * image.side * image.channels) {
    throw ShapeError("image is " + std::to_string(image.side) + "x" + std::to_string(image.side) +
                     "x" + std::to_string(image.channels) + ", model expects " +
                     std::to_string(config.image_side) + "x" + std::to_string(config.image_side) +
                     "x" + std::to_string(config.image_channels));
  }
  for (double v : image.data) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) throw DomainError("image values must lie in [0,1]");
  }
}

void init_uniform(Tensor& t, std::size_t fan_in, Engine& engine) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (auto& v : t.data) v = uniform_real(engine, -bound, bound);
}

// ---------------------------------------------------------------------------

SmallCnn::SmallCnn(const ModelConfig& config)
    : side_(config.image_side), in_channels_(config.image_channels) {
  std::size_t cin = config.image_channels;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto cout = config.cnn_channels[k];
    conv_w_[k] = Tensor({cout, cin, 3, 3});
    conv_b_[k] = Tensor({cout});
    cin = cout;
  }
  proj_w_ = Tensor({config.d, cin});
  proj_b_ = Tensor({config.d});
}

void SmallCnn::init(Engine& engine) {
  for (std::size_t k = 0; k < 4; ++k) {
    const auto fan_in = conv_w_[k].shape[1] * 9;
    init_uniform(conv_w_[k], fan_in, engine);
    init_uniform(conv_b_[k], fan_in, engine);
  }
  init_uniform(proj_w_, proj_w_.shape[1], engine);
  init_uniform(proj_b_, proj_w_.shape[1], engine);
}

std::vector<ParamRef> SmallCnn::params(const std::string& prefix) {
  std::vector<ParamRef> out;
  for (std::size_t k = 0; k < 4; ++k) {
    out.push_back({prefix + "conv" + std::to_string(k) + ".weight", &conv_w_[k]});
    out.push_back({prefix + "conv" + std::to_string(k) + ".bias", &conv_b_[k]});
  }
  out.push_back({prefix + "proj.weight", &proj_w_});
  out.push_back({prefix + "proj.bias", &proj_b_});
  return out;
}

Vector SmallCnn::forward(const ImageTensor& image, Cache* cache) const {
  if (image.side != side_ || image.channels != in_channels_ ||
      image.data.size() != side_ * side_ * in_channels_) {
    throw ShapeError("image shape does not match the image encoder");
  }
  Cache local;
  Cache& c = cache ? *cache : local;

  // HWC -> CHW
  Tensor x({in_channels_, side_, side_});
  for (std::size_t y = 0; y < side_; ++y) {
    for (std::size_t xx = 0; xx < side_; ++xx) {
      for (std::size_t ch = 0; ch < in_channels_; ++ch) {
        x.data[(ch * side_ + y) * side_ + xx] = image.at(y, xx, ch);
      }
    }
  }

  std::size_t n = side_;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto cin = conv_w_[k].shape[1];
    const auto cout = conv_w_[k].shape[0];
    Tensor act({cout, n, n});
    conv_forward(x.data.data(), cin, n, conv_w_[k], conv_b_[k], act.data.data());
    for (auto& v : act.data) v = std::tanh(v);

    const std::size_t m = n / 2;
    Tensor pooled({cout, m, m});
    for (std::size_t ch = 0; ch < cout; ++ch) {
      const double* a = act.data.data() + ch * n * n;
      double* p = pooled.data.data() + ch * m * m;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          p[i * m + j] = 0.25 * (a[(2 * i) * n + 2 * j] + a[(2 * i) * n + 2 * j + 1] +
                                 a[(2 * i + 1) * n + 2 * j] + a[(2 * i + 1) * n + 2 * j + 1]);
        }
      }
    }
    c.inputs[k] = std::move(x);
    c.activations[k] = std::move(act);
    x = std::move(pooled);
    n = m;
  }

  const auto channels = x.shape[0];
  const double area = static_cast<double>(n * n);
  c.pooled.resize(static_cast<Eigen::Index>(channels));
  for (std::size_t ch = 0; ch < channels; ++ch) {
    double s = 0.0;
    for (std::size_t k = 0; k < n * n; ++k) s += x.data[ch * n * n + k];
    c.pooled[static_cast<Eigen::Index>(ch)] = s / area;
  }
  return as_matrix(proj_w_) * c.pooled + as_vector(proj_b_);
}

void SmallCnn::backward(const Cache& cache, const Vector& d_out, SmallCnn& grads) const {
  as_matrix(grads.proj_w_).noalias() += d_out * cache.pooled.transpose();
  as_vector(grads.proj_b_) += d_out;
  const Vector d_pooled = as_matrix(proj_w_).transpose() * d_out;

  // gradient w.r.t. the output of stage 3's pooling
  std::size_t n = side_ / 16;
  const auto c4 = conv_w_[3].shape[0];
  Tensor d_next({c4, n, n});
  for (std::size_t ch = 0; ch < c4; ++ch) {
    const double g = d_pooled[static_cast<Eigen::Index>(ch)] / static_cast<double>(n * n);
    std::fill(d_next.data.begin() + static_cast<std::ptrdiff_t>(ch * n * n),
              d_next.data.begin() + static_cast<std::ptrdiff_t>((ch + 1) * n * n), g);
  }

  for (std::size_t k = 4; k-- > 0;) {
    const auto& act = cache.activations[k];
    const auto cout = act.shape[0];
    const std::size_t full = act.shape[1];
    const std::size_t m = full / 2;
    Tensor d_pre({cout, full, full});
    for (std::size_t ch = 0; ch < cout; ++ch) {
      for (std::size_t i = 0; i < full; ++i) {
        for (std::size_t j = 0; j < full; ++j) {
          const std::size_t idx = (ch * full + i) * full + j;
          const double a = act.data[idx];
          d_pre.data[idx] = 0.25 * d_next.data[(ch * m + i / 2) * m + j / 2] * (1.0 - a * a);
        }
      }
    }
    const auto cin = conv_w_[k].shape[1];
    Tensor d_input;
    double* dx = nullptr;
    if (k > 0) {
      d_input = Tensor({cin, full, full});
      dx = d_input.data.data();
    }
    conv_backward(cache.inputs[k].data.data(), cin, full, conv_w_[k], d_pre.data.data(),
                  grads.conv_w_[k], grads.conv_b_[k], dx);
    d_next = std::move(d_input);
  }
}

// ---------------------------------------------------------------------------

TextEncoder::TextEncoder(const ModelConfig& config)
    : kind_(config.text_architecture()), hidden_(config.hidden_dim) {
  const auto v = config.text_vocab_size;
  const auto e = config.embed_dim;
  const auto h = config.hidden_dim;
  embedding_ = Tensor({v, e});
  if (kind_ == TextEncoderKind::BiLstm) {
    for (Lstm* l : {&fwd_, &bwd_}) {
      l->w_x = Tensor({4 * h, e});
      l->w_h = Tensor({4 * h, h});
      l->b = Tensor({4 * h});
    }
    proj_w_ = Tensor({config.d, 2 * h});
  } else {
    proj_w_ = Tensor({config.d, e});
  }
  proj_b_ = Tensor({config.d});
}

void TextEncoder::init(Engine& engine) {
  init_uniform(embedding_, embedding_.shape[1], engine);
  if (kind_ == TextEncoderKind::BiLstm) {
    for (Lstm* l : {&fwd_, &bwd_}) {
      init_uniform(l->w_x, hidden_, engine);
      init_uniform(l->w_h, hidden_, engine);
      init_uniform(l->b, hidden_, engine);
    }
  }
  init_uniform(proj_w_, proj_w_.shape[1], engine);
  init_uniform(proj_b_, proj_w_.shape[1], engine);
}

std::vector<ParamRef> TextEncoder::params(const std::string& prefix) {
  std::vector<ParamRef> out;
  out.push_back({prefix + "embedding", &embedding_});
  if (kind_ == TextEncoderKind::BiLstm) {
    out.push_back({prefix + "fwd.w_x", &fwd_.w_x});
    out.push_back({prefix + "fwd.w_h", &fwd_.w_h});
    out.push_back({prefix + "fwd.b", &fwd_.b});
    out.push_back({prefix + "bwd.w_x", &bwd_.w_x});
    out.push_back({prefix + "bwd.w_h", &bwd_.w_h});
    out.push_back({prefix + "bwd.b", &bwd_.b});
  }
  out.push_back({prefix + "proj.weight", &proj_w_});
  out.push_back({prefix + "proj.bias", &proj_b_});
  return out;
}

void TextEncoder::run(const Lstm& lstm, const std::vector<int>& ids, bool reverse,
                      std::vector<Cache::Step>* steps, Vector& h_out) const {
  const auto H = static_cast<Eigen::Index>(hidden_);
  const auto emb = as_matrix(embedding_);
  const auto wx = as_matrix(lstm.w_x);
  const auto wh = as_matrix(lstm.w_h);
  const auto b = as_vector(lstm.b);
  Vector h = Vector::Zero(H);
  Vector c = Vector::Zero(H);
  const auto len = ids.size();
  for (std::size_t s = 0; s < len; ++s) {
    const int token = ids[reverse ? len - 1 - s : s];
    Cache::Step st;
    st.x = emb.row(token).transpose();
    const Vector z = wx * st.x + wh * h + b;
    st.i = z.segment(0, H).unaryExpr([](double v) { return sigmoid(v); });
    st.f = z.segment(H, H).unaryExpr([](double v) { return sigmoid(v); });
    st.g = z.segment(2 * H, H).array().tanh();
    st.o = z.segment(3 * H, H).unaryExpr([](double v) { return sigmoid(v); });
    st.c_prev = c;
    st.h_prev = h;
    c = st.f.cwiseProduct(c) + st.i.cwiseProduct(st.g);
    st.c = c;
    st.tanh_c = c.array().tanh();
    h = st.o.cwiseProduct(st.tanh_c);
    st.h = h;
    if (steps) steps->push_back(std::move(st));
  }
  h_out = h;
}

Vector TextEncoder::forward(const corpus::TokenSequence& tokens, Cache* cache) const {
  const auto vocab = static_cast<int>(vocab_size());
  if (tokens.length > tokens.ids.size()) throw ShapeError("token length exceeds sequence size");
  std::vector<int> ids(tokens.ids.begin(), tokens.ids.begin() + static_cast<std::ptrdiff_t>(tokens.length));
  for (int id : tokens.ids) {
    if (id < 0 || id >= vocab) {
      throw VocabularyError("token id " + std::to_string(id) + " outside [0, " +
                            std::to_string(vocab) + ")");
    }
  }
  Cache local;
  Cache& c = cache ? *cache : local;
  c.tokens = ids;
  c.fwd.clear();
  c.bwd.clear();

  if (kind_ == TextEncoderKind::BiLstm) {
    Vector hf, hb;
    run(fwd_, ids, false, cache ? &c.fwd : nullptr, hf);
    run(bwd_, ids, true, cache ? &c.bwd : nullptr, hb);
    c.joined.resize(hf.size() + hb.size());
    c.joined << hf, hb;
  } else {
    const auto emb = as_matrix(embedding_);
    c.joined = Vector::Zero(emb.cols());
    for (int id : ids) c.joined += emb.row(id).transpose();
    if (!ids.empty()) c.joined /= static_cast<double>(ids.size());
  }
  return as_matrix(proj_w_) * c.joined + as_vector(proj_b_);
}

void TextEncoder::back_run(const Lstm& lstm, const std::vector<Cache::Step>& steps,
                           const Vector& d_h_final, Lstm& grads, Tensor& d_embedding,
                           const std::vector<int>& ids, bool reverse) const {
  const auto H = static_cast<Eigen::Index>(hidden_);
  const auto wx = as_matrix(lstm.w_x);
  const auto wh = as_matrix(lstm.w_h);
  auto gwx = as_matrix(grads.w_x);
  auto gwh = as_matrix(grads.w_h);
  auto gb = as_vector(grads.b);
  auto gemb = as_matrix(d_embedding);

  Vector dh = d_h_final;
  Vector dc = Vector::Zero(H);
  Vector dz(4 * H);
  const auto len = steps.size();
  for (std::size_t s = len; s-- > 0;) {
    const auto& st = steps[s];
    const Vector d_o = dh.cwiseProduct(st.tanh_c);
    dc += dh.cwiseProduct(st.o).cwiseProduct((1.0 - st.tanh_c.array().square()).matrix());
    const Vector d_i = dc.cwiseProduct(st.g);
    const Vector d_g = dc.cwiseProduct(st.i);
    const Vector d_f = dc.cwiseProduct(st.c_prev);
    dz.segment(0, H) = d_i.array() * st.i.array() * (1.0 - st.i.array());
    dz.segment(H, H) = d_f.array() * st.f.array() * (1.0 - st.f.array());
    dz.segment(2 * H, H) = d_g.array() * (1.0 - st.g.array().square());
    dz.segment(3 * H, H) = d_o.array() * st.o.array() * (1.0 - st.o.array());

    gwx.noalias() += dz * st.x.transpose();
    gwh.noalias() += dz * st.h_prev.transpose();
    gb += dz;
    const int token = ids[reverse ? len - 1 - s : s];
    gemb.row(token).noalias() += (wx.transpose() * dz).transpose();
    dh = wh.transpose() * dz;
    dc = dc.cwiseProduct(st.f);
  }
}

void TextEncoder::backward(const Cache& cache, const Vector& d_out, TextEncoder& grads) const {
  as_matrix(grads.proj_w_).noalias() += d_out * cache.joined.transpose();
  as_vector(grads.proj_b_) += d_out;
  const Vector d_joined = as_matrix(proj_w_).transpose() * d_out;
  if (kind_ == TextEncoderKind::BiLstm) {
    const auto H = static_cast<Eigen::Index>(hidden_);
    back_run(fwd_, cache.fwd, d_joined.head(H), grads.fwd_, grads.embedding_, cache.tokens, false);
    back_run(bwd_, cache.bwd, d_joined.tail(H), grads.bwd_, grads.embedding_, cache.tokens, true);
  } else if (!cache.tokens.empty()) {
    auto gemb = as_matrix(grads.embedding_);
    const Vector share = d_joined / static_cast<double>(cache.tokens.size());
    for (int id : cache.tokens) gemb.row(id) += share.transpose();
  }
}

}  // namespace medvqa::encoders
