#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include "medvqa/corpus.hpp"
#include "medvqa/model.hpp"

namespace medvqa::server {

inline constexpr std::size_t kMaxImageBytes = 8u << 20;  // decoded size
inline constexpr std::size_t kDefaultTopK = 5;

struct HttpResult {
  int status = 200;
  json body;
};

/// Immutable model + vocabulary behind the HTTP endpoints. Every handler is
/// const and safe to call from many threads at once.
class Service {
 public:
  /// ShapeError when the head size differs from the vocabulary size.
  Service(Model model, corpus::AnswerVocabulary vocab, std::string model_id);

  /// Loads both files; model_id is derived from the checkpoint bytes.
  static Service load(const std::filesystem::path& checkpoint_path, const std::filesystem::path& vocab_path);

  HttpResult health() const;
  HttpResult vocab() const;
  /// Full request path, from raw body text to response JSON.
  HttpResult handle_predict(std::string_view body) const;

  const Model& model() const { return model_; }
  const corpus::AnswerVocabulary& answers() const { return vocab_; }
  const std::string& model_id() const { return model_id_; }

 private:
  Model model_;
  corpus::AnswerVocabulary vocab_;
  std::string model_id_;
};

/// Short hex digest identifying a checkpoint.
std::string model_id_for(std::string_view checkpoint_bytes);

/// Relative paths resolve against MEDVQA_DATA_DIR when it is set.
std::filesystem::path resolve_data_path(const std::filesystem::path& path);

/// cpp-httplib front end over a Service. bind() then listen(); stop() may be
/// called from another thread.
class HttpServer {
 public:
  explicit HttpServer(const Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Returns the bound port (port 0 picks a free one). Error when the port
  /// cannot be bound.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace medvqa::server
