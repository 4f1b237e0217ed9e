#include "medvqa/server.hpp"

#include <chrono>
#include <cstdlib>
#include <iomanip>
#include <sstream>

#include <httplib.h>
#include <openssl/evp.h>

#include "medvqa/errors.hpp"
#include "medvqa/image_io.hpp"

namespace medvqa::server {

namespace {

HttpResult error(int status, const std::string& message) { return {status, json{{"error", message}}}; }

}  // namespace

Service::Service(Model model, corpus::AnswerVocabulary vocab, std::string model_id)
    : model_(std::move(model)), vocab_(std::move(vocab)), model_id_(std::move(model_id)) {
  if (model_.classes() != vocab_.size()) {
    throw ShapeError("checkpoint head has " + std::to_string(model_.classes()) + " classes but the vocabulary has " +
                     std::to_string(vocab_.size()) + " answers");
  }
}

Service Service::load(const std::filesystem::path& checkpoint_path, const std::filesystem::path& vocab_path) {
  const auto bytes = read_binary_file(checkpoint_path);
  auto model = Model::from_checkpoint(Checkpoint::deserialize(bytes));
  return Service(std::move(model), corpus::AnswerVocabulary::load(vocab_path), model_id_for(bytes));
}

HttpResult Service::health() const { return {200, json{{"status", "ok"}, {"model", model_id_}}}; }

HttpResult Service::vocab() const { return {200, json{{"answers", vocab_.answers()}}}; }

HttpResult Service::handle_predict(std::string_view body) const {
  const auto start = std::chrono::steady_clock::now();
  json req;
  try {
    req = json::parse(body);
  } catch (const json::parse_error& e) {
    return error(400, std::string("malformed JSON: ") + e.what());
  }
  if (!req.is_object()) return error(400, "request body must be a JSON object");
  if (!req.contains("image") || !req["image"].is_string()) return error(400, "'image' must be a base64 string");
  if (!req.contains("question") || !req["question"].is_string()) return error(400, "'question' must be a string");

  std::size_t k = kDefaultTopK;
  if (req.contains("top_k") && !req["top_k"].is_null()) {
    const auto& t = req["top_k"];
    if (!t.is_number_integer()) return error(400, "'top_k' must be an integer");
    if (t.get<std::int64_t>() < 1) return error(400, "'top_k' must be >= 1");
    k = t.get<std::size_t>();
  }
  k = std::min(k, vocab_.size());

  const auto& encoded = req["image"].get_ref<const std::string&>();
  if (image_io::base64_decoded_size(encoded) > kMaxImageBytes) {
    return error(413, "image exceeds " + std::to_string(kMaxImageBytes) + " bytes");
  }
  encoders::ImageTensor image;
  try {
    image = image_io::to_tensor(image_io::base64_decode(encoded), model_.config().image_side,
                                model_.config().image_channels);
  } catch (const ImageDecodeError& e) {
    return error(400, std::string("undecodable image: ") + e.what());
  }

  fusion::Prediction p;
  try {
    p = predict(image, req["question"].get<std::string>(), model_, vocab_, k);
  } catch (const std::exception& e) {
    return error(500, e.what());
  }

  json top = json::array();
  for (const auto& [answer, prob] : p.top_k) top.push_back({{"answer", answer}, {"prob", prob}});
  const auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start);
  return {200, json{{"answer", p.answer},
                    {"confidence", p.confidence},
                    {"top_k", std::move(top)},
                    {"model_id", model_id_},
                    {"latency_ms", elapsed.count()}}};
}

std::string model_id_for(std::string_view checkpoint_bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(checkpoint_bytes.data(), checkpoint_bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < 6 && i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return "mvqa-" + os.str();
}

std::filesystem::path resolve_data_path(const std::filesystem::path& path) {
  const char* root = std::getenv("MEDVQA_DATA_DIR");
  if (path.is_absolute() || root == nullptr || *root == '\0') return path;
  return std::filesystem::path(root) / path;
}

struct HttpServer::Impl {
  const Service& service;
  httplib::Server http;
  // httplib only closes its socket at the end of listen(); a server that is
  // bound but never listens closes it here.
  socket_t bound_sock = INVALID_SOCKET;
  bool listened = false;

  explicit Impl(const Service& s) : service(s) {
    // Let oversize images through to our own check so the client gets a
    // JSON 413 rather than a bare one.
    http.set_payload_max_length(64u << 20);
    // The library default adds SO_REUSEPORT, which lets a second server share
    // a busy port instead of failing.
    http.set_socket_options([this](socket_t sock) {
      bound_sock = sock;
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
    });
    const auto reply = [](httplib::Response& res, const HttpResult& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    http.Get("/health", [this, reply](const httplib::Request&, httplib::Response& res) {
      reply(res, service.health());
    });
    http.Get("/vocab", [this, reply](const httplib::Request&, httplib::Response& res) {
      reply(res, service.vocab());
    });
    http.Post("/predict", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, service.handle_predict(req.body));
    });
    http.set_exception_handler([reply](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      reply(res, error(500, what));
    });
  }
};

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() {
  if (!impl_->listened && impl_->bound_sock != INVALID_SOCKET) ::close(impl_->bound_sock);
}

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->http.bind_to_any_port(host) : (impl_->http.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    impl_->bound_sock = INVALID_SOCKET;
    throw Error("cannot bind " + host + (port == 0 ? "" : ":" + std::to_string(port)));
  }
  return bound;
}

void HttpServer::listen() {
  impl_->listened = true;
  impl_->http.listen_after_bind();
}

void HttpServer::stop() { impl_->http.stop(); }

}  // namespace medvqa::server
