// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "gradcheck.hpp"
#include "medvqa/adadelta.hpp"
#include "medvqa/checkpoint.hpp"
#include "medvqa/contrastive.hpp"
#include "medvqa/errors.hpp"
#include "medvqa/server.hpp"
#include "medvqa/synth.hpp"
#include "support.hpp"

#include <httplib.h>

using namespace medvqa;

namespace {

const std::filesystem::path kData = MEDVQA_TEST_DATA;
const std::filesystem::path kShipped = MEDVQA_SHIPPED_DATA;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

// ---------------------------------------------------------------------------

Outcome overfit_sanity() {
  const auto f = fixtures::overfit_fixture();
  trainer::TrainConfig cfg;  // AdaDelta defaults
  cfg.epochs = 200;
  cfg.batch_size = 4;
  const auto start = std::chrono::steady_clock::now();
  const auto result = trainer::train({f.images, f.pairs, f.split, &f.store}, fixtures::overfit_model_config(), cfg);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto eval = trainer::evaluate(result.final_model, f.pairs, result.vocab, f.images, f.store);
  const bool ok = eval.accuracy >= 0.99 && seconds <= 120.0 && f.pairs.size() == 100 && f.images.size() == 20 &&
                  result.vocab.size() == 10;
  return {ok, "train top-1 " + num(eval.accuracy) + " (>= 0.99), " + num(seconds, 3) + " s (<= 120 s)"};
}

Outcome gradient_suite() {
  fixtures::GradReport model, contrastive;
  std::set<std::string> paths;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto m = fixtures::model_gradcheck(i);
    if (m.max_error >= model.max_error) model = m;
    const auto c = fixtures::contrastive_gradcheck(i);
    if (c.max_error >= contrastive.max_error) contrastive = c;
    const auto cfg = fixtures::gradcheck_config(i);
    paths.insert(std::string(encoders::to_string(cfg.fusion)) + "/" + std::string(encoders::to_string(cfg.text_encoder)));
  }
  const double worst = std::max(model.max_error, contrastive.max_error);
  const bool ok = worst <= 1e-4 && paths.contains("product/bilstm") && paths.contains("concat/bilstm");
  return {ok, "max rel err model " + num(model.max_error, 3) + " (" + model.worst + "), contrastive " +
                  num(contrastive.max_error, 3) + " over 100 instances each (<= 1e-4)"};
}

std::array<std::size_t, 3> quota_oracle(std::size_t n, const std::array<int, 3>& pct) {
  std::array<std::size_t, 3> seats{}, rem{};
  std::size_t used = 0;
  for (int k = 0; k < 3; ++k) {
    seats[k] = n * pct[k] / 100;
    rem[k] = n * pct[k] % 100;
    used += seats[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; used < n; ++i, ++used) ++seats[order[i % 3]];
  return seats;
}

corpus::ImageRecord image_record(const std::string& id, corpus::BodyPart part, corpus::Modality mod) {
  corpus::ImageRecord r;
  r.image_id = id;
  r.path = "images/" + id + ".png";
  r.body_part = part;
  r.modality = mod;
  return r;
}

Outcome split_fidelity() {
  std::vector<corpus::ImageRecord> slake;
  for (int i = 0; i < 642; ++i) {
    slake.push_back(image_record("s" + std::to_string(i), corpus::BodyPart::Chest, corpus::Modality::XRay));
  }
  const auto s = corpus::split_corpus(slake, corpus::kDefaultRatios, 0).split;
  const bool sizes = s.train.size() == 450 && s.val.size() == 96 && s.test.size() == 96;

  Engine engine(777);
  const std::vector<std::array<int, 3>> percents{{70, 15, 15}, {80, 10, 10}, {60, 20, 20}, {34, 33, 33}, {90, 5, 5}};
  std::size_t failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto pct = percents[uniform_index(engine, percents.size())];
    const corpus::Ratios ratios{pct[0] / 100.0, pct[1] / 100.0, pct[2] / 100.0};
    std::vector<corpus::ImageRecord> images;
    std::map<std::pair<int, int>, std::vector<std::string>> strata;
    const auto n = uniform_index(engine, 80);
    for (std::size_t i = 0; i < n; ++i) {
      const auto part = static_cast<corpus::BodyPart>(uniform_index(engine, 6));
      const auto mod = static_cast<corpus::Modality>(uniform_index(engine, 3));
      images.push_back(image_record(std::to_string(trial) + "_" + std::to_string(i), part, mod));
      strata[{static_cast<int>(part), static_cast<int>(mod)}].push_back(images.back().image_id);
    }
    const std::uint64_t seed = engine();
    const auto split = corpus::split_corpus(images, ratios, seed).split;

    std::set<std::string> seen;
    bool ok = true;
    for (const auto* part : {&split.train, &split.val, &split.test}) {
      for (const auto& id : *part) ok = ok && seen.insert(id).second;
    }
    ok = ok && seen.size() == images.size();
    for (const auto& [key, ids] : strata) {
      std::array<std::size_t, 3> got{};
      for (const auto& id : ids) {
        got[0] += std::count(split.train.begin(), split.train.end(), id);
        got[1] += std::count(split.val.begin(), split.val.end(), id);
        got[2] += std::count(split.test.begin(), split.test.end(), id);
      }
      const auto want = ids.size() < 3 ? std::array<std::size_t, 3>{ids.size(), 0, 0} : quota_oracle(ids.size(), pct);
      ok = ok && got == want;
    }
    auto shuffled = images;
    shuffle_in_place(shuffled, engine);
    ok = ok && corpus::split_corpus(shuffled, ratios, seed).split == split;
    failures += !ok;
  }
  return {sizes && failures == 0, "642 -> (" + std::to_string(s.train.size()) + ", " + std::to_string(s.val.size()) +
                                      ", " + std::to_string(s.test.size()) + "); property failures " +
                                      std::to_string(failures) + "/1000"};
}

Outcome synthesis() {
  const auto lexicon = synth::load_lexicon(kShipped / "lexicon.json");
  const auto templates = synth::load_templates(kShipped / "templates.json");
  fixtures::TempDir dir("accept-synth");
  std::vector<std::string> bytes;
  std::size_t pairs = 0;
  bool closed_ok = true;
  for (int run = 0; run < 2; ++run) {
    const auto c = synth::synthesize(synth::load_reports(kData / "reports_golden.jsonl"), lexicon, templates);
    corpus::save_corpus(dir / std::to_string(run), c);
    bytes.push_back(read_binary_file(dir / std::to_string(run) / "qa.jsonl"));
    pairs = c.pairs.size();
    for (const auto& p : c.pairs) {
      if (p.answer_type == corpus::AnswerType::Closed) closed_ok = closed_ok && (p.answer == "Yes" || p.answer == "No");
    }
  }
  // Hand expansion of the fixture: 10 * (2 + 5 + 4 + 4 + 7).
  const std::size_t expected = 220;
  const bool ok = bytes[0] == bytes[1] && !bytes[0].empty() && pairs == expected && closed_ok;
  return {ok, std::string("qa.jsonl ") + (bytes[0] == bytes[1] ? "byte-identical" : "differs") + ", " +
                  std::to_string(pairs) + "/" + std::to_string(expected) + " pairs, CLOSED answers " +
                  (closed_ok ? "all Yes/No" : "invalid")};
}

Outcome labeler_oracle() {
  const auto lexicon = synth::load_lexicon(kShipped / "lexicon.json");
  const auto cases = read_json_file(kData / "labeler_oracle.json");
  std::size_t matched = 0;
  for (const auto& c : cases) {
    synth::ReportRecord r;
    r.report_id = "r";
    r.image_id = "img";
    r.text = c.at("text").get<std::string>();
    const auto labels = synth::extract_labels(r, lexicon);
    bool all = true;
    for (const auto& [id, state] : labels.states) {
      const std::string want = c.at("expect").contains(id) ? c["expect"][id].get<std::string>() : "Unmentioned";
      all = all && std::string(synth::to_string(state)) == want;
    }
    matched += all;
  }
  return {matched == 30 && cases.size() == 30, std::to_string(matched) + "/" + std::to_string(cases.size()) +
                                                   " sentences match exactly"};
}

Outcome adadelta_oracle() {
  const double rho = 0.95, eps = 1e-6;
  std::vector<double> x{0.0};
  trainer::AdaDeltaState state(1);
  trainer::adadelta_step(x, std::vector<double>{1.0}, state, {});
  const double dx1 = -std::sqrt(eps) / std::sqrt((1 - rho) + eps);
  const double err1 = std::abs(x[0] - dx1);
  trainer::adadelta_step(x, std::vector<double>{1.0}, state, {});
  const double eg2 = rho * (1 - rho) + (1 - rho);
  const double edx2 = (1 - rho) * dx1 * dx1;
  const double dx2 = -std::sqrt(edx2 + eps) / std::sqrt(eg2 + eps);
  const double err2 = std::abs(x[0] - (dx1 + dx2));

  Engine engine(3);
  std::vector<double> p(64);
  for (auto& v : p) v = uniform_real(engine, -2, 2);
  trainer::AdaDeltaState warm(p.size());
  std::vector<double> g(p.size());
  for (auto& v : g) v = uniform_real(engine, -1, 1);
  trainer::adadelta_step(p, g, warm, {});
  const auto before = p;
  trainer::adadelta_step(p, std::vector<double>(p.size(), 0.0), warm, {});
  const bool fixpoint = std::memcmp(before.data(), p.data(), p.size() * sizeof(double)) == 0;
  return {err1 <= 1e-12 && err2 <= 1e-12 && fixpoint,
          "step1 err " + num(err1, 2) + ", step2 err " + num(err2, 2) + " (<= 1e-12), zero-gradient step " +
              (fixpoint ? "bit-identical" : "moved parameters")};
}

Outcome contrastive() {
  Engine engine(4);
  double worst_uniform = 0.0;
  for (Eigen::Index n : {2, 3, 4, 8, 16}) {
    RowMatrix row(1, 5);
    for (Eigen::Index k = 0; k < 5; ++k) row(0, k) = uniform_real(engine, -1, 1);
    const RowMatrix all = row.replicate(n, 1);
    worst_uniform = std::max(worst_uniform,
                             std::abs(encoders::contrastive_loss(all, all, 0.07).loss - std::log(double(n))));
  }
  const RowMatrix e = RowMatrix::Identity(2, 2);
  const double ortho = std::abs(encoders::contrastive_loss(e, e, 1.0).loss - std::log1p(std::exp(-1.0)));
  bool swap = true;
  for (int i = 0; i < 100; ++i) {
    RowMatrix a(6, 4), b(6, 4);
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      a.data()[k] = uniform_real(engine, -1, 1);
      b.data()[k] = uniform_real(engine, -1, 1);
    }
    swap = swap && encoders::contrastive_loss(a, b, 0.2).loss == encoders::contrastive_loss(b, a, 0.2).loss;
  }
  return {worst_uniform <= 1e-9 && ortho <= 1e-9 && swap,
          "|loss - ln N| " + num(worst_uniform, 2) + ", orthonormal err " + num(ortho, 2) + " (<= 1e-9), swap " +
              (swap ? "exact" : "differs")};
}

Outcome freeze_contract() {
  const auto f = fixtures::overfit_fixture();
  trainer::TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 4;
  std::string detail;
  bool ok = true;
  for (auto group : {ParamGroup::Image, ParamGroup::Text}) {
    auto mc = fixtures::overfit_model_config();
    (group == ParamGroup::Image ? mc.freeze_image : mc.freeze_text) = true;
    auto result = trainer::train({f.images, f.pairs, f.split, &f.store}, mc, cfg);
    auto initial = Model::create(mc, result.final_model.text_vocab(), result.vocab.size());
    auto a = initial.params(group);
    auto b = result.final_model.params(group);
    bool same = a.size() == b.size();
    for (std::size_t i = 0; same && i < a.size(); ++i) {
      same = a[i].tensor->data.size() == b[i].tensor->data.size() &&
             std::memcmp(a[i].tensor->data.data(), b[i].tensor->data.data(), a[i].tensor->data.size() * sizeof(double)) == 0;
    }
    auto head_a = initial.params(ParamGroup::Head);
    auto head_b = result.final_model.params(ParamGroup::Head);
    const bool head_moved = head_a[0].tensor->data != head_b[0].tensor->data;
    ok = ok && same && head_moved;
    detail += std::string(group == ParamGroup::Image ? "image" : "text") + (same ? " bit-identical" : " changed") + "; ";
  }
  return {ok, detail + "20 epochs on the overfit fixture"};
}

Outcome checkpoint_roundtrip() {
  fixtures::TempDir dir("accept-ckpt");
  Engine engine(5);
  std::size_t exact = 0;
  for (int i = 0; i < 100; ++i) {
    Checkpoint c;
    const auto count = 1 + uniform_index(engine, 5);
    for (std::size_t t = 0; t < count; ++t) {
      NamedTensor nt{"t" + std::to_string(t), {1 + uniform_index(engine, 4), 1 + uniform_index(engine, 4)}, {}};
      for (std::size_t k = 0; k < nt.shape[0] * nt.shape[1]; ++k) {
        nt.data.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(engine())));
      }
      c.add(std::move(nt));
    }
    c.meta = {{"i", i}};
    save_checkpoint(c, dir / "c.ckpt");
    const auto back = load_checkpoint(dir / "c.ckpt");
    bool same = back.tensors.size() == c.tensors.size() && back.meta == c.meta;
    for (std::size_t t = 0; same && t < c.tensors.size(); ++t) {
      same = back.tensors[t].name == c.tensors[t].name && back.tensors[t].shape == c.tensors[t].shape &&
             std::memcmp(back.tensors[t].data.data(), c.tensors[t].data.data(), c.tensors[t].data.size() * 4) == 0;
    }
    exact += same;
  }

  const auto assemble = [](const json& header, std::size_t floats) {
    const auto text = header.dump();
    std::string out(Checkpoint::kMagic);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xff));
    return out + text + std::string(floats * 4, '\0');
  };
  const auto header = [](std::uint64_t n, int version) {
    return json{{"version", version},
                {"tensors", json::array({{{"name", "w"}, {"dtype", "f32"}, {"shape", {n}}, {"offset", 0}}})},
                {"meta", json::object()}};
  };
  const auto rejects = [](const std::string& bytes, auto tag) {
    try {
      Checkpoint::deserialize(bytes);
    } catch (const decltype(tag)&) {
      return true;
    } catch (...) {
    }
    return false;
  };
  const auto valid = assemble(header(8, 1), 8);
  std::size_t rejected = 0;
  rejected += rejects("XXXX" + valid.substr(4), FormatError(""));
  rejected += rejects(assemble(header(10, 1), 8), IntegrityError(""));
  rejected += rejects(assemble(header(8, 2), 8), FormatError(""));
  rejected += rejects(valid.substr(0, valid.size() - 3), IntegrityError(""));
  return {exact == 100 && rejected == 4, std::to_string(exact) + "/100 bit-exact round trips; " +
                                             std::to_string(rejected) + "/4 corrupt fixtures rejected"};
}

Outcome service_equivalence() {
  const auto f = fixtures::service_fixture();
  const server::Service service(f.model, f.vocab, "mvqa-acceptance");
  server::HttpServer http(service);
  const int port = http.bind("127.0.0.1", 0);
  std::thread loop([&] { http.listen(); });
  httplib::Client client("127.0.0.1", port);

  std::size_t requests = 0, agree = 0;
  double worst = 0.0;
  for (const auto& png : f.pngs) {
    const auto tensor = image_io::to_tensor(png, f.model.config().image_side, f.model.config().image_channels);
    for (const auto& q : f.questions) {
      ++requests;
      const auto direct = predict(tensor, q, f.model, f.vocab, f.vocab.size());
      const json body{{"image", image_io::base64_encode(png)}, {"question", q}, {"top_k", f.vocab.size()}};
      const auto res = client.Post("/predict", body.dump(), "application/json");
      if (!res || res->status != 200) continue;
      const auto got = json::parse(res->body);
      bool same = got.at("answer") == direct.answer && got.at("top_k").size() == direct.top_k.size();
      for (std::size_t i = 0; same && i < direct.top_k.size(); ++i) {
        same = got["top_k"][i]["answer"] == direct.top_k[i].first;
        worst = std::max(worst, std::abs(got["top_k"][i]["prob"].get<double>() - direct.top_k[i].second));
      }
      agree += same;
    }
  }
  http.stop();
  loop.join();
  return {requests == 50 && agree == 50 && worst <= 1e-6,
          std::to_string(agree) + "/" + std::to_string(requests) + " answers equal over HTTP, max |dp| " +
              num(worst, 2) + " (<= 1e-6); no console in the build"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"overfit-sanity", overfit_sanity},
      {"gradient-suite", gradient_suite},
      {"split-fidelity", split_fidelity},
      {"synthesis-determinism", synthesis},
      {"labeler-oracle", labeler_oracle},
      {"adadelta-oracle", adadelta_oracle},
      {"contrastive-loss", contrastive},
      {"freeze-contract", freeze_contract},
      {"checkpoint-roundtrip", checkpoint_roundtrip},
      {"service-equivalence", service_equivalence},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::left << std::setw(24) << name << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
