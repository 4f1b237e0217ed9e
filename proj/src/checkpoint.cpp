#include "medvqa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <set>

#include "medvqa/errors.hpp"

namespace medvqa {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(in[i])} << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float get_f32(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t{static_cast<unsigned char>(p[i])} << (8 * i);
  return std::bit_cast<float>(bits);
}

std::uint64_t element_count(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

const NamedTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const NamedTensor& Checkpoint::at(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  throw FormatError("checkpoint has no tensor '" + std::string(name) + "'");
}

void Checkpoint::add(NamedTensor tensor) {
  if (find(tensor.name)) throw IntegrityError("duplicate tensor name '" + tensor.name + "'");
  if (element_count(tensor.shape) != tensor.data.size()) {
    throw IntegrityError("tensor '" + tensor.name + "' shape does not match its data");
  }
  tensors.push_back(std::move(tensor));
}

std::string Checkpoint::serialize() const {
  json header;
  header["version"] = kVersion;
  header["meta"] = meta;
  header["tensors"] = json::array();
  std::set<std::string_view> names;
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    if (!names.insert(t.name).second) throw IntegrityError("duplicate tensor name '" + t.name + "'");
    if (element_count(t.shape) != t.data.size()) {
      throw IntegrityError("tensor '" + t.name + "' shape does not match its data");
    }
    header["tensors"].push_back(
        json{{"name", t.name}, {"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}});
    offset += 4 * t.data.size();
  }
  const auto text = header.dump();

  std::string out;
  out.reserve(kMagic.size() + 8 + text.size() + offset);
  out.append(kMagic);
  put_u64(out, text.size());
  out.append(text);
  for (const auto& t : tensors) {
    for (float f : t.data) put_f32(out, f);
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw FormatError("not a checkpoint: bad magic");
  }
  if (bytes.size() < kMagic.size() + 8) throw IntegrityError("checkpoint truncated in header length");
  const auto header_len = get_u64(bytes.substr(kMagic.size(), 8));
  const auto rest = bytes.substr(kMagic.size() + 8);
  if (header_len > rest.size()) throw IntegrityError("checkpoint truncated in header");

  json header;
  try {
    header = json::parse(rest.substr(0, header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("version") || !header["version"].is_number_integer()) {
    throw FormatError("checkpoint header lacks a version");
  }
  if (header["version"].get<int>() != kVersion) {
    throw FormatError("unsupported checkpoint version " + header["version"].dump());
  }

  const auto payload = rest.substr(header_len);
  Checkpoint ckpt;
  ckpt.meta = header.value("meta", json::object());
  try {
    for (const auto& entry : header.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      if (entry.at("dtype").get<std::string>() != "f32") {
        throw FormatError("tensor '" + t.name + "' has unsupported dtype " + entry.at("dtype").dump());
      }
      t.shape = entry.at("shape").get<std::vector<std::uint64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = element_count(t.shape);
      if (offset % 4 != 0) throw FormatError("tensor '" + t.name + "' has a misaligned offset");
      if (offset > payload.size() || count > (payload.size() - offset) / 4) {
        throw IntegrityError("tensor '" + t.name + "' declares " + std::to_string(count) +
                             " floats at byte " + std::to_string(offset) + " but the payload holds " +
                             std::to_string(payload.size()) + " bytes");
      }
      t.data.resize(count);
      const char* p = payload.data() + offset;
      for (std::uint64_t i = 0; i < count; ++i) t.data[i] = get_f32(p + 4 * i);
      ckpt.add(std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed tensor table: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_text_file(path, checkpoint.serialize());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return Checkpoint::deserialize(read_binary_file(path));
}

}  // namespace medvqa
