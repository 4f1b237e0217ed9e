#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "medvqa/text.hpp"

namespace medvqa {

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;
};

// On-disk layout:
//   "MVQA1"                      5 bytes
//   header length                u64 little-endian
//   header                       UTF-8 JSON {version, tensors:[{name, dtype:"f32",
//                                shape, offset}], meta}
//   payload                      little-endian float32, offsets in bytes from
//                                the start of the payload
struct Checkpoint {
  static constexpr std::string_view kMagic = "MVQA1";
  static constexpr int kVersion = 1;

  std::vector<NamedTensor> tensors;
  json meta = json::object();

  const NamedTensor* find(std::string_view name) const;
  const NamedTensor& at(std::string_view name) const;  // throws FormatError
  void add(NamedTensor tensor);                         // throws IntegrityError on repeats

  std::string serialize() const;
  /// FormatError for a foreign magic, unparsable header or wrong version;
  /// IntegrityError when the payload is shorter than the header claims or
  /// names repeat.
  static Checkpoint deserialize(std::string_view bytes);
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace medvqa
