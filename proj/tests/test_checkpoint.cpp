#include <bit>
#include <cstring>
#include <limits>

#include <gtest/gtest.h>

#include "medvqa/checkpoint.hpp"
#include "medvqa/errors.hpp"
#include "medvqa/rng.hpp"
#include "support.hpp"

using namespace medvqa;

namespace {

Checkpoint random_checkpoint(Engine& engine) {
  Checkpoint c;
  const auto count = 1 + uniform_index(engine, 6);
  for (std::size_t t = 0; t < count; ++t) {
    NamedTensor nt;
    nt.name = "t" + std::to_string(t) + "." + std::to_string(uniform_index(engine, 1000));
    const auto rank = 1 + uniform_index(engine, 3);
    std::size_t n = 1;
    for (std::size_t r = 0; r < rank; ++r) {
      nt.shape.push_back(1 + uniform_index(engine, 5));
      n *= nt.shape.back();
    }
    // Arbitrary bit patterns, including subnormals, infinities and NaNs.
    for (std::size_t i = 0; i < n; ++i) {
      nt.data.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(engine())));
    }
    c.add(std::move(nt));
  }
  c.meta = {{"kind", "test"}, {"value", uniform_index(engine, 1u << 20)}};
  return c;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// Hand-assembled container so that corrupt variants are easy to build.
std::string assemble(const json& header, std::size_t payload_floats) {
  const auto text = header.dump();
  std::string out(Checkpoint::kMagic);
  std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  out += text;
  out.append(payload_floats * 4, '\0');
  return out;
}

json one_tensor_header(std::uint64_t count, int version = 1) {
  return {{"version", version},
          {"tensors", json::array({{{"name", "w"}, {"dtype", "f32"}, {"shape", {count}}, {"offset", 0}}})},
          {"meta", json::object()}};
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  fixtures::TempDir dir("ckpt");
  Engine engine(2024);
  for (int i = 0; i < 100; ++i) {
    const auto original = random_checkpoint(engine);
    const auto path = dir / ("c" + std::to_string(i) + ".ckpt");
    save_checkpoint(original, path);
    const auto loaded = load_checkpoint(path);
    ASSERT_EQ(loaded.tensors.size(), original.tensors.size());
    for (std::size_t t = 0; t < original.tensors.size(); ++t) {
      EXPECT_EQ(loaded.tensors[t].name, original.tensors[t].name);
      EXPECT_EQ(loaded.tensors[t].shape, original.tensors[t].shape);
      EXPECT_TRUE(bitwise_equal(loaded.tensors[t].data, original.tensors[t].data)) << original.tensors[t].name;
    }
    EXPECT_EQ(loaded.meta, original.meta);
    EXPECT_EQ(loaded.serialize(), original.serialize());
  }
}

TEST(Checkpoint, HandAssembledFileLoads) {
  auto bytes = assemble(one_tensor_header(2), 2);
  const float v = 1.5f;
  std::memcpy(bytes.data() + bytes.size() - 4, &v, 4);
  const auto c = Checkpoint::deserialize(bytes);
  ASSERT_EQ(c.at("w").data.size(), 2u);
  EXPECT_EQ(c.at("w").data[0], 0.0f);
  EXPECT_EQ(c.at("w").data[1], 1.5f);
}

TEST(Checkpoint, ForeignMagicRejected) {
  auto bytes = Checkpoint{}.serialize();
  EXPECT_THROW(Checkpoint::deserialize("XXXX" + bytes.substr(4)), FormatError);
  EXPECT_THROW(Checkpoint::deserialize("XXXX"), FormatError);
  EXPECT_THROW(Checkpoint::deserialize(""), FormatError);
}

TEST(Checkpoint, PayloadShorterThanDeclaredRejected) {
  EXPECT_THROW(Checkpoint::deserialize(assemble(one_tensor_header(10), 8)), IntegrityError);
  EXPECT_NO_THROW(Checkpoint::deserialize(assemble(one_tensor_header(8), 8)));
}

TEST(Checkpoint, WrongVersionRejected) {
  EXPECT_THROW(Checkpoint::deserialize(assemble(one_tensor_header(2, 2), 2)), FormatError);
}

TEST(Checkpoint, TruncationAnywhereRejected) {
  Engine engine(5);
  const auto bytes = random_checkpoint(engine).serialize();
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    EXPECT_THROW(Checkpoint::deserialize(std::string_view(bytes).substr(0, cut)), Error) << cut;
  }
}

TEST(Checkpoint, HeaderThatIsNotJsonRejected) {
  std::string out(Checkpoint::kMagic);
  const std::string text = "{not json";
  std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  EXPECT_THROW(Checkpoint::deserialize(out + text), FormatError);
}

TEST(Checkpoint, DuplicateNamesRejected) {
  Checkpoint c;
  c.add({"a", {1}, {1.0f}});
  EXPECT_THROW(c.add({"a", {1}, {2.0f}}), IntegrityError);
  json header = one_tensor_header(1);
  header["tensors"].push_back(header["tensors"][0]);
  EXPECT_THROW(Checkpoint::deserialize(assemble(header, 1)), IntegrityError);
}

TEST(Checkpoint, MissingFileIsAnError) {
  fixtures::TempDir dir("ckpt-missing");
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), Error);
}
