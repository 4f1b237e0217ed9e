#include <gtest/gtest.h>

#include "medvqa/errors.hpp"
#include "medvqa/image_io.hpp"
#include "support.hpp"

using namespace medvqa;
using namespace medvqa::image_io;

TEST(Base64, KnownVectors) {
  // RFC 4648 test vectors.
  const std::vector<std::pair<std::string, std::string>> cases{
      {"", ""}, {"f", "Zg=="}, {"fo", "Zm8="}, {"foo", "Zm9v"}, {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
      {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, enc] : cases) {
    EXPECT_EQ(base64_encode(plain), enc);
    EXPECT_EQ(base64_decode(enc), plain);
    EXPECT_EQ(base64_decoded_size(enc), plain.size());
  }
  EXPECT_THROW(base64_decode("Zm9v!"), ImageDecodeError);
  EXPECT_THROW(base64_decode("Zg="), ImageDecodeError);
}

TEST(Base64, RandomRoundTrip) {
  Engine engine(1);
  for (int i = 0; i < 200; ++i) {
    std::string bytes(uniform_index(engine, 300), '\0');
    for (auto& c : bytes) c = static_cast<char>(uniform_index(engine, 256));
    ASSERT_EQ(base64_decode(base64_encode(bytes)), bytes);
  }
}

TEST(Png, RoundTripAtNativeSize) {
  Engine engine(2);
  for (std::size_t channels : {1u, 3u}) {
    RawImage raw;
    raw.width = raw.height = 16;
    raw.channels = channels;
    for (std::size_t i = 0; i < 16 * 16 * channels; ++i) raw.pixels.push_back(static_cast<std::uint8_t>(uniform_index(engine, 256)));
    const auto bytes = encode_png(raw);
    const auto back = decode(bytes, channels);
    EXPECT_EQ(back.pixels, raw.pixels);
    const auto t = to_tensor(bytes, 16, channels);
    for (std::size_t i = 0; i < t.data.size(); ++i) ASSERT_DOUBLE_EQ(t.data[i], raw.pixels[i] / 255.0);
  }
}

TEST(Resize, ConstantImageStaysConstant) {
  RawImage raw;
  raw.width = 7;
  raw.height = 5;
  raw.pixels.assign(35, 51);
  const auto t = resize_bilinear(raw, 16);
  for (double v : t.data) EXPECT_NEAR(v, 0.2, 1e-12);
}

TEST(Resize, HorizontalRampIsInterpolated) {
  // 2x1 image [0, 255] to width 4: half-pixel centers give source positions
  // -0.25, 0.25, 0.75, 1.25, so values 0, 0.25, 0.75, 1 after clamping.
  RawImage raw;
  raw.width = 2;
  raw.height = 1;
  raw.pixels = {0, 255};
  const auto t = resize_bilinear(raw, 4);
  EXPECT_NEAR(t.at(0, 0, 0), 0.0, 1e-12);
  EXPECT_NEAR(t.at(0, 1, 0), 0.25, 1e-12);
  EXPECT_NEAR(t.at(0, 2, 0), 0.75, 1e-12);
  EXPECT_NEAR(t.at(0, 3, 0), 1.0, 1e-12);
}

TEST(Decode, GarbageRejected) {
  EXPECT_THROW(decode("not an image at all", 1), ImageDecodeError);
  EXPECT_THROW(decode("\x89PNG\r\n\x1a\n garbage", 1), ImageDecodeError);
  EXPECT_THROW(decode("\xff\xd8\xff garbage", 1), ImageDecodeError);
}

TEST(Decode, GrayToRgbAndBack) {
  RawImage raw;
  raw.width = raw.height = 4;
  raw.channels = 3;
  for (int i = 0; i < 16; ++i) {
    raw.pixels.insert(raw.pixels.end(), {static_cast<std::uint8_t>(i * 10), static_cast<std::uint8_t>(i * 10),
                                         static_cast<std::uint8_t>(i * 10)});
  }
  const auto gray = decode(encode_png(raw), 1);
  ASSERT_EQ(gray.channels, 1u);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(gray.pixels[static_cast<std::size_t>(i)], i * 10);
}
