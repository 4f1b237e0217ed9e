#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "medvqa/encoders.hpp"

namespace medvqa::image_io {

struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 (gray) or 3 (RGB), interleaved rows
  std::vector<std::uint8_t> pixels;
};

/// Decodes PNG or JPEG bytes (sniffed from the signature) into gray or RGB.
/// ImageDecodeError for anything else or corrupt data.
RawImage decode(std::string_view bytes, std::size_t channels);

std::string encode_png(const RawImage& image);

/// Bilinear resampling with half-pixel centers and edge clamping, scaled to
/// [0, 1].
encoders::ImageTensor resize_bilinear(const RawImage& image, std::size_t side);

/// decode + resize_bilinear.
encoders::ImageTensor to_tensor(std::string_view bytes, std::size_t side, std::size_t channels);

encoders::ImageTensor load_image(const std::filesystem::path& path, std::size_t side,
                                 std::size_t channels);

// Standard base64 (RFC 4648) with padding. decode throws ImageDecodeError.
std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);
/// Exact decoded length implied by a padded base64 string, or the upper
/// bound 3*len/4 when the input is not a multiple of 4.
std::size_t base64_decoded_size(std::string_view text);

}  // namespace medvqa::image_io
