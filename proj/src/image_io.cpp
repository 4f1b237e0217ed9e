#include "medvqa/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>

#include <jpeglib.h>
#include <openssl/evp.h>
#include <png.h>

#include "medvqa/errors.hpp"
#include "medvqa/text.hpp"

namespace medvqa::image_io {

namespace {

bool is_png(std::string_view b) { return b.size() >= 8 && b.substr(0, 8) == "\x89PNG\r\n\x1a\n"; }
bool is_jpeg(std::string_view b) {
  return b.size() >= 3 && static_cast<unsigned char>(b[0]) == 0xFF &&
         static_cast<unsigned char>(b[1]) == 0xD8 && static_cast<unsigned char>(b[2]) == 0xFF;
}

RawImage decode_png(std::string_view bytes, std::size_t channels) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ImageDecodeError(std::string("PNG: ") + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  RawImage out;
  out.width = img.width;
  out.height = img.height;
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ImageDecodeError("PNG: " + msg);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_quiet(j_common_ptr, int) {}

RawImage decode_jpeg(std::string_view bytes, std::size_t channels) {
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  err.mgr.emit_message = jpeg_quiet;
  RawImage out;  // constructed before setjmp so longjmp skips no destructors
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageDecodeError(std::string("JPEG: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
               static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = channels == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.channels = channels;
  out.pixels.resize(out.width * out.height * channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    auto* row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

std::string_view strip_data_url(std::string_view text) {
  if (text.starts_with("data:")) {
    const auto comma = text.find(',');
    if (comma != std::string_view::npos) return text.substr(comma + 1);
  }
  return text;
}

std::string without_whitespace(std::string_view text) {
  std::string s;
  s.reserve(text.size());
  for (char c : text) {
    if (c != ' ' && c != '\n' && c != '\r' && c != '\t') s.push_back(c);
  }
  return s;
}

}  // namespace

RawImage decode(std::string_view bytes, std::size_t channels) {
  if (channels != 1 && channels != 3) throw ImageDecodeError("channels must be 1 or 3");
  RawImage out;
  if (is_png(bytes)) {
    out = decode_png(bytes, channels);
  } else if (is_jpeg(bytes)) {
    out = decode_jpeg(bytes, channels);
  } else {
    throw ImageDecodeError("unrecognized image format (expected PNG or JPEG)");
  }
  if (out.width == 0 || out.height == 0) throw ImageDecodeError("image has no pixels");
  return out;
}

std::string encode_png(const RawImage& image) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw ImageDecodeError(std::string("PNG encode: ") + img.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw ImageDecodeError(std::string("PNG encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

encoders::ImageTensor resize_bilinear(const RawImage& image, std::size_t side) {
  encoders::ImageTensor t(side, image.channels);
  const double sy = static_cast<double>(image.height) / static_cast<double>(side);
  const double sx = static_cast<double>(image.width) / static_cast<double>(side);
  const auto px = [&](std::size_t y, std::size_t x, std::size_t c) {
    return static_cast<double>(image.pixels[(y * image.width + x) * image.channels + c]);
  };
  for (std::size_t y = 0; y < side; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(image.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const auto y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < side; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(image.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const auto x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = px(y0, x0, c) * (1.0 - wx) + px(y0, x1, c) * wx;
        const double bottom = px(y1, x0, c) * (1.0 - wx) + px(y1, x1, c) * wx;
        t.at(y, x, c) = std::clamp((top * (1.0 - wy) + bottom * wy) / 255.0, 0.0, 1.0);
      }
    }
  }
  return t;
}

encoders::ImageTensor to_tensor(std::string_view bytes, std::size_t side, std::size_t channels) {
  return resize_bilinear(decode(bytes, channels), side);
}

encoders::ImageTensor load_image(const std::filesystem::path& path, std::size_t side,
                                 std::size_t channels) {
  std::string bytes;
  try {
    bytes = read_binary_file(path);
  } catch (const Error&) {
    throw ImageDecodeError("cannot read image " + path.string());
  }
  try {
    return to_tensor(bytes, side, channels);
  } catch (const ImageDecodeError& e) {
    throw ImageDecodeError(path.string() + ": " + e.what());
  }
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::size_t base64_decoded_size(std::string_view text) {
  const auto s = without_whitespace(strip_data_url(text));
  if (s.size() % 4 != 0) return 3 * s.size() / 4;
  std::size_t pad = 0;
  if (!s.empty() && s.back() == '=') ++pad;
  if (s.size() > 1 && s[s.size() - 2] == '=') ++pad;
  return 3 * (s.size() / 4) - pad;
}

std::string base64_decode(std::string_view text) {
  const auto s = without_whitespace(strip_data_url(text));
  if (s.size() % 4 != 0) throw ImageDecodeError("base64 length is not a multiple of 4");
  std::string out(3 * (s.size() / 4), '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(s.data()),
                                static_cast<int>(s.size()));
  if (n < 0) throw ImageDecodeError("invalid base64");
  out.resize(base64_decoded_size(s));
  return out;
}

}  // namespace medvqa::image_io
