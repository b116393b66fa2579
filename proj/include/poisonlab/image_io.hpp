#pragma once

// Raster file I/O for datasets and reports.
//
// Reading: PNG (via libpng), binary PPM/PGM (P6/P5, 8 or 16 bit) and PFM
// (little- or big-endian, colour or grey). Grey inputs are replicated to three
// channels and alpha is dropped. Writing: PFM, which stores the float pixels
// exactly, and 8-bit PNG.

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "poisonlab/errors.hpp"
#include "poisonlab/imageops.hpp"

namespace poisonlab {

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

// Whitespace-separated header tokens of a PNM/PFM file; '#' starts a comment.
// Leaves `pos` on the single whitespace byte that ends the last token.
inline std::string next_header_token(const std::vector<unsigned char>& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
  return tok;
}

inline int parse_positive(const std::string& tok, const std::filesystem::path& path) {
  try {
    const int v = std::stoi(tok);
    if (v > 0) return v;
  } catch (const std::exception&) {
  }
  throw LoadError("bad header value '" + tok + "' in " + path.string());
}

inline Image decode_pnm(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  std::size_t pos = 0;
  const std::string magic = next_header_token(bytes, pos);
  const int channels = magic == "P6" ? 3 : 1;
  const int width = parse_positive(next_header_token(bytes, pos), path);
  const int height = parse_positive(next_header_token(bytes, pos), path);
  const int maxval = parse_positive(next_header_token(bytes, pos), path);
  if (maxval > 65535) throw LoadError("bad maxval in " + path.string());
  ++pos;
  const int bps = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(width) * height * channels * bps;
  if (bytes.size() < pos + need) throw LoadError("truncated image data in " + path.string());
  Image img(Shape3{3, height, width});
  const unsigned char* p = bytes.data() + pos;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const std::size_t k = (static_cast<std::size_t>(y) * width + x) * channels + (channels == 3 ? c : 0);
        const unsigned v = bps == 1 ? p[k] : (static_cast<unsigned>(p[2 * k]) << 8) | p[2 * k + 1];
        img.at(c, y, x) = static_cast<float>(v) / static_cast<float>(maxval);
      }
    }
  }
  return img;
}

inline Image decode_pfm(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  std::size_t pos = 0;
  const std::string magic = next_header_token(bytes, pos);
  const int channels = magic == "PF" ? 3 : 1;
  const int width = parse_positive(next_header_token(bytes, pos), path);
  const int height = parse_positive(next_header_token(bytes, pos), path);
  const std::string scale_tok = next_header_token(bytes, pos);
  double scale = 0.0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    throw LoadError("bad scale '" + scale_tok + "' in " + path.string());
  }
  if (scale == 0.0) throw LoadError("bad scale '" + scale_tok + "' in " + path.string());
  ++pos;
  const bool little = scale < 0.0;
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  if (bytes.size() < pos + count * 4) throw LoadError("truncated image data in " + path.string());
  Image img(Shape3{3, height, width});
  for (std::size_t k = 0; k < count; ++k) {
    unsigned char b[4];
    std::memcpy(b, bytes.data() + pos + 4 * k, 4);
    if (little != (std::endian::native == std::endian::little)) {
      std::swap(b[0], b[3]);
      std::swap(b[1], b[2]);
    }
    float v;
    std::memcpy(&v, b, 4);
    // PFM stores rows bottom to top.
    const int y = height - 1 - static_cast<int>(k / (static_cast<std::size_t>(width) * channels));
    const int x = static_cast<int>((k / channels) % width);
    if (channels == 3) {
      img.at(static_cast<int>(k % 3), y, x) = v;
    } else {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = v;
    }
  }
  return img;
}

inline Image decode_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw LoadError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&png);
    throw LoadError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  const int w = static_cast<int>(png.width), h = static_cast<int>(png.height);
  Image img(Shape3{3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
    }
  }
  return img;
}

}  // namespace detail

inline bool is_supported_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm" || ext == ".pfm";
}

// Decodes by file signature, not extension.
inline Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw LoadError("no such image file " + path.string());
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return detail::decode_png(path);
  if (bytes.size() >= 2 && bytes[0] == 'P') {
    if (bytes[1] == '5' || bytes[1] == '6') return detail::decode_pnm(bytes, path);
    if (bytes[1] == 'F' || bytes[1] == 'f') return detail::decode_pfm(bytes, path);
  }
  throw LoadError("unrecognised image format in " + path.string());
}

inline void write_pfm(const std::filesystem::path& path, const Image& img) {
  if (img.shape().channels != 3) throw ArgumentError("write_pfm: expected a 3-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  const int w = img.shape().width, h = img.shape().height;
  out << "PF\n" << w << " " << h << "\n-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(w) * 3);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = img.at(c, y, x);
    }
    if constexpr (std::endian::native != std::endian::little) {
      for (float& v : row) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(v)));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw LoadError("write failed for " + path.string());
}

// Interleaved 8-bit RGB rows, top to bottom.
inline void write_png_rgb8(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) throw ArgumentError("write_png_rgb8: buffer size mismatch");
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(width);
  png.height = static_cast<png_uint_32>(height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, rgb.data(), 0, nullptr)) {
    throw LoadError("cannot write PNG " + path.string() + ": " + png.message);
  }
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  const int w = img.shape().width, h = img.shape().height;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  write_png_rgb8(path, w, h, rgb);
}

// Bilinear resampling with pixel-centre alignment. Same-size input is returned
// unchanged.
inline Image resize_bilinear(const Image& img, int height, int width) {
  if (height < 1 || width < 1) throw ArgumentError("resize_bilinear: target size must be positive");
  const Shape3 s = img.shape();
  if (s.height == height && s.width == width) return img;
  Image out(Shape3{s.channels, height, width});
  const double sy = static_cast<double>(s.height) / height, sx = static_cast<double>(s.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, s.height - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, s.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, s.width - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, s.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < s.channels; ++c) {
        const double top = img.at(c, y0, x0) * (1 - wx) + img.at(c, y0, x1) * wx;
        const double bot = img.at(c, y1, x0) * (1 - wx) + img.at(c, y1, x1) * wx;
        out.at(c, y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

}  // namespace poisonlab
