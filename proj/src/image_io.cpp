// Copyright 2026 The promptlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "promptlens/image_io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace promptlens {

std::string encode_pfm(const Image& image) {
  static_assert(std::endian::native == std::endian::little, "PFM writer assumes a little-endian host");
  std::ostringstream out;
  out << "Pf\n" << image.cols() << ' ' << image.rows() << "\n-1.0\n";
  // PFM stores rows bottom to top.
  for (Index r = image.rows() - 1; r >= 0; --r) {
    for (Index c = 0; c < image.cols(); ++c) {
      const auto v = static_cast<float>(image(r, c));
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
  return out.str();
}

Image decode_pfm(std::string_view bytes) {
  std::istringstream in{std::string(bytes)};
  std::string magic;
  Index width = 0, height = 0;
  double scale = 0;
  if (!(in >> magic >> width >> height >> scale) || magic != "Pf" || width < 1 || height < 1)
    throw ConfigError("not a single-channel PFM image");
  if (scale > 0) throw ConfigError("big-endian PFM is not supported");
  in.get();
  Image image(height, width);
  for (Index r = height - 1; r >= 0; --r) {
    for (Index c = 0; c < width; ++c) {
      float v = 0;
      if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ConfigError("truncated PFM image");
      image(r, c) = v;
    }
  }
  return image;
}

void write_pfm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  const auto bytes = encode_pfm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write " + path.string());
}

Image read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open image " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_pfm(buf.str());
}

namespace {

void append_png(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

}  // namespace

std::string encode_png(const Image& image) {
  const double lo = image.minCoeff();
  const double hi = image.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(image.size()));
  for (Index r = 0; r < image.rows(); ++r)
    for (Index c = 0; c < image.cols(); ++c)
      pixels[static_cast<std::size_t>(r * image.cols() + c)] =
          static_cast<unsigned char>(std::lround(255.0 * (image(r, c) - lo) / span));

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::string out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    throw Error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, append_png, nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.cols()), static_cast<png_uint_32>(image.rows()), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index r = 0; r < image.rows(); ++r) png_write_row(png, pixels.data() + r * image.cols());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

}  // namespace promptlens
