#pragma once

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsprox::img {

// Grayscale image with values in [0, 1], row-major.
struct Image {
  int h = 0;
  int w = 0;
  std::vector<double> v;
};

inline std::string lower_ext(const std::string& path) {
  const std::size_t dot = path.find_last_of('.');
  if (dot == std::string::npos) return {};
  std::string ext = path.substr(dot);
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

namespace detail {

inline int next_pgm_token(std::istream& is, const std::string& path) {
  // Skips whitespace and '#' comment lines between header tokens.
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  if (c == EOF) throw std::runtime_error("read_pgm: truncated header in '" + path + "'");
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = is.get();
  }
  if (!any) throw std::runtime_error("read_pgm: malformed header in '" + path + "'");
  return value;
}

}  // namespace detail

// Binary PGM (P5), 8-bit only.
inline Image read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_pgm: cannot open '" + path + "'");
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (!is || m0 != 'P' || m1 != '5')
    throw std::runtime_error("read_pgm: '" + path + "' is not a binary (P5) PGM");
  const int w = detail::next_pgm_token(is, path);
  const int h = detail::next_pgm_token(is, path);
  const int maxval = detail::next_pgm_token(is, path);
  if (w < 1 || h < 1) throw std::runtime_error("read_pgm: bad dimensions in '" + path + "'");
  if (maxval != 255)
    throw std::runtime_error("read_pgm: '" + path + "' has maxval " + std::to_string(maxval) +
                             ", only 8-bit (255) is supported");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h);
  is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!is) throw std::runtime_error("read_pgm: truncated pixel data in '" + path + "'");
  Image out{h, w, std::vector<double>(px.size())};
  for (std::size_t i = 0; i < px.size(); ++i) out.v[i] = px[i] / 255.0;
  return out;
}

inline void write_pgm(const std::string& path, const std::vector<std::uint8_t>& px, int h,
                      int w) {
  if (static_cast<std::size_t>(h) * w != px.size())
    throw std::invalid_argument("write_pgm: pixel count does not match dimensions");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_pgm: cannot open '" + path + "' for writing");
  os << "P5\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw std::runtime_error("write_pgm: write failed for '" + path + "'");
}

// PNG input: grayscale sources are used directly; color sources are reduced
// with the luminance weights 0.299 / 0.587 / 0.114.
inline Image read_png(const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("read_png: cannot read '" + path + "': " + msg);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("read_png: cannot decode '" + path + "': " + msg);
  }
  Image out{static_cast<int>(image.height), static_cast<int>(image.width), {}};
  const std::size_t npx = static_cast<std::size_t>(out.h) * out.w;
  out.v.resize(npx);
  if (color) {
    for (std::size_t i = 0; i < npx; ++i) {
      const double r = buf[3 * i], g = buf[3 * i + 1], b = buf[3 * i + 2];
      out.v[i] = (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
    }
  } else {
    for (std::size_t i = 0; i < npx; ++i) out.v[i] = buf[i] / 255.0;
  }
  return out;
}

inline Image read_image(const std::string& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".pgm") return read_pgm(path);
  if (ext == ".png") return read_png(path);
  throw std::runtime_error("read_image: unsupported file type '" + path + "'");
}

inline std::vector<std::uint8_t> quantize_unit(const std::vector<double>& v) {
  std::vector<std::uint8_t> px(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = std::min(1.0, std::max(0.0, v[i]));
    px[i] = static_cast<std::uint8_t>(std::lround(x * 255.0));
  }
  return px;
}

}  // namespace lsprox::img
