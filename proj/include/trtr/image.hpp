#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "trtr/tensor.hpp"

namespace trtr {

/// One video frame, 3 x H x W with values in [0, 1].
struct Frame {
  Tensor pixels;
  std::size_t index = 0;

  std::size_t height() const { return pixels.dim(1); }
  std::size_t width() const { return pixels.dim(2); }

  std::array<double, 3> channel_means() const {
    std::array<double, 3> means{};
    const std::size_t hw = height() * width();
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += pixels[c * hw + i];
      means[c] = s / static_cast<double>(hw);
    }
    return means;
  }
};

namespace detail {

inline void skip_pnm_space(std::istream& is) {
  for (;;) {
    int ch = is.peek();
    if (ch == '#') {
      std::string line;
      std::getline(is, line);
    } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
      is.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_pnm_int(std::istream& is, const std::string& path) {
  skip_pnm_space(is);
  std::size_t v = 0;
  if (!(is >> v)) throw InputError(path + ": malformed PNM header");
  return v;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

/// Reads binary 8-bit PPM (P6) or PGM (P5). Gray images are replicated to
/// three channels.
inline Frame read_pnm(const std::string& path, std::size_t index = 0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open image " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6" && magic != "P5") throw InputError(path + ": only binary P5/P6 images are supported");
  const std::size_t w = detail::read_pnm_int(is, path);
  const std::size_t h = detail::read_pnm_int(is, path);
  const std::size_t maxval = detail::read_pnm_int(is, path);
  if (w == 0 || h == 0) throw InputError(path + ": empty image");
  if (maxval == 0 || maxval > 255) throw InputError(path + ": only 8-bit images are supported");
  is.get();
  const std::size_t channels = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(w * h * channels);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw InputError(path + ": truncated pixel data");
  Frame f{Tensor({3, h, w}), index};
  const double inv = 1.0 / static_cast<double>(maxval);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = (y * w + x) * channels + (channels == 3 ? c : 0);
        f.pixels(c, y, x) = raw[src] * inv;
      }
  return f;
}

inline void write_ppm(const std::string& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw DimensionError("write_ppm expects 3 x H x W");
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path);
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raw(w * h * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) raw[(y * w + x) * 3 + c] = detail::to_byte(rgb(c, y, x));
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

enum class PgmScaling { whole_map, per_row };

/// Writes an H x W map as 8-bit PGM after min-max normalization, over the
/// whole map or row by row (attention matrices).
inline void write_pgm(const std::string& path, const Tensor& map, PgmScaling scaling = PgmScaling::whole_map) {
  if (map.rank() != 2) throw DimensionError("write_pgm expects H x W");
  const std::size_t h = map.dim(0), w = map.dim(1);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path);
  os << "P5\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raw(w * h);
  const std::size_t block = scaling == PgmScaling::per_row ? w : w * h;
  for (std::size_t start = 0; start < raw.size(); start += block) {
    const auto first = map.data().begin() + static_cast<std::ptrdiff_t>(start);
    const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(block));
    const double range = *hi > *lo ? *hi - *lo : 1.0;
    for (std::size_t i = start; i < start + block; ++i) raw[i] = detail::to_byte((map[i] - *lo) / range);
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

inline void write_csv(const std::string& path, const Tensor& map) {
  if (map.rank() != 2) throw DimensionError("write_csv expects a matrix");
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path);
  os.precision(17);
  for (std::size_t r = 0; r < map.dim(0); ++r) {
    for (std::size_t c = 0; c < map.dim(1); ++c) os << (c ? "," : "") << map(r, c);
    os << '\n';
  }
}

}  // namespace trtr
