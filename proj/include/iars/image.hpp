#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace iars {

// Error taxonomy for the image codecs. Every malformed input maps to one of
// these; nothing else escapes the readers.
struct ImageIoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagicError : ImageIoError {
  using ImageIoError::ImageIoError;
};
struct BadHeaderError : ImageIoError {
  using ImageIoError::ImageIoError;
};
struct BadMaxvalError : ImageIoError {
  using ImageIoError::ImageIoError;
};
struct PayloadSizeError : ImageIoError {
  using ImageIoError::ImageIoError;
};
struct NonBinaryMaskError : ImageIoError {
  using ImageIoError::ImageIoError;
};

// Interleaved RGB image, values in [0,1].
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<float> pix;  // size height*width*3, row-major, r g b per pixel

  static RgbImage filled(int h, int w, float r, float g, float b) {
    RgbImage im;
    im.height = h;
    im.width = w;
    im.pix.resize(static_cast<std::size_t>(h) * w * 3);
    for (std::size_t i = 0; i < im.pix.size(); i += 3) {
      im.pix[i] = r;
      im.pix[i + 1] = g;
      im.pix[i + 2] = b;
    }
    return im;
  }
  float& at(int y, int x, int c) { return pix[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return pix[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // 0 or 1, row-major

  static BinaryMask filled(int h, int w, bool v) {
    BinaryMask m;
    m.height = h;
    m.width = w;
    m.data.assign(static_cast<std::size_t>(h) * w, v ? 1 : 0);
    return m;
  }
  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }
  bool operator==(const BinaryMask& o) const {
    return height == o.height && width == o.width && data == o.data;
  }
};

namespace detail {

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ImageIoError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ImageIoError("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ImageIoError("short write to " + path);
}

// Parses a netpbm header token, skipping whitespace and # comments.
inline long pnm_int(const std::string& s, std::size_t& pos, const std::string& path) {
  while (pos < s.size()) {
    const char c = s[pos];
    if (c == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= s.size() || s[pos] < '0' || s[pos] > '9')
    throw BadHeaderError("malformed header in " + path);
  long v = 0;
  while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
    v = v * 10 + (s[pos] - '0');
    if (v > 1000000) throw BadHeaderError("header value out of range in " + path);
    ++pos;
  }
  return v;
}

struct PnmHeader {
  int width = 0, height = 0;
  std::size_t payload_start = 0;
};

inline PnmHeader parse_pnm(const std::string& bytes, const char* magic, const std::string& path) {
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1])
    throw BadMagicError("expected " + std::string(magic) + " magic in " + path);
  std::size_t pos = 2;
  PnmHeader h;
  h.width = static_cast<int>(pnm_int(bytes, pos, path));
  h.height = static_cast<int>(pnm_int(bytes, pos, path));
  const long maxval = pnm_int(bytes, pos, path);
  if (h.width <= 0 || h.height <= 0) throw BadHeaderError("non-positive dims in " + path);
  if (maxval != 255) throw BadMaxvalError("maxval must be 255 in " + path);
  if (pos >= bytes.size()) throw PayloadSizeError("missing payload in " + path);
  const char c = bytes[pos];
  if (c != ' ' && c != '\t' && c != '\r' && c != '\n')
    throw BadHeaderError("missing separator before payload in " + path);
  h.payload_start = pos + 1;
  return h;
}

inline std::uint8_t quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace detail

inline RgbImage read_ppm(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  const auto h = detail::parse_pnm(bytes, "P6", path);
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height * 3;
  if (bytes.size() - h.payload_start != need)
    throw PayloadSizeError("payload of " + path + " has " +
                           std::to_string(bytes.size() - h.payload_start) + " bytes, expected " +
                           std::to_string(need));
  RgbImage im;
  im.height = h.height;
  im.width = h.width;
  im.pix.resize(need);
  for (std::size_t i = 0; i < need; ++i)
    im.pix[i] = static_cast<std::uint8_t>(bytes[h.payload_start + i]) / 255.0f;
  return im;
}

inline void write_ppm(const std::string& path, const RgbImage& im) {
  std::string bytes = "P6\n" + std::to_string(im.width) + " " + std::to_string(im.height) + "\n255\n";
  bytes.reserve(bytes.size() + im.pix.size());
  for (float v : im.pix) bytes.push_back(static_cast<char>(detail::quantize(v)));
  detail::write_file_bytes(path, bytes);
}

inline BinaryMask read_pgm(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  const auto h = detail::parse_pnm(bytes, "P5", path);
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() - h.payload_start != need)
    throw PayloadSizeError("payload of " + path + " has " +
                           std::to_string(bytes.size() - h.payload_start) + " bytes, expected " +
                           std::to_string(need));
  BinaryMask m;
  m.height = h.height;
  m.width = h.width;
  m.data.resize(need);
  for (std::size_t i = 0; i < need; ++i) {
    const std::uint8_t b = static_cast<std::uint8_t>(bytes[h.payload_start + i]);
    if (b != 0 && b != 255)
      throw NonBinaryMaskError("non-binary mask value " + std::to_string(b) + " in " + path);
    m.data[i] = b == 255 ? 1 : 0;
  }
  return m;
}

inline void write_pgm(const std::string& path, const BinaryMask& m) {
  std::string bytes = "P5\n" + std::to_string(m.width) + " " + std::to_string(m.height) + "\n255\n";
  bytes.reserve(bytes.size() + m.data.size());
  for (auto v : m.data) bytes.push_back(static_cast<char>(v ? 255 : 0));
  detail::write_file_bytes(path, bytes);
}

// Bilinear resampling with half-pixel-center alignment: destination pixel
// centers map to src = (dst + 0.5) * in/out - 0.5, clamped at the borders.
inline RgbImage resize_bilinear(const RgbImage& im, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_bilinear: bad target dims");
  if (out_h == im.height && out_w == im.width) return im;
  RgbImage out;
  out.height = out_h;
  out.width = out_w;
  out.pix.resize(static_cast<std::size_t>(out_h) * out_w * 3);
  const double sy = static_cast<double>(im.height) / out_h;
  const double sx = static_cast<double>(im.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, im.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, im.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, im.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, im.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * im.at(y0, x0, c) + wx * im.at(y0, x1, c)) +
                         wy * ((1 - wx) * im.at(y1, x0, c) + wx * im.at(y1, x1, c));
        out.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

// Nearest-neighbor mask resampling under the same alignment; binarity is
// preserved because values are copied, never blended.
inline BinaryMask resize_nearest(const BinaryMask& m, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize_nearest: bad target dims");
  if (out_h == m.height && out_w == m.width) return m;
  BinaryMask out = BinaryMask::filled(out_h, out_w, false);
  const double sy = static_cast<double>(m.height) / out_h;
  const double sx = static_cast<double>(m.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const int srcy = std::clamp(static_cast<int>((y + 0.5) * sy), 0, m.height - 1);
    for (int x = 0; x < out_w; ++x) {
      const int srcx = std::clamp(static_cast<int>((x + 0.5) * sx), 0, m.width - 1);
      out.at(y, x) = m.at(srcy, srcx);
    }
  }
  return out;
}

// Connected-component labelling on the foreground, 8-connectivity. Labels
// start at 1; 0 is background. Returns the number of components.
inline int label_components(const BinaryMask& m, std::vector<int>& labels) {
  labels.assign(m.data.size(), 0);
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < m.data.size(); ++s) {
    if (!m.data[s] || labels[s]) continue;
    ++next;
    stack.push_back(s);
    labels[s] = next;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const int y = static_cast<int>(p) / m.width, x = static_cast<int>(p) % m.width;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
          const std::size_t q = static_cast<std::size_t>(ny) * m.width + nx;
          if (m.data[q] && !labels[q]) {
            labels[q] = next;
            stack.push_back(q);
          }
        }
    }
  }
  return next;
}

// Keeps only the largest foreground component (ties: smallest label, i.e.
// first encountered in row-major order).
inline BinaryMask largest_component(const BinaryMask& m) {
  std::vector<int> labels;
  const int n = label_components(m, labels);
  if (n <= 1) return m;
  std::vector<std::size_t> sizes(static_cast<std::size_t>(n) + 1, 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  int best = 1;
  for (int l = 2; l <= n; ++l)
    if (sizes[static_cast<std::size_t>(l)] > sizes[static_cast<std::size_t>(best)]) best = l;
  BinaryMask out = BinaryMask::filled(m.height, m.width, false);
  for (std::size_t i = 0; i < labels.size(); ++i) out.data[i] = labels[i] == best ? 1 : 0;
  return out;
}

// Number of holes: background components (4-connectivity) not reachable from
// the border.
inline int count_holes(const BinaryMask& m) {
  std::vector<std::uint8_t> seen(m.data.size(), 0);
  std::vector<std::size_t> stack;
  auto flood = [&](std::size_t start) {
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const int y = static_cast<int>(p) / m.width, x = static_cast<int>(p) % m.width;
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= m.height || nx[k] < 0 || nx[k] >= m.width) continue;
        const std::size_t q = static_cast<std::size_t>(ny[k]) * m.width + nx[k];
        if (!m.data[q] && !seen[q]) {
          seen[q] = 1;
          stack.push_back(q);
        }
      }
    }
  };
  for (int x = 0; x < m.width; ++x) {
    if (!m.at(0, x) && !seen[static_cast<std::size_t>(x)]) flood(x);
    const std::size_t b = static_cast<std::size_t>(m.height - 1) * m.width + x;
    if (!m.at(m.height - 1, x) && !seen[b]) flood(b);
  }
  for (int y = 0; y < m.height; ++y) {
    const std::size_t l = static_cast<std::size_t>(y) * m.width;
    if (!m.at(y, 0) && !seen[l]) flood(l);
    const std::size_t r = l + m.width - 1;
    if (!m.at(y, m.width - 1) && !seen[r]) flood(r);
  }
  int holes = 0;
  for (std::size_t i = 0; i < m.data.size(); ++i)
    if (!m.data[i] && !seen[i]) {
      ++holes;
      flood(i);
    }
  return holes;
}

}  // namespace iars
