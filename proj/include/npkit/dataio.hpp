#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "npkit/errors.hpp"
#include "npkit/tensor.hpp"

namespace npkit {

// IDX container (the MNIST file format): big-endian, magic-tagged.
//   [offset] [type]           [value]
//   0000     32-bit integer   0x00000803 (images) / 0x00000801 (labels)
//   0004     32-bit integer   item count
//   0008/12  32-bit integers  rows, cols           (images only)
//   ....     unsigned bytes   payload
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
  std::uint32_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols bytes
};

struct IdxLabels {
  std::vector<std::uint8_t> labels;
};

namespace detail {

inline std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace detail

inline IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw io_error("idx: truncated header");
  const std::uint32_t magic = detail::read_be32(bytes.data());
  if (magic != kIdxImagesMagic) {
    throw io_error("idx: bad image magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }());
  }
  IdxImages out;
  out.count = detail::read_be32(bytes.data() + 4);
  out.rows = detail::read_be32(bytes.data() + 8);
  out.cols = detail::read_be32(bytes.data() + 12);
  if (out.rows == 0 || out.cols == 0 || out.rows > 65536 || out.cols > 65536) {
    throw io_error("idx: implausible image dimensions");
  }
  const std::uint64_t payload =
      std::uint64_t(out.count) * out.rows * out.cols;
  if (payload > (std::uint64_t(1) << 40)) {
    throw io_error("idx: dimension overflow");
  }
  if (bytes.size() != 16 + payload) {
    throw io_error(bytes.size() < 16 + payload ? "idx: truncated payload"
                                               : "idx: trailing bytes");
  }
  out.pixels.assign(bytes.begin() + 16, bytes.end());
  return out;
}

inline IdxLabels parse_idx_labels(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw io_error("idx: truncated header");
  const std::uint32_t magic = detail::read_be32(bytes.data());
  if (magic != kIdxLabelsMagic) {
    throw io_error("idx: bad label magic");
  }
  const std::uint32_t count = detail::read_be32(bytes.data() + 4);
  if (bytes.size() != 8 + std::uint64_t(count)) {
    throw io_error(bytes.size() < 8 + std::uint64_t(count)
                       ? "idx: truncated payload"
                       : "idx: trailing bytes");
  }
  IdxLabels out;
  out.labels.assign(bytes.begin() + 8, bytes.end());
  return out;
}

inline std::vector<std::uint8_t> serialize_idx_images(const IdxImages& im) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + im.pixels.size());
  detail::write_be32(out, kIdxImagesMagic);
  detail::write_be32(out, im.count);
  detail::write_be32(out, im.rows);
  detail::write_be32(out, im.cols);
  out.insert(out.end(), im.pixels.begin(), im.pixels.end());
  return out;
}

inline std::vector<std::uint8_t> serialize_idx_labels(const IdxLabels& lb) {
  std::vector<std::uint8_t> out;
  detail::write_be32(out, kIdxLabelsMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(lb.labels.size()));
  out.insert(out.end(), lb.labels.begin(), lb.labels.end());
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff n = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!f) throw io_error("cannot read " + path);
  return bytes;
}

inline void write_file(const std::string& path,
                       std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw io_error("cannot write " + path);
}

// Greyscale image collection with intensities normalized to [0,1].
struct ImageDataset {
  std::size_t width = 0, height = 0, channels = 1;
  std::vector<float> pixels;  // image-major
  std::vector<std::uint8_t> labels;

  std::size_t count() const {
    return width * height == 0 ? 0 : pixels.size() / (width * height);
  }
  bool has_labels() const { return !labels.empty(); }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(pixels.data() + i * width * height,
                                  width * height);
  }
};

inline ImageDataset make_dataset(const IdxImages& im, const IdxLabels* lb,
                                 std::size_t limit = 0) {
  if (lb && lb->labels.size() != im.count) {
    throw io_error("dataset: label count does not match image count");
  }
  const std::size_t n =
      limit == 0 ? im.count : std::min<std::size_t>(limit, im.count);
  ImageDataset d;
  d.width = im.cols;
  d.height = im.rows;
  d.pixels.resize(n * im.rows * im.cols);
  for (std::size_t i = 0; i < d.pixels.size(); ++i) {
    d.pixels[i] = static_cast<float>(im.pixels[i]) / 255.0f;
  }
  if (lb) d.labels.assign(lb->labels.begin(), lb->labels.begin() + n);
  return d;
}

inline ImageDataset load_dataset(const std::string& images_path,
                                 const std::string& labels_path = "",
                                 std::size_t limit = 0) {
  IdxImages im = parse_idx_images(read_file(images_path));
  if (labels_path.empty()) return make_dataset(im, nullptr, limit);
  IdxLabels lb = parse_idx_labels(read_file(labels_path));
  return make_dataset(im, &lb, limit);
}

// --- figure-style raster output -------------------------------------------------

struct RasterImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
};

// Observed pixels of one context set (indices into the flat H*W image).
struct ContextOverlay {
  std::vector<std::uint32_t> indices;
  std::vector<float> values;
};

// One rendered column: a context set, the posterior mean samples drawn from
// it, and their per-pixel standard deviation.
struct CompletionColumn {
  ContextOverlay context;
  std::vector<Tensor<float>> samples;  // flat H*W images in [0,1]
  Tensor<float> stddev;                // flat H*W
};

inline constexpr std::uint8_t kUnobservedGray = 128;

namespace detail {

inline std::uint8_t to_byte(float v) {
  const float s = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<std::uint8_t>(std::lround(s * 255.0f));
}

inline void blit(RasterImage& out, std::size_t x0, std::size_t y0,
                 const float* tile, std::size_t h, std::size_t w) {
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      out.pixels[(y0 + r) * out.width + x0 + c] = to_byte(tile[r * w + c]);
    }
  }
}

}  // namespace detail

// Tile layout: context row on top (unobserved pixels at mid-gray), one row per
// posterior sample, std row at the bottom, 1-pixel black separators. When a
// ground-truth image is given it occupies the top tile of an extra rightmost
// column.
inline RasterImage render_grid(const std::vector<CompletionColumn>& cols,
                               const Tensor<float>* ground_truth,
                               std::size_t h, std::size_t w) {
  if (cols.empty()) throw error("render_grid: no columns");
  const std::size_t k = cols[0].samples.size();
  for (const auto& col : cols) {
    if (col.samples.size() != k) {
      throw shape_error("render_grid: sample counts differ across columns");
    }
    for (const auto& s : col.samples) {
      if (s.size() != h * w) {
        throw shape_error("render_grid: sample image dimension mismatch");
      }
    }
    if (col.stddev.size() != h * w) {
      throw shape_error("render_grid: std image dimension mismatch");
    }
  }
  if (ground_truth && ground_truth->size() != h * w) {
    throw shape_error("render_grid: ground truth dimension mismatch");
  }
  const std::size_t ncols = cols.size() + (ground_truth ? 1 : 0);
  const std::size_t nrows = k + 2;
  RasterImage out;
  out.width = ncols * w + (ncols - 1);
  out.height = nrows * h + (nrows - 1);
  out.pixels.assign(out.width * out.height, 0);

  std::vector<float> tile(h * w);
  for (std::size_t cidx = 0; cidx < cols.size(); ++cidx) {
    const std::size_t x0 = cidx * (w + 1);
    // context tile
    std::fill(tile.begin(), tile.end(),
              static_cast<float>(kUnobservedGray) / 255.0f);
    for (std::size_t i = 0; i < cols[cidx].context.indices.size(); ++i) {
      tile[cols[cidx].context.indices[i]] = cols[cidx].context.values[i];
    }
    detail::blit(out, x0, 0, tile.data(), h, w);
    for (std::size_t s = 0; s < k; ++s) {
      detail::blit(out, x0, (s + 1) * (h + 1), cols[cidx].samples[s].data(), h,
                   w);
    }
    detail::blit(out, x0, (k + 1) * (h + 1), cols[cidx].stddev.data(), h, w);
  }
  if (ground_truth) {
    const std::size_t x0 = cols.size() * (w + 1);
    detail::blit(out, x0, 0, ground_truth->data(), h, w);
    std::fill(tile.begin(), tile.end(),
              static_cast<float>(kUnobservedGray) / 255.0f);
    for (std::size_t s = 0; s < k + 1; ++s) {
      detail::blit(out, x0, (s + 1) * (h + 1), tile.data(), h, w);
    }
  }
  return out;
}

inline std::vector<std::uint8_t> encode_pgm(const RasterImage& im) {
  std::string header = "P5\n" + std::to_string(im.width) + " " +
                       std::to_string(im.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), im.pixels.begin(), im.pixels.end());
  return out;
}

inline void write_pgm(const std::string& path, const RasterImage& im) {
  const auto bytes = encode_pgm(im);
  write_file(path, bytes);
}

}  // namespace npkit
