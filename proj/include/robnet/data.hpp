#pragma once
// Dataset handling: IDX image/label archives (gzip or plain), a synthetic
// Gaussian-blob classification set for data-free runs, batching, input
// perturbations, and CSV output.

#include <zlib.h>

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "robnet/linalg.hpp"
#include "robnet/rng.hpp"

namespace robnet {

struct Dataset {
  Mat x;               // feature column per example
  std::vector<int> y;  // integer labels
  int classes = 0;
  std::string name;
};

namespace detail {

struct GzCloser {
  gzFile f;
  ~GzCloser() {
    if (f) gzclose(f);
  }
};

inline uint32_t read_be32(gzFile f, const std::string& path) {
  unsigned char b[4];
  if (gzread(f, b, 4) != 4) throw DataError("'" + path + "': truncated header");
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

inline void read_bytes(gzFile f, unsigned char* dst, size_t count, const std::string& path) {
  size_t got = 0;
  while (got < count) {
    unsigned chunk = static_cast<unsigned>(std::min<size_t>(count - got, 1u << 24));
    int r = gzread(f, dst + got, chunk);
    if (r <= 0) throw DataError("'" + path + "': truncated data");
    got += static_cast<size_t>(r);
  }
}

}  // namespace detail

// Reads an IDX image archive (gzip-compressed or raw; zlib reads both).
// Pixels are scaled to [0, 1]; each image becomes one column, flattened
// row-major within the image.
inline Mat load_idx_images(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open '" + path + "'");
  detail::GzCloser closer{f};
  if (detail::read_be32(f, path) != 0x803u)
    throw FormatError("'" + path + "': not an IDX image archive");
  uint32_t n = detail::read_be32(f, path);
  uint32_t rows = detail::read_be32(f, path);
  uint32_t cols = detail::read_be32(f, path);
  if (static_cast<uint64_t>(rows) * cols > 1u << 20)
    throw FormatError("'" + path + "': implausible image dimensions");
  size_t dim = static_cast<size_t>(rows) * cols;
  std::vector<unsigned char> buf(dim * n);
  detail::read_bytes(f, buf.data(), buf.size(), path);
  Mat x(static_cast<int>(dim), static_cast<int>(n));
  for (uint32_t j = 0; j < n; ++j)
    for (size_t i = 0; i < dim; ++i)
      x(static_cast<int>(i), static_cast<int>(j)) = buf[j * dim + i] / 255.0;
  return x;
}

inline std::vector<int> load_idx_labels(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open '" + path + "'");
  detail::GzCloser closer{f};
  if (detail::read_be32(f, path) != 0x801u)
    throw FormatError("'" + path + "': not an IDX label archive");
  uint32_t n = detail::read_be32(f, path);
  std::vector<unsigned char> buf(n);
  detail::read_bytes(f, buf.data(), buf.size(), path);
  return std::vector<int>(buf.begin(), buf.end());
}

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  Dataset ds;
  ds.x = load_idx_images(images_path);
  ds.y = load_idx_labels(labels_path);
  if (ds.x.cols != static_cast<int>(ds.y.size())) throw DataError("image/label counts differ");
  int maxlab = 0;
  for (int lab : ds.y) {
    if (lab < 0) throw DataError("negative label");
    maxlab = std::max(maxlab, lab);
  }
  ds.classes = maxlab + 1;
  ds.name = images_path;
  return ds;
}

// Deterministic Gaussian blobs: class c is centered at separation * e_c
// (pairwise center distance separation * sqrt(2)) with unit-variance
// isotropic noise. Examples are laid out class-major; batching shuffles.
inline Dataset synth_blobs(int dim, int classes, int per_class, double separation,
                           uint64_t seed) {
  if (classes < 1) throw SpecError("synth_blobs: need at least one class");
  if (per_class < 0) throw SpecError("synth_blobs: per_class must be >= 0");
  if (!(separation > 0.0)) throw SpecError("synth_blobs: separation must be positive");
  if (dim < classes) throw DimensionError("synth_blobs: dim must be >= classes");
  Rng rng(sub_seed(seed, kSeedData));
  Dataset ds;
  ds.classes = classes;
  ds.name = "synthetic-blobs";
  ds.x = Mat(dim, classes * per_class);
  ds.y.resize(static_cast<size_t>(classes) * per_class);
  int col = 0;
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < per_class; ++k, ++col) {
      for (int i = 0; i < dim; ++i) ds.x(i, col) = rng.normal() + (i == c ? separation : 0.0);
      ds.y[col] = c;
    }
  }
  return ds;
}

inline Mat one_hot(const std::vector<int>& labels, int classes) {
  Mat y(classes, static_cast<int>(labels.size()));
  for (size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] < 0 || labels[j] >= classes) throw DataError("one_hot: label out of range");
    y(labels[j], static_cast<int>(j)) = 1.0;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  Mat x;  // features
  Mat y;  // targets (one-hot for classification)
};

// Shuffles example columns with a seeded Fisher-Yates pass and splits them
// into batches; a smaller final batch is kept.
inline std::vector<Batch> shuffle_batches(const Mat& x, const Mat& y, int batch_size,
                                          uint64_t seed) {
  if (x.cols != y.cols) throw DimensionError("shuffle_batches: x/y column mismatch");
  if (batch_size < 1) throw SpecError("shuffle_batches: batch size must be >= 1");
  std::vector<int> perm(x.cols);
  for (int i = 0; i < x.cols; ++i) perm[i] = i;
  Rng rng(seed);
  for (int i = x.cols - 1; i > 0; --i) {
    int j = static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1));
    std::swap(perm[i], perm[j]);
  }
  std::vector<Batch> out;
  for (int start = 0; start < x.cols; start += batch_size) {
    int b = std::min(batch_size, x.cols - start);
    Batch batch{Mat(x.rows, b), Mat(y.rows, b)};
    for (int j = 0; j < b; ++j) {
      int src = perm[start + j];
      for (int i = 0; i < x.rows; ++i) batch.x(i, j) = x(i, src);
      for (int i = 0; i < y.rows; ++i) batch.y(i, j) = y(i, src);
    }
    out.push_back(std::move(batch));
  }
  return out;
}

inline std::vector<Batch> shuffle_batches(const Dataset& ds, int batch_size, uint64_t seed) {
  return shuffle_batches(ds.x, one_hot(ds.y, ds.classes), batch_size, seed);
}

// x + eps * u with u uniform in [-1, 1] per entry; no clamping.
inline Mat add_uniform_noise(const Mat& x, double eps, uint64_t seed) {
  if (eps < 0.0) throw SpecError("add_uniform_noise: eps must be >= 0");
  Rng rng(seed);
  Mat r = x;
  for (size_t i = 0; i < r.size(); ++i) r.a[i] += eps * rng.uniform(-1.0, 1.0);
  return r;
}

// ---------------------------------------------------------------------------
// CSV output (17 significant digits, LF line endings)

inline void write_csv(const std::string& path, const std::vector<std::string>& cols,
                      const std::vector<std::vector<double>>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  for (size_t i = 0; i < cols.size(); ++i) {
    if (i) os << ',';
    os << cols[i];
  }
  os << '\n';
  char buf[64];
  for (const auto& row : rows) {
    if (row.size() != cols.size()) throw DataError("write_csv: row width mismatch");
    for (size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
      if (i) os << ',';
      os << buf;
    }
    os << '\n';
  }
  if (!os) throw DataError("failed writing '" + path + "'");
}

}  // namespace robnet
