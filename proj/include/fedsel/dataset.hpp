#pragma once

// Dataset containers, two built-in synthetic generators so the engine runs
// without any downloads, and loaders for the two common binary formats
// (IDX image/label pairs, CIFAR-10 batch files).

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace fedsel {

struct Sample {
  Vec features;
  int label = 0;
};

struct LabeledDataset {
  std::vector<Sample> samples;
  int n_classes = 0;
  int feature_dim = 0;
};

/// One client's local shard. label_histogram has n_classes entries and sums
/// to samples.size().
struct ClientDataset {
  int client_id = -1;
  std::vector<Sample> samples;
  std::vector<int> label_histogram;
};

inline void validate_dataset(const LabeledDataset& ds) {
  require_config(!ds.samples.empty(), "dataset: no samples");
  require_config(ds.feature_dim >= 1, "dataset: feature_dim must be >= 1");
  require_config(ds.n_classes >= 1, "dataset: n_classes must be >= 1");
  for (const auto& s : ds.samples) {
    require_config(static_cast<int>(s.features.size()) == ds.feature_dim,
                   "dataset: sample feature dimension mismatch");
    require_config(0 <= s.label && s.label < ds.n_classes,
                   "dataset: label out of range");
  }
}

inline ClientDataset make_client_dataset(int client_id, std::vector<Sample> samples,
                                         int n_classes) {
  require_internal(!samples.empty(), "client dataset: empty shard");
  ClientDataset cd;
  cd.client_id = client_id;
  cd.samples = std::move(samples);
  cd.label_histogram.assign(static_cast<size_t>(n_classes), 0);
  for (const auto& s : cd.samples) {
    require_internal(0 <= s.label && s.label < n_classes,
                     "client dataset: label out of range");
    cd.label_histogram[static_cast<size_t>(s.label)]++;
  }
  return cd;
}

// ---------------------------------------------------------------------------
// Built-in generators
// ---------------------------------------------------------------------------

/// Isotropic Gaussian blobs: one cluster per class, centers drawn once from
/// N(0, center_spread^2 I), samples from N(center, spread^2 I).
inline LabeledDataset make_blobs(int n_samples, int n_classes, int dim, double spread,
                                 uint64_t seed, double center_spread = 4.0) {
  require_config(n_samples >= n_classes, "make_blobs: need at least one sample per class");
  require_config(n_classes >= 1 && dim >= 1, "make_blobs: bad shape");
  Rng rng = Rng::derive(seed, {0x6261626cULL});  // "blob"
  std::vector<Vec> centers(static_cast<size_t>(n_classes), Vec(static_cast<size_t>(dim)));
  for (auto& c : centers)
    for (auto& v : c) v = rng.normal(0.0, center_spread);
  LabeledDataset ds;
  ds.n_classes = n_classes;
  ds.feature_dim = dim;
  ds.samples.resize(static_cast<size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    const int label = i % n_classes;
    Sample& s = ds.samples[static_cast<size_t>(i)];
    s.label = label;
    s.features.resize(static_cast<size_t>(dim));
    for (int d = 0; d < dim; ++d)
      s.features[static_cast<size_t>(d)] =
          centers[static_cast<size_t>(label)][static_cast<size_t>(d)] + rng.normal(0.0, spread);
  }
  return ds;
}

namespace detail {
// 8x8 ink templates for the ten digits, intensity 0/1 per cell.
inline const std::array<const char*, 10>& digit_glyphs() {
  static const std::array<const char*, 10> glyphs = {
      ".####..."
      "#....#.."
      "#...##.."
      "#..#.#.."
      "#.#..#.."
      "##...#.."
      ".####..."
      "........",
      "..##...."
      ".###...."
      "..##...."
      "..##...."
      "..##...."
      "..##...."
      "######.."
      "........",
      ".####..."
      "#....#.."
      ".....#.."
      "....#..."
      "..##...."
      ".#......"
      "######.."
      "........",
      ".####..."
      "#....#.."
      ".....#.."
      "..###..."
      ".....#.."
      "#....#.."
      ".####..."
      "........",
      "...##..."
      "..#.#..."
      ".#..#..."
      "#...#..."
      "######.."
      "....#..."
      "....#..."
      "........",
      "######.."
      "#......."
      "#####..."
      ".....#.."
      ".....#.."
      "#....#.."
      ".####..."
      "........",
      ".####..."
      "#......."
      "#......."
      "#####..."
      "#....#.."
      "#....#.."
      ".####..."
      "........",
      "######.."
      ".....#.."
      "....#..."
      "...#...."
      "..#....."
      "..#....."
      "..#....."
      "........",
      ".####..."
      "#....#.."
      "#....#.."
      ".####..."
      "#....#.."
      "#....#.."
      ".####..."
      "........",
      ".####..."
      "#....#.."
      "#....#.."
      ".#####.."
      ".....#.."
      ".....#.."
      ".####..."
      "........"};
  return glyphs;
}
}  // namespace detail

/// Small procedural stand-in for the classic 8x8 digits set: glyph templates
/// at intensity 16 plus clipped Gaussian noise.
inline LabeledDataset make_digits(int n_per_class, uint64_t seed, double noise_sd = 2.0) {
  require_config(n_per_class >= 1, "make_digits: n_per_class must be >= 1");
  Rng rng = Rng::derive(seed, {0x64696769ULL});  // "digi"
  LabeledDataset ds;
  ds.n_classes = 10;
  ds.feature_dim = 64;
  ds.samples.reserve(static_cast<size_t>(10 * n_per_class));
  for (int rep = 0; rep < n_per_class; ++rep) {
    for (int digit = 0; digit < 10; ++digit) {
      Sample s;
      s.label = digit;
      s.features.resize(64);
      const char* glyph = detail::digit_glyphs()[static_cast<size_t>(digit)];
      for (int p = 0; p < 64; ++p) {
        double v = (glyph[p] == '#') ? 16.0 : 0.0;
        v += rng.normal(0.0, noise_sd);
        s.features[static_cast<size_t>(p)] = std::clamp(v, 0.0, 16.0);
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Binary loaders
// ---------------------------------------------------------------------------

namespace detail {
inline uint32_t read_be_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  require_config(static_cast<bool>(in), "idx: truncated header while reading " + what);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}
}  // namespace detail

/// Reads an IDX image file (magic 0x00000803) and its label file (magic
/// 0x00000801). Pixel bytes are scaled to [0, 1].
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  require_config(static_cast<bool>(imgs), "idx: cannot open " + images_path);
  std::ifstream labs(labels_path, std::ios::binary);
  require_config(static_cast<bool>(labs), "idx: cannot open " + labels_path);

  const uint32_t img_magic = detail::read_be_u32(imgs, "image magic");
  require_config(img_magic == 0x00000803u, "idx: bad image magic in " + images_path);
  const uint32_t n_imgs = detail::read_be_u32(imgs, "image count");
  const uint32_t rows = detail::read_be_u32(imgs, "rows");
  const uint32_t cols = detail::read_be_u32(imgs, "cols");

  const uint32_t lab_magic = detail::read_be_u32(labs, "label magic");
  require_config(lab_magic == 0x00000801u, "idx: bad label magic in " + labels_path);
  const uint32_t n_labs = detail::read_be_u32(labs, "label count");
  require_config(n_imgs == n_labs, "idx: image/label count mismatch");
  require_config(n_imgs > 0, "idx: empty dataset");

  const size_t dim = static_cast<size_t>(rows) * static_cast<size_t>(cols);
  require_config(dim >= 1, "idx: zero image dimensions");

  LabeledDataset ds;
  ds.feature_dim = static_cast<int>(dim);
  ds.samples.resize(n_imgs);
  std::vector<unsigned char> buf(dim);
  int max_label = 0;
  for (uint32_t i = 0; i < n_imgs; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(dim));
    require_config(static_cast<bool>(imgs), "idx: truncated image data");
    Sample& s = ds.samples[i];
    s.features.resize(dim);
    for (size_t p = 0; p < dim; ++p) s.features[p] = static_cast<double>(buf[p]) / 255.0;
    unsigned char lab = 0;
    labs.read(reinterpret_cast<char*>(&lab), 1);
    require_config(static_cast<bool>(labs), "idx: truncated label data");
    s.label = static_cast<int>(lab);
    max_label = std::max(max_label, s.label);
  }
  ds.n_classes = max_label + 1;
  validate_dataset(ds);
  return ds;
}

/// Reads one or more CIFAR-10 binary batches (3073-byte records: label byte
/// followed by 3072 pixel bytes). Pixels scaled to [0, 1].
inline LabeledDataset load_cifar10(const std::vector<std::string>& batch_paths) {
  require_config(!batch_paths.empty(), "cifar10: no batch files given");
  constexpr size_t kRecord = 3073;
  constexpr size_t kPixels = 3072;
  LabeledDataset ds;
  ds.n_classes = 10;
  ds.feature_dim = static_cast<int>(kPixels);
  for (const auto& path : batch_paths) {
    std::ifstream in(path, std::ios::binary);
    require_config(static_cast<bool>(in), "cifar10: cannot open " + path);
    in.seekg(0, std::ios::end);
    const auto size = static_cast<size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    require_config(size > 0 && size % kRecord == 0,
                   "cifar10: file size of " + path + " is not a multiple of 3073");
    const size_t n = size / kRecord;
    std::vector<unsigned char> rec(kRecord);
    for (size_t i = 0; i < n; ++i) {
      in.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(kRecord));
      require_config(static_cast<bool>(in), "cifar10: truncated record in " + path);
      Sample s;
      s.label = static_cast<int>(rec[0]);
      require_config(s.label < 10, "cifar10: label byte out of range in " + path);
      s.features.resize(kPixels);
      for (size_t p = 0; p < kPixels; ++p)
        s.features[p] = static_cast<double>(rec[p + 1]) / 255.0;
      ds.samples.push_back(std::move(s));
    }
  }
  validate_dataset(ds);
  return ds;
}

}  // namespace fedsel
