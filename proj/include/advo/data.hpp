#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>

#include "advo/rng.hpp"
#include "advo/tensor.hpp"

namespace advo {

/// Labeled image set; pixel values in [0,1], labels 1..num_classes
/// (digit k maps to class k+1).
struct LabeledDataset {
  std::string name;
  int num_classes = 0;
  int channels = 0, height = 0, width = 0;
  std::vector<float> images;  // size() * channels * height * width
  std::vector<int> labels;

  size_t size() const { return labels.size(); }
  int64_t sample_elems() const { return int64_t(channels) * height * width; }

  std::vector<int> class_counts() const {
    std::vector<int> counts(static_cast<size_t>(num_classes), 0);
    for (int y : labels) counts.at(static_cast<size_t>(y - 1))++;
    return counts;
  }

  void validate() const {
    if (static_cast<int64_t>(images.size()) != static_cast<int64_t>(size()) * sample_elems())
      fail("dataset: image buffer size inconsistent with label count");
    for (int y : labels)
      if (y < 1 || y > num_classes)
        fail("dataset: label " + std::to_string(y) + " outside 1.." +
             std::to_string(num_classes));
  }
};

namespace detail {

inline uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) fail("idx: truncated header in " + path);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace detail

/// Load an IDX image/label pair (the canonical MNIST container: big-endian,
/// magic 0x803 for images and 0x801 for labels). Pixels are scaled to [0,1].
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) fail("idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) fail("idx: cannot open " + labels_path);

  const uint32_t img_magic = detail::read_be32(img, images_path);
  if (img_magic != 2051)
    fail("idx: " + images_path + ": expected image magic 2051, found " +
         std::to_string(img_magic));
  const uint32_t lab_magic = detail::read_be32(lab, labels_path);
  if (lab_magic != 2049)
    fail("idx: " + labels_path + ": expected label magic 2049, found " +
         std::to_string(lab_magic));

  const uint32_t n_img = detail::read_be32(img, images_path);
  const uint32_t rows = detail::read_be32(img, images_path);
  const uint32_t cols = detail::read_be32(img, images_path);
  const uint32_t n_lab = detail::read_be32(lab, labels_path);
  if (n_img != n_lab)
    fail("idx: image count " + std::to_string(n_img) + " != label count " +
         std::to_string(n_lab));

  LabeledDataset ds;
  ds.channels = 1;
  ds.height = static_cast<int>(rows);
  ds.width = static_cast<int>(cols);
  const size_t pixels = size_t(n_img) * rows * cols;
  std::vector<unsigned char> raw(pixels);
  if (!img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels)))
    fail("idx: " + images_path + " truncated (expected " + std::to_string(pixels) +
         " pixel bytes)");
  std::vector<unsigned char> raw_labels(n_lab);
  if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), n_lab))
    fail("idx: " + labels_path + " truncated");

  ds.images.resize(pixels);
  for (size_t i = 0; i < pixels; ++i) ds.images[i] = static_cast<float>(raw[i]) / 255.0f;
  ds.labels.reserve(n_lab);
  int max_digit = 0;
  for (unsigned char y : raw_labels) {
    ds.labels.push_back(int(y) + 1);
    max_digit = std::max(max_digit, int(y));
  }
  ds.num_classes = max_digit + 1;
  ds.validate();
  return ds;
}

/// New dataset containing the given sample indices, in order.
inline LabeledDataset subset(const LabeledDataset& ds, const std::vector<int>& indices) {
  LabeledDataset out;
  out.name = ds.name;
  out.num_classes = ds.num_classes;
  out.channels = ds.channels;
  out.height = ds.height;
  out.width = ds.width;
  const int64_t k = ds.sample_elems();
  out.images.reserve(indices.size() * static_cast<size_t>(k));
  out.labels.reserve(indices.size());
  for (int i : indices) {
    if (i < 0 || static_cast<size_t>(i) >= ds.size())
      fail("subset: index " + std::to_string(i) + " out of range");
    const float* src = ds.images.data() + int64_t(i) * k;
    out.images.insert(out.images.end(), src, src + k);
    out.labels.push_back(ds.labels[static_cast<size_t>(i)]);
  }
  return out;
}

/// Seeded uniform subset of n samples (no replacement, original order kept).
inline LabeledDataset seeded_subset(const LabeledDataset& ds, size_t n, uint64_t seed) {
  if (n >= ds.size()) return ds;
  std::vector<int> idx(ds.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  Rng rng = derive_stream(seed, Stream::kSubset);
  for (size_t i = idx.size() - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.below(i + 1)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return subset(ds, idx);
}

/// Imbalanced variant: class k (digit value, 0-based) keeps exactly
/// 600*(k+1) uniformly sampled training examples.
inline LabeledDataset make_imbalanced_mnist(const LabeledDataset& train, uint64_t seed) {
  if (train.num_classes != 10)
    fail("imbalanced: expected a 10-class training set, got " +
         std::to_string(train.num_classes));
  Rng rng = derive_stream(seed, Stream::kVariant);
  std::vector<std::vector<int>> by_class(10);
  for (size_t i = 0; i < train.size(); ++i)
    by_class[static_cast<size_t>(train.labels[i] - 1)].push_back(static_cast<int>(i));
  std::vector<int> keep;
  for (int k = 0; k < 10; ++k) {
    auto& pool = by_class[static_cast<size_t>(k)];
    const size_t want = static_cast<size_t>(600 * (k + 1));
    if (pool.size() < want)
      fail("imbalanced: class " + std::to_string(k) + " has " + std::to_string(pool.size()) +
           " examples, needs " + std::to_string(want));
    for (size_t i = pool.size() - 1; i > 0; --i) std::swap(pool[i], pool[rng.below(i + 1)]);
    pool.resize(want);
    std::sort(pool.begin(), pool.end());
    keep.insert(keep.end(), pool.begin(), pool.end());
  }
  LabeledDataset out = subset(train, keep);
  out.name = train.name + "-imbalanced";
  return out;
}

/// Binary variant: keep digits 4 and 9 only, relabeled to classes 1 and 2.
inline LabeledDataset make_binary_mnist(const LabeledDataset& ds) {
  if (ds.num_classes != 10)
    fail("binary: expected a 10-class set, got " + std::to_string(ds.num_classes));
  std::vector<int> keep;
  for (size_t i = 0; i < ds.size(); ++i) {
    const int digit = ds.labels[i] - 1;
    if (digit == 4 || digit == 9) keep.push_back(static_cast<int>(i));
  }
  LabeledDataset out = subset(ds, keep);
  for (auto& y : out.labels) y = (y - 1 == 4) ? 1 : 2;
  out.num_classes = 2;
  out.name = ds.name + "-binary";
  return out;
}

/// Deterministic synthetic corpus: class c's image is uniform noise in
/// [0, sigma] with row c-1 set to 1. Bayes accuracy is 1 for sigma < 1.
inline LabeledDataset make_synthetic_bars(int num_classes, int samples_per_class, int extent,
                                          double sigma, uint64_t seed) {
  if (num_classes < 2) fail("bars: num_classes must be >= 2");
  if (num_classes > extent) fail("bars: num_classes must be <= extent");
  if (sigma < 0 || sigma >= 1) fail("bars: sigma must be in [0,1)");
  Rng rng = derive_stream(seed, Stream::kSynthetic);
  LabeledDataset ds;
  ds.name = "synthetic-bars";
  ds.num_classes = num_classes;
  ds.channels = 1;
  ds.height = extent;
  ds.width = extent;
  const size_t plane = size_t(extent) * extent;
  ds.images.resize(size_t(num_classes) * samples_per_class * plane);
  for (int c = 1; c <= num_classes; ++c) {
    for (int s = 0; s < samples_per_class; ++s) {
      float* img = ds.images.data() +
                   (size_t(c - 1) * samples_per_class + static_cast<size_t>(s)) * plane;
      for (size_t i = 0; i < plane; ++i) img[i] = static_cast<float>(rng.uniform(0.0, sigma));
      for (int x = 0; x < extent; ++x) img[size_t(c - 1) * extent + x] = 1.0f;
      ds.labels.push_back(c);
    }
  }
  return ds;
}

/// Deterministic epoch permutation chopped into batches; the final partial
/// batch is kept.
inline std::vector<std::vector<int>> batch_indices(size_t count, int batch_size,
                                                   uint64_t shuffle_seed, uint64_t epoch) {
  if (batch_size < 1) fail("batches: batch_size must be >= 1");
  std::vector<int> order(count);
  for (size_t i = 0; i < count; ++i) order[i] = static_cast<int>(i);
  Rng rng = derive_epoch(shuffle_seed, epoch);
  for (size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<int>> batches;
  for (size_t at = 0; at < count; at += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(count, at + static_cast<size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<int64_t>(at),
                         order.begin() + static_cast<int64_t>(end));
  }
  return batches;
}

/// Seeded train/validation index split (uniform, not stratified).
inline std::pair<std::vector<int>, std::vector<int>> train_val_split(size_t count,
                                                                     double val_fraction,
                                                                     uint64_t seed) {
  if (val_fraction <= 0 || val_fraction >= 1)
    fail("split: validation fraction must be in (0,1), got " + std::to_string(val_fraction));
  std::vector<int> order(count);
  for (size_t i = 0; i < count; ++i) order[i] = static_cast<int>(i);
  Rng rng = derive_stream(seed, Stream::kSplit);
  for (size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  size_t val_n = static_cast<size_t>(static_cast<double>(count) * val_fraction);
  val_n = std::max<size_t>(1, std::min(val_n, count - 1));
  std::vector<int> val(order.begin(), order.begin() + static_cast<int64_t>(val_n));
  std::vector<int> train(order.begin() + static_cast<int64_t>(val_n), order.end());
  return {train, val};
}

/// Materialize a batch as a [B,C,H,W] tensor plus 1-based labels.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> make_batch(const LabeledDataset& ds,
                                                  const std::vector<int>& indices) {
  if (indices.empty()) fail("make_batch: empty index list");
  const int64_t k = ds.sample_elems();
  Tensor<T> x({static_cast<int>(indices.size()), ds.channels, ds.height, ds.width});
  std::vector<int> y;
  y.reserve(indices.size());
  for (size_t b = 0; b < indices.size(); ++b) {
    const float* src = ds.images.data() + int64_t(indices[b]) * k;
    T* dst = x.ptr() + static_cast<int64_t>(b) * k;
    for (int64_t i = 0; i < k; ++i) dst[i] = static_cast<T>(src[i]);
    y.push_back(ds.labels[static_cast<size_t>(indices[b])]);
  }
  return {std::move(x), std::move(y)};
}

}  // namespace advo
