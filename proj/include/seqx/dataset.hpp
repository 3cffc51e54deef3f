#pragma once

// Binary image-classification data: IDX ingestion, class selection and
// balanced train/test splitting.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <zlib.h>

#include "seqx/error.hpp"
#include "seqx/rng.hpp"

namespace seqx {

inline constexpr std::size_t kImageSide = 28;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

using Pixels = std::array<float, kImagePixels>;

struct ImageInstance {
  std::uint32_t id = 0;
  Pixels pixels{};
  int true_label = 0;

  bool operator==(const ImageInstance&) const = default;
};

class LabeledDataset {
 public:
  LabeledDataset() = default;
  explicit LabeledDataset(std::vector<ImageInstance> instances) : instances_(std::move(instances)) {
    reindex();
  }

  const std::vector<ImageInstance>& instances() const { return instances_; }
  std::size_t size() const { return instances_.size(); }
  bool empty() const { return instances_.empty(); }

  // label -> count, ordered by label
  const std::map<int, std::size_t>& class_counts() const { return class_counts_; }

  std::size_t count(int label) const {
    auto it = class_counts_.find(label);
    return it == class_counts_.end() ? 0 : it->second;
  }

  bool balanced() const {
    if (class_counts_.empty()) return true;
    const auto first = class_counts_.begin()->second;
    return std::all_of(class_counts_.begin(), class_counts_.end(),
                       [first](const auto& kv) { return kv.second == first; });
  }

  bool contains(std::uint32_t id) const { return by_id_.contains(id); }

  const ImageInstance& at(std::uint32_t id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) {
      throw Error(ErrorCode::UnknownImageId, "no instance with id " + std::to_string(id));
    }
    return instances_[it->second];
  }

  bool operator==(const LabeledDataset& other) const { return instances_ == other.instances_; }

 private:
  void reindex() {
    class_counts_.clear();
    by_id_.clear();
    for (std::size_t i = 0; i < instances_.size(); ++i) {
      ++class_counts_[instances_[i].true_label];
      if (!by_id_.emplace(instances_[i].id, i).second) {
        throw Error(ErrorCode::InvalidArgument,
                    "duplicate instance id " + std::to_string(instances_[i].id));
      }
    }
  }

  std::vector<ImageInstance> instances_;
  std::map<int, std::size_t> class_counts_;
  std::unordered_map<std::uint32_t, std::size_t> by_id_;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Whole-file read that inflates gzip members and passes other files through.
inline std::vector<unsigned char> read_maybe_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> chunk;
  int got;
  while ((got = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()))) > 0) {
    out.insert(out.end(), chunk.begin(), chunk.begin() + got);
  }
  const bool failed = got < 0;
  gzclose(f);
  if (failed) throw Error(ErrorCode::Truncated, path.string() + " is a damaged gzip stream");
  return out;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                               const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw Error(ErrorCode::Truncated, path.string() + " ends inside its header");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

}  // namespace detail

// Reads an IDX image/label pair, plain or gzip-compressed. Bytes are rescaled to [0,1] by /255 and ids
// follow record order from `first_id`.
inline LabeledDataset load_idx(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path,
                               std::uint32_t first_id = 0) {
  const auto images = detail::read_maybe_gzip(images_path);
  const auto labels = detail::read_maybe_gzip(labels_path);

  if (detail::read_be32(images, 0, images_path) != kIdxImageMagic) {
    throw Error(ErrorCode::BadMagic, images_path.string() + " is not an IDX image file");
  }
  if (detail::read_be32(labels, 0, labels_path) != kIdxLabelMagic) {
    throw Error(ErrorCode::BadMagic, labels_path.string() + " is not an IDX label file");
  }
  const std::uint32_t n_images = detail::read_be32(images, 4, images_path);
  const std::uint32_t rows = detail::read_be32(images, 8, images_path);
  const std::uint32_t cols = detail::read_be32(images, 12, images_path);
  const std::uint32_t n_labels = detail::read_be32(labels, 4, labels_path);
  if (rows != kImageSide || cols != kImageSide) {
    throw Error(ErrorCode::InvalidArgument, "expected 28x28 images, got " + std::to_string(rows) +
                                                "x" + std::to_string(cols));
  }
  if (n_images != n_labels) {
    throw Error(ErrorCode::CountMismatch, std::to_string(n_images) + " images vs " +
                                              std::to_string(n_labels) + " labels");
  }
  if (images.size() < 16 + std::size_t{n_images} * kImagePixels) {
    throw Error(ErrorCode::Truncated, images_path.string() + " is shorter than its header promises");
  }
  if (labels.size() < 8 + std::size_t{n_labels}) {
    throw Error(ErrorCode::Truncated, labels_path.string() + " is shorter than its header promises");
  }

  std::vector<ImageInstance> out(n_images);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    auto& inst = out[i];
    inst.id = first_id + i;
    inst.true_label = labels[8 + i];
    const unsigned char* src = images.data() + 16 + std::size_t{i} * kImagePixels;
    for (std::size_t p = 0; p < kImagePixels; ++p) inst.pixels[p] = static_cast<float>(src[p]) / 255.0f;
  }
  return LabeledDataset(std::move(out));
}

// Writes pixels quantized back to bytes (round(v*255)).
inline void write_idx(const LabeledDataset& data, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  std::vector<unsigned char> images;
  std::vector<unsigned char> labels;
  detail::put_be32(images, kIdxImageMagic);
  detail::put_be32(images, static_cast<std::uint32_t>(data.size()));
  detail::put_be32(images, kImageSide);
  detail::put_be32(images, kImageSide);
  detail::put_be32(labels, kIdxLabelMagic);
  detail::put_be32(labels, static_cast<std::uint32_t>(data.size()));
  for (const auto& inst : data.instances()) {
    for (float v : inst.pixels) {
      images.push_back(static_cast<unsigned char>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f));
    }
    labels.push_back(static_cast<unsigned char>(inst.true_label));
  }
  auto dump = [](const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + p.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  };
  dump(images_path, images);
  dump(labels_path, labels);
}

// Keeps two classes and remaps class_a -> 0, class_b -> 1; ids become dense.
inline LabeledDataset select_binary(const LabeledDataset& raw, int class_a, int class_b) {
  if (class_a == class_b) {
    throw Error(ErrorCode::InvalidArgument, "select_binary needs two distinct classes");
  }
  for (int c : {class_a, class_b}) {
    if (raw.count(c) == 0) {
      throw Error(ErrorCode::MissingClass, "class " + std::to_string(c) + " has no instances");
    }
  }
  std::vector<ImageInstance> kept;
  kept.reserve(raw.count(class_a) + raw.count(class_b));
  for (const auto& inst : raw.instances()) {
    if (inst.true_label != class_a && inst.true_label != class_b) continue;
    ImageInstance copy = inst;
    copy.id = static_cast<std::uint32_t>(kept.size());
    copy.true_label = inst.true_label == class_a ? 0 : 1;
    kept.push_back(copy);
  }
  return LabeledDataset(std::move(kept));
}

struct Split {
  LabeledDataset train;
  LabeledDataset test;
};

// Draws exactly test_per_class instances of each class into the test set;
// both outputs keep the input's record order.
inline Split balanced_split(const LabeledDataset& data, std::size_t test_per_class,
                            std::uint64_t seed) {
  for (const auto& [label, n] : data.class_counts()) {
    if (n <= test_per_class) {
      throw Error(ErrorCode::InsufficientInstances,
                  "class " + std::to_string(label) + " has " + std::to_string(n) +
                      " instances, need more than " + std::to_string(test_per_class));
    }
  }
  Rng rng(seed);
  std::vector<bool> in_test(data.size(), false);
  for (const auto& [label, n] : data.class_counts()) {
    std::vector<std::size_t> positions;
    positions.reserve(n);
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.instances()[i].true_label == label) positions.push_back(i);
    }
    for (std::size_t pos : rng.sample(std::move(positions), test_per_class)) in_test[pos] = true;
  }
  std::vector<ImageInstance> train;
  std::vector<ImageInstance> test;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (in_test[i] ? test : train).push_back(data.instances()[i]);
  }
  return {LabeledDataset(std::move(train)), LabeledDataset(std::move(test))};
}

}  // namespace seqx
