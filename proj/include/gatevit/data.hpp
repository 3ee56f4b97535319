#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gatevit/config.hpp"
#include "gatevit/tensor.hpp"

namespace gatevit {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Difficulty : int { Unknown = -1, Easy = 0, Hard = 1 };

struct Dataset {
  std::size_t image_size = 0;
  std::size_t channels = 1;
  std::size_t num_classes = 0;
  std::vector<float> pixels;  // [count, S, S, C]
  std::vector<int> labels;
  std::vector<Difficulty> difficulty;
  std::string split;

  std::size_t size() const { return labels.size(); }
  std::size_t image_elems() const { return image_size * image_size * channels; }

  /// Batch of images [B, S, S, C] for the given sample indices.
  nd::Tensor<float> images(const std::vector<std::size_t>& indices) const;
  std::vector<int> labels_at(const std::vector<std::size_t>& indices) const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

/// Glyph-majority task: each image holds 3x3 glyphs of `num_classes` shapes
/// (equal pixel mass) in distinct cells of a cell grid over low-amplitude
/// noise. The label is the glyph shape that occurs most often. Easy samples
/// hold a few glyphs of the label shape only; hard samples hold many glyphs
/// where the label shape wins by a single occurrence, so every glyph matters.
Dataset generate_synthetic(const SyntheticTaskSpec& spec, std::uint64_t seed, std::size_t count,
                           const std::string& split);

struct DataSplits {
  Dataset train;
  Dataset test;
};

/// Train and test splits drawn from independent streams of `seed`.
DataSplits make_synthetic_splits(const SyntheticTaskSpec& spec, std::uint64_t seed);

struct NormalizationStats {
  std::vector<double> mean;  // per channel
  std::vector<double> stddev;
};

/// Directory of class sub-folders (sorted by name -> label 0..C-1) holding
/// PNG / PPM / PGM images. Images are resized (bilinear) to image_size and
/// normalized per channel. Passing `stats` reuses training statistics.
Dataset load_image_folder(const std::string& path, std::size_t image_size, std::size_t channels,
                          const NormalizationStats* stats = nullptr, NormalizationStats* stats_out = nullptr);

/// Reads a PNG or binary PPM/PGM file as 8-bit samples.
struct RawImage {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> data;
};
RawImage read_image(const std::string& path);

}  // namespace gatevit
