#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace conki {

struct LabelRange {
  double min = -3.0;
  double max = 3.0;

  bool operator==(const LabelRange&) const = default;
};

/// Integer sentiment bucket r(y). Only round_to_interval produces one.
class SentimentInterval {
 public:
  int value() const { return value_; }
  auto operator<=>(const SentimentInterval&) const = default;

 private:
  friend SentimentInterval round_to_interval(double y, LabelRange range);
  explicit SentimentInterval(int v) : value_(v) {}
  int value_;
};

/// Clamp to the label range, then round half away from zero.
SentimentInterval round_to_interval(double y, LabelRange range = {});

/// Row-major float matrix as stored on disk.
struct FeatureMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  float at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  bool operator==(const FeatureMatrix&) const = default;
};

struct MultimodalSample {
  std::string sample_id;
  std::vector<std::uint32_t> text_tokens;
  FeatureMatrix vision;
  FeatureMatrix audio;
  double label = 0.0;

  bool operator==(const MultimodalSample&) const = default;
};

struct DatasetMetadata {
  std::uint32_t vocab_size = 64;
  int d_v = 8;
  int d_a = 8;
  LabelRange label_range;
  std::optional<std::uint64_t> generator_seed;

  bool operator==(const DatasetMetadata&) const = default;
};

enum class Split { Train, Valid, Test };
std::string_view split_name(Split s);

struct Dataset {
  DatasetMetadata meta;
  std::vector<MultimodalSample> train;
  std::vector<MultimodalSample> valid;
  std::vector<MultimodalSample> test;

  const std::vector<MultimodalSample>& split(Split s) const;
  std::vector<MultimodalSample>& split(Split s);

  /// Throws InvalidInputError / FormatError if any sample or cross-split invariant is broken.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

struct GeneratorConfig {
  int n_train = 64;
  int n_valid = 32;
  int n_test = 32;
  int l_t = 12;
  int l_v = 10;
  int l_a = 10;
  int d_v = 8;
  int d_a = 8;
  int vocab_size = 64;
  LabelRange label_range;
  double noise_sigma = 0.1;
  // When set, all three modalities encode the same latent sentiment. Otherwise each
  // modality sees its own unit-variance deviation from the label.
  bool shared_motive = true;
  std::uint64_t seed = 0;
  // Seeds the feature projections and token codebook. Datasets that share it share
  // the same "feature extractor", which is what makes an external dataset useful.
  std::uint64_t structure_seed = 20230522;
};

Dataset generate_synthetic_dataset(const GeneratorConfig& config);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace conki
