#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vcl/tensor.hpp"

namespace vcl {

struct ImageShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t size() const { return channels * height * width; }
};

struct Dataset {
  Tensor features;  // n x d_0
  std::vector<int> labels;
  int class_count = 0;
  std::string name;
  std::optional<ImageShape> image;  // channel-major layout when set

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  void validate() const;
  Dataset subset(const std::vector<std::size_t>& rows) const;
};

struct SoftLabelSet {
  std::vector<std::vector<double>> rows;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarPixels = 3072;

// CIFAR-10 binary batches: 1 label byte then 3072 channel-major pixel bytes
// per record. Pixels are scaled to [0, 1].
Dataset load_cifar10_bin(const std::string& path,
                         std::size_t max_records = std::numeric_limits<std::size_t>::max());
Dataset parse_cifar10_bytes(const std::vector<std::uint8_t>& bytes, std::size_t max_records, std::string name);

struct MixtureSpec {
  int classes = 4;
  std::size_t per_class = 128;
  std::size_t dim = 8;
  double separation = 10.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
  bool orthogonal = true;  // orthonormal class directions (needs dim >= classes)
  // Class means come from seed alone; a different noise_stream draws a fresh
  // sample of the same mixture (e.g. a test split).
  std::uint64_t noise_stream = 2;
};

// Sample i belongs to class i % classes; class means are separation * u_c for
// unit directions u_c; isotropic Gaussian noise of the given std.
Dataset gen_gaussian_mixture(const MixtureSpec& spec);

// Numeric CSV with a header row. label_column names the integer label
// column; every other column is a feature.
Dataset load_csv_dataset(const std::string& path, const std::string& label_column);
void write_csv_dataset(const std::string& path, const Dataset& data);
std::string csv_dataset_text(const Dataset& data);

// One probability column per class. Rows within 1e-3 of summing to one are
// renormalised; anything else is rejected.
SoftLabelSet load_soft_labels(const std::string& path);
SoftLabelSet parse_soft_labels(const std::string& text);

// One JSON object per line; append keeps existing lines.
void write_metrics_jsonl(const std::vector<nlohmann::json>& records, const std::string& path, bool append = false);
std::vector<nlohmann::json> read_metrics_jsonl(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace vcl
