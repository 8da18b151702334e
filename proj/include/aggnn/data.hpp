#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "aggnn/tensor.hpp"

namespace aggnn {

inline constexpr std::size_t kCifarChannels = 3;
inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = kCifarChannels * kCifarSide * kCifarSide;  // 3072
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarPixels;                    // 3073
inline constexpr std::size_t kCifarClasses = 10;

enum class Split { train, val, test };

std::string_view to_string(Split split);

/// Images (N x C x H x W, or any N x ... layout) with one label per sample.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return images.size() / labels.size(); }

  // Copies the selected samples, in the given order.
  Dataset subset(std::span<const std::size_t> indices) const;
};

// One CIFAR-10 binary batch file: 3073-byte records of one label byte
// followed by 3072 channel-planar pixel bytes. Pixels are scaled by 1/255.
// Throws IoError for missing files, a size that is not a whole number of
// records, or a label byte above 9.
Dataset read_cifar_batch(const std::filesystem::path& file, Split split);

// Inverse of read_cifar_batch. Pixels are written as round(x * 255), so a
// loaded batch re-serialises byte for byte.
void write_cifar_batch(const std::filesystem::path& file, const Dataset& data);

struct CifarData {
  Dataset train;
  Dataset test;
};

// Reads data_batch_1..5.bin and test_batch.bin from `dir` (or from its
// cifar-10-batches-bin subdirectory when present).
CifarData load_cifar10(const std::filesystem::path& dir);

// Seeded permutation split into (train, val). Throws InvalidValueError if
// val_size >= N.
std::pair<Dataset, Dataset> train_val_split(const Dataset& data, std::size_t val_size, std::uint64_t seed);

struct NoiseSpec {
  double sigma = 0.15;
  std::uint64_t seed = 0;
};

// x + N(0, sigma^2) per element, out of place and unclipped.
Tensor add_noise(const Tensor& images, const NoiseSpec& spec);
Dataset with_noise(const Dataset& data, const NoiseSpec& spec);

// Gaussian class blobs shaped like CIFAR-10. Each class owns a mean image
// with pixels drawn from U(0.2, 0.8); samples add N(0, blob_sigma^2) per
// pixel and are clamped to [0, 1]. Labels are balanced to within one.
Dataset make_synthetic(std::size_t n, std::size_t classes, std::uint64_t seed, double blob_sigma = 0.1);

struct Batch {
  Tensor x;
  std::vector<int> labels;
};

/// Fixed partition of a dataset into batches. With a seed the sample order
/// is a seeded permutation, otherwise the natural order. The final batch
/// may be partial.
class Batches {
 public:
  Batches(const Dataset& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed);

  std::size_t count() const { return ranges_.size(); }
  std::span<const std::size_t> indices(std::size_t batch) const;
  Batch operator[](std::size_t batch) const;

 private:
  const Dataset* data_;
  std::vector<std::size_t> order_;
  std::vector<std::pair<std::size_t, std::size_t>> ranges_;
};

}  // namespace aggnn
