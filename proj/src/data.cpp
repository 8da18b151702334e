#include "aggnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "aggnn/error.hpp"

namespace aggnn {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unknown";
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw InvalidValueError("dataset subset must not be empty");
  const std::size_t width = sample_size();
  Shape shape = images.shape();
  shape[0] = indices.size();
  Tensor out(shape);
  std::vector<int> lab(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t src = indices[k];
    std::copy_n(images.raw() + src * width, width, out.raw() + k * width);
    lab[k] = labels[src];
  }
  return Dataset{std::move(out), std::move(lab), split};
}

Dataset read_cifar_batch(const std::filesystem::path& file, Split split) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 batch " + file.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
    throw IoError(file.string() + ": size " + std::to_string(bytes.size()) + " is not a whole number of " +
                  std::to_string(kCifarRecordBytes) + "-byte records (truncated?)");

  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Tensor images({n, kCifarChannels, kCifarSide, kCifarSide});
  std::vector<int> labels(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] >= kCifarClasses)
      throw IoError(file.string() + ": record " + std::to_string(r) + " has label byte " + std::to_string(rec[0]));
    labels[r] = rec[0];
    double* dst = images.raw() + r * kCifarPixels;
    for (std::size_t i = 0; i < kCifarPixels; ++i) dst[i] = rec[1 + i] / 255.0;
  }
  return Dataset{std::move(images), std::move(labels), split};
}

void write_cifar_batch(const std::filesystem::path& file, const Dataset& data) {
  if (data.sample_size() != kCifarPixels) throw ShapeError("write_cifar_batch: samples must have 3072 values");
  std::vector<unsigned char> bytes(data.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < data.size(); ++r) {
    unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    const int label = data.labels[r];
    if (label < 0 || label > 255) throw InvalidValueError("write_cifar_batch: label does not fit a byte");
    rec[0] = static_cast<unsigned char>(label);
    const double* src = data.images.raw() + r * kCifarPixels;
    for (std::size_t i = 0; i < kCifarPixels; ++i) {
      const double v = std::clamp(std::round(src[i] * 255.0), 0.0, 255.0);
      rec[1 + i] = static_cast<unsigned char>(v);
    }
  }
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + file.string());
}

namespace {

Dataset concat(std::vector<Dataset> parts, Split split) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  Shape shape = parts.front().images.shape();
  shape[0] = n;
  Tensor images(shape);
  std::vector<int> labels;
  labels.reserve(n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.images.data().begin(), p.images.data().end(), images.raw() + offset);
    offset += p.images.size();
    labels.insert(labels.end(), p.labels.begin(), p.labels.end());
  }
  return Dataset{std::move(images), std::move(labels), split};
}

}  // namespace

CifarData load_cifar10(const std::filesystem::path& dir) {
  std::filesystem::path root = dir;
  if (std::filesystem::exists(dir / "cifar-10-batches-bin")) root = dir / "cifar-10-batches-bin";
  std::vector<Dataset> train;
  for (int i = 1; i <= 5; ++i)
    train.push_back(read_cifar_batch(root / ("data_batch_" + std::to_string(i) + ".bin"), Split::train));
  return CifarData{concat(std::move(train), Split::train), read_cifar_batch(root / "test_batch.bin", Split::test)};
}

std::pair<Dataset, Dataset> train_val_split(const Dataset& data, std::size_t val_size, std::uint64_t seed) {
  if (val_size == 0 || val_size >= data.size())
    throw InvalidValueError("train_val_split: val_size must be in [1, N), got " + std::to_string(val_size) +
                            " for N = " + std::to_string(data.size()));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::span<const std::size_t> all(order);
  Dataset val = data.subset(all.first(val_size));
  Dataset train = data.subset(all.subspan(val_size));
  val.split = Split::val;
  train.split = Split::train;
  return {std::move(train), std::move(val)};
}

Tensor add_noise(const Tensor& images, const NoiseSpec& spec) {
  Tensor out = images;
  if (spec.sigma == 0.0) return out;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.sigma);
  for (auto& v : out.data()) v += noise(rng);
  return out;
}

Dataset with_noise(const Dataset& data, const NoiseSpec& spec) {
  return Dataset{add_noise(data.images, spec), data.labels, data.split};
}

Dataset make_synthetic(std::size_t n, std::size_t classes, std::uint64_t seed, double blob_sigma) {
  if (n == 0 || classes == 0) throw InvalidValueError("make_synthetic: n and classes must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> center(0.2, 0.8);
  std::vector<double> means(classes * kCifarPixels);
  for (auto& m : means) m = center(rng);

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  Tensor images({n, kCifarChannels, kCifarSide, kCifarSide});
  std::normal_distribution<double> jitter(0.0, blob_sigma);
  for (std::size_t i = 0; i < n; ++i) {
    const double* mean = means.data() + static_cast<std::size_t>(labels[i]) * kCifarPixels;
    double* dst = images.raw() + i * kCifarPixels;
    for (std::size_t k = 0; k < kCifarPixels; ++k) dst[k] = std::clamp(mean[k] + jitter(rng), 0.0, 1.0);
  }
  return Dataset{std::move(images), std::move(labels), Split::train};
}

Batches::Batches(const Dataset& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed)
    : data_(&data), order_(data.size()) {
  if (batch_size == 0) throw InvalidValueError("batch size must be >= 1");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
  for (std::size_t start = 0; start < order_.size(); start += batch_size)
    ranges_.emplace_back(start, std::min(batch_size, order_.size() - start));
}

std::span<const std::size_t> Batches::indices(std::size_t batch) const {
  const auto [start, len] = ranges_.at(batch);
  return std::span<const std::size_t>(order_).subspan(start, len);
}

Batch Batches::operator[](std::size_t batch) const {
  Dataset part = data_->subset(indices(batch));
  return Batch{std::move(part.images), std::move(part.labels)};
}

}  // namespace aggnn
