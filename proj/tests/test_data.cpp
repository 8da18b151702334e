#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <string>

#include "aggnn/data.hpp"
#include "aggnn/error.hpp"
#include "aggnn/fetch.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace aggnn;
using testing::Gen;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const char* env = std::getenv("AGGNN_TEST_TMP");
  const fs::path base = env ? fs::path(env) : fs::temp_directory_path() / "aggnn-test";
  const fs::path dir = base / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& file, const std::string& bytes) {
  std::ofstream(file, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Raw CIFAR-style records: label byte then 3072 pixel bytes.
std::string random_records(Gen& g, std::size_t n) {
  std::string bytes;
  for (std::size_t r = 0; r < n; ++r) {
    bytes.push_back(static_cast<char>(g.label(10)));
    for (std::size_t i = 0; i < kCifarPixels; ++i) bytes.push_back(static_cast<char>(g.size(0, 255)));
  }
  return bytes;
}

std::string run(const std::string& cmd) {
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 256> buf{};
  while (fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  REQUIRE(pclose(pipe) == 0);
  return out;
}

// Dataset whose sample i carries the id i in every pixel.
Dataset tagged(std::size_t n) {
  Tensor images({n, 2});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    images.at(i, 0) = images.at(i, 1) = static_cast<double>(i);
    labels[i] = static_cast<int>(i % 10);
  }
  return Dataset{images, labels, Split::train};
}

std::vector<std::size_t> ids(const Dataset& d) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < d.size(); ++i) out.push_back(static_cast<std::size_t>(d.images.at(i, 0)));
  return out;
}

// Minimal ustar writer for archives the system tar will not produce.
void write_tar_gz(const fs::path& file, const std::vector<std::pair<std::string, std::string>>& entries) {
  std::string tar;
  for (const auto& [name, body] : entries) {
    std::array<char, 512> h{};
    std::memcpy(h.data(), name.data(), std::min<std::size_t>(name.size(), 99));
    std::snprintf(h.data() + 100, 8, "%07o", 0644);
    std::snprintf(h.data() + 108, 8, "%07o", 0);
    std::snprintf(h.data() + 116, 8, "%07o", 0);
    std::snprintf(h.data() + 124, 12, "%011zo", body.size());
    std::snprintf(h.data() + 136, 12, "%011o", 0);
    h[156] = '0';
    std::memcpy(h.data() + 257, "ustar", 6);
    std::memcpy(h.data() + 263, "00", 2);
    std::memset(h.data() + 148, ' ', 8);
    unsigned sum = 0;
    for (char c : h) sum += static_cast<unsigned char>(c);
    std::snprintf(h.data() + 148, 8, "%06o", sum);
    tar.append(h.data(), h.size());
    tar += body;
    tar.append((512 - body.size() % 512) % 512, '\0');
  }
  tar.append(1024, '\0');
  gzFile gz = gzopen(file.c_str(), "wb");
  REQUIRE(gz != nullptr);
  gzwrite(gz, tar.data(), static_cast<unsigned>(tar.size()));
  gzclose(gz);
}

}  // namespace

// ------------------------------------------------------------------ format

TEST_CASE("cifar batch decodes label byte and planar pixels") {
  const fs::path dir = scratch("decode");
  std::string bytes(2 * kCifarRecordBytes, '\0');
  bytes[0] = 7;
  bytes[1] = static_cast<char>(255);                        // red, row 0, col 0
  bytes[1 + 1024 + 33] = static_cast<char>(51);             // green, row 1, col 1
  bytes[kCifarRecordBytes] = 0;                             // second record, all zero
  spit(dir / "b.bin", bytes);
  const Dataset d = read_cifar_batch(dir / "b.bin", Split::test);
  REQUIRE(d.size() == 2);
  CHECK(d.split == Split::test);
  CHECK(d.images.shape() == Shape{2, 3, 32, 32});
  CHECK(d.labels == std::vector<int>{7, 0});
  CHECK(d.images[0] == 1.0);
  CHECK(d.images[1024 + 33] == doctest::Approx(0.2).epsilon(1e-15));
  double second = 0.0;
  for (std::size_t i = kCifarPixels; i < 2 * kCifarPixels; ++i) second += d.images[i];
  CHECK(second == 0.0);
}

TEST_CASE("cifar batch round trip is byte identical") {
  const fs::path dir = scratch("roundtrip");
  Gen g(71);
  const std::string bytes = random_records(g, 5);
  spit(dir / "in.bin", bytes);
  const Dataset d = read_cifar_batch(dir / "in.bin", Split::train);
  write_cifar_batch(dir / "out.bin", d);
  CHECK(slurp(dir / "out.bin") == bytes);
  // The label is byte 0 of each record, as a hex dump shows.
  const std::string hex = run("od -An -tx1 -N1 -j" + std::to_string(3 * kCifarRecordBytes) + " " +
                              (dir / "in.bin").string());
  CHECK(std::stoi(hex, nullptr, 16) == d.labels[3]);
}

TEST_CASE("malformed batches are rejected") {
  const fs::path dir = scratch("malformed");
  Gen g(72);
  std::string bytes = random_records(g, 2);
  spit(dir / "short.bin", bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(read_cifar_batch(dir / "short.bin", Split::train), IoError);
  bytes[kCifarRecordBytes] = 10;
  spit(dir / "label.bin", bytes);
  CHECK_THROWS_AS(read_cifar_batch(dir / "label.bin", Split::train), IoError);
  CHECK_THROWS_AS(read_cifar_batch(dir / "missing.bin", Split::train), IoError);
  CHECK_THROWS_AS(load_cifar10(dir), IoError);
}

TEST_CASE("real CIFAR-10 when available") {
  const char* root = std::getenv("AGGNN_CIFAR_DIR");
  if (!root) return;
  const CifarData data = load_cifar10(root);
  CHECK(data.train.size() == 50000);
  CHECK(data.test.size() == 10000);
  fs::path test = fs::path(root) / "test_batch.bin";
  if (!fs::exists(test)) test = fs::path(root) / "cifar-10-batches-bin" / "test_batch.bin";
  const std::string head = slurp(test).substr(0, kCifarRecordBytes);
  CHECK(static_cast<unsigned char>(head[0]) == data.test.labels[0]);
  CHECK(data.test.images[0] == static_cast<unsigned char>(head[1]) / 255.0);
  std::vector<int> counts(10);
  for (int l : data.test.labels) ++counts[static_cast<std::size_t>(l)];
  for (int c : counts) CHECK(c == 1000);
}

// ------------------------------------------------------------------- noise

TEST_CASE("noise statistics over a million pixels") {
  const Tensor clean({1000, 1000}, 0.5);
  const Tensor noisy = add_noise(clean, NoiseSpec{0.15, 9});
  double mean = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    const double d = noisy[i] - clean[i];
    mean += d;
    sq += d * d;
  }
  mean /= static_cast<double>(noisy.size());
  const double sd = std::sqrt(sq / static_cast<double>(noisy.size()) - mean * mean);
  CHECK(std::abs(mean) < 1e-3);
  CHECK(std::abs(sd - 0.15) < 2e-3);
  for (double v : clean.data()) REQUIRE(v == 0.5);
}

TEST_CASE("noise is seeded, unclipped, and vanishes at sigma zero") {
  const Tensor x({50, 20}, 0.99);
  CHECK(add_noise(x, {0.15, 3}) == add_noise(x, {0.15, 3}));
  CHECK_FALSE(add_noise(x, {0.15, 3}) == add_noise(x, {0.15, 4}));
  CHECK(add_noise(x, {0.0, 3}) == x);
  const Tensor y = add_noise(x, {0.5, 5});
  CHECK(*std::max_element(y.data().begin(), y.data().end()) > 1.0);

  const Dataset d{Tensor({4, 3}, 0.2), {0, 1, 2, 3}, Split::test};
  const Dataset n = with_noise(d, {0.1, 1});
  CHECK(n.labels == d.labels);
  CHECK(n.split == Split::test);
  CHECK(d.images == Tensor({4, 3}, 0.2));
}

// ------------------------------------------------------------ split/batch

TEST_CASE("property: train/val split partitions the samples") {
  testing::for_all(73, 100, [](Gen& g) {
    const std::size_t n = g.size(2, 200);
    const Dataset d = tagged(n);
    const std::size_t v = g.size(1, n - 1);
    const std::uint64_t seed = g.size(0, 1u << 30);
    const auto [train, val] = train_val_split(d, v, seed);
    CHECK(val.size() == v);
    CHECK(train.size() == n - v);
    CHECK(val.split == Split::val);
    std::vector<std::size_t> all = ids(train);
    const auto vi = ids(val);
    all.insert(all.end(), vi.begin(), vi.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(n);
    std::iota(expect.begin(), expect.end(), std::size_t{0});
    CHECK(all == expect);
    for (std::size_t i = 0; i < val.size(); ++i) CHECK(val.labels[i] == static_cast<int>(vi[i] % 10));
    const auto again = train_val_split(d, v, seed);
    CHECK(ids(again.first) == ids(train));
    CHECK(ids(again.second) == vi);
  });
  CHECK_THROWS_AS(train_val_split(tagged(5), 5, 0), InvalidValueError);
  CHECK_THROWS_AS(train_val_split(tagged(5), 0, 0), InvalidValueError);
}

TEST_CASE("batches cover the dataset") {
  const Dataset d = tagged(10);
  const Batches plain(d, 3, std::nullopt);
  REQUIRE(plain.count() == 4);
  std::vector<std::size_t> sizes, order;
  for (std::size_t b = 0; b < plain.count(); ++b) {
    const Batch batch = plain[b];
    sizes.push_back(batch.labels.size());
    CHECK(batch.x.dim(0) == batch.labels.size());
    for (std::size_t i = 0; i < batch.labels.size(); ++i) order.push_back(static_cast<std::size_t>(batch.x.at(i, 0)));
  }
  CHECK(sizes == std::vector<std::size_t>{3, 3, 3, 1});
  CHECK(order == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});

  const Batches a(d, 4, 17), b(d, 4, 17), c(d, 4, 18);
  std::vector<std::size_t> sa, sb, sc;
  for (std::size_t k = 0; k < a.count(); ++k) {
    for (auto i : a.indices(k)) sa.push_back(i);
    for (auto i : b.indices(k)) sb.push_back(i);
    for (auto i : c.indices(k)) sc.push_back(i);
  }
  CHECK(sa == sb);
  CHECK(sa != sc);
  std::sort(sa.begin(), sa.end());
  CHECK(sa == order);
  CHECK_THROWS_AS(Batches(d, 0, std::nullopt), InvalidValueError);
}

TEST_CASE("synthetic blobs") {
  const Dataset d = make_synthetic(103, 10, 5);
  CHECK(d.images.shape() == Shape{103, 3, 32, 32});
  const auto [lo, hi] = std::minmax_element(d.images.data().begin(), d.images.data().end());
  CHECK(*lo >= 0.0);
  CHECK(*hi <= 1.0);
  std::vector<int> counts(10);
  for (int l : d.labels) ++counts[static_cast<std::size_t>(l)];
  CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);
  const Dataset again = make_synthetic(103, 10, 5);
  CHECK(again.images == d.images);
  CHECK(again.labels == d.labels);
  CHECK_FALSE(make_synthetic(103, 10, 6).images == d.images);
  CHECK_THROWS_AS(make_synthetic(0, 10, 1), InvalidValueError);
}

// ------------------------------------------------------------------- fetch

TEST_CASE("digests agree with coreutils") {
  const fs::path dir = scratch("digest");
  Gen g(74);
  spit(dir / "f.bin", random_records(g, 3));
  CHECK(file_digest(dir / "f.bin", "md5") == run("md5sum " + (dir / "f.bin").string()).substr(0, 32));
  CHECK(file_digest(dir / "f.bin", "sha256") == run("sha256sum " + (dir / "f.bin").string()).substr(0, 64));
}

TEST_CASE("fetch over file:// verifies and unpacks") {
  const fs::path dir = scratch("fetch");
  const fs::path src = dir / "src" / "cifar-10-batches-bin";
  fs::create_directories(src);
  Gen g(75);
  for (int i = 1; i <= 5; ++i) spit(src / ("data_batch_" + std::to_string(i) + ".bin"), random_records(g, 2));
  spit(src / "test_batch.bin", random_records(g, 3));
  run("tar -czf " + (dir / "cifar.tar.gz").string() + " -C " + (dir / "src").string() + " cifar-10-batches-bin");
  const std::string md5 = run("md5sum " + (dir / "cifar.tar.gz").string()).substr(0, 32);

  const ArchiveSource source{"file://" + (dir / "cifar.tar.gz").string(), md5, ""};
  const FetchResult r = fetch_archive(source, dir / "out");
  CHECK(r.md5 == md5);
  CHECK(r.sha256.size() == 64);
  CHECK(r.data_dir == dir / "out" / "cifar-10-batches-bin");
  CHECK(slurp(r.data_dir / "test_batch.bin") == slurp(src / "test_batch.bin"));
  const CifarData data = load_cifar10(dir / "out");
  CHECK(data.train.size() == 10);
  CHECK(data.test.size() == 3);

  ArchiveSource wrong = source;
  wrong.md5 = std::string(32, '0');
  CHECK_THROWS_AS(fetch_archive(wrong, dir / "bad"), IoError);
  wrong = source;
  wrong.sha256 = std::string(64, 'f');
  CHECK_THROWS_AS(fetch_archive(wrong, dir / "bad2"), IoError);
  CHECK_THROWS_AS(fetch_archive({"file://" + (dir / "nope.tar.gz").string(), "", ""}, dir / "bad3"), IoError);
}

TEST_CASE("archive entries may not escape the destination") {
  const fs::path dir = scratch("escape");
  write_tar_gz(dir / "ok.tar.gz", {{"a/b.txt", "hello"}});
  extract_tar_gz(dir / "ok.tar.gz", dir / "ok");
  CHECK(slurp(dir / "ok" / "a" / "b.txt") == "hello");
  write_tar_gz(dir / "evil.tar.gz", {{"../evil.txt", "x"}});
  CHECK_THROWS_AS(extract_tar_gz(dir / "evil.tar.gz", dir / "evil"), IoError);
  CHECK_FALSE(fs::exists(dir / "evil.txt"));
}

TEST_CASE("archive source file") {
  const fs::path dir = scratch("source");
  spit(dir / "s.json", R"({"url": "file:///x.tar.gz", "md5": "ab", "sha256": ""})");
  const ArchiveSource s = read_archive_source(dir / "s.json");
  CHECK(s.url == "file:///x.tar.gz");
  CHECK(s.md5 == "ab");
  CHECK(s.sha256.empty());
}
