#include "aggnn/fetch.hpp"

#include <curl/curl.h>
#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <utility>
#include <vector>

#include "aggnn/error.hpp"
#include "json.hpp"

namespace aggnn {

ArchiveSource read_archive_source(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  const auto j = nlohmann::json::parse(in);
  return ArchiveSource{j.at("url").get<std::string>(), j.value("md5", std::string{}), j.value("sha256", std::string{})};
}

std::string file_digest(const std::filesystem::path& file, std::string_view algorithm) {
  const EVP_MD* md = algorithm == "md5" ? EVP_md5() : algorithm == "sha256" ? EVP_sha256() : nullptr;
  if (!md) throw Error("unsupported digest '" + std::string(algorithm) + "'");
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());

  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), md, nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);

  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xf]);
  }
  return hex;
}

namespace {

std::size_t write_to_stream(char* data, std::size_t size, std::size_t count, void* user) {
  auto* out = static_cast<std::ofstream*>(user);
  out->write(data, static_cast<std::streamsize>(size * count));
  return *out ? size * count : 0;
}

std::uint64_t parse_octal(const char* field, std::size_t len) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < len && field[i]; ++i) {
    if (field[i] == ' ') continue;
    if (field[i] < '0' || field[i] > '7') break;
    v = v * 8 + static_cast<std::uint64_t>(field[i] - '0');
  }
  return v;
}

void read_exact(gzFile gz, char* dst, std::size_t len, const std::filesystem::path& archive) {
  while (len > 0) {
    const int chunk = gzread(gz, dst, static_cast<unsigned>(std::min<std::size_t>(len, 1u << 20)));
    if (chunk <= 0) throw IoError(archive.string() + ": truncated tar archive");
    dst += chunk;
    len -= static_cast<std::size_t>(chunk);
  }
}

}  // namespace

void download(const std::string& url, const std::filesystem::path& dest) {
  std::ofstream out(dest, std::ios::binary);
  if (!out) throw IoError("cannot write " + dest.string());
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  if (!curl) throw IoError("libcurl initialisation failed");
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, write_to_stream);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &out);
  const CURLcode rc = curl_easy_perform(curl.get());
  if (rc != CURLE_OK) throw IoError("download of " + url + " failed: " + curl_easy_strerror(rc));
}

void extract_tar_gz(const std::filesystem::path& archive, const std::filesystem::path& dest) {
  std::unique_ptr<std::remove_pointer_t<gzFile>, decltype(&gzclose)> gz(gzopen(archive.c_str(), "rb"), gzclose);
  if (!gz) throw IoError("cannot open " + archive.string());
  std::filesystem::create_directories(dest);
  const auto root = std::filesystem::weakly_canonical(dest);

  std::array<char, 512> header{};
  std::vector<char> body;
  std::string long_name;
  for (;;) {
    const int got = gzread(gz.get(), header.data(), header.size());
    if (got == 0) break;
    if (got != static_cast<int>(header.size())) throw IoError(archive.string() + ": truncated tar header");
    if (header[0] == '\0') break;  // end-of-archive block

    std::string name(header.data(), strnlen(header.data(), 100));
    const std::string prefix(header.data() + 345, strnlen(header.data() + 345, 155));
    if (!prefix.empty()) name = prefix + "/" + name;
    if (!long_name.empty()) name = std::exchange(long_name, {});
    const std::uint64_t size = parse_octal(header.data() + 124, 12);
    const char type = header[156];
    const std::size_t padded = static_cast<std::size_t>((size + 511) / 512 * 512);
    body.resize(padded);
    read_exact(gz.get(), body.data(), padded, archive);

    if (type == 'L') {  // GNU long name for the next entry
      long_name.assign(body.data(), strnlen(body.data(), static_cast<std::size_t>(size)));
      continue;
    }
    const auto target = std::filesystem::weakly_canonical(root / name);
    const auto rel = target.lexically_relative(root);
    if (rel.empty() || *rel.begin() == "..") throw IoError(archive.string() + ": entry escapes destination: " + name);

    if (type == '5') {
      std::filesystem::create_directories(target);
    } else if (type == '0' || type == '\0') {
      std::filesystem::create_directories(target.parent_path());
      std::ofstream out(target, std::ios::binary);
      if (!out) throw IoError("cannot write " + target.string());
      out.write(body.data(), static_cast<std::streamsize>(size));
    }
    // links, devices and pax headers are skipped
  }
}

FetchResult fetch_archive(const ArchiveSource& source, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto slash = source.url.find_last_of('/');
  const std::string name = slash == std::string::npos ? source.url : source.url.substr(slash + 1);
  FetchResult result;
  result.archive = dir / (name.empty() ? "archive.tar.gz" : name);
  download(source.url, result.archive);
  result.md5 = file_digest(result.archive, "md5");
  result.sha256 = file_digest(result.archive, "sha256");
  if (!source.md5.empty() && source.md5 != result.md5)
    throw IoError("md5 mismatch for " + result.archive.string() + ": expected " + source.md5 + ", got " + result.md5);
  if (!source.sha256.empty() && source.sha256 != result.sha256)
    throw IoError("sha256 mismatch for " + result.archive.string() + ": expected " + source.sha256 + ", got " +
                  result.sha256);
  extract_tar_gz(result.archive, dir);
  result.data_dir = std::filesystem::exists(dir / "cifar-10-batches-bin") ? dir / "cifar-10-batches-bin" : dir;
  return result;
}

}  // namespace aggnn
