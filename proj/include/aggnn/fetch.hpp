#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace aggnn {

struct ArchiveSource {
  std::string url;
  std::string md5;     // hex; empty = not checked
  std::string sha256;  // hex; empty = not checked
};

// Reads {"url", "md5", "sha256"} from a JSON file.
ArchiveSource read_archive_source(const std::filesystem::path& file);

// Lower-case hex digest of a file; algorithm is "md5" or "sha256".
std::string file_digest(const std::filesystem::path& file, std::string_view algorithm);

// Downloads `url` (any scheme libcurl handles, including file://) to `dest`.
void download(const std::string& url, const std::filesystem::path& dest);

// Extracts regular files and directories from a gzip-compressed ustar
// archive into `dest`. Entries that would escape `dest` are rejected.
void extract_tar_gz(const std::filesystem::path& archive, const std::filesystem::path& dest);

struct FetchResult {
  std::filesystem::path archive;
  std::filesystem::path data_dir;
  std::string md5;
  std::string sha256;
};

// Download, verify every non-empty checksum in `source`, then unpack into
// `dir`. Throws IoError on a checksum mismatch (the archive is kept for
// inspection).
FetchResult fetch_archive(const ArchiveSource& source, const std::filesystem::path& dir);

}  // namespace aggnn
