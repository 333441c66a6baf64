#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include <zlib.h>

#include "error.hpp"

namespace ea {

inline bool has_gzip_suffix(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  return ext == ".gz" || ext == ".gzip";
}

inline std::string read_file(const std::filesystem::path& path) {
  if (has_gzip_suffix(path)) {
    gzFile gz = gzopen(path.c_str(), "rb");
    if (gz == nullptr) throw IoError(path.string() + ": cannot open");
    std::string out;
    char buf[1 << 15];
    int n = 0;
    while ((n = gzread(gz, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
    int err = 0;
    const char* msg = gzerror(gz, &err);
    gzclose(gz);
    if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) {
      throw FormatError(path.string() + ": gzip decode failed: " + (msg ? msg : "unknown"));
    }
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (has_gzip_suffix(path)) {
    // mtime is not written by gzopen, so output bytes depend only on content.
    gzFile gz = gzopen(path.c_str(), "wb");
    if (gz == nullptr) throw IoError(path.string() + ": cannot open for writing");
    bool ok = bytes.empty() || gzwrite(gz, bytes.data(), static_cast<unsigned>(bytes.size())) > 0;
    if (gzclose(gz) != Z_OK || !ok) throw IoError(path.string() + ": write failed");
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

}  // namespace ea
