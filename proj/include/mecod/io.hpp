#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "mecod/error.hpp"

namespace mecod::io {

/// 64-bit FNV-1a; stable across platforms, used for manifests and checksums.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t v);
std::uint64_t hash_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorKind::io, "unexpected end of binary stream");
  return v;
}

/// Shortest text that parses back to the same double ("nan" for NaN).
std::string exact_double(double v);
double parse_double(const std::string& s);

/// RFC 4180 style quoting when the field needs it.
std::string csv_field(std::string_view s);
std::vector<std::string> split_csv_line(std::string_view line);
/// Lines of `text`, without terminators; a trailing empty line is dropped.
std::vector<std::string> lines(std::string_view text);

void write_magic(std::ostream& out, std::string_view magic);
void expect_magic(std::istream& in, std::string_view magic);

}  // namespace mecod::io
