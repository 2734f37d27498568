#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "isearle/errors.hpp"

// Little-endian primitives shared by the token store, embedding manifest and
// checkpoint formats.
namespace isearle::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw ParseError("unexpected end of binary stream");
  return value;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::uint32_t max_len = 1u << 20) {
  const auto n = read_pod<std::uint32_t>(is);
  if (n > max_len) throw ParseError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw ParseError("unexpected end of binary stream");
  return s;
}

inline void write_floats(std::ostream& os, const std::vector<float>& values) {
  os.write(reinterpret_cast<const char*>(values.data()),
           static_cast<std::streamsize>(values.size() * sizeof(float)));
}

inline std::vector<float> read_floats(std::istream& is, std::size_t n) {
  std::vector<float> values(n);
  is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw ParseError("unexpected end of binary stream");
  return values;
}

inline void write_magic(std::ostream& os, const char (&magic)[9]) { os.write(magic, 8); }

inline void expect_magic(std::istream& is, const char (&magic)[9]) {
  char buf[8];
  is.read(buf, 8);
  if (!is || std::memcmp(buf, magic, 8) != 0)
    throw ParseError(std::string("bad magic, expected ") + magic);
}

}  // namespace isearle::binio
