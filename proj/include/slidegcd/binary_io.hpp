#pragma once

// Little-endian primitive encoding shared by the bag and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "slidegcd/error.hpp"

namespace slidegcd::io {

template <class UInt>
void put_le(std::ostream& out, UInt v) {
  char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(UInt));
}

template <class UInt>
UInt get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(UInt)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(UInt))) {
    throw Error(ErrorCode::TruncatedFile, std::string("reading ") + what);
  }
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
  return v;
}

inline void put_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
inline void put_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
inline void put_i32(std::ostream& out, std::int32_t v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f32(std::ostream& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t get_u32(std::istream& in, const char* what) { return get_le<std::uint32_t>(in, what); }
inline std::uint64_t get_u64(std::istream& in, const char* what) { return get_le<std::uint64_t>(in, what); }
inline std::int32_t get_i32(std::istream& in, const char* what) {
  return std::bit_cast<std::int32_t>(get_le<std::uint32_t>(in, what));
}
inline float get_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(get_le<std::uint32_t>(in, what));
}
inline double get_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(get_le<std::uint64_t>(in, what));
}

// u32 length prefix + raw bytes.
inline void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, const char* what, std::size_t max_len = 1u << 28) {
  const std::uint32_t len = get_u32(in, what);
  if (len > max_len) throw Error(ErrorCode::ShapeOverflow, std::string(what) + " length " + std::to_string(len));
  std::string s(len, '\0');
  if (len && !in.read(s.data(), len)) throw Error(ErrorCode::TruncatedFile, std::string("reading ") + what);
  return s;
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char got[4];
  if (!in.read(got, 4)) throw Error(ErrorCode::TruncatedFile, "reading magic");
  if (std::memcmp(got, magic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, "expected " + std::string(magic, 4) + ", got " + std::string(got, 4));
  }
}

}  // namespace slidegcd::io
