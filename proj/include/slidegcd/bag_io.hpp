#pragma once

// SGCD bag files: "SGCD", u32 rows, u32 cols, rows*cols f32, all
// little-endian, row-major. Values are widened to double on load.

#include <fstream>
#include <sstream>
#include <string>

#include "slidegcd/binary_io.hpp"
#include "slidegcd/matrix.hpp"

namespace slidegcd {

inline constexpr char kBagMagic[5] = "SGCD";
// Upper bound on rows*cols accepted from a header (1 GiB of f32 payload).
inline constexpr std::uint64_t kMaxBagElements = std::uint64_t{1} << 28;

inline void write_bag(std::ostream& out, const Matrix& m) {
  if (m.rows() > 0xFFFFFFFFu || m.cols() > 0xFFFFFFFFu) throw Error(ErrorCode::ShapeOverflow, m.shape_str());
  out.write(kBagMagic, 4);
  io::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  io::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) io::put_f32(out, static_cast<float>(v));
  if (!out) throw Error(ErrorCode::IoError, "bag write failed");
}

inline Matrix read_bag(std::istream& in) {
  io::expect_magic(in, kBagMagic);
  const std::uint32_t rows = io::get_u32(in, "bag rows");
  const std::uint32_t cols = io::get_u32(in, "bag cols");
  const std::uint64_t count = std::uint64_t{rows} * cols;
  if (count > kMaxBagElements) {
    throw Error(ErrorCode::ShapeOverflow, std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix m(rows, cols);
  std::string payload(count * 4, '\0');
  if (count && !in.read(payload.data(), static_cast<std::streamsize>(payload.size()))) {
    throw Error(ErrorCode::TruncatedFile, "bag payload: expected " + std::to_string(count) + " floats");
  }
  std::istringstream ps(payload);
  for (std::uint64_t i = 0; i < count; ++i) m[i] = io::get_f32(ps, "bag value");
  return m;
}

inline void write_bag(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  write_bag(out, m);
}

inline Matrix read_bag(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return read_bag(in);
}

// Header only: (rows, cols).
inline std::pair<std::uint32_t, std::uint32_t> read_bag_shape(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  io::expect_magic(in, kBagMagic);
  const auto rows = io::get_u32(in, "bag rows");
  return {rows, io::get_u32(in, "bag cols")};
}

}  // namespace slidegcd
