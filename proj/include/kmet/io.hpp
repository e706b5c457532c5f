#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kmet/error.hpp"
#include "kmet/matrix.hpp"

namespace kmet {

// Binary feature-matrix format, bit-exact by construction:
//   magic "FMAT" | u32 LE version = 1 | u64 LE rows | u64 LE cols |
//   rows * cols IEEE-754 binary64 LE, row-major.

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace detail

inline void save_fmat(const Matrix& m, const std::string& path) {
  std::string buf;
  buf.reserve(24 + 8 * m.size());
  buf += "FMAT";
  detail::put_u32_le(buf, 1);
  detail::put_u64_le(buf, m.rows());
  detail::put_u64_le(buf, m.cols());
  for (double v : m.data()) detail::put_u64_le(buf, std::bit_cast<std::uint64_t>(v));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io_open_failed, "save_fmat: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(ErrorCode::io_open_failed, "save_fmat: write failed for " + path);
}

inline Matrix load_fmat(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_open_failed, "load_fmat: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 4 || std::memcmp(p, "FMAT", 4) != 0)
    fail(ErrorCode::io_magic_mismatch, "load_fmat: bad magic in " + path);
  if (buf.size() < 24) fail(ErrorCode::io_truncated, "load_fmat: truncated header in " + path);
  const std::uint32_t version = detail::get_u32_le(p + 4);
  if (version != 1)
    fail(ErrorCode::io_bad_header, "load_fmat: unsupported version in " + path);
  const std::uint64_t rows = detail::get_u64_le(p + 8);
  const std::uint64_t cols = detail::get_u64_le(p + 16);
  if (rows == 0 || cols == 0) fail(ErrorCode::io_bad_header, "load_fmat: empty matrix");
  // Guard the size arithmetic against absurd headers from corrupt files.
  if (rows > (std::uint64_t{1} << 31) || cols > (std::uint64_t{1} << 31))
    fail(ErrorCode::io_bad_header, "load_fmat: implausible dimensions in " + path);
  const std::uint64_t want = 24 + 8 * rows * cols;
  if (buf.size() < want) fail(ErrorCode::io_truncated, "load_fmat: truncated payload in " + path);
  Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < m.size(); ++i)
    m.data()[i] = std::bit_cast<double>(detail::get_u64_le(p + 24 + 8 * i));
  if (!m.all_finite())
    fail(ErrorCode::io_non_finite, "load_fmat: non-finite entries in " + path);
  return m;
}

// Headerless CSV, one sample per row, '.' decimal point. Values are written
// with 17 significant digits so csv -> binary -> csv round-trips exactly.
inline void save_csv(const Matrix& m, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::io_open_failed, "save_csv: cannot open " + path);
  out.precision(17);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << m(r, c);
    }
    out << '\n';
  }
  if (!out) fail(ErrorCode::io_open_failed, "save_csv: write failed for " + path);
}

inline Matrix load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_open_failed, "load_csv: cannot open " + path);
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t this_cols = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      const std::string tok = line.substr(pos, next - pos);
      try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        while (used < tok.size() && (tok[used] == ' ' || tok[used] == '\t')) ++used;
        if (used != tok.size()) throw std::invalid_argument(tok);
        values.push_back(v);
      } catch (const std::exception&) {
        fail(ErrorCode::invalid_input, "load_csv: bad value '" + tok + "' in " + path);
      }
      ++this_cols;
      pos = next + 1;
    }
    if (rows == 0)
      cols = this_cols;
    else if (this_cols != cols)
      fail(ErrorCode::io_ragged_csv, "load_csv: ragged row in " + path);
    ++rows;
  }
  if (rows == 0 || cols == 0) fail(ErrorCode::io_bad_header, "load_csv: empty file " + path);
  Matrix m(rows, cols);
  m.data() = std::move(values);
  if (!m.all_finite()) fail(ErrorCode::io_non_finite, "load_csv: non-finite entries in " + path);
  return m;
}

enum class FileFormat { auto_detect, csv, fmat };

inline Matrix load_features(const std::string& path, FileFormat format = FileFormat::auto_detect) {
  if (format == FileFormat::csv) return load_csv(path);
  if (format == FileFormat::fmat) return load_fmat(path);
  if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".fmat") == 0) return load_fmat(path);
  return load_csv(path);
}

inline void save_features(const Matrix& m, const std::string& path,
                          FileFormat format = FileFormat::auto_detect) {
  if (format == FileFormat::csv) return save_csv(m, path);
  if (format == FileFormat::fmat) return save_fmat(m, path);
  if (path.size() >= 5 && path.compare(path.size() - 5, 5, ".fmat") == 0)
    return save_fmat(m, path);
  return save_csv(m, path);
}

}  // namespace kmet
