#pragma once

// Binary and line-oriented file helpers.
//
// Matrix sidecar format (shared by registry cards and dataset features):
//   magic bytes "CMRREG1", u32 rows, u32 cols, then rows*cols little-endian
//   float32 values in row-major order.

#include "carve/common.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace carve::io {

inline constexpr char kMatrixMagic[] = "CMRREG1";

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  check(static_cast<bool>(is), "unexpected end of file while reading ", what);
  return value;
}

inline std::ofstream open_out(const std::string& path, bool binary = true) {
  std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
  check(static_cast<bool>(os), "cannot open for writing: ", path);
  return os;
}

inline std::ifstream open_in(const std::string& path, bool binary = true) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  check(static_cast<bool>(is), "cannot open for reading: ", path);
  return is;
}

inline void write_magic(std::ostream& os, const char* magic) {
  os.write(magic, static_cast<std::streamsize>(std::strlen(magic)));
}

inline void expect_magic(std::istream& is, const char* magic,
                         const std::string& path) {
  const std::size_t n = std::strlen(magic);
  std::string got(n, '\0');
  is.read(got.data(), static_cast<std::streamsize>(n));
  check(static_cast<bool>(is) && got == magic, "bad magic in ", path,
        " (expected ", magic, ")");
}

inline void write_matrix_f32(const std::string& path, const Matrix& m) {
  auto os = open_out(path);
  write_magic(os, kMatrixMagic);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      write_pod<float>(os, static_cast<float>(m(r, c)));
    }
  }
  check(static_cast<bool>(os), "write failed: ", path);
}

inline Matrix read_matrix_f32(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, kMatrixMagic, path);
  const auto rows = read_pod<std::uint32_t>(is, "matrix rows");
  const auto cols = read_pod<std::uint32_t>(is, "matrix cols");
  Matrix m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      m(r, c) = static_cast<double>(read_pod<float>(is, "matrix value"));
    }
  }
  return m;
}

inline void write_lines(const std::string& path,
                        const std::vector<std::string>& lines) {
  auto os = open_out(path, /*binary=*/true);  // binary: no newline translation
  for (const auto& line : lines) {
    os << line << '\n';
  }
  check(static_cast<bool>(os), "write failed: ", path);
}

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  auto is = open_in(path, /*binary=*/false);
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      fail(path, ":", lineno, ": invalid JSON line: ", e.what());
    }
  }
  return out;
}

inline nlohmann::json read_json(const std::string& path) {
  auto is = open_in(path, /*binary=*/false);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(path, ": invalid JSON: ", e.what());
  }
}

inline void write_json(const std::string& path, const nlohmann::json& j,
                       int indent = 2) {
  auto os = open_out(path, /*binary=*/true);
  os << j.dump(indent) << '\n';
  check(static_cast<bool>(os), "write failed: ", path);
}

inline std::string read_file(const std::string& path) {
  auto is = open_in(path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return buf.str();
}

}  // namespace carve::io
