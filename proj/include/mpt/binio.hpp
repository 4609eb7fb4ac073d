#pragma once

// Header-line + raw little-endian f64 blob files, shared by the spectral
// cache, trajectory files and checkpoints.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mpt/error.hpp"

namespace mpt::binio {

inline std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

inline void write_f64(std::ostream& os, std::span<const double> values) {
  std::vector<std::uint64_t> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) buf[i] = to_le(std::bit_cast<std::uint64_t>(values[i]));
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 8));
}

inline std::vector<double> read_f64(std::istream& is, std::size_t count, const std::string& what) {
  std::vector<std::uint64_t> buf(count);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 8));
  if (static_cast<std::size_t>(is.gcount()) != count * 8) {
    throw ParseError(what + ": truncated blob, expected " + std::to_string(count) + " f64 values");
  }
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = std::bit_cast<double>(to_le(buf[i]));
  return out;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

/// Reads the single-line JSON header that starts every blob file.
inline std::string read_header_line(std::istream& is, const std::string& what) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError(what + ": missing header line");
  return line;
}

}  // namespace mpt::binio
