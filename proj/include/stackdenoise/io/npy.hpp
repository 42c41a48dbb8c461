#pragma once

// NPY version 1.0 reader/writer for little-endian float32/float64 C-order
// arrays. Version 2.0 headers (4-byte length) are accepted on read.

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "stackdenoise/error.hpp"
#include "stackdenoise/image.hpp"

namespace stackdenoise::io {

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

enum class DType { f4, f8 };

inline std::size_t item_size(DType d) { return d == DType::f4 ? 4 : 8; }
inline std::string_view descr(DType d) { return d == DType::f4 ? "<f4" : "<f8"; }

/// An N-d float array; values are held as double regardless of the on-disk
/// dtype (float32 -> double -> float32 is exact, so round trips are bitwise).
struct NdArray {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  DType dtype = DType::f8;

  std::size_t count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
};

inline constexpr char npy_magic[] = "\x93NUMPY";

inline std::string npy_header(const std::vector<std::size_t>& shape, DType dtype) {
  std::string dict = "{'descr': '" + std::string(descr(dtype)) + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ",";
    if (i + 1 < shape.size()) dict += " ";
  }
  dict += "), }";
  // magic(6) + version(2) + length(2) + dict + padding + '\n' is a multiple of 64
  const std::size_t unpadded = 10 + dict.size() + 1;
  const std::size_t total = (unpadded + 63) / 64 * 64;
  dict.append(total - unpadded, ' ');
  dict += '\n';
  std::string out(npy_magic, 6);
  out += '\x01';
  out += '\x00';
  const auto len = static_cast<std::uint16_t>(dict.size());
  out += static_cast<char>(len & 0xff);
  out += static_cast<char>(len >> 8);
  out += dict;
  return out;
}

inline std::string encode_npy(const NdArray& arr) {
  require(arr.data.size() == arr.count(), ErrorKind::shape_mismatch, "NdArray data does not match its shape");
  std::string out = npy_header(arr.shape, arr.dtype);
  const std::size_t header = out.size();
  out.resize(header + arr.data.size() * item_size(arr.dtype));
  char* dst = out.data() + header;
  if (arr.dtype == DType::f4) {
    for (std::size_t i = 0; i < arr.data.size(); ++i) {
      const auto v = static_cast<float>(arr.data[i]);
      std::memcpy(dst + 4 * i, &v, 4);
    }
  } else {
    std::memcpy(dst, arr.data.data(), arr.data.size() * 8);
  }
  return out;
}

namespace detail {

struct HeaderDict {
  std::string descr;
  bool fortran_order = false;
  std::vector<std::size_t> shape;
  bool has_descr = false, has_order = false, has_shape = false;
};

class DictParser {
 public:
  explicit DictParser(std::string_view text) : s_(text) {}

  HeaderDict parse() {
    HeaderDict h;
    skip_ws();
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') break;
      const std::string key = parse_string();
      skip_ws();
      expect(':');
      skip_ws();
      if (key == "descr") {
        h.descr = parse_string();
        h.has_descr = true;
      } else if (key == "fortran_order") {
        h.fortran_order = parse_bool();
        h.has_order = true;
      } else if (key == "shape") {
        h.shape = parse_shape();
        h.has_shape = true;
      } else {
        fail(ErrorKind::format, "NPY header has unexpected key '" + key + "'");
      }
      skip_ws();
      if (peek() != ',') break;
      ++pos_;
    }
    expect('}');
    require(h.has_descr && h.has_order && h.has_shape, ErrorKind::format,
            "NPY header lacks one of descr/fortran_order/shape");
    return h;
  }

 private:
  char peek() const {
    require(pos_ < s_.size(), ErrorKind::format, "NPY header ends unexpectedly");
    return s_[pos_];
  }
  void expect(char c) {
    require(peek() == c, ErrorKind::format, std::string("NPY header: expected '") + c + "'");
    ++pos_;
  }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  std::string parse_string() {
    const char q = peek();
    require(q == '\'' || q == '"', ErrorKind::format, "NPY header: expected a quoted string");
    ++pos_;
    const auto end = s_.find(q, pos_);
    require(end != std::string_view::npos, ErrorKind::format, "NPY header: unterminated string");
    std::string out(s_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return out;
  }
  bool parse_bool() {
    if (s_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    fail(ErrorKind::format, "NPY header: fortran_order is not a boolean");
  }
  std::vector<std::size_t> parse_shape() {
    expect('(');
    std::vector<std::size_t> shape;
    while (true) {
      skip_ws();
      if (peek() == ')') break;
      require(std::isdigit(static_cast<unsigned char>(peek())), ErrorKind::format, "NPY header: bad shape entry");
      std::size_t v = 0;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
        v = v * 10 + static_cast<std::size_t>(s_[pos_] - '0');
        ++pos_;
      }
      shape.push_back(v);
      skip_ws();
      if (peek() == ',') ++pos_;
    }
    expect(')');
    return shape;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline NdArray decode_npy(std::string_view bytes, const std::string& what = "NPY data") {
  require(bytes.size() >= 10, ErrorKind::truncated, what + ": shorter than the NPY preamble");
  require(bytes.substr(0, 6) == std::string_view(npy_magic, 6), ErrorKind::format, what + ": bad NPY magic");
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    offset = 10;
  } else if (major == 2) {
    require(bytes.size() >= 12, ErrorKind::truncated, what + ": truncated NPY 2.0 preamble");
    for (int i = 3; i >= 0; --i) header_len = (header_len << 8) | static_cast<unsigned char>(bytes[8 + i]);
    offset = 12;
  } else {
    fail(ErrorKind::unsupported, what + ": NPY version " + std::to_string(major) + " is not supported");
  }
  require(bytes.size() >= offset + header_len, ErrorKind::truncated, what + ": header extends past end of data");
  const auto dict = detail::DictParser(bytes.substr(offset, header_len)).parse();
  require(!dict.fortran_order, ErrorKind::unsupported, what + ": fortran_order=True arrays are not supported");

  NdArray arr;
  if (dict.descr == "<f4") arr.dtype = DType::f4;
  else if (dict.descr == "<f8") arr.dtype = DType::f8;
  else fail(ErrorKind::unsupported, what + ": dtype '" + dict.descr + "' is not supported (only <f4, <f8)");
  arr.shape = dict.shape;

  const std::size_t n = arr.count();
  const std::size_t payload = bytes.size() - offset - header_len;
  const std::size_t expected = n * item_size(arr.dtype);
  require(payload >= expected, ErrorKind::truncated,
          what + ": payload holds " + std::to_string(payload) + " bytes, expected " + std::to_string(expected));
  require(payload == expected, ErrorKind::format,
          what + ": " + std::to_string(payload - expected) + " trailing bytes after the payload");
  const char* src = bytes.data() + offset + header_len;
  arr.data.resize(n);
  if (arr.dtype == DType::f4) {
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, src + 4 * i, 4);
      arr.data[i] = v;
    }
  } else {
    std::memcpy(arr.data.data(), src, n * 8);
  }
  return arr;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes through a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot create '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::io, "write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline NdArray read_array(const std::filesystem::path& path) { return decode_npy(read_file(path), path.string()); }

inline void write_array(const std::filesystem::path& path, const NdArray& arr) {
  write_file_atomic(path, encode_npy(arr));
}

inline NdArray to_array(const Plane& p, DType dtype = DType::f8) {
  return NdArray{{p.height(), p.width()}, std::vector<double>(p.values().begin(), p.values().end()), dtype};
}

inline Plane to_plane(const NdArray& arr, const std::string& what = "array") {
  require(arr.shape.size() == 2, ErrorKind::shape_mismatch,
          what + ": expected a 2D array, got " + std::to_string(arr.shape.size()) + " dimensions");
  return Plane(arr.shape[0], arr.shape[1], arr.data);
}

inline Plane read_plane(const std::filesystem::path& path) { return to_plane(read_array(path), path.string()); }

inline void write_plane(const std::filesystem::path& path, const Plane& p, DType dtype = DType::f8) {
  write_array(path, to_array(p, dtype));
}

}  // namespace stackdenoise::io
