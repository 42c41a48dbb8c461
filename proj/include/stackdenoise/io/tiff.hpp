#pragma once

// Baseline TIFF reader for the uncompressed 8/16-bit grayscale subset
// (single image, strips, one sample per pixel). Only the first IFD is read.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stackdenoise/error.hpp"
#include "stackdenoise/image.hpp"
#include "stackdenoise/io/npy.hpp"

namespace stackdenoise::io {

namespace tiff_tag {
inline constexpr std::uint16_t image_width = 256;
inline constexpr std::uint16_t image_length = 257;
inline constexpr std::uint16_t bits_per_sample = 258;
inline constexpr std::uint16_t compression = 259;
inline constexpr std::uint16_t photometric = 262;
inline constexpr std::uint16_t strip_offsets = 273;
inline constexpr std::uint16_t samples_per_pixel = 277;
inline constexpr std::uint16_t rows_per_strip = 278;
inline constexpr std::uint16_t strip_byte_counts = 279;
inline constexpr std::uint16_t planar_configuration = 284;
inline constexpr std::uint16_t tile_width = 322;
inline constexpr std::uint16_t tile_offsets = 324;
inline constexpr std::uint16_t sample_format = 339;
}  // namespace tiff_tag

namespace detail {

class TiffReader {
 public:
  TiffReader(std::string_view bytes, std::string what) : b_(bytes), what_(std::move(what)) {}

  Plane read() {
    need(0, 8);
    if (b_.substr(0, 2) == "II") big_ = false;
    else if (b_.substr(0, 2) == "MM") big_ = true;
    else fail(ErrorKind::format, what_ + ": not a TIFF file (bad byte-order mark)");
    require(u16(2) == 42, ErrorKind::format, what_ + ": bad TIFF version number");
    parse_ifd(u32(4));

    for (auto tag : {tiff_tag::tile_width, tiff_tag::tile_offsets})
      require(!tags_.count(tag), ErrorKind::unsupported, what_ + ": tiled images are not supported (tag " +
                                                             std::to_string(tag) + ")");
    const auto width = scalar(tiff_tag::image_width);
    const auto height = scalar(tiff_tag::image_length);
    const auto bits = scalar(tiff_tag::bits_per_sample, 1);
    const auto compression = scalar(tiff_tag::compression, 1);
    const auto photometric = scalar(tiff_tag::photometric);
    const auto samples = scalar(tiff_tag::samples_per_pixel, 1);
    const auto format = scalar(tiff_tag::sample_format, 1);
    const auto rows_per_strip = scalar(tiff_tag::rows_per_strip, height);

    require(compression == 1, ErrorKind::unsupported,
            what_ + ": compression " + std::to_string(compression) + " is not supported (tag 259)");
    require(photometric == 1, ErrorKind::unsupported,
            what_ + ": photometric interpretation " + std::to_string(photometric) +
                " is not supported, only BlackIsZero (tag 262)");
    require(samples == 1, ErrorKind::unsupported,
            what_ + ": " + std::to_string(samples) + " samples per pixel are not supported (tag 277)");
    require(bits == 8 || bits == 16, ErrorKind::unsupported,
            what_ + ": " + std::to_string(bits) + "-bit samples are not supported (tag 258)");
    require(format == 1, ErrorKind::unsupported,
            what_ + ": sample format " + std::to_string(format) + " is not supported, only unsigned (tag 339)");
    require(width > 0 && height > 0, ErrorKind::format, what_ + ": zero image dimension");

    const auto offsets = values(tiff_tag::strip_offsets);
    const auto counts = values(tiff_tag::strip_byte_counts);
    require(offsets.size() == counts.size(), ErrorKind::format, what_ + ": strip offset/count tags disagree");
    const std::size_t bytes_per_px = bits / 8;
    const std::size_t row_bytes = width * bytes_per_px;
    const std::size_t strips = (height + rows_per_strip - 1) / rows_per_strip;
    require(offsets.size() == strips, ErrorKind::format,
            what_ + ": expected " + std::to_string(strips) + " strips, found " + std::to_string(offsets.size()));

    Plane out(height, width);
    std::size_t row = 0;
    for (std::size_t s = 0; s < strips; ++s) {
      const std::size_t rows = std::min<std::size_t>(rows_per_strip, height - row);
      require(counts[s] >= rows * row_bytes, ErrorKind::format, what_ + ": strip " + std::to_string(s) + " is short");
      need(offsets[s], rows * row_bytes);
      for (std::size_t r = 0; r < rows; ++r, ++row) {
        const std::size_t base = offsets[s] + r * row_bytes;
        for (std::size_t c = 0; c < width; ++c)
          out(row, c) = bits == 8 ? static_cast<double>(static_cast<unsigned char>(b_[base + c]))
                                  : static_cast<double>(u16(base + 2 * c));
      }
    }
    return out;
  }

 private:
  void need(std::size_t off, std::size_t len) const {
    require(off + len <= b_.size(), ErrorKind::truncated,
            what_ + ": needs bytes up to " + std::to_string(off + len) + " but file has " + std::to_string(b_.size()));
  }
  std::uint32_t byte(std::size_t off) const { return static_cast<unsigned char>(b_[off]); }
  std::uint16_t u16(std::size_t off) const {
    need(off, 2);
    return static_cast<std::uint16_t>(big_ ? (byte(off) << 8) | byte(off + 1) : byte(off) | (byte(off + 1) << 8));
  }
  std::uint32_t u32(std::size_t off) const {
    need(off, 4);
    return big_ ? (byte(off) << 24) | (byte(off + 1) << 16) | (byte(off + 2) << 8) | byte(off + 3)
                : byte(off) | (byte(off + 1) << 8) | (byte(off + 2) << 16) | (byte(off + 3) << 24);
  }

  struct Entry {
    std::uint16_t type;
    std::uint32_t count;
    std::size_t value_offset;  // where the values live (inline or external)
  };

  void parse_ifd(std::uint32_t off) {
    const auto n = u16(off);
    need(off + 2, 12u * n);
    for (std::uint16_t i = 0; i < n; ++i) {
      const std::size_t e = off + 2 + 12u * i;
      Entry entry{u16(e + 2), u32(e + 4), e + 8};
      const std::size_t size = type_size(entry.type) * entry.count;
      if (size > 4) entry.value_offset = u32(e + 8);
      tags_[u16(e)] = entry;
    }
  }

  static std::size_t type_size(std::uint16_t type) {
    switch (type) {
      case 1: case 2: case 6: case 7: return 1;  // BYTE ASCII SBYTE UNDEFINED
      case 3: case 8: return 2;                  // SHORT SSHORT
      case 4: case 9: case 11: return 4;         // LONG SLONG FLOAT
      default: return 8;
    }
  }

  std::vector<std::size_t> values(std::uint16_t tag) const {
    const auto it = tags_.find(tag);
    require(it != tags_.end(), ErrorKind::format, what_ + ": required tag " + std::to_string(tag) + " is missing");
    const auto& e = it->second;
    require(e.type == 3 || e.type == 4, ErrorKind::unsupported,
            what_ + ": tag " + std::to_string(tag) + " has unsupported field type " + std::to_string(e.type));
    std::vector<std::size_t> out;
    for (std::uint32_t i = 0; i < e.count; ++i)
      out.push_back(e.type == 3 ? u16(e.value_offset + 2 * i) : u32(e.value_offset + 4 * i));
    return out;
  }

  std::size_t scalar(std::uint16_t tag) const {
    const auto v = values(tag);
    require(!v.empty(), ErrorKind::format, what_ + ": tag " + std::to_string(tag) + " is empty");
    for (auto x : v)
      require(x == v.front(), ErrorKind::unsupported,
              what_ + ": tag " + std::to_string(tag) + " differs between samples");
    return v.front();
  }

  std::size_t scalar(std::uint16_t tag, std::size_t fallback) const {
    return tags_.count(tag) ? scalar(tag) : fallback;
  }

  std::string_view b_;
  std::string what_;
  bool big_ = false;
  std::map<std::uint16_t, Entry> tags_;
};

}  // namespace detail

inline Plane decode_tiff_gray(std::string_view bytes, const std::string& what = "TIFF data") {
  return detail::TiffReader(bytes, what).read();
}

/// Reads an uncompressed grayscale TIFF; samples keep their native integer range.
inline Plane read_tiff_gray(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return decode_tiff_gray(bytes, path.string());
}

}  // namespace stackdenoise::io
