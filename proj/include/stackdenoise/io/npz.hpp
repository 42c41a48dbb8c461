#pragma once

// NPZ archives: an uncompressed (stored) zip of named members, the same layout
// numpy.savez writes. Member CRCs are checked on read.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include <zlib.h>

#include "stackdenoise/error.hpp"
#include "stackdenoise/io/npy.hpp"

namespace stackdenoise::io {

/// Archive members by name, in name order.
using Archive = std::map<std::string, std::string>;

namespace detail {

inline void put16(std::string& s, std::uint32_t v) {
  s += static_cast<char>(v & 0xff);
  s += static_cast<char>((v >> 8) & 0xff);
}
inline void put32(std::string& s, std::uint32_t v) {
  put16(s, v & 0xffff);
  put16(s, v >> 16);
}
inline std::uint32_t get16(std::string_view s, std::size_t off) {
  return static_cast<unsigned char>(s[off]) | (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 1])) << 8);
}
inline std::uint32_t get32(std::string_view s, std::size_t off) { return get16(s, off) | (get16(s, off + 2) << 16); }

inline std::uint32_t crc_of(std::string_view data) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

inline constexpr std::uint32_t local_sig = 0x04034b50;
inline constexpr std::uint32_t central_sig = 0x02014b50;
inline constexpr std::uint32_t eocd_sig = 0x06054b50;
inline constexpr std::size_t eocd_size = 22;
// DOS date 1980-01-01 00:00, fixed so archives are byte-reproducible.
inline constexpr std::uint32_t dos_date = (1 << 5) | 1;

}  // namespace detail

inline std::string encode_archive(const Archive& members) {
  std::string out, central;
  for (const auto& [name, data] : members) {
    require(data.size() < 0xffffffffu && out.size() < 0xffffffffu, ErrorKind::unsupported,
            "archive member '" + name + "' needs zip64");
    const auto crc = detail::crc_of(data);
    const auto offset = static_cast<std::uint32_t>(out.size());
    auto common = [&](std::string& s) {
      detail::put16(s, 20);  // version needed
      detail::put16(s, 0);   // flags
      detail::put16(s, 0);   // stored
      detail::put16(s, 0);   // time
      detail::put16(s, detail::dos_date);
      detail::put32(s, crc);
      detail::put32(s, static_cast<std::uint32_t>(data.size()));
      detail::put32(s, static_cast<std::uint32_t>(data.size()));
      detail::put16(s, static_cast<std::uint32_t>(name.size()));
      detail::put16(s, 0);  // extra length
    };
    detail::put32(out, detail::local_sig);
    common(out);
    out += name;
    out += data;

    detail::put32(central, detail::central_sig);
    detail::put16(central, 20);  // version made by
    common(central);
    detail::put16(central, 0);  // comment length
    detail::put16(central, 0);  // disk number
    detail::put16(central, 0);  // internal attributes
    detail::put32(central, 0);  // external attributes
    detail::put32(central, offset);
    central += name;
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out += central;
  detail::put32(out, detail::eocd_sig);
  detail::put16(out, 0);
  detail::put16(out, 0);
  detail::put16(out, static_cast<std::uint32_t>(members.size()));
  detail::put16(out, static_cast<std::uint32_t>(members.size()));
  detail::put32(out, static_cast<std::uint32_t>(central.size()));
  detail::put32(out, cd_offset);
  detail::put16(out, 0);
  return out;
}

inline Archive decode_archive(std::string_view b, const std::string& what = "archive") {
  require(b.size() >= detail::eocd_size, ErrorKind::truncated, what + ": too short to be a zip archive");
  // The end-of-central-directory record is the last 22 bytes plus an optional comment.
  std::size_t eocd = std::string_view::npos;
  const std::size_t lowest = b.size() >= detail::eocd_size + 0xffff ? b.size() - detail::eocd_size - 0xffff : 0;
  for (std::size_t p = b.size() - detail::eocd_size + 1; p-- > lowest;) {
    if (detail::get32(b, p) == detail::eocd_sig && p + detail::eocd_size + detail::get16(b, p + 20) == b.size()) {
      eocd = p;
      break;
    }
  }
  require(eocd != std::string_view::npos, ErrorKind::truncated,
          what + ": end-of-central-directory record not found (file truncated or not a zip)");
  const std::size_t count = detail::get16(b, eocd + 10);
  const std::size_t cd_size = detail::get32(b, eocd + 12);
  const std::size_t cd_offset = detail::get32(b, eocd + 16);
  require(cd_offset + cd_size <= eocd, ErrorKind::format, what + ": central directory lies outside the file");

  Archive out;
  std::size_t p = cd_offset;
  for (std::size_t i = 0; i < count; ++i) {
    require(p + 46 <= cd_offset + cd_size, ErrorKind::format, what + ": central directory is short");
    require(detail::get32(b, p) == detail::central_sig, ErrorKind::format, what + ": bad central directory entry");
    const auto method = detail::get16(b, p + 10);
    const auto crc = detail::get32(b, p + 16);
    const std::size_t csize = detail::get32(b, p + 20);
    const std::size_t usize = detail::get32(b, p + 24);
    const std::size_t name_len = detail::get16(b, p + 28);
    const std::size_t extra_len = detail::get16(b, p + 30);
    const std::size_t comment_len = detail::get16(b, p + 32);
    const std::size_t local = detail::get32(b, p + 42);
    require(p + 46 + name_len <= b.size(), ErrorKind::format, what + ": entry name runs past the end");
    std::string name(b.substr(p + 46, name_len));
    require(method == 0, ErrorKind::unsupported, what + ": member '" + name + "' is compressed (only stored members are supported)");
    require(csize == usize, ErrorKind::format, what + ": member '" + name + "' has inconsistent sizes");

    require(local + 30 <= cd_offset && detail::get32(b, local) == detail::local_sig, ErrorKind::format,
            what + ": bad local header for '" + name + "'");
    const std::size_t data_at = local + 30 + detail::get16(b, local + 26) + detail::get16(b, local + 28);
    require(data_at + csize <= cd_offset, ErrorKind::format, what + ": member '" + name + "' overlaps the directory");
    std::string data(b.substr(data_at, csize));
    require(detail::crc_of(data) == crc, ErrorKind::format, what + ": CRC mismatch in member '" + name + "'");
    require(out.emplace(std::move(name), std::move(data)).second, ErrorKind::format, what + ": duplicate member");
    p += 46 + name_len + extra_len + comment_len;
  }
  return out;
}

inline void write_archive(const std::filesystem::path& path, const Archive& members) {
  write_file_atomic(path, encode_archive(members));
}

inline Archive read_archive(const std::filesystem::path& path) { return decode_archive(read_file(path), path.string()); }

}  // namespace stackdenoise::io
