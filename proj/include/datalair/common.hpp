#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace datalair {

using BlockAddr = std::uint64_t;

inline constexpr BlockAddr kNullAddr = ~BlockAddr{0};
inline constexpr std::uint32_t kNullCoord = ~std::uint32_t{0};

inline constexpr std::size_t kBlockSize = 4096;
inline constexpr std::size_t kAddrSize = 8;
inline constexpr std::size_t kIvSize = 16;
inline constexpr std::size_t kKeySize = 32;
inline constexpr std::size_t kDigestSize = 32;
inline constexpr std::size_t kSaltSize = 16;

// Metadata blocks embed their IV; data-region blocks keep the full 4KB
// payload and store the IV in the reverse mapping array.
inline constexpr std::size_t kMetaPayload = kBlockSize - kIvSize;            // 4080
inline constexpr std::size_t kAddrsPerMetaBlock = kMetaPayload / kAddrSize;  // 510
inline constexpr std::size_t kRmaEntrySize = kAddrSize + kIvSize;            // 24
inline constexpr std::size_t kRmaPerBlock = kMetaPayload / kRmaEntrySize;    // 170
inline constexpr std::size_t kBitsPerBitmapBlock = kMetaPayload * 8;         // 32640

// Selection protocol rounds per block acquisition.
inline constexpr unsigned kSelectRounds = 5;

// Position map fanouts. Tree nodes live in the data region (full payload).
inline constexpr std::size_t kLeafEntrySize = 20;  // id(8) + addr(8) + coord(4)
inline constexpr std::size_t kLeafFanout = kBlockSize / kLeafEntrySize;  // 204
inline constexpr std::size_t kInternalFanout = kBlockSize / kAddrSize;   // 512

inline constexpr std::size_t kStashCapacity = 50;
inline constexpr std::size_t kStashIndexBlocks = 14;
inline constexpr std::size_t kStashRegionBlocks = 64;

using Byte = std::uint8_t;
using Bytes = std::span<Byte>;
using ConstBytes = std::span<const Byte>;

class DlError : public std::runtime_error {
 public:
  enum class Kind { io, usage, auth, full, corrupt, unmapped, state };

  DlError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

  // Process exit code convention: 0 ok, 2 usage, 3 auth, 4 full, 5 corrupt.
  int exit_code() const {
    switch (kind_) {
      case Kind::usage: return 2;
      case Kind::auth: return 3;
      case Kind::full: return 4;
      case Kind::corrupt:
      case Kind::unmapped: return 5;
      default: return 1;
    }
  }

 private:
  Kind kind_;
};

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

inline void put_u64(Bytes buf, std::size_t off, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf[off + i] = static_cast<Byte>(v >> (8 * i));
}
inline std::uint64_t get_u64(ConstBytes buf, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[off + i]) << (8 * i);
  return v;
}
inline void put_u32(Bytes buf, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf[off + i] = static_cast<Byte>(v >> (8 * i));
}
inline std::uint32_t get_u32(ConstBytes buf, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[off + i]) << (8 * i);
  return v;
}

}  // namespace datalair
