#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "datalair/common.hpp"

namespace datalair {

// Fixed on-disk region order. Every physical block belongs to exactly one
// region; write traces are tagged with these.
enum class Region : std::uint8_t {
  superblock = 0,
  keycheck,
  rootptr,
  fbm_col,
  fbm_hdr,
  nfbm_col,
  bitmap,
  fma_hdr,
  fma,
  rma,
  ppm,
  stash,
  data,
};
inline constexpr std::size_t kRegionCount = 13;

const char* region_name(Region r);

// Derived layout for a device with N ORAM data blocks. All internal block
// addresses (FBM/N-FBM/FMA/PPM entries) are data-region-relative indices in
// [0, N); region offsets below are absolute device block numbers.
struct DeviceGeometry {
  std::uint64_t data_blocks = 0;  // N
  std::uint64_t block_size = kBlockSize;
  std::uint64_t addr_size = kAddrSize;
  std::uint64_t pub_logical = 0;  // public volume logical blocks
  std::uint64_t hid_logical = 0;  // hidden volume logical blocks (user-visible)

  // Matrix shape shared by FBM and N-FBM.
  std::uint64_t matrix_rows = 0;  // addresses per column block
  std::uint64_t matrix_cols = 0;
  std::uint64_t nfbm_slots = 0;  // rows * cols

  std::uint64_t bitmap_blocks = 0;
  std::uint64_t fma_blocks = 0;
  std::uint64_t rma_blocks = 0;
  std::uint64_t ppm_blocks = 0;

  // Absolute offsets.
  std::uint64_t off_superblock = 0;
  std::uint64_t off_keycheck = 0;
  std::uint64_t off_rootptr = 0;
  std::uint64_t off_fbm_col = 0;
  std::uint64_t off_fbm_hdr = 0;
  std::uint64_t off_nfbm_col = 0;
  std::uint64_t off_bitmap = 0;
  std::uint64_t off_fma_hdr = 0;
  std::uint64_t off_fma = 0;
  std::uint64_t off_rma = 0;
  std::uint64_t off_ppm = 0;
  std::uint64_t off_stash = 0;
  std::uint64_t off_data = 0;
  std::uint64_t total_blocks = 0;

  static DeviceGeometry make(std::uint64_t data_blocks, std::uint64_t pub_logical,
                             std::uint64_t hid_logical);

  Region region_of(BlockAddr abs_idx) const;

  // ORAM logical address space: half the device, always occupied after init.
  std::uint64_t oram_logical() const { return data_blocks / 2; }

  bool operator==(const DeviceGeometry&) const = default;
};

// Position map tree shape for a given logical space (dense, fixed at init).
struct TreeShape {
  std::uint64_t logical = 0;
  std::uint64_t depth = 0;                  // path length, root..leaf inclusive
  std::vector<std::uint64_t> level_nodes;   // [0]=leaves ... [depth-1]=1 (root)
  std::uint64_t total_nodes = 0;

  static TreeShape make(std::uint64_t logical);
};

}  // namespace datalair
