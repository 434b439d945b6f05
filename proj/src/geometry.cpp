#include "datalair/geometry.hpp"

#include <algorithm>
#include <vector>

namespace datalair {

const char* region_name(Region r) {
  switch (r) {
    case Region::superblock: return "superblock";
    case Region::keycheck: return "keycheck";
    case Region::rootptr: return "rootptr";
    case Region::fbm_col: return "fbm_col";
    case Region::fbm_hdr: return "fbm_hdr";
    case Region::nfbm_col: return "nfbm_col";
    case Region::bitmap: return "bitmap";
    case Region::fma_hdr: return "fma_hdr";
    case Region::fma: return "fma";
    case Region::rma: return "rma";
    case Region::ppm: return "ppm";
    case Region::stash: return "stash";
    case Region::data: return "data";
  }
  return "?";
}

DeviceGeometry DeviceGeometry::make(std::uint64_t n, std::uint64_t pub_logical,
                                    std::uint64_t hid_logical) {
  if (n < 128)
    throw DlError(DlError::Kind::usage, "device too small: need at least 128 data blocks");
  if (pub_logical + hid_logical > n / 2)
    throw DlError(DlError::Kind::usage,
                  "combined logical volumes may not exceed half the device");

  DeviceGeometry g;
  g.data_blocks = n;
  g.pub_logical = pub_logical;
  g.hid_logical = hid_logical;

  g.matrix_rows = kAddrsPerMetaBlock;
  g.matrix_cols = ceil_div(n, g.matrix_rows);
  g.nfbm_slots = g.matrix_rows * g.matrix_cols;
  g.bitmap_blocks = ceil_div(g.nfbm_slots, kBitsPerBitmapBlock);
  g.fma_blocks = ceil_div(n, kAddrsPerMetaBlock);
  g.rma_blocks = ceil_div(n, kRmaPerBlock);
  g.ppm_blocks = pub_logical ? ceil_div(pub_logical, kAddrsPerMetaBlock) : 1;

  // The FBM header must fit in one block: one counter per row, each wide
  // enough for the column count.
  std::uint64_t bits_per_counter = 1;
  while ((std::uint64_t{1} << bits_per_counter) < g.matrix_cols + 1) ++bits_per_counter;
  if (g.matrix_rows * bits_per_counter > 8 * kBlockSize)
    throw DlError(DlError::Kind::usage, "FBM header would not fit in one block");
  // We store counters as fixed u32 values; that must fit too.
  if (g.matrix_rows * 4 > kMetaPayload)
    throw DlError(DlError::Kind::state, "u32 FBM header exceeds payload");

  std::uint64_t off = 0;
  g.off_superblock = off; off += 1;
  g.off_keycheck = off; off += 1;
  g.off_rootptr = off; off += 1;
  g.off_fbm_col = off; off += g.matrix_cols;
  g.off_fbm_hdr = off; off += 1;
  g.off_nfbm_col = off; off += g.matrix_cols;
  g.off_bitmap = off; off += g.bitmap_blocks;
  g.off_fma_hdr = off; off += 1;
  g.off_fma = off; off += g.fma_blocks;
  g.off_rma = off; off += g.rma_blocks;
  g.off_ppm = off; off += g.ppm_blocks;
  g.off_stash = off; off += kStashRegionBlocks;
  g.off_data = off; off += n;
  g.total_blocks = off;
  return g;
}

Region DeviceGeometry::region_of(BlockAddr idx) const {
  if (idx >= total_blocks) throw DlError(DlError::Kind::io, "block index out of range");
  if (idx >= off_data) return Region::data;
  if (idx >= off_stash) return Region::stash;
  if (idx >= off_ppm) return Region::ppm;
  if (idx >= off_rma) return Region::rma;
  if (idx >= off_fma) return Region::fma;
  if (idx >= off_fma_hdr) return Region::fma_hdr;
  if (idx >= off_bitmap) return Region::bitmap;
  if (idx >= off_nfbm_col) return Region::nfbm_col;
  if (idx >= off_fbm_hdr) return Region::fbm_hdr;
  if (idx >= off_fbm_col) return Region::fbm_col;
  if (idx >= off_rootptr) return Region::rootptr;
  if (idx >= off_keycheck) return Region::keycheck;
  return Region::superblock;
}

TreeShape TreeShape::make(std::uint64_t logical) {
  TreeShape t;
  t.logical = logical;
  std::uint64_t count = ceil_div(std::max<std::uint64_t>(logical, 1), kLeafFanout);
  t.level_nodes.push_back(count);
  while (count > 1) {
    count = ceil_div(count, kInternalFanout);
    t.level_nodes.push_back(count);
  }
  t.depth = t.level_nodes.size();
  for (auto c : t.level_nodes) t.total_nodes += c;
  return t;
}

}  // namespace datalair
