#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "datalair/block_store.hpp"
#include "datalair/crypto.hpp"

namespace datalair {

// Slot coordinate inside the N-FBM, linearized column-major
// (slot / rows = column block, slot % rows = row within the block).
using NfbmSlot = std::uint32_t;

// Occupied-block matrix plus the free-location bitmap. The bitmap is
// authoritative in memory, persisted across bitmap-region blocks whose
// placement is tracked by a position array and re-randomized on every
// write (relocation swaps). Each protocol round flushes exactly two
// bitmap-region blocks regardless of how many bits actually changed.
class Nfbm {
 public:
  Nfbm(BlockStore& store, const VolumeKey& key, BlockAddr col_base, std::uint64_t rows,
       std::uint64_t cols, BlockAddr bitmap_base, std::uint64_t bitmap_blocks);

  void init_empty(Rng& rng);

  // Mount-time: load the bitmap from disk given the persisted part
  // placement, then scan columns for occupied (slot, addr) pairs.
  void load_bitmap(const std::vector<std::uint64_t>& positions);
  std::vector<std::pair<NfbmSlot, BlockAddr>> scan_occupied();
  const std::vector<std::uint64_t>& bitmap_positions() const { return part_pos_; }

  std::uint64_t slot_count() const { return slots_; }
  std::uint64_t occupied_count() const { return occupied_; }

  // Single uniform probe (the paper's stash variant): if the probed slot is
  // free, the address is written there (bit-clear staged) and the slot is
  // returned; if occupied, that slot's column is reencrypted and nullopt is
  // returned. Exactly one column write either way.
  std::optional<NfbmSlot> add_single_probe(BlockAddr addr, Rng& rng);

  // Retry probing until a free slot is found (bitmap reads only), then add.
  // Used for position-map node acquisitions, which may not fail.
  NfbmSlot add_with_retry(BlockAddr addr, Rng& rng);

  // k distinct occupied slots, uniform; contents read from their columns.
  std::vector<std::pair<NfbmSlot, BlockAddr>> sample_occupied(std::uint64_t k, Rng& rng);

  // Duplicate cleanup: the slot's stale address stays, only the bit flips.
  void mark_free(NfbmSlot slot);

  void reencrypt_random_column(Rng& rng);
  void reencrypt_column_of(NfbmSlot slot, Rng& rng);

  // Flush staged bit updates as exactly two bitmap-region writes via part
  // relocation swaps (decoys when fewer than two parts are dirty). With no
  // hidden key (pure simulation on an ONLY_PUB device) the same write shape
  // is produced by fill_random flushes at the device layer instead.
  void flush_bitmap_round(Rng& rng);

  bool slot_free(NfbmSlot slot) const;

 private:
  std::uint64_t part_of(NfbmSlot slot) const { return slot / kBitsPerBitmapBlock; }
  void write_part(std::uint64_t part, Rng& rng);
  void stage_bit(NfbmSlot slot, bool free);
  std::vector<BlockAddr> read_column(std::uint64_t col);
  void write_column(std::uint64_t col, const std::vector<BlockAddr>& entries, Rng& rng);

  BlockStore& store_;
  const VolumeKey& key_;
  BlockAddr col_base_;
  std::uint64_t rows_;
  std::uint64_t cols_;
  std::uint64_t slots_;
  BlockAddr bitmap_base_;
  std::uint64_t bitmap_blocks_;

  std::vector<Byte> bits_;                // 1 = free
  std::uint64_t occupied_ = 0;
  std::vector<std::uint64_t> part_pos_;   // part -> region slot
  std::vector<std::uint64_t> slot_part_;  // region slot -> part
  std::vector<std::uint64_t> dirty_parts_;
};

}  // namespace datalair
