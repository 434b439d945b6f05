#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "datalair/block_store.hpp"
#include "datalair/crypto.hpp"

namespace datalair {

// One drawn-but-unresolved FBM entry. Draws are reads; the slot is resolved
// later by exactly one of invalidate_with_compaction / replace_in_place.
struct FbmReceipt {
  std::uint64_t row = 0;
  std::uint64_t col = 0;
  BlockAddr addr = kNullAddr;
  bool resolved = false;
};

struct FbmCompaction {
  std::uint64_t donor_row = 0;
  std::uint64_t donor_col = 0;
  bool donor_was_victim = false;
};

// Encrypted rows x cols matrix of free data-block addresses stored one
// column per device block, plus a one-block header of per-row valid counts.
// Invariant: traversed row-major, all invalid entries precede all valid
// entries, so rank i maps to a coordinate using the header alone.
class Fbm {
 public:
  Fbm(BlockStore& store, const VolumeKey& key, BlockAddr col_base, BlockAddr hdr_block,
      std::uint64_t rows, std::uint64_t cols);

  // Fresh device: every address placed exactly once at shuffled coordinates
  // filling the row-major suffix; header set accordingly.
  void init_full(const std::vector<BlockAddr>& addrs, Rng& rng);

  std::uint64_t valid_count();  // header read

  // Uniform draw (header + one column read). Does not modify the matrix.
  std::pair<BlockAddr, FbmReceipt> select_random(Rng& rng);
  std::pair<BlockAddr, FbmReceipt> select_at_rank(std::uint64_t rank);
  // k distinct uniform draws.
  std::vector<FbmReceipt> select_distinct(std::uint64_t k, Rng& rng);

  // Consume the receipt's slot: overwrite it with the first row-major valid
  // entry and decrement that donor's row count. Two block writes.
  FbmCompaction invalidate_with_compaction(FbmReceipt& receipt, Rng& rng);

  // Put new_addr into the receipt's slot; counts unchanged, header
  // reencrypted so the trace matches compaction. Two block writes.
  void replace_in_place(FbmReceipt& receipt, BlockAddr new_addr, Rng& rng);

  // Decoy touch for simulations: reencrypt one uniform column + the header.
  void reencrypt_random(Rng& rng);

  // Full-scan checker (tests, audit): returns valid addresses row-major and
  // verifies the structural invariant.
  std::vector<BlockAddr> scan_valid();

  std::uint64_t rows() const { return rows_; }
  std::uint64_t cols() const { return cols_; }

 private:
  std::vector<std::uint32_t> read_header();
  void write_header(const std::vector<std::uint32_t>& counts, Rng& rng);
  std::vector<BlockAddr> read_column(std::uint64_t col);
  void write_column(std::uint64_t col, const std::vector<BlockAddr>& entries, Rng& rng);
  std::pair<std::uint64_t, std::uint64_t> locate_rank(const std::vector<std::uint32_t>& hdr,
                                                      std::uint64_t rank) const;

  BlockStore& store_;
  const VolumeKey& key_;
  BlockAddr col_base_;
  BlockAddr hdr_block_;
  std::uint64_t rows_;
  std::uint64_t cols_;
};

}  // namespace datalair
