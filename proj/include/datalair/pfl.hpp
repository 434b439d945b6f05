#pragma once

#include <cstdint>
#include <vector>

#include "datalair/block_store.hpp"
#include "datalair/crypto.hpp"

namespace datalair {

// Public free list: forward mapping array of addresses holding no public
// data (truly free + apparently free) plus the reverse mapping array, which
// also stores every data-region block's cipher IV. Sealed with the public
// key; caches are write-through, so mutations cost exactly the block writes
// they emit.
class Pfl {
 public:
  Pfl(BlockStore& store, const VolumeKey& pub_key, const DeviceGeometry& geom);

  // Format-time: FMA = identity over all N data blocks, RMA indices
  // identity, IVs random.
  void init_fresh(Rng& rng);
  void load();  // mount-time cache fill

  std::uint64_t fma_len() const { return fma_len_; }
  BlockAddr fma_at(std::uint64_t index) const;
  std::uint64_t fma_index_of(BlockAddr addr) const;  // kNullAddr if not present
  BlockAddr sample_fma(Rng& rng) const;              // uniform entry

  // Compacted removal: last entry moves into the hole. Emits exactly
  // 1 FMA column write + 1 FMA header write + 2 RMA writes.
  void fma_remove(BlockAddr addr, Rng& rng);

  std::array<Byte, kIvSize> iv_of(BlockAddr addr) const;
  // One RMA block write each.
  void put_iv(BlockAddr addr, const std::array<Byte, kIvSize>& iv, Rng& rng);
  void put_fma_index(BlockAddr addr, std::uint64_t index_or_null, Rng& rng);

  // Decoy for simulations: reencrypt one uniform RMA block (state kept).
  void reencrypt_random_rma(Rng& rng);

  // Audit: full bijection check FMA[i]=a <=> RMA[a].fma=i against disk.
  void verify_bijection(std::uint64_t expect_public_mapped) const;

 private:
  void write_fma_block(std::uint64_t blk_idx, Rng& rng);
  void write_fma_header(Rng& rng);
  void write_rma_block(std::uint64_t blk_idx, Rng& rng);

  BlockStore& store_;
  const VolumeKey& key_;
  const DeviceGeometry& geom_;

  std::vector<BlockAddr> fma_;          // capacity N; live prefix fma_len_
  std::uint64_t fma_len_ = 0;
  std::vector<std::uint64_t> rma_fma_;  // addr -> fma index or kNullAddr
  std::vector<std::array<Byte, kIvSize>> rma_iv_;
};

}  // namespace datalair
