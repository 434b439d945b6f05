#include "datalair/pfl.hpp"

#include <cstring>

namespace datalair {

namespace {
constexpr char kFmaMagic[8] = {'D', 'L', 'F', 'M', 'A', 'H', 'D', '1'};
}

Pfl::Pfl(BlockStore& store, const VolumeKey& pub_key, const DeviceGeometry& geom)
    : store_(store), key_(pub_key), geom_(geom) {}

void Pfl::write_fma_block(std::uint64_t blk_idx, Rng& rng) {
  std::array<Byte, kMetaPayload> payload{};
  std::uint64_t base = blk_idx * kAddrsPerMetaBlock;
  for (std::uint64_t i = 0; i < kAddrsPerMetaBlock; ++i) {
    std::uint64_t pos = base + i;
    put_u64(payload, i * kAddrSize, pos < fma_.size() ? fma_[pos] : rng.next_u64());
  }
  std::array<Byte, kBlockSize> blk;
  seal_meta_block(key_, payload, rng, blk);
  store_.write_block(geom_.off_fma + blk_idx, blk);
}

void Pfl::write_fma_header(Rng& rng) {
  std::array<Byte, kMetaPayload> payload{};
  std::memcpy(payload.data(), kFmaMagic, 8);
  put_u64(payload, 8, fma_len_);
  std::array<Byte, kBlockSize> blk;
  seal_meta_block(key_, payload, rng, blk);
  store_.write_block(geom_.off_fma_hdr, blk);
}

void Pfl::write_rma_block(std::uint64_t blk_idx, Rng& rng) {
  std::array<Byte, kMetaPayload> payload{};
  std::uint64_t base = blk_idx * kRmaPerBlock;
  for (std::uint64_t i = 0; i < kRmaPerBlock; ++i) {
    std::uint64_t addr = base + i;
    if (addr >= geom_.data_blocks) break;
    put_u64(payload, i * kRmaEntrySize, rma_fma_[addr]);
    std::memcpy(payload.data() + i * kRmaEntrySize + kAddrSize, rma_iv_[addr].data(), kIvSize);
  }
  std::array<Byte, kBlockSize> blk;
  seal_meta_block(key_, payload, rng, blk);
  store_.write_block(geom_.off_rma + blk_idx, blk);
}

void Pfl::init_fresh(Rng& rng) {
  const std::uint64_t n = geom_.data_blocks;
  fma_.resize(n);
  rma_fma_.resize(n);
  rma_iv_.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    fma_[i] = i;
    rma_fma_[i] = i;
    rng.fill(rma_iv_[i]);
  }
  fma_len_ = n;
  for (std::uint64_t b = 0; b < geom_.fma_blocks; ++b) write_fma_block(b, rng);
  write_fma_header(rng);
  for (std::uint64_t b = 0; b < geom_.rma_blocks; ++b) write_rma_block(b, rng);
}

void Pfl::load() {
  const std::uint64_t n = geom_.data_blocks;
  fma_.assign(n, kNullAddr);
  rma_fma_.assign(n, kNullAddr);
  rma_iv_.assign(n, {});

  std::array<Byte, kBlockSize> blk;
  std::array<Byte, kMetaPayload> payload;
  store_.read_block(geom_.off_fma_hdr, blk);
  unseal_meta_block(key_, blk, payload);
  if (std::memcmp(payload.data(), kFmaMagic, 8) != 0)
    throw DlError(DlError::Kind::corrupt, "pfl: bad FMA header");
  fma_len_ = get_u64(payload, 8);
  if (fma_len_ > n) throw DlError(DlError::Kind::corrupt, "pfl: FMA length out of range");

  for (std::uint64_t b = 0; b < geom_.fma_blocks; ++b) {
    store_.read_block(geom_.off_fma + b, blk);
    unseal_meta_block(key_, blk, payload);
    for (std::uint64_t i = 0; i < kAddrsPerMetaBlock; ++i) {
      std::uint64_t pos = b * kAddrsPerMetaBlock + i;
      if (pos < n) fma_[pos] = get_u64(payload, i * kAddrSize);
    }
  }
  for (std::uint64_t b = 0; b < geom_.rma_blocks; ++b) {
    store_.read_block(geom_.off_rma + b, blk);
    unseal_meta_block(key_, blk, payload);
    for (std::uint64_t i = 0; i < kRmaPerBlock; ++i) {
      std::uint64_t addr = b * kRmaPerBlock + i;
      if (addr >= n) break;
      rma_fma_[addr] = get_u64(payload, i * kRmaEntrySize);
      std::memcpy(rma_iv_[addr].data(), payload.data() + i * kRmaEntrySize + kAddrSize, kIvSize);
    }
  }
}

BlockAddr Pfl::fma_at(std::uint64_t index) const {
  if (index >= fma_len_) throw DlError(DlError::Kind::state, "pfl: FMA index beyond live length");
  return fma_[index];
}

std::uint64_t Pfl::fma_index_of(BlockAddr addr) const {
  if (addr >= rma_fma_.size()) throw DlError(DlError::Kind::state, "pfl: address out of range");
  return rma_fma_[addr];
}

BlockAddr Pfl::sample_fma(Rng& rng) const {
  if (fma_len_ == 0) throw DlError(DlError::Kind::full, "pfl: FMA empty");
  return fma_[rng.random_below(fma_len_)];
}

void Pfl::fma_remove(BlockAddr addr, Rng& rng) {
  std::uint64_t idx = fma_index_of(addr);
  if (idx == kNullAddr || idx >= fma_len_)
    throw DlError(DlError::Kind::state, "pfl: address not in FMA");
  BlockAddr moved = fma_[fma_len_ - 1];
  fma_[idx] = moved;
  fma_len_ -= 1;
  rma_fma_[moved] = idx;
  rma_fma_[addr] = kNullAddr;  // wins when moved == addr

  write_fma_block(idx / kAddrsPerMetaBlock, rng);
  write_fma_header(rng);
  // Always two RMA writes (possibly the same block twice) so the trace
  // shape does not depend on where the removed entry sat.
  write_rma_block(moved / kRmaPerBlock, rng);
  write_rma_block(addr / kRmaPerBlock, rng);
}

std::array<Byte, kIvSize> Pfl::iv_of(BlockAddr addr) const { return rma_iv_.at(addr); }

void Pfl::put_iv(BlockAddr addr, const std::array<Byte, kIvSize>& iv, Rng& rng) {
  rma_iv_.at(addr) = iv;
  write_rma_block(addr / kRmaPerBlock, rng);
}

void Pfl::put_fma_index(BlockAddr addr, std::uint64_t index_or_null, Rng& rng) {
  rma_fma_.at(addr) = index_or_null;
  write_rma_block(addr / kRmaPerBlock, rng);
}

void Pfl::reencrypt_random_rma(Rng& rng) {
  std::uint64_t b = rng.random_below(geom_.rma_blocks);
  std::array<Byte, kBlockSize> blk;
  store_.read_block(geom_.off_rma + b, blk);
  reencrypt_meta_block(key_, blk, rng);
  store_.write_block(geom_.off_rma + b, blk);
}

void Pfl::verify_bijection(std::uint64_t expect_public_mapped) const {
  if (fma_len_ + expect_public_mapped != geom_.data_blocks)
    throw DlError(DlError::Kind::corrupt, "pfl: FMA length + public mapped != N");
  std::vector<bool> seen(geom_.data_blocks, false);
  for (std::uint64_t i = 0; i < fma_len_; ++i) {
    BlockAddr a = fma_[i];
    if (a >= geom_.data_blocks || seen[a])
      throw DlError(DlError::Kind::corrupt, "pfl: FMA entry invalid or duplicated");
    seen[a] = true;
    if (rma_fma_[a] != i) throw DlError(DlError::Kind::corrupt, "pfl: RMA cross-reference broken");
  }
  for (std::uint64_t a = 0; a < geom_.data_blocks; ++a) {
    if (!seen[a] && rma_fma_[a] != kNullAddr)
      throw DlError(DlError::Kind::corrupt, "pfl: RMA points into dead FMA region");
  }
}

}  // namespace datalair
