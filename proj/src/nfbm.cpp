#include "datalair/nfbm.hpp"

#include <algorithm>
#include <cstring>
#include <unordered_set>

namespace datalair {

Nfbm::Nfbm(BlockStore& store, const VolumeKey& key, BlockAddr col_base, std::uint64_t rows,
           std::uint64_t cols, BlockAddr bitmap_base, std::uint64_t bitmap_blocks)
    : store_(store), key_(key), col_base_(col_base), rows_(rows), cols_(cols),
      slots_(rows * cols), bitmap_base_(bitmap_base), bitmap_blocks_(bitmap_blocks) {
  if (ceil_div(slots_, kBitsPerBitmapBlock) > bitmap_blocks_)
    throw DlError(DlError::Kind::usage, "nfbm: bitmap region too small");
  bits_.assign(bitmap_blocks_ * (kBitsPerBitmapBlock / 8), 0xFF);
  part_pos_.resize(bitmap_blocks_);
  slot_part_.resize(bitmap_blocks_);
  for (std::uint64_t i = 0; i < bitmap_blocks_; ++i) part_pos_[i] = slot_part_[i] = i;
}

bool Nfbm::slot_free(NfbmSlot slot) const {
  return (bits_[slot / 8] >> (slot % 8)) & 1;
}

void Nfbm::stage_bit(NfbmSlot slot, bool free) {
  bool cur = slot_free(slot);
  if (cur == free)
    throw DlError(DlError::Kind::state, free ? "nfbm: double free" : "nfbm: slot not free");
  if (free) {
    bits_[slot / 8] |= Byte(1 << (slot % 8));
    --occupied_;
  } else {
    bits_[slot / 8] &= Byte(~(1 << (slot % 8)));
    ++occupied_;
  }
  std::uint64_t part = part_of(slot);
  if (std::find(dirty_parts_.begin(), dirty_parts_.end(), part) == dirty_parts_.end())
    dirty_parts_.push_back(part);
}

std::vector<BlockAddr> Nfbm::read_column(std::uint64_t col) {
  std::array<Byte, kBlockSize> blk;
  store_.read_block(col_base_ + col, blk);
  std::array<Byte, kMetaPayload> payload;
  unseal_meta_block(key_, blk, payload);
  std::vector<BlockAddr> entries(rows_);
  for (std::uint64_t r = 0; r < rows_; ++r) entries[r] = get_u64(payload, kAddrSize * r);
  return entries;
}

void Nfbm::write_column(std::uint64_t col, const std::vector<BlockAddr>& entries, Rng& rng) {
  std::array<Byte, kMetaPayload> payload{};
  for (std::uint64_t r = 0; r < rows_; ++r) put_u64(payload, kAddrSize * r, entries[r]);
  std::array<Byte, kBlockSize> blk;
  seal_meta_block(key_, payload, rng, blk);
  store_.write_block(col_base_ + col, blk);
}

void Nfbm::write_part(std::uint64_t part, Rng& rng) {
  std::array<Byte, kMetaPayload> payload;
  std::memcpy(payload.data(), bits_.data() + part * kMetaPayload, kMetaPayload);
  std::array<Byte, kBlockSize> blk;
  seal_meta_block(key_, payload, rng, blk);
  store_.write_block(bitmap_base_ + part_pos_[part], blk);
}

void Nfbm::init_empty(Rng& rng) {
  std::vector<BlockAddr> junk(rows_);
  for (std::uint64_t c = 0; c < cols_; ++c) {
    for (auto& e : junk) e = rng.next_u64();
    write_column(c, junk, rng);
  }
  std::fill(bits_.begin(), bits_.end(), 0xFF);
  occupied_ = 0;
  for (std::uint64_t i = 0; i < bitmap_blocks_; ++i) part_pos_[i] = slot_part_[i] = i;
  for (std::uint64_t p = 0; p < bitmap_blocks_; ++p) write_part(p, rng);
  dirty_parts_.clear();
}

void Nfbm::load_bitmap(const std::vector<std::uint64_t>& positions) {
  if (positions.size() != bitmap_blocks_)
    throw DlError(DlError::Kind::corrupt, "nfbm: bad bitmap position array");
  part_pos_ = positions;
  for (std::uint64_t p = 0; p < bitmap_blocks_; ++p) slot_part_[part_pos_[p]] = p;
  std::array<Byte, kBlockSize> blk;
  std::array<Byte, kMetaPayload> payload;
  occupied_ = 0;
  for (std::uint64_t p = 0; p < bitmap_blocks_; ++p) {
    store_.read_block(bitmap_base_ + part_pos_[p], blk);
    unseal_meta_block(key_, blk, payload);
    std::memcpy(bits_.data() + p * kMetaPayload, payload.data(), kMetaPayload);
  }
  for (std::uint64_t s = 0; s < slots_; ++s)
    if (!slot_free(static_cast<NfbmSlot>(s))) ++occupied_;
}

std::vector<std::pair<NfbmSlot, BlockAddr>> Nfbm::scan_occupied() {
  std::vector<std::pair<NfbmSlot, BlockAddr>> out;
  for (std::uint64_t c = 0; c < cols_; ++c) {
    std::vector<BlockAddr> entries;
    bool loaded = false;
    for (std::uint64_t r = 0; r < rows_; ++r) {
      NfbmSlot slot = static_cast<NfbmSlot>(c * rows_ + r);
      if (slot_free(slot)) continue;
      if (!loaded) {
        entries = read_column(c);
        loaded = true;
      }
      out.emplace_back(slot, entries[r]);
    }
  }
  return out;
}

std::optional<NfbmSlot> Nfbm::add_single_probe(BlockAddr addr, Rng& rng) {
  NfbmSlot slot = static_cast<NfbmSlot>(rng.random_below(slots_));
  std::uint64_t col = slot / rows_;
  std::uint64_t row = slot % rows_;
  if (slot_free(slot)) {
    auto entries = read_column(col);
    entries[row] = addr;
    write_column(col, entries, rng);
    stage_bit(slot, false);
    return slot;
  }
  // Occupied: reencrypt the probed slot's column, state unchanged.
  std::array<Byte, kBlockSize> blk;
  store_.read_block(col_base_ + col, blk);
  reencrypt_meta_block(key_, blk, rng);
  store_.write_block(col_base_ + col, blk);
  return std::nullopt;
}

NfbmSlot Nfbm::add_with_retry(BlockAddr addr, Rng& rng) {
  if (occupied_ >= slots_) throw DlError(DlError::Kind::state, "nfbm: full");
  NfbmSlot slot;
  do {
    slot = static_cast<NfbmSlot>(rng.random_below(slots_));
  } while (!slot_free(slot));
  std::uint64_t col = slot / rows_;
  std::uint64_t row = slot % rows_;
  auto entries = read_column(col);
  entries[row] = addr;
  write_column(col, entries, rng);
  stage_bit(slot, false);
  return slot;
}

std::vector<std::pair<NfbmSlot, BlockAddr>> Nfbm::sample_occupied(std::uint64_t k, Rng& rng) {
  if (occupied_ < k)
    throw DlError(DlError::Kind::state, "nfbm: fewer occupied slots than sample size");
  std::unordered_set<NfbmSlot> chosen;
  std::vector<std::pair<NfbmSlot, BlockAddr>> out;
  out.reserve(k);
  while (out.size() < k) {
    NfbmSlot slot = static_cast<NfbmSlot>(rng.random_below(slots_));
    if (slot_free(slot) || chosen.count(slot)) continue;
    chosen.insert(slot);
    auto entries = read_column(slot / rows_);
    out.emplace_back(slot, entries[slot % rows_]);
  }
  return out;
}

void Nfbm::mark_free(NfbmSlot slot) { stage_bit(slot, true); }

void Nfbm::reencrypt_random_column(Rng& rng) {
  std::uint64_t col = rng.random_below(cols_);
  std::array<Byte, kBlockSize> blk;
  store_.read_block(col_base_ + col, blk);
  reencrypt_meta_block(key_, blk, rng);
  store_.write_block(col_base_ + col, blk);
}

void Nfbm::reencrypt_column_of(NfbmSlot slot, Rng& rng) {
  std::uint64_t col = slot / rows_;
  std::array<Byte, kBlockSize> blk;
  store_.read_block(col_base_ + col, blk);
  reencrypt_meta_block(key_, blk, rng);
  store_.write_block(col_base_ + col, blk);
}

void Nfbm::flush_bitmap_round(Rng& rng) {
  // Pick the two parts to write: the dirty ones, padded with random parts.
  std::uint64_t a, b;
  if (dirty_parts_.size() >= 2) {
    a = dirty_parts_[0];
    b = dirty_parts_[1];
  } else if (dirty_parts_.size() == 1) {
    a = dirty_parts_[0];
    b = slot_part_[rng.random_below(bitmap_blocks_)];
  } else {
    a = rng.random_below(bitmap_blocks_);
    b = slot_part_[rng.random_below(bitmap_blocks_)];
  }
  dirty_parts_.clear();

  // Relocate: swap the two parts' region slots, then write both. With a
  // one-block region this degenerates to rewriting the block twice.
  std::swap(part_pos_[a], part_pos_[b]);
  slot_part_[part_pos_[a]] = a;
  slot_part_[part_pos_[b]] = b;
  write_part(a, rng);
  write_part(b, rng);
}

}  // namespace datalair
