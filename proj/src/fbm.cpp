#include "datalair/fbm.hpp"

#include <algorithm>
#include <unordered_set>

namespace datalair {

Fbm::Fbm(BlockStore& store, const VolumeKey& key, BlockAddr col_base, BlockAddr hdr_block,
         std::uint64_t rows, std::uint64_t cols)
    : store_(store), key_(key), col_base_(col_base), hdr_block_(hdr_block), rows_(rows),
      cols_(cols) {
  if (rows_ * kAddrSize > kMetaPayload || rows_ * 4 > kMetaPayload)
    throw DlError(DlError::Kind::usage, "fbm: shape does not fit block payload");
}

std::vector<std::uint32_t> Fbm::read_header() {
  std::array<Byte, kBlockSize> blk;
  store_.read_block(hdr_block_, blk);
  std::array<Byte, kMetaPayload> payload;
  unseal_meta_block(key_, blk, payload);
  std::vector<std::uint32_t> counts(rows_);
  for (std::uint64_t r = 0; r < rows_; ++r) counts[r] = get_u32(payload, 4 * r);
  return counts;
}

void Fbm::write_header(const std::vector<std::uint32_t>& counts, Rng& rng) {
  std::array<Byte, kMetaPayload> payload{};
  for (std::uint64_t r = 0; r < rows_; ++r) put_u32(payload, 4 * r, counts[r]);
  std::array<Byte, kBlockSize> blk;
  seal_meta_block(key_, payload, rng, blk);
  store_.write_block(hdr_block_, blk);
}

std::vector<BlockAddr> Fbm::read_column(std::uint64_t col) {
  std::array<Byte, kBlockSize> blk;
  store_.read_block(col_base_ + col, blk);
  std::array<Byte, kMetaPayload> payload;
  unseal_meta_block(key_, blk, payload);
  std::vector<BlockAddr> entries(rows_);
  for (std::uint64_t r = 0; r < rows_; ++r) entries[r] = get_u64(payload, kAddrSize * r);
  return entries;
}

void Fbm::write_column(std::uint64_t col, const std::vector<BlockAddr>& entries, Rng& rng) {
  std::array<Byte, kMetaPayload> payload{};
  for (std::uint64_t r = 0; r < rows_; ++r) put_u64(payload, kAddrSize * r, entries[r]);
  std::array<Byte, kBlockSize> blk;
  seal_meta_block(key_, payload, rng, blk);
  store_.write_block(col_base_ + col, blk);
}

void Fbm::init_full(const std::vector<BlockAddr>& addrs, Rng& rng) {
  const std::uint64_t capacity = rows_ * cols_;
  const std::uint64_t n = addrs.size();
  if (n > capacity) throw DlError(DlError::Kind::usage, "fbm: too many addresses");
  const std::uint64_t invalid = capacity - n;

  std::vector<BlockAddr> shuffled = addrs;
  for (std::uint64_t i = n; i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[rng.random_below(i)]);

  // Row-major position p = row * cols + col; positions < invalid hold junk.
  std::vector<std::uint32_t> counts(rows_);
  for (std::uint64_t r = 0; r < rows_; ++r) {
    std::uint64_t inv_here = 0;
    if (invalid > r * cols_) inv_here = std::min(cols_, invalid - r * cols_);
    counts[r] = static_cast<std::uint32_t>(cols_ - inv_here);
  }

  std::vector<std::vector<BlockAddr>> columns(cols_, std::vector<BlockAddr>(rows_, kNullAddr));
  std::uint64_t next = 0;
  for (std::uint64_t r = 0; r < rows_; ++r)
    for (std::uint64_t c = 0; c < cols_; ++c) {
      if (r * cols_ + c < invalid) {
        columns[c][r] = rng.next_u64();  // junk, never addressed
      } else {
        columns[c][r] = shuffled[next++];
      }
    }
  for (std::uint64_t c = 0; c < cols_; ++c) write_column(c, columns[c], rng);
  write_header(counts, rng);
}

std::uint64_t Fbm::valid_count() {
  auto hdr = read_header();
  std::uint64_t total = 0;
  for (auto c : hdr) total += c;
  return total;
}

std::pair<std::uint64_t, std::uint64_t> Fbm::locate_rank(const std::vector<std::uint32_t>& hdr,
                                                         std::uint64_t rank) const {
  std::uint64_t seen = 0;
  for (std::uint64_t r = 0; r < rows_; ++r) {
    if (rank < seen + hdr[r]) {
      // Valid entries occupy the last hdr[r] columns of row r.
      std::uint64_t j = rank - seen;
      std::uint64_t col = cols_ - hdr[r] + j;
      return {r, col};
    }
    seen += hdr[r];
  }
  throw DlError(DlError::Kind::state, "fbm: rank beyond valid count");
}

std::pair<BlockAddr, FbmReceipt> Fbm::select_at_rank(std::uint64_t rank) {
  auto hdr = read_header();
  auto [row, col] = locate_rank(hdr, rank);
  auto entries = read_column(col);
  FbmReceipt rcpt{row, col, entries[row], false};
  return {rcpt.addr, rcpt};
}

std::pair<BlockAddr, FbmReceipt> Fbm::select_random(Rng& rng) {
  auto hdr = read_header();
  std::uint64_t total = 0;
  for (auto c : hdr) total += c;
  if (total == 0) throw DlError(DlError::Kind::state, "fbm: empty");
  auto [row, col] = locate_rank(hdr, rng.random_below(total));
  auto entries = read_column(col);
  FbmReceipt rcpt{row, col, entries[row], false};
  return {rcpt.addr, rcpt};
}

std::vector<FbmReceipt> Fbm::select_distinct(std::uint64_t k, Rng& rng) {
  auto hdr = read_header();
  std::uint64_t total = 0;
  for (auto c : hdr) total += c;
  if (total < k) throw DlError(DlError::Kind::state, "fbm: fewer valid entries than draws");
  std::unordered_set<std::uint64_t> ranks;
  while (ranks.size() < k) ranks.insert(rng.random_below(total));
  std::vector<FbmReceipt> out;
  out.reserve(k);
  for (auto rank : ranks) {
    auto [row, col] = locate_rank(hdr, rank);
    auto entries = read_column(col);
    out.push_back(FbmReceipt{row, col, entries[row], false});
  }
  return out;
}

FbmCompaction Fbm::invalidate_with_compaction(FbmReceipt& receipt, Rng& rng) {
  if (receipt.resolved) throw DlError(DlError::Kind::state, "fbm: stale receipt");
  auto hdr = read_header();
  if (receipt.col < cols_ - hdr[receipt.row])
    throw DlError(DlError::Kind::corrupt, "fbm: receipt slot no longer valid");

  // First valid entry row-major: first row with a nonzero count, leftmost
  // valid column of that row.
  std::uint64_t donor_row = 0;
  while (donor_row < rows_ && hdr[donor_row] == 0) ++donor_row;
  if (donor_row == rows_) throw DlError(DlError::Kind::state, "fbm: empty on compaction");
  std::uint64_t donor_col = cols_ - hdr[donor_row];

  FbmCompaction result{donor_row, donor_col,
                       donor_row == receipt.row && donor_col == receipt.col};

  auto victim_entries = read_column(receipt.col);
  if (!result.donor_was_victim) {
    BlockAddr donor_addr;
    if (donor_col == receipt.col) {
      donor_addr = victim_entries[donor_row];
    } else {
      donor_addr = read_column(donor_col)[donor_row];
    }
    victim_entries[receipt.row] = donor_addr;
  }
  write_column(receipt.col, victim_entries, rng);
  hdr[donor_row] -= 1;
  write_header(hdr, rng);
  receipt.resolved = true;
  return result;
}

void Fbm::replace_in_place(FbmReceipt& receipt, BlockAddr new_addr, Rng& rng) {
  if (receipt.resolved) throw DlError(DlError::Kind::state, "fbm: stale receipt");
  auto entries = read_column(receipt.col);
  entries[receipt.row] = new_addr;
  write_column(receipt.col, entries, rng);
  // Header plaintext unchanged; reencrypted so the trace matches compaction.
  auto hdr = read_header();
  write_header(hdr, rng);
  receipt.resolved = true;
}

void Fbm::reencrypt_random(Rng& rng) {
  std::uint64_t col = rng.random_below(cols_);
  std::array<Byte, kBlockSize> blk;
  store_.read_block(col_base_ + col, blk);
  reencrypt_meta_block(key_, blk, rng);
  store_.write_block(col_base_ + col, blk);
  store_.read_block(hdr_block_, blk);
  reencrypt_meta_block(key_, blk, rng);
  store_.write_block(hdr_block_, blk);
}

std::vector<BlockAddr> Fbm::scan_valid() {
  auto hdr = read_header();
  std::vector<std::vector<BlockAddr>> cols;
  cols.reserve(cols_);
  for (std::uint64_t c = 0; c < cols_; ++c) cols.push_back(read_column(c));
  std::vector<BlockAddr> out;
  for (std::uint64_t r = 0; r < rows_; ++r) {
    if (hdr[r] > cols_) throw DlError(DlError::Kind::corrupt, "fbm: header count exceeds row");
    for (std::uint64_t c = cols_ - hdr[r]; c < cols_; ++c) out.push_back(cols[c][r]);
  }
  return out;
}

}  // namespace datalair
