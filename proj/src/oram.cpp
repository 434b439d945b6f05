#include "datalair/oram.hpp"

#include <algorithm>
#include <cstring>

namespace datalair {

namespace {
constexpr char kRootMagic[8] = {'D', 'L', 'R', 'O', 'O', 'T', '0', '1'};
}

void Stash::put(std::uint64_t id, ConstBytes data) {
  if (data.size() != kBlockSize)
    throw DlError(DlError::Kind::usage, "stash: payload must be one block");
  for (auto& e : entries_) {
    if (e.id == id) {
      e.data.assign(data.begin(), data.end());
      return;
    }
  }
  if (entries_.size() >= kStashCapacity)
    throw DlError(DlError::Kind::full, "stash overflow (capacity 50)");
  entries_.push_back({id, std::vector<Byte>(data.begin(), data.end())});
  high_water_ = std::max(high_water_, entries_.size());
}

bool Stash::contains(std::uint64_t id) const {
  for (auto& e : entries_)
    if (e.id == id) return true;
  return false;
}

const std::vector<Byte>* Stash::get(std::uint64_t id) const {
  for (auto& e : entries_)
    if (e.id == id) return &e.data;
  return nullptr;
}

void Stash::pop_front() { entries_.pop_front(); }

void Stash::restore(std::vector<Entry> entries) {
  entries_.assign(std::make_move_iterator(entries.begin()),
                  std::make_move_iterator(entries.end()));
  high_water_ = std::max(high_water_, entries_.size());
}

RegionCounts hidden_step_shape(std::uint64_t depth, unsigned k, bool legacy) {
  RegionCounts c{};
  const std::uint32_t runs = static_cast<std::uint32_t>(depth) + 1;
  c[static_cast<std::size_t>(Region::data)] = k * runs;
  c[static_cast<std::size_t>(Region::rma)] = k * runs;
  c[static_cast<std::size_t>(Region::fbm_col)] = k * runs;
  c[static_cast<std::size_t>(Region::fbm_hdr)] = k * runs;
  if (!legacy) {
    c[static_cast<std::size_t>(Region::nfbm_col)] = k * runs;
    c[static_cast<std::size_t>(Region::bitmap)] = 2 * k * runs;
  }
  c[static_cast<std::size_t>(Region::rootptr)] = 1;
  return c;
}

OramState::OramState(BlockStore& store, const VolumeKey& hid_key, Pfl& pfl, OramConfig cfg)
    : store_(store), key_(hid_key), pfl_(pfl), cfg_(cfg), geom_(store.geometry()),
      shape_(TreeShape::make(store.geometry().oram_logical())),
      fbm_(store, key_, geom_.off_fbm_col, geom_.off_fbm_hdr, geom_.matrix_rows,
           geom_.matrix_cols),
      nfbm_(store, key_, geom_.off_nfbm_col, geom_.matrix_rows, geom_.matrix_cols,
            geom_.off_bitmap, geom_.bitmap_blocks) {
  map_.resize(shape_.logical);
  owner_.assign(geom_.data_blocks, kOwnerFree);
  nodes_.resize(shape_.depth);
  for (std::uint64_t l = 0; l < shape_.depth; ++l) nodes_[l].resize(shape_.level_nodes[l]);
}

std::uint64_t OramState::node_owner_id(std::uint64_t level, std::uint64_t idx) const {
  std::uint64_t base = shape_.logical;
  for (std::uint64_t l = 0; l < level; ++l) base += shape_.level_nodes[l];
  return base + idx;
}

std::uint64_t OramState::node_index_for(std::uint64_t leaf_idx, std::uint64_t level) const {
  std::uint64_t idx = leaf_idx;
  for (std::uint64_t l = 0; l < level; ++l) idx /= kInternalFanout;
  return idx;
}

void OramState::write_data_block(BlockAddr addr, ConstBytes plaintext, Rng& rng) {
  if (plaintext.size() != kBlockSize)
    throw DlError(DlError::Kind::state, "oram: data payload must be one block");
  auto iv = rng.iv();
  std::array<Byte, kBlockSize> ct;
  ctr_xcrypt(key_, iv, plaintext, ct);
  store_.write_block(geom_.off_data + addr, ct);
  pfl_.put_iv(addr, iv, rng);
  if (touch_log_) touch_log_->push_back(addr);
}

void OramState::reencrypt_data_block(BlockAddr addr, Rng& rng) {
  std::uint64_t owner = owner_.at(addr);
  if (owner == kOwnerPublic)
    throw DlError(DlError::Kind::state, "oram: refusing to reencrypt a public block");
  std::array<Byte, kBlockSize> buf;
  if (owner == kOwnerFree) {
    rng.fill(buf);
    store_.write_block(geom_.off_data + addr, buf);
    pfl_.put_iv(addr, rng.iv(), rng);
  } else {
    store_.read_block(geom_.off_data + addr, buf);
    std::array<Byte, kBlockSize> plain;
    ctr_xcrypt(key_, pfl_.iv_of(addr), buf, plain);
    auto iv = rng.iv();
    ctr_xcrypt(key_, iv, plain, buf);
    store_.write_block(geom_.off_data + addr, buf);
    pfl_.put_iv(addr, iv, rng);
  }
  if (touch_log_) touch_log_->push_back(addr);
}

std::optional<FbmCompaction> OramState::serve_queue_head(FbmReceipt& receipt,
                                                         NfbmSlot dest_slot, Rng& rng) {
  const Stash::Entry& head = stash_.front();
  const std::uint64_t qid = head.id;
  const BlockAddr dest = receipt.addr;
  write_data_block(dest, head.data, rng);

  MapEntry old = map_[qid];
  std::optional<FbmCompaction> comp;
  if (old.addr != kNullAddr) {
    fbm_.replace_in_place(receipt, old.addr, rng);
    owner_[old.addr] = kOwnerFree;
    if (old.coord != kNullCoord) nfbm_.mark_free(old.coord);
  } else {
    comp = fbm_.invalidate_with_compaction(receipt, rng);
  }
  map_[qid] = {dest, dest_slot};
  owner_[dest] = qid;
  dirty_.insert(qid);
  stash_.pop_front();
  return comp;
}

void OramState::fixup_receipts(std::vector<FbmReceipt>& receipts, const FbmReceipt& victim,
                               const FbmCompaction& comp) {
  if (comp.donor_was_victim) return;
  for (auto& r : receipts) {
    if (!r.resolved && r.row == comp.donor_row && r.col == comp.donor_col) {
      r.row = victim.row;
      r.col = victim.col;
    }
  }
}

OramState::RunOutcome OramState::run_selection(RunMode mode, Rng& rng, const NodeCtx* node_ctx,
                                               const PublicCtx* pub_ctx) {
  const unsigned k = cfg_.k;
  auto free_set = fbm_.select_distinct(k, rng);
  auto occ_set = nfbm_.sample_occupied(k, rng);

  // Uniform random order over the combined set; the first k are picked.
  struct Item {
    bool is_free;
    unsigned idx;
  };
  std::vector<Item> items;
  items.reserve(2 * k);
  for (unsigned i = 0; i < k; ++i) items.push_back({true, i});
  for (unsigned i = 0; i < k; ++i) items.push_back({false, i});
  for (std::size_t i = items.size(); i > 1; --i)
    std::swap(items[i - 1], items[rng.random_below(i)]);

  // Node acquisitions may not fail: if the picked half contains no free
  // item (p = 1/252 at k=5), swap a random pick for a random free leftover.
  if (mode == RunMode::node) {
    bool any_free = false;
    for (unsigned i = 0; i < k; ++i) any_free |= items[i].is_free;
    if (!any_free) {
      unsigned pick_pos = static_cast<unsigned>(rng.random_below(k));
      unsigned free_pos = k + static_cast<unsigned>(rng.random_below(k));
      std::swap(items[pick_pos], items[free_pos]);
    }
  }

  bool any_free_picked = false;
  for (unsigned i = 0; i < k; ++i) any_free_picked |= items[i].is_free;

  RunOutcome out;
  for (unsigned round = 0; round < k; ++round) {
    const Item it = items[round];
    if (it.is_free) {
      ++out.free_picked;
      FbmReceipt& r = free_set[it.idx];
      if (mode == RunMode::serve && !stash_.empty()) {
        auto probe = nfbm_.add_single_probe(r.addr, rng);
        if (probe) {
          FbmReceipt victim = r;
          auto comp = serve_queue_head(r, *probe, rng);
          if (comp) fixup_receipts(free_set, victim, *comp);
          ++out.served;
        } else {
          // Probe failed: the block goes back where it came from; the
          // probed N-FBM slot was already reencrypted by the probe.
          reencrypt_data_block(r.addr, rng);
          fbm_.replace_in_place(r, r.addr, rng);
        }
        nfbm_.flush_bitmap_round(rng);
      } else if (mode == RunMode::node && out.acquired == kNullAddr) {
        NfbmSlot slot = nfbm_.add_with_retry(r.addr, rng);
        write_data_block(r.addr, node_ctx->payload, rng);
        fbm_.replace_in_place(r, node_ctx->old_addr, rng);
        if (node_ctx->old_coord != kNullCoord) nfbm_.mark_free(node_ctx->old_coord);
        nfbm_.flush_bitmap_round(rng);
        out.acquired = r.addr;
        out.acquired_slot = slot;
      } else if (mode == RunMode::public_insert && out.acquired == kNullAddr) {
        store_.write_block(geom_.off_data + r.addr, pub_ctx->ciphertext);
        if (touch_log_) touch_log_->push_back(r.addr);
        pfl_.put_iv(r.addr, pub_ctx->iv, rng);
        owner_[r.addr] = kOwnerPublic;
        FbmReceipt victim = r;
        auto comp = fbm_.invalidate_with_compaction(r, rng);
        fixup_receipts(free_set, victim, comp);
        nfbm_.reencrypt_random_column(rng);
        nfbm_.flush_bitmap_round(rng);
        out.acquired = r.addr;
      } else {
        // Leftover free pick in this round: churn and return.
        reencrypt_data_block(r.addr, rng);
        fbm_.replace_in_place(r, r.addr, rng);
        nfbm_.reencrypt_random_column(rng);
        nfbm_.flush_bitmap_round(rng);
      }
    } else {
      const bool evict = mode == RunMode::public_insert && !any_free_picked && round == k - 1;
      if (evict) {
        // No truly-free pick: the public write lands on an apparently-free
        // block sampled from the N-FBM; its hidden payload moves to stash.
        std::pair<NfbmSlot, BlockAddr> victim;
        do {
          victim = nfbm_.sample_occupied(1, rng)[0];
        } while (!is_hidden_data_owner(owner_.at(victim.second)));
        const std::uint64_t vid = owner_[victim.second];

        std::array<Byte, kBlockSize> buf, plain;
        store_.read_block(geom_.off_data + victim.second, buf);
        ctr_xcrypt(key_, pfl_.iv_of(victim.second), buf, plain);
        if (!stash_.contains(vid)) stash_.put(vid, plain);  // stashed copy is newer

        nfbm_.mark_free(victim.first);
        map_[vid] = {kNullAddr, kNullCoord};
        dirty_.insert(vid);
        owner_[victim.second] = kOwnerPublic;

        store_.write_block(geom_.off_data + victim.second, pub_ctx->ciphertext);
        if (touch_log_) touch_log_->push_back(victim.second);
        pfl_.put_iv(victim.second, pub_ctx->iv, rng);
        nfbm_.reencrypt_column_of(victim.first, rng);
        nfbm_.flush_bitmap_round(rng);
        out.acquired = victim.second;
      } else {
        reencrypt_data_block(occ_set[it.idx].second, rng);
        nfbm_.reencrypt_random_column(rng);
        nfbm_.flush_bitmap_round(rng);
      }
    }
  }

  // Protocol step 4: unpicked free-set members go back to their slots.
  for (auto& r : free_set)
    if (!r.resolved) fbm_.replace_in_place(r, r.addr, rng);
  return out;
}

OramState::RunOutcome OramState::run_selection_legacy(RunMode mode, Rng& rng,
                                                      const NodeCtx* node_ctx) {
  const unsigned k = cfg_.k;
  auto free_set = fbm_.select_distinct(k, rng);

  // Random set: k blocks uniform over the whole ORAM, duplicates redrawn.
  std::unordered_set<BlockAddr> used;
  for (auto& r : free_set) used.insert(r.addr);
  std::vector<BlockAddr> random_set;
  while (random_set.size() < k) {
    BlockAddr a = rng.random_below(geom_.data_blocks);
    if (used.count(a)) continue;
    used.insert(a);
    random_set.push_back(a);
  }

  struct Item {
    bool is_free;
    unsigned idx;
  };
  std::vector<Item> items;
  for (unsigned i = 0; i < k; ++i) items.push_back({true, i});
  for (unsigned i = 0; i < k; ++i) items.push_back({false, i});
  for (std::size_t i = items.size(); i > 1; --i)
    std::swap(items[i - 1], items[rng.random_below(i)]);
  if (mode == RunMode::node) {
    bool any_free = false;
    for (unsigned i = 0; i < k; ++i) any_free |= items[i].is_free;
    if (!any_free) {
      unsigned pick_pos = static_cast<unsigned>(rng.random_below(k));
      unsigned free_pos = k + static_cast<unsigned>(rng.random_below(k));
      std::swap(items[pick_pos], items[free_pos]);
    }
  }

  RunOutcome out;
  for (unsigned round = 0; round < k; ++round) {
    const Item it = items[round];
    if (!it.is_free) {
      reencrypt_data_block(random_set[it.idx], rng);
      continue;
    }
    ++out.free_picked;
    FbmReceipt& r = free_set[it.idx];
    if (mode == RunMode::serve && !stash_.empty()) {
      FbmReceipt victim = r;
      auto comp = serve_queue_head(r, kNullCoord, rng);
      if (comp) fixup_receipts(free_set, victim, *comp);
      ++out.served;
    } else if (mode == RunMode::node && out.acquired == kNullAddr) {
      write_data_block(r.addr, node_ctx->payload, rng);
      fbm_.replace_in_place(r, node_ctx->old_addr, rng);
      out.acquired = r.addr;
      out.acquired_slot = kNullCoord;
    } else {
      reencrypt_data_block(r.addr, rng);
      fbm_.replace_in_place(r, r.addr, rng);
    }
  }
  for (auto& r : free_set)
    if (!r.resolved) fbm_.replace_in_place(r, r.addr, rng);
  return out;
}

std::vector<Byte> OramState::leaf_payload(std::uint64_t leaf_idx) {
  std::vector<Byte> payload(kBlockSize, 0);
  std::uint64_t first = leaf_idx * kLeafFanout;
  for (std::uint64_t i = 0; i < kLeafFanout; ++i) {
    std::uint64_t id = first + i;
    std::size_t off = i * kLeafEntrySize;
    if (id < shape_.logical) {
      put_u64(payload, off, id);
      put_u64(payload, off + 8, map_[id].addr);
      put_u32(payload, off + 16, map_[id].coord);
    } else {
      put_u64(payload, off, kNullAddr);
      put_u64(payload, off + 8, kNullAddr);
      put_u32(payload, off + 16, kNullCoord);
    }
  }
  return payload;
}

std::vector<Byte> OramState::internal_payload(std::uint64_t level, std::uint64_t idx) {
  std::vector<Byte> payload(kBlockSize, 0);
  std::uint64_t child_count = shape_.level_nodes[level - 1];
  std::uint64_t first = idx * kInternalFanout;
  for (std::uint64_t i = 0; i < kInternalFanout; ++i) {
    std::uint64_t child = first + i;
    put_u64(payload, i * kAddrSize,
            child < child_count ? nodes_[level - 1][child].addr : kNullAddr);
  }
  return payload;
}

void OramState::write_root_pointer(Rng& rng) {
  std::array<Byte, kMetaPayload> payload{};
  std::memcpy(payload.data(), kRootMagic, 8);
  put_u64(payload, 8, nodes_[shape_.depth - 1][0].addr);
  std::array<Byte, kBlockSize> blk;
  seal_meta_block(key_, payload, rng, blk);
  store_.write_block(geom_.off_rootptr, blk);
}

BlockAddr OramState::read_root_pointer() {
  std::array<Byte, kBlockSize> blk;
  store_.read_block(geom_.off_rootptr, blk);
  std::array<Byte, kMetaPayload> payload;
  unseal_meta_block(key_, blk, payload);
  if (std::memcmp(payload.data(), kRootMagic, 8) != 0)
    throw DlError(DlError::Kind::corrupt, "oram: root pointer not decryptable");
  BlockAddr root = get_u64(payload, 8);
  if (root >= geom_.data_blocks)
    throw DlError(DlError::Kind::corrupt, "oram: root pointer out of range");
  return root;
}

std::pair<BlockAddr, NfbmSlot> OramState::bootstrap_acquire(std::optional<MapEntry> old,
                                                            Rng& rng) {
  auto [addr, rcpt] = fbm_.select_random(rng);
  if (old) {
    fbm_.replace_in_place(rcpt, old->addr, rng);
    owner_[old->addr] = kOwnerFree;
    if (old->coord != kNullCoord) nfbm_.mark_free(old->coord);
  } else {
    fbm_.invalidate_with_compaction(rcpt, rng);
  }
  NfbmSlot slot = kNullCoord;
  if (!cfg_.legacy_selection) {
    slot = nfbm_.add_with_retry(addr, rng);
    nfbm_.flush_bitmap_round(rng);
  }
  return {addr, slot};
}

void OramState::bootstrap_write(std::uint64_t id, ConstBytes data, Rng& rng) {
  MapEntry old = map_[id];
  auto [dest, slot] = bootstrap_acquire(
      old.addr != kNullAddr ? std::optional<MapEntry>(old) : std::nullopt, rng);
  write_data_block(dest, data, rng);
  map_[id] = {dest, slot};
  owner_[dest] = id;
  dirty_.insert(id);

  std::uint64_t leaf_idx = id / kLeafFanout;
  for (std::uint64_t level = 0; level < shape_.depth; ++level) {
    std::uint64_t idx = node_index_for(leaf_idx, level);
    Node old_node = nodes_[level][idx];
    auto [naddr, nslot] = bootstrap_acquire(MapEntry{old_node.addr, old_node.coord}, rng);
    nodes_[level][idx] = {naddr, nslot};
    owner_[naddr] = node_owner_id(level, idx);
    auto payload = level == 0 ? leaf_payload(idx) : internal_payload(level, idx);
    write_data_block(naddr, payload, rng);
    if (level == 0) {
      std::uint64_t first = idx * kLeafFanout;
      for (std::uint64_t i = 0; i < kLeafFanout; ++i) dirty_.erase(first + i);
    }
  }
  write_root_pointer(rng);
}

void OramState::init(Rng& rng, const InitObserver& observer) {
  if (initialized_) throw DlError(DlError::Kind::state, "oram: already initialized");

  std::vector<BlockAddr> all(geom_.data_blocks);
  for (std::uint64_t i = 0; i < all.size(); ++i) all[i] = i;
  fbm_.init_full(all, rng);
  nfbm_.init_empty(rng);

  // Dense tree, bottom-up so internal nodes can reference child addresses.
  for (std::uint64_t level = 0; level < shape_.depth; ++level) {
    for (std::uint64_t idx = 0; idx < shape_.level_nodes[level]; ++idx) {
      auto [addr, slot] = bootstrap_acquire(std::nullopt, rng);
      nodes_[level][idx] = {addr, slot};
      owner_[addr] = node_owner_id(level, idx);
      auto payload = level == 0 ? leaf_payload(idx) : internal_payload(level, idx);
      write_data_block(addr, payload, rng);
    }
  }
  write_root_pointer(rng);
  initialized_ = true;

  // Fill half the device through the write path. The full protocol needs
  // at least k occupied N-FBM entries; bootstrap writes cover the gap.
  std::vector<Byte> data(kBlockSize);
  for (std::uint64_t id = 0; id < shape_.logical; ++id) {
    rng.fill(data);
    if (observer) observer(id, data);
    if (!cfg_.legacy_selection && nfbm_.occupied_count() < cfg_.k) {
      bootstrap_write(id, data, rng);
    } else {
      write(id, data, rng);
    }
  }
}

void OramState::write(std::uint64_t id, ConstBytes data, Rng& rng) {
  if (!initialized_) throw DlError(DlError::Kind::state, "oram: not initialized");
  if (id >= shape_.logical) throw DlError(DlError::Kind::usage, "oram: id out of range");
  stash_.put(id, data);
  if (cfg_.legacy_selection) {
    run_selection_legacy(RunMode::serve, rng);
  } else {
    run_selection(RunMode::serve, rng);
  }
  rewrite_path(id, rng);
  write_root_pointer(rng);
}

OramState::RunStats OramState::select_free_blocks(Rng& rng) {
  if (!initialized_) throw DlError(DlError::Kind::state, "oram: not initialized");
  RunOutcome o = cfg_.legacy_selection ? run_selection_legacy(RunMode::serve, rng)
                                       : run_selection(RunMode::serve, rng);
  return {o.free_picked, o.served};
}

void OramState::rewrite_path(std::uint64_t id, Rng& rng) {
  std::uint64_t leaf_idx = id / kLeafFanout;
  for (std::uint64_t level = 0; level < shape_.depth; ++level) {
    std::uint64_t idx = node_index_for(leaf_idx, level);
    Node old_node = nodes_[level][idx];
    auto payload = level == 0 ? leaf_payload(idx) : internal_payload(level, idx);
    NodeCtx ctx{payload, old_node.addr, old_node.coord};
    RunOutcome o = cfg_.legacy_selection ? run_selection_legacy(RunMode::node, rng, &ctx)
                                         : run_selection(RunMode::node, rng, &ctx);
    owner_[old_node.addr] = kOwnerFree;
    owner_[o.acquired] = node_owner_id(level, idx);
    nodes_[level][idx] = {o.acquired, o.acquired_slot};
    if (level == 0) {
      std::uint64_t first = idx * kLeafFanout;
      for (std::uint64_t i = 0; i < kLeafFanout; ++i) dirty_.erase(first + i);
    }
  }
}

std::vector<Byte> OramState::read(std::uint64_t id) {
  if (!initialized_) throw DlError(DlError::Kind::state, "oram: not initialized");
  if (id >= shape_.logical) throw DlError(DlError::Kind::usage, "oram: id out of range");
  if (const auto* stashed = stash_.get(id)) return *stashed;
  if (map_[id].addr == kNullAddr) throw DlError(DlError::Kind::unmapped, "oram: id unmapped");

  // Descend from the root pointer; each node is one block read.
  BlockAddr cur = read_root_pointer();
  std::uint64_t leaf_idx = id / kLeafFanout;
  std::array<Byte, kBlockSize> buf, plain;
  for (std::uint64_t level = shape_.depth; level-- > 0;) {
    store_.read_block(geom_.off_data + cur, buf);
    ctr_xcrypt(key_, pfl_.iv_of(cur), buf, plain);
    if (level > 0) {
      std::uint64_t child = node_index_for(leaf_idx, level - 1) % kInternalFanout;
      cur = get_u64(plain, child * kAddrSize);
      if (cur >= geom_.data_blocks)
        throw DlError(DlError::Kind::corrupt, "oram: bad child pointer");
    } else {
      std::uint64_t slot = id % kLeafFanout;
      BlockAddr leaf_addr = get_u64(plain, slot * kLeafEntrySize + 8);
      if (!dirty_.count(id) && leaf_addr != map_[id].addr)
        throw DlError(DlError::Kind::corrupt, "oram: leaf entry does not match map");
    }
  }
  BlockAddr addr = map_[id].addr;
  store_.read_block(geom_.off_data + addr, buf);
  ctr_xcrypt(key_, pfl_.iv_of(addr), buf, plain);
  return std::vector<Byte>(plain.begin(), plain.end());
}

void OramState::simulate(Rng& rng) {
  if (!initialized_) throw DlError(DlError::Kind::state, "oram: not initialized");
  const unsigned k = cfg_.k;
  for (std::uint64_t run = 0; run < shape_.depth + 1; ++run) {
    for (unsigned round = 0; round < k; ++round) {
      reencrypt_data_block(pfl_.sample_fma(rng), rng);
      fbm_.reencrypt_random(rng);
      if (!cfg_.legacy_selection) {
        nfbm_.reencrypt_random_column(rng);
        nfbm_.flush_bitmap_round(rng);
      }
    }
  }
  write_root_pointer(rng);
}

BlockAddr OramState::public_acquire(ConstBytes ciphertext, const std::array<Byte, kIvSize>& iv,
                                    Rng& rng) {
  if (!initialized_) throw DlError(DlError::Kind::state, "oram: not initialized");
  if (cfg_.legacy_selection)
    throw DlError(DlError::Kind::state, "oram: public volume unsupported on legacy devices");
  PublicCtx ctx{ciphertext, iv};
  RunOutcome o = run_selection(RunMode::public_insert, rng, nullptr, &ctx);
  if (o.acquired == kNullAddr)
    throw DlError(DlError::Kind::state, "oram: public acquire produced no block");
  return o.acquired;
}

void OramState::note_public_block(BlockAddr addr) { owner_.at(addr) = kOwnerPublic; }

std::optional<BlockAddr> OramState::mapped_addr(std::uint64_t id) const {
  if (id >= shape_.logical || map_[id].addr == kNullAddr) return std::nullopt;
  return map_[id].addr;
}

HiddenImage OramState::export_image() const {
  HiddenImage img;
  img.stash.assign(stash_.entries().begin(), stash_.entries().end());
  img.bitmap_positions = nfbm_.bitmap_positions();
  img.overlay.reserve(dirty_.size());
  for (auto id : dirty_) img.overlay.push_back({id, map_[id].addr, map_[id].coord});
  return img;
}

void OramState::mount(const HiddenImage& image) {
  if (initialized_) throw DlError(DlError::Kind::state, "oram: already initialized");
  nfbm_.load_bitmap(image.bitmap_positions);
  auto occupied = nfbm_.scan_occupied();
  std::unordered_map<BlockAddr, NfbmSlot> addr_slot;
  addr_slot.reserve(occupied.size());
  for (auto& [slot, addr] : occupied) addr_slot[addr] = slot;

  auto slot_of = [&](BlockAddr addr) -> NfbmSlot {
    auto it = addr_slot.find(addr);
    if (it == addr_slot.end())
      throw DlError(DlError::Kind::corrupt, "oram: occupied block missing from N-FBM");
    return it->second;
  };

  // Rebuild the node table from the tree itself, top-down.
  BlockAddr root = read_root_pointer();
  nodes_[shape_.depth - 1][0] = {root, slot_of(root)};
  std::array<Byte, kBlockSize> buf, plain;
  for (std::uint64_t level = shape_.depth; level-- > 1;) {
    for (std::uint64_t idx = 0; idx < shape_.level_nodes[level]; ++idx) {
      store_.read_block(geom_.off_data + nodes_[level][idx].addr, buf);
      ctr_xcrypt(key_, pfl_.iv_of(nodes_[level][idx].addr), buf, plain);
      std::uint64_t child_count = shape_.level_nodes[level - 1];
      for (std::uint64_t i = 0; i < kInternalFanout; ++i) {
        std::uint64_t child = idx * kInternalFanout + i;
        if (child >= child_count) break;
        BlockAddr caddr = get_u64(plain, i * kAddrSize);
        if (caddr >= geom_.data_blocks)
          throw DlError(DlError::Kind::corrupt, "oram: bad child pointer at mount");
        nodes_[level - 1][child] = {caddr, slot_of(caddr)};
      }
    }
  }
  for (std::uint64_t level = 0; level < shape_.depth; ++level)
    for (std::uint64_t idx = 0; idx < shape_.level_nodes[level]; ++idx)
      owner_[nodes_[level][idx].addr] = node_owner_id(level, idx);

  // Leaves hold the persistent map; the overlay supersedes stale entries.
  for (std::uint64_t leaf = 0; leaf < shape_.level_nodes[0]; ++leaf) {
    store_.read_block(geom_.off_data + nodes_[0][leaf].addr, buf);
    ctr_xcrypt(key_, pfl_.iv_of(nodes_[0][leaf].addr), buf, plain);
    for (std::uint64_t i = 0; i < kLeafFanout; ++i) {
      std::uint64_t id = leaf * kLeafFanout + i;
      if (id >= shape_.logical) break;
      BlockAddr addr = get_u64(plain, i * kLeafEntrySize + 8);
      std::uint32_t coord = get_u32(plain, i * kLeafEntrySize + 16);
      map_[id] = {addr, coord};
      if (addr != kNullAddr) owner_.at(addr) = id;
    }
  }
  for (const auto& e : image.overlay) {
    MapEntry stale = map_[e.id];
    if (stale.addr != kNullAddr && owner_.at(stale.addr) == e.id)
      owner_[stale.addr] = kOwnerFree;
    map_[e.id] = {e.addr, e.coord};
    if (e.addr != kNullAddr) owner_.at(e.addr) = e.id;
    dirty_.insert(e.id);
  }
  stash_.restore(image.stash);
  initialized_ = true;
}

void OramState::check_invariants(std::uint64_t public_mapped) {
  auto valid = fbm_.scan_valid();
  std::unordered_set<BlockAddr> free_set(valid.begin(), valid.end());
  if (free_set.size() != valid.size())
    throw DlError(DlError::Kind::corrupt, "fbm: duplicate valid entries");
  for (auto a : valid)
    if (a >= geom_.data_blocks) throw DlError(DlError::Kind::corrupt, "fbm: address range");

  if (!cfg_.legacy_selection) {
    auto occ = nfbm_.scan_occupied();
    std::unordered_set<BlockAddr> occ_set;
    for (auto& [slot, addr] : occ) {
      if (addr >= geom_.data_blocks)
        throw DlError(DlError::Kind::corrupt, "nfbm: address range");
      if (!occ_set.insert(addr).second)
        throw DlError(DlError::Kind::corrupt, "nfbm: duplicate occupied address");
      if (free_set.count(addr))
        throw DlError(DlError::Kind::corrupt, "freemaps: FBM/N-FBM sets intersect");
    }
    if (free_set.size() + occ_set.size() + public_mapped != geom_.data_blocks)
      throw DlError(DlError::Kind::corrupt, "freemaps: occupancy accounting broken");
    for (std::uint64_t id = 0; id < shape_.logical; ++id) {
      if (map_[id].addr == kNullAddr) continue;
      if (!occ_set.count(map_[id].addr))
        throw DlError(DlError::Kind::corrupt, "oram: mapped block not occupied");
    }
  }
  if (stash_.size() > kStashCapacity)
    throw DlError(DlError::Kind::corrupt, "stash: over capacity");
  pfl_.verify_bijection(public_mapped);
}

}  // namespace datalair
