#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "datalair/block_store.hpp"
#include "datalair/crypto.hpp"
#include "datalair/fbm.hpp"
#include "datalair/geometry.hpp"
#include "datalair/nfbm.hpp"
#include "datalair/pfl.hpp"

namespace datalair {

struct OramConfig {
  unsigned k = kSelectRounds;
  // §4.2 selection (free set + random set over all blocks) kept only so the
  // harness can demonstrate the bias it leaks; no N-FBM maintenance.
  bool legacy_selection = false;
};

// Bounded FIFO of pending hidden writes. A rewrite of a stashed id replaces
// the payload in place, keeping its queue age.
class Stash {
 public:
  struct Entry {
    std::uint64_t id;
    std::vector<Byte> data;
  };

  void put(std::uint64_t id, ConstBytes data);
  bool contains(std::uint64_t id) const;
  const std::vector<Byte>* get(std::uint64_t id) const;
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  std::size_t high_water() const { return high_water_; }
  const std::deque<Entry>& entries() const { return entries_; }
  const Entry& front() const { return entries_.front(); }
  void pop_front();
  void restore(std::vector<Entry> entries);

 private:
  std::deque<Entry> entries_;
  std::size_t high_water_ = 0;
};

// State persisted in the stash region across unmount/mount.
struct HiddenImage {
  std::vector<Stash::Entry> stash;
  std::vector<std::uint64_t> bitmap_positions;
  // Map entries newer than their on-disk leaf.
  struct OverlayEntry {
    std::uint64_t id;
    BlockAddr addr;
    std::uint32_t coord;
  };
  std::vector<OverlayEntry> overlay;
};

// Region write counts of one hidden write / simulation on this geometry.
RegionCounts hidden_step_shape(std::uint64_t depth, unsigned k, bool legacy = false);

class OramState {
 public:
  using InitObserver = std::function<void(std::uint64_t, ConstBytes)>;

  OramState(BlockStore& store, const VolumeKey& hid_key, Pfl& pfl, OramConfig cfg);

  // Fresh device (FBM/N-FBM regions unwritten): builds the dense position
  // map tree, then fills all N/2 logical blocks with random data through
  // the write path.
  void init(Rng& rng, const InitObserver& observer = nullptr);

  // Rebuild in-memory state from disk plus the persisted image.
  void mount(const HiddenImage& image);
  HiddenImage export_image() const;

  void write(std::uint64_t id, ConstBytes data, Rng& rng);
  std::vector<Byte> read(std::uint64_t id);
  void simulate(Rng& rng);

  // One serve-mode protocol run outside any write (test/measurement hook
  // mirroring the spec's select_free_blocks operation).
  struct RunStats {
    unsigned free_picked = 0;
    unsigned served = 0;
  };
  RunStats select_free_blocks(Rng& rng);

  // Public-volume insert support (§5.2): one selection run; the sealed
  // public block lands either on a consumed truly-free pick or, when no
  // free item was picked, on an evicted apparently-free block whose hidden
  // payload moves to the stash. Returns the physical address used.
  BlockAddr public_acquire(ConstBytes ciphertext, const std::array<Byte, kIvSize>& iv,
                           Rng& rng);

  void note_public_block(BlockAddr addr);

  // Records every data-region block index written while set (HWA tests).
  void set_touch_log(std::vector<std::uint64_t>* log) { touch_log_ = log; }

  std::uint64_t depth() const { return shape_.depth; }
  std::uint64_t logical() const { return shape_.logical; }
  const TreeShape& tree_shape() const { return shape_; }
  Stash& stash() { return stash_; }
  const Stash& stash() const { return stash_; }
  Fbm& fbm() { return fbm_; }
  Nfbm& nfbm() { return nfbm_; }
  std::optional<BlockAddr> mapped_addr(std::uint64_t id) const;
  std::uint64_t owner_of(BlockAddr addr) const { return owner_.at(addr); }
  bool is_hidden_data_owner(std::uint64_t owner) const { return owner < shape_.logical; }

  // Structural invariants (audit / tests); throws DlError on violation.
  void check_invariants(std::uint64_t public_mapped);

  static constexpr std::uint64_t kOwnerFree = ~std::uint64_t{0};
  static constexpr std::uint64_t kOwnerPublic = ~std::uint64_t{0} - 1;

 private:
  struct MapEntry {
    BlockAddr addr = kNullAddr;
    std::uint32_t coord = kNullCoord;
  };
  struct Node {
    BlockAddr addr = kNullAddr;
    std::uint32_t coord = kNullCoord;
  };
  enum class RunMode { serve, node, public_insert };
  struct NodeCtx {
    ConstBytes payload;
    BlockAddr old_addr;
    std::uint32_t old_coord;
  };
  struct PublicCtx {
    ConstBytes ciphertext;
    std::array<Byte, kIvSize> iv;
  };
  struct RunOutcome {
    unsigned free_picked = 0;
    unsigned served = 0;
    BlockAddr acquired = kNullAddr;
    NfbmSlot acquired_slot = kNullCoord;
  };

  RunOutcome run_selection(RunMode mode, Rng& rng, const NodeCtx* node_ctx = nullptr,
                           const PublicCtx* pub_ctx = nullptr);
  RunOutcome run_selection_legacy(RunMode mode, Rng& rng, const NodeCtx* node_ctx = nullptr);

  void write_data_block(BlockAddr addr, ConstBytes plaintext, Rng& rng);
  void reencrypt_data_block(BlockAddr addr, Rng& rng);
  std::optional<FbmCompaction> serve_queue_head(FbmReceipt& receipt, NfbmSlot dest_slot,
                                                Rng& rng);
  void fixup_receipts(std::vector<FbmReceipt>& receipts, const FbmReceipt& victim,
                      const FbmCompaction& comp);
  void rewrite_path(std::uint64_t id, Rng& rng);
  std::vector<Byte> leaf_payload(std::uint64_t leaf_idx);
  std::vector<Byte> internal_payload(std::uint64_t level, std::uint64_t idx);
  void write_root_pointer(Rng& rng);
  BlockAddr read_root_pointer();
  void bootstrap_write(std::uint64_t id, ConstBytes data, Rng& rng);
  std::pair<BlockAddr, NfbmSlot> bootstrap_acquire(std::optional<MapEntry> old, Rng& rng);
  std::uint64_t node_owner_id(std::uint64_t level, std::uint64_t idx) const;
  std::uint64_t node_index_for(std::uint64_t leaf_idx, std::uint64_t level) const;

  BlockStore& store_;
  const VolumeKey& key_;
  Pfl& pfl_;
  OramConfig cfg_;
  const DeviceGeometry& geom_;
  TreeShape shape_;

  Fbm fbm_;
  Nfbm nfbm_;
  Stash stash_;

  std::vector<std::vector<Node>> nodes_;  // [level][index]
  std::vector<MapEntry> map_;             // logical id -> location
  std::vector<std::uint64_t> owner_;      // data block -> id / node id / free / public
  std::unordered_set<std::uint64_t> dirty_;
  std::vector<std::uint64_t>* touch_log_ = nullptr;
  bool initialized_ = false;
};

}  // namespace datalair
