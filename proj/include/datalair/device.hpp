#pragma once

#include <memory>
#include <optional>
#include <string>

#include "datalair/block_store.hpp"
#include "datalair/crypto.hpp"
#include "datalair/oram.hpp"
#include "datalair/pfl.hpp"

namespace datalair {

// When the hidden step coupled to public writes fires.
enum class HiddenPolicy : std::uint8_t {
  every_write = 0,   // phi = 1
  period = 1,        // one hidden step every `period` public writes
  updates_only = 2,  // hidden steps ride only on in-place updates
};

struct DeviceConfig {
  std::uint64_t data_blocks = 0;
  std::uint64_t pub_logical = 0;
  std::uint64_t hid_logical = 0;
  unsigned k = kSelectRounds;
  HiddenPolicy policy = HiddenPolicy::every_write;
  std::uint32_t period = 1;
  bool legacy = false;
  KdfParams kdf{};

  static DeviceConfig defaults(std::uint64_t n) {
    DeviceConfig c;
    c.data_blocks = n;
    c.pub_logical = n / 4;
    c.hid_logical = n / 4;
    return c;
  }
  DeviceGeometry geometry() const {
    return DeviceGeometry::make(data_blocks, pub_logical, hid_logical);
  }
};

// The two-volume device mapper. A device formatted without a hidden
// password (ONLY_PUB) and one formatted with it (PUB_HID) expose identical
// public behavior; hidden metadata differs only in whether anyone holds the
// key that makes it meaningful.
class Device {
 public:
  static void format(BlockStore& store, const DeviceConfig& cfg, const std::string& pub_pw,
                     const std::optional<std::string>& hid_pw, Rng& rng);

  static std::unique_ptr<Device> mount(BlockStore& store, const std::string& pub_pw,
                                       const std::optional<std::string>& hid_pw);

  static DeviceConfig read_config(BlockStore& store);

  WriteTrace public_write(std::uint64_t id, ConstBytes data, Rng& rng);
  std::vector<Byte> public_read(std::uint64_t id);

  void hidden_write(std::uint64_t id, ConstBytes data);
  std::vector<Byte> hidden_read(std::uint64_t id);
  // Executes one pending hidden write paired with a synthetic public
  // update, so the coupling invariant holds even without fresh public I/O.
  WriteTrace flush_hidden(Rng& rng);

  WriteTrace unmount(Rng& rng);

  void audit() const;

  bool hidden_unlocked() const { return oram_.has_value(); }
  const DeviceConfig& config() const { return cfg_; }
  const DeviceGeometry& geometry() const { return store_.geometry(); }
  std::uint64_t public_mapped() const { return ppm_mapped_; }
  BlockAddr ppm_slot(std::uint64_t id) const { return ppm_.at(id); }  // cache view
  OramState* oram() { return oram_ ? &*oram_ : nullptr; }
  Pfl& pfl() { return pfl_; }
  std::uint64_t hidden_pending() const { return oram_ ? oram_->stash().size() : 0; }
  std::size_t stash_high_water() const { return oram_ ? oram_->stash().high_water() : 0; }

 private:
  Device(BlockStore& store, DeviceConfig cfg, VolumeKey pub_key);

  void load_public_state();
  void unlock_hidden(const VolumeKey& hid_key);
  void hidden_step(Rng& rng);
  void keyless_simulate(Rng& rng);
  void random_fill_block(BlockAddr abs_idx, Rng& rng);
  void ppm_set(std::uint64_t id, BlockAddr addr, Rng& rng);
  void write_ppm_page(std::uint64_t page, Rng& rng);
  BlockAddr ppm_read_slot(std::uint64_t id);  // literal one-block read
  void ensure_mounted() const;
  void public_insert(std::uint64_t id, ConstBytes data, Rng& rng);

  BlockStore& store_;
  DeviceConfig cfg_;
  VolumeKey pub_key_;
  std::optional<VolumeKey> hid_key_;
  Pfl pfl_;
  std::optional<OramState> oram_;
  std::vector<BlockAddr> ppm_;  // write-through cache; reads go to disk
  std::uint64_t ppm_mapped_ = 0;
  std::uint64_t public_writes_seen_ = 0;
  std::uint64_t hidden_tree_depth_ = 0;  // derivable from N alone (public)
  bool mounted_ = false;
};

// Stash-region wire format helpers (shared with tests).
std::vector<std::vector<Byte>> encode_hidden_image(const HiddenImage& image,
                                                   const VolumeKey& hid_key, Rng& rng);
std::optional<HiddenImage> decode_hidden_image(BlockStore& store, const VolumeKey& hid_key);

}  // namespace datalair
