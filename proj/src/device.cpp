#include "datalair/device.hpp"

#include <algorithm>
#include <cstring>
#include <unordered_set>

namespace datalair {

namespace {

constexpr char kSuperMagic[4] = {'D', 'L', 'R', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr char kKeycheckMagic[8] = {'D', 'L', 'P', 'U', 'B', 'K', 'C', '1'};
constexpr char kStashMagic[8] = {'D', 'L', 'S', 'T', 'A', 'S', 'H', '1'};

// Superblock layout (plaintext; identical structure in both modes):
//   0  magic          "DLR1"
//   4  version        u32
//   8  data_blocks    u64
//  16  pub_logical    u64
//  24  hid_logical    u64
//  32  block_size     u32
//  36  addr_size      u32
//  40  k              u32
//  44  policy         u8
//  45  period         u32 (unaligned, little-endian)
//  49  legacy         u8
//  50  kdf log_n,r,p  u8 x3
//  53  salt           16 bytes
void encode_superblock(Bytes blk, const DeviceConfig& cfg, ConstBytes salt) {
  std::fill(blk.begin(), blk.end(), Byte{0});
  std::memcpy(blk.data(), kSuperMagic, 4);
  put_u32(blk, 4, kVersion);
  put_u64(blk, 8, cfg.data_blocks);
  put_u64(blk, 16, cfg.pub_logical);
  put_u64(blk, 24, cfg.hid_logical);
  put_u32(blk, 32, kBlockSize);
  put_u32(blk, 36, kAddrSize);
  put_u32(blk, 40, cfg.k);
  blk[44] = static_cast<Byte>(cfg.policy);
  put_u32(blk, 45, cfg.period);
  blk[49] = cfg.legacy ? 1 : 0;
  blk[50] = cfg.kdf.log_n;
  blk[51] = cfg.kdf.r;
  blk[52] = cfg.kdf.p;
  std::memcpy(blk.data() + 53, salt.data(), kSaltSize);
}

struct SuperInfo {
  DeviceConfig cfg;
  std::array<Byte, kSaltSize> salt;
};

SuperInfo decode_superblock(ConstBytes blk) {
  if (std::memcmp(blk.data(), kSuperMagic, 4) != 0)
    throw DlError(DlError::Kind::corrupt, "not a datalair device");
  if (get_u32(blk, 4) != kVersion)
    throw DlError(DlError::Kind::corrupt, "unsupported device version");
  SuperInfo info;
  info.cfg.data_blocks = get_u64(blk, 8);
  info.cfg.pub_logical = get_u64(blk, 16);
  info.cfg.hid_logical = get_u64(blk, 24);
  if (get_u32(blk, 32) != kBlockSize || get_u32(blk, 36) != kAddrSize)
    throw DlError(DlError::Kind::corrupt, "unsupported block layout");
  info.cfg.k = get_u32(blk, 40);
  info.cfg.policy = static_cast<HiddenPolicy>(blk[44]);
  info.cfg.period = get_u32(blk, 45);
  info.cfg.legacy = blk[49] != 0;
  info.cfg.kdf = {blk[50], blk[51], blk[52]};
  std::memcpy(info.salt.data(), blk.data() + 53, kSaltSize);
  return info;
}

// Streams a byte payload across the stash index blocks (0..13), sealing
// each block separately so the first can be probed for the magic alone.
class IndexWriter {
 public:
  std::vector<Byte> buf;
  void u32(std::uint32_t v) {
    std::size_t off = buf.size();
    buf.resize(off + 4);
    put_u32(buf, off, v);
  }
  void u64(std::uint64_t v) {
    std::size_t off = buf.size();
    buf.resize(off + 8);
    put_u64(buf, off, v);
  }
  void bytes(ConstBytes b) { buf.insert(buf.end(), b.begin(), b.end()); }
};

class IndexReader {
 public:
  explicit IndexReader(std::vector<Byte> data) : data_(std::move(data)) {}
  std::uint32_t u32() {
    check(4);
    auto v = get_u32(data_, pos_);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    check(8);
    auto v = get_u64(data_, pos_);
    pos_ += 8;
    return v;
  }
  void bytes(Bytes out) {
    check(out.size());
    std::memcpy(out.data(), data_.data() + pos_, out.size());
    pos_ += out.size();
  }

 private:
  void check(std::size_t n) {
    if (pos_ + n > data_.size())
      throw DlError(DlError::Kind::corrupt, "stash index truncated");
  }
  std::vector<Byte> data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::vector<Byte>> encode_hidden_image(const HiddenImage& image,
                                                   const VolumeKey& hid_key, Rng& rng) {
  if (image.stash.size() > kStashCapacity)
    throw DlError(DlError::Kind::state, "stash image too large");

  // Per-slot IVs live in the index; slots carry bare ciphertext blocks.
  std::vector<std::array<Byte, kIvSize>> slot_ivs(kStashCapacity);
  for (auto& iv : slot_ivs) iv = rng.iv();

  IndexWriter w;
  w.bytes(ConstBytes(reinterpret_cast<const Byte*>(kStashMagic), 8));
  w.u32(static_cast<std::uint32_t>(image.stash.size()));
  for (std::size_t i = 0; i < kStashCapacity; ++i) {
    w.u64(i < image.stash.size() ? image.stash[i].id : kNullAddr);
    w.bytes(slot_ivs[i]);
  }
  w.u32(static_cast<std::uint32_t>(image.bitmap_positions.size()));
  for (auto p : image.bitmap_positions) w.u64(p);
  w.u32(static_cast<std::uint32_t>(image.overlay.size()));
  for (auto& e : image.overlay) {
    w.u64(e.id);
    w.u64(e.addr);
    w.u32(e.coord);
  }
  if (w.buf.size() > kStashIndexBlocks * kMetaPayload)
    throw DlError(DlError::Kind::full, "hidden state image exceeds stash index capacity");
  // Random tail so unused space is indistinguishable from use.
  std::size_t used = w.buf.size();
  w.buf.resize(kStashIndexBlocks * kMetaPayload);
  rng.fill(Bytes(w.buf.data() + used, w.buf.size() - used));

  std::vector<std::vector<Byte>> blocks(kStashRegionBlocks, std::vector<Byte>(kBlockSize));
  for (std::size_t b = 0; b < kStashIndexBlocks; ++b)
    seal_meta_block(hid_key, ConstBytes(w.buf.data() + b * kMetaPayload, kMetaPayload), rng,
                    blocks[b]);
  for (std::size_t s = 0; s < kStashCapacity; ++s) {
    auto& out = blocks[kStashIndexBlocks + s];
    if (s < image.stash.size()) {
      ctr_xcrypt(hid_key, slot_ivs[s], image.stash[s].data, out);
    } else {
      rng.fill(out);
    }
  }
  return blocks;
}

std::optional<HiddenImage> decode_hidden_image(BlockStore& store, const VolumeKey& hid_key) {
  const auto& geom = store.geometry();
  std::vector<Byte> stream(kStashIndexBlocks * kMetaPayload);
  std::array<Byte, kBlockSize> blk;
  for (std::size_t b = 0; b < kStashIndexBlocks; ++b) {
    store.read_block(geom.off_stash + b, blk);
    unseal_meta_block(hid_key, blk, Bytes(stream.data() + b * kMetaPayload, kMetaPayload));
  }
  if (std::memcmp(stream.data(), kStashMagic, 8) != 0) return std::nullopt;

  IndexReader r(std::move(stream));
  std::array<Byte, 8> magic;
  r.bytes(magic);
  HiddenImage img;
  std::uint32_t stash_count = r.u32();
  if (stash_count > kStashCapacity)
    throw DlError(DlError::Kind::corrupt, "stash image count out of range");
  std::vector<std::uint64_t> ids(kStashCapacity);
  std::vector<std::array<Byte, kIvSize>> ivs(kStashCapacity);
  for (std::size_t i = 0; i < kStashCapacity; ++i) {
    ids[i] = r.u64();
    r.bytes(ivs[i]);
  }
  std::uint32_t bitmap_count = r.u32();
  if (bitmap_count != geom.bitmap_blocks)
    throw DlError(DlError::Kind::corrupt, "bitmap position array size mismatch");
  img.bitmap_positions.resize(bitmap_count);
  for (auto& p : img.bitmap_positions) p = r.u64();
  std::uint32_t overlay_count = r.u32();
  img.overlay.resize(overlay_count);
  for (auto& e : img.overlay) {
    e.id = r.u64();
    e.addr = r.u64();
    e.coord = r.u32();
  }

  img.stash.resize(stash_count);
  for (std::size_t s = 0; s < stash_count; ++s) {
    store.read_block(geom.off_stash + kStashIndexBlocks + s, blk);
    img.stash[s].id = ids[s];
    img.stash[s].data.resize(kBlockSize);
    ctr_xcrypt(hid_key, ivs[s], blk, img.stash[s].data);
  }
  return img;
}

Device::Device(BlockStore& store, DeviceConfig cfg, VolumeKey pub_key)
    : store_(store), cfg_(cfg), pub_key_(pub_key), pfl_(store, pub_key_, store.geometry()) {
  hidden_tree_depth_ = TreeShape::make(store.geometry().oram_logical()).depth;
}

void Device::format(BlockStore& store, const DeviceConfig& cfg, const std::string& pub_pw,
                    const std::optional<std::string>& hid_pw, Rng& rng) {
  const auto& geom = store.geometry();
  if (geom.data_blocks != cfg.data_blocks || geom.pub_logical != cfg.pub_logical ||
      geom.hid_logical != cfg.hid_logical)
    throw DlError(DlError::Kind::usage, "store geometry does not match device config");

  std::array<Byte, kSaltSize> salt;
  rng.fill(salt);
  VolumeKey pub_key = derive_key(pub_pw, salt, KeyRole::pub, cfg.kdf);
  // ONLY_PUB devices run the same hidden initialization under a throwaway
  // key that is never stored; the resulting bytes are distributed exactly
  // like a populated hidden volume.
  VolumeKey hid_key =
      hid_pw ? derive_key(*hid_pw, salt, KeyRole::hid, cfg.kdf) : random_key(KeyRole::hid, rng);

  std::array<Byte, kBlockSize> blk;
  encode_superblock(blk, cfg, salt);
  store.write_block(geom.off_superblock, blk);

  std::array<Byte, kMetaPayload> payload{};
  std::memcpy(payload.data(), kKeycheckMagic, 8);
  seal_meta_block(pub_key, payload, rng, blk);
  store.write_block(geom.off_keycheck, blk);

  // Randomize the data region before structures claim blocks.
  std::array<Byte, kBlockSize> noise;
  for (std::uint64_t i = 0; i < geom.data_blocks; ++i) {
    rng.fill(noise);
    store.write_block(geom.off_data + i, noise);
  }

  Device dev(store, cfg, pub_key);
  dev.pfl_.init_fresh(rng);
  dev.ppm_.assign(cfg.pub_logical, kNullAddr);
  for (std::uint64_t p = 0; p < geom.ppm_blocks; ++p) dev.write_ppm_page(p, rng);

  OramConfig ocfg{cfg.k, cfg.legacy};
  dev.oram_.emplace(store, hid_key, dev.pfl_, ocfg);
  dev.oram_->init(rng);

  auto image = dev.oram_->export_image();
  auto blocks = hid_pw ? encode_hidden_image(image, hid_key, rng)
                       : std::vector<std::vector<Byte>>();
  for (std::size_t b = 0; b < kStashRegionBlocks; ++b) {
    if (hid_pw) {
      store.write_block(geom.off_stash + b, blocks[b]);
    } else {
      rng.fill(blk);
      store.write_block(geom.off_stash + b, blk);
    }
  }
}

DeviceConfig Device::read_config(BlockStore& store) {
  std::array<Byte, kBlockSize> blk;
  store.read_block(store.geometry().off_superblock, blk);
  return decode_superblock(blk).cfg;
}

std::unique_ptr<Device> Device::mount(BlockStore& store, const std::string& pub_pw,
                                      const std::optional<std::string>& hid_pw) {
  std::array<Byte, kBlockSize> blk;
  store.read_block(store.geometry().off_superblock, blk);
  SuperInfo info = decode_superblock(blk);
  if (info.cfg.data_blocks != store.geometry().data_blocks ||
      info.cfg.pub_logical != store.geometry().pub_logical ||
      info.cfg.hid_logical != store.geometry().hid_logical)
    throw DlError(DlError::Kind::corrupt, "geometry mismatch: superblock differs");

  VolumeKey pub_key = derive_key(pub_pw, info.salt, KeyRole::pub, info.cfg.kdf);
  store.read_block(store.geometry().off_keycheck, blk);
  std::array<Byte, kMetaPayload> payload;
  unseal_meta_block(pub_key, blk, payload);
  if (std::memcmp(payload.data(), kKeycheckMagic, 8) != 0)
    throw DlError(DlError::Kind::auth, "wrong public password");

  auto dev = std::unique_ptr<Device>(new Device(store, info.cfg, pub_key));
  dev->load_public_state();
  if (hid_pw) {
    VolumeKey hid_key = derive_key(*hid_pw, info.salt, KeyRole::hid, info.cfg.kdf);
    dev->unlock_hidden(hid_key);
  }
  dev->mounted_ = true;
  return dev;
}

void Device::load_public_state() {
  pfl_.load();
  const auto& geom = store_.geometry();
  ppm_.assign(cfg_.pub_logical, kNullAddr);
  ppm_mapped_ = 0;
  std::array<Byte, kBlockSize> blk;
  std::array<Byte, kMetaPayload> payload;
  for (std::uint64_t p = 0; p < geom.ppm_blocks; ++p) {
    store_.read_block(geom.off_ppm + p, blk);
    unseal_meta_block(pub_key_, blk, payload);
    for (std::uint64_t i = 0; i < kAddrsPerMetaBlock; ++i) {
      std::uint64_t id = p * kAddrsPerMetaBlock + i;
      if (id >= cfg_.pub_logical) break;
      ppm_[id] = get_u64(payload, i * kAddrSize);
      if (ppm_[id] != kNullAddr) ++ppm_mapped_;
    }
  }
}

void Device::unlock_hidden(const VolumeKey& hid_key) {
  auto image = decode_hidden_image(store_, hid_key);
  if (!image) return;  // wrong hidden password or no hidden volume: identical
  hid_key_ = hid_key;
  OramConfig ocfg{cfg_.k, cfg_.legacy};
  oram_.emplace(store_, *hid_key_, pfl_, ocfg);
  oram_->mount(*image);
  for (std::uint64_t id = 0; id < cfg_.pub_logical; ++id)
    if (ppm_[id] != kNullAddr) oram_->note_public_block(ppm_[id]);
}

void Device::ensure_mounted() const {
  if (!mounted_) throw DlError(DlError::Kind::state, "device not mounted");
}

void Device::random_fill_block(BlockAddr abs_idx, Rng& rng) {
  std::array<Byte, kBlockSize> blk;
  rng.fill(blk);
  store_.write_block(abs_idx, blk);
}

void Device::write_ppm_page(std::uint64_t page, Rng& rng) {
  std::array<Byte, kMetaPayload> payload{};
  for (std::uint64_t i = 0; i < kAddrsPerMetaBlock; ++i) {
    std::uint64_t id = page * kAddrsPerMetaBlock + i;
    put_u64(payload, i * kAddrSize, id < cfg_.pub_logical ? ppm_[id] : kNullAddr);
  }
  std::array<Byte, kBlockSize> blk;
  seal_meta_block(pub_key_, payload, rng, blk);
  store_.write_block(store_.geometry().off_ppm + page, blk);
}

void Device::ppm_set(std::uint64_t id, BlockAddr addr, Rng& rng) {
  if (ppm_[id] == kNullAddr && addr != kNullAddr) ++ppm_mapped_;
  ppm_[id] = addr;
  write_ppm_page(id / kAddrsPerMetaBlock, rng);
}

BlockAddr Device::ppm_read_slot(std::uint64_t id) {
  const auto& geom = store_.geometry();
  std::array<Byte, kBlockSize> blk;
  std::array<Byte, kMetaPayload> payload;
  store_.read_block(geom.off_ppm + id / kAddrsPerMetaBlock, blk);
  unseal_meta_block(pub_key_, blk, payload);
  return get_u64(payload, (id % kAddrsPerMetaBlock) * kAddrSize);
}

std::vector<Byte> Device::public_read(std::uint64_t id) {
  ensure_mounted();
  if (id >= cfg_.pub_logical)
    throw DlError(DlError::Kind::unmapped, "public read: id out of range");
  BlockAddr addr = ppm_read_slot(id);
  if (addr == kNullAddr) throw DlError(DlError::Kind::unmapped, "public read: id unmapped");
  std::array<Byte, kBlockSize> ct, plain;
  store_.read_block(store_.geometry().off_data + addr, ct);
  ctr_xcrypt(pub_key_, pfl_.iv_of(addr), ct, plain);
  return std::vector<Byte>(plain.begin(), plain.end());
}

void Device::public_insert(std::uint64_t id, ConstBytes data, Rng& rng) {
  const auto& geom = store_.geometry();
  auto iv = rng.iv();
  std::array<Byte, kBlockSize> ct;
  ctr_xcrypt(pub_key_, iv, data, ct);

  BlockAddr addr;
  if (oram_) {
    addr = oram_->public_acquire(ct, iv, rng);
  } else {
    // No hidden key: draw uniformly from the public free list and simulate
    // the selection protocol's touches with fresh randomness.
    addr = pfl_.sample_fma(rng);
    store_.write_block(geom.off_data + addr, ct);
    pfl_.put_iv(addr, iv, rng);
    for (unsigned i = 0; i + 1 < cfg_.k; ++i) {
      BlockAddr decoy;
      do {
        decoy = pfl_.sample_fma(rng);
      } while (decoy == addr);
      random_fill_block(geom.off_data + decoy, rng);
      pfl_.put_iv(decoy, rng.iv(), rng);
    }
    for (unsigned i = 0; i < cfg_.k; ++i) {
      random_fill_block(geom.off_fbm_col + rng.random_below(geom.matrix_cols), rng);
      random_fill_block(geom.off_fbm_hdr, rng);
      random_fill_block(geom.off_nfbm_col + rng.random_below(geom.matrix_cols), rng);
      random_fill_block(geom.off_bitmap + rng.random_below(geom.bitmap_blocks), rng);
      random_fill_block(geom.off_bitmap + rng.random_below(geom.bitmap_blocks), rng);
    }
  }
  pfl_.fma_remove(addr, rng);
  ppm_set(id, addr, rng);
}

WriteTrace Device::public_write(std::uint64_t id, ConstBytes data, Rng& rng) {
  ensure_mounted();
  if (data.size() != kBlockSize)
    throw DlError(DlError::Kind::usage, "public write: payload must be one block");
  if (id >= cfg_.pub_logical)
    throw DlError(DlError::Kind::full, "public volume full: id beyond logical size");

  store_.begin_trace("public_write");
  bool update = ppm_[id] != kNullAddr;
  if (update) {
    BlockAddr addr = ppm_[id];
    auto iv = rng.iv();
    std::array<Byte, kBlockSize> ct;
    ctr_xcrypt(pub_key_, iv, data, ct);
    store_.write_block(store_.geometry().off_data + addr, ct);
    pfl_.put_iv(addr, iv, rng);
  } else {
    public_insert(id, data, rng);
  }

  ++public_writes_seen_;
  bool fire = false;
  switch (cfg_.policy) {
    case HiddenPolicy::every_write: fire = true; break;
    case HiddenPolicy::period: fire = public_writes_seen_ % std::max<std::uint32_t>(cfg_.period, 1) == 0; break;
    case HiddenPolicy::updates_only: fire = update; break;
  }
  if (fire) hidden_step(rng);
  return store_.end_trace();
}

void Device::hidden_step(Rng& rng) {
  if (oram_) {
    if (!oram_->stash().empty()) {
      auto entry = oram_->stash().front();
      oram_->write(entry.id, entry.data, rng);
    } else {
      oram_->simulate(rng);
    }
  } else {
    keyless_simulate(rng);
  }
}

void Device::keyless_simulate(Rng& rng) {
  const auto& geom = store_.geometry();
  for (std::uint64_t run = 0; run < hidden_tree_depth_ + 1; ++run) {
    for (unsigned round = 0; round < cfg_.k; ++round) {
      BlockAddr a = pfl_.sample_fma(rng);
      random_fill_block(geom.off_data + a, rng);
      pfl_.put_iv(a, rng.iv(), rng);
      random_fill_block(geom.off_fbm_col + rng.random_below(geom.matrix_cols), rng);
      random_fill_block(geom.off_fbm_hdr, rng);
      if (!cfg_.legacy) {
        random_fill_block(geom.off_nfbm_col + rng.random_below(geom.matrix_cols), rng);
        random_fill_block(geom.off_bitmap + rng.random_below(geom.bitmap_blocks), rng);
        random_fill_block(geom.off_bitmap + rng.random_below(geom.bitmap_blocks), rng);
      }
    }
  }
  random_fill_block(geom.off_rootptr, rng);
}

void Device::hidden_write(std::uint64_t id, ConstBytes data) {
  ensure_mounted();
  if (!oram_) throw DlError(DlError::Kind::unmapped, "io error: block write failed");
  if (id >= cfg_.hid_logical)
    throw DlError(DlError::Kind::full, "hidden volume full: id beyond logical size");
  oram_->stash().put(id, data);
}

std::vector<Byte> Device::hidden_read(std::uint64_t id) {
  ensure_mounted();
  if (!oram_) throw DlError(DlError::Kind::unmapped, "io error: block read failed");
  if (id >= cfg_.hid_logical)
    throw DlError(DlError::Kind::unmapped, "hidden read: id out of range");
  return oram_->read(id);
}

WriteTrace Device::flush_hidden(Rng& rng) {
  ensure_mounted();
  if (!oram_ || oram_->stash().empty())
    throw DlError(DlError::Kind::state, "no pending hidden write to flush");
  // Pair with a synthetic in-place update of an existing public block so
  // the coupling invariant (hidden steps ride on public writes) holds.
  std::uint64_t pub_id = kNullAddr;
  for (std::uint64_t id = 0; id < cfg_.pub_logical; ++id)
    if (ppm_[id] != kNullAddr) {
      pub_id = id;
      break;
    }
  if (pub_id == kNullAddr)
    throw DlError(DlError::Kind::state, "flush requires at least one mapped public block");
  auto current = public_read(pub_id);
  auto saved_policy = cfg_.policy;
  cfg_.policy = HiddenPolicy::every_write;
  auto trace = public_write(pub_id, current, rng);
  cfg_.policy = saved_policy;
  return trace;
}

WriteTrace Device::unmount(Rng& rng) {
  ensure_mounted();
  const auto& geom = store_.geometry();
  store_.begin_trace("unmount");
  if (oram_) {
    auto blocks = encode_hidden_image(oram_->export_image(), *hid_key_, rng);
    for (std::size_t b = 0; b < kStashRegionBlocks; ++b)
      store_.write_block(geom.off_stash + b, blocks[b]);
  } else {
    std::array<Byte, kBlockSize> blk;
    for (std::size_t b = 0; b < kStashRegionBlocks; ++b) {
      rng.fill(blk);
      store_.write_block(geom.off_stash + b, blk);
    }
  }
  mounted_ = false;
  return store_.end_trace();
}

void Device::audit() const {
  pfl_.verify_bijection(ppm_mapped_);
  std::unordered_set<BlockAddr> mapped;
  for (std::uint64_t id = 0; id < cfg_.pub_logical; ++id) {
    if (ppm_[id] == kNullAddr) continue;
    if (ppm_[id] >= cfg_.data_blocks)
      throw DlError(DlError::Kind::corrupt, "ppm: address out of range");
    if (!mapped.insert(ppm_[id]).second)
      throw DlError(DlError::Kind::corrupt, "ppm: duplicate mapping");
    if (pfl_.fma_index_of(ppm_[id]) != kNullAddr)
      throw DlError(DlError::Kind::corrupt, "ppm: mapped block still in FMA");
  }
  if (cfg_.pub_logical + cfg_.hid_logical > cfg_.data_blocks / 2)
    throw DlError(DlError::Kind::corrupt, "volume caps exceed half the device");
  if (oram_) const_cast<Device*>(this)->oram_->check_invariants(ppm_mapped_);
}

}  // namespace datalair
