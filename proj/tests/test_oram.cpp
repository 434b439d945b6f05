#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "datalair/oram.hpp"
#include "datalair/stats.hpp"

using namespace datalair;

namespace {

struct OramRig {
  DeviceGeometry g;
  MemBlockStore store;
  Rng rng;
  VolumeKey pub_key;
  VolumeKey hid_key;
  Pfl pfl;
  OramState oram;
  std::map<std::uint64_t, std::vector<Byte>> shadow;

  explicit OramRig(std::uint64_t n, std::uint64_t seed, OramConfig cfg = {})
      : g(DeviceGeometry::make(n, n / 4, n / 4)), store(g), rng(Rng::seeded(seed)),
        pub_key(random_key(KeyRole::pub, rng)), hid_key(random_key(KeyRole::hid, rng)),
        pfl(store, pub_key, g), oram(store, hid_key, pfl, cfg) {
    pfl.init_fresh(rng);
    oram.init(rng, [this](std::uint64_t id, ConstBytes data) {
      shadow[id] = std::vector<Byte>(data.begin(), data.end());
    });
  }

  std::vector<Byte> block_of(Byte fill) { return std::vector<Byte>(kBlockSize, fill); }
};

}  // namespace

TEST_CASE("stash: FIFO with supersede and hard capacity") {
  Stash stash;
  std::vector<Byte> blk(kBlockSize, 1);
  for (std::uint64_t i = 0; i < kStashCapacity; ++i) stash.put(i, blk);
  CHECK(stash.size() == kStashCapacity);
  stash.put(3, std::vector<Byte>(kBlockSize, 9));  // supersede, no growth
  CHECK(stash.size() == kStashCapacity);
  CHECK((*stash.get(3))[0] == 9);
  CHECK_THROWS_AS(stash.put(999, blk), DlError);
  CHECK(stash.front().id == 0);
  stash.pop_front();
  CHECK(stash.front().id == 1);
  CHECK(stash.high_water() == kStashCapacity);
}

TEST_CASE("oram: init fills half the device and everything is readable") {
  OramRig rig(1024, 42);
  const std::uint64_t logical = rig.oram.logical();
  CHECK(logical == 512);

  // Accounting identity: free + occupied == N.
  auto free_now = rig.oram.fbm().valid_count();
  auto occupied = rig.oram.nfbm().occupied_count();
  CHECK(free_now + occupied == 1024);
  // Occupied = logical data + tree nodes - whatever sits in the stash.
  CHECK(occupied == logical + rig.oram.tree_shape().total_nodes - rig.oram.stash().size());

  // Bitmap agreement.
  CHECK(rig.oram.nfbm().scan_occupied().size() == occupied);

  // Shadow oracle: every id reads back the random plaintext init wrote.
  for (std::uint64_t id = 0; id < logical; ++id) {
    auto got = rig.oram.read(id);
    REQUIRE(rig.shadow.count(id) == 1);
    CHECK(got == rig.shadow[id]);
  }
  rig.oram.check_invariants(0);
}

TEST_CASE("oram: write/read round-trip and relocation") {
  OramRig rig(1024, 43);
  auto data = rig.block_of(0xAB);
  rig.oram.write(7, data, rig.rng);
  CHECK(rig.oram.read(7) == data);

  // Every write that lands on disk relocates the id: the new block comes
  // from the free set, which is disjoint from the occupied one. Writes
  // whose payload is still in the stash keep the old mapping until served.
  int moved = 0, landed = 0, trials = 200;
  for (int i = 0; i < trials; ++i) {
    auto before = rig.oram.mapped_addr(9);
    rig.oram.write(9, rig.block_of(static_cast<Byte>(i)), rig.rng);
    if (rig.oram.stash().contains(9)) continue;
    ++landed;
    auto after = rig.oram.mapped_addr(9);
    if (!before || !after || *before != *after) ++moved;
  }
  CHECK(landed > trials / 2);
  CHECK(moved == landed);
  rig.oram.check_invariants(0);
}

TEST_CASE("oram: read costs 1 + depth + 1 block reads; stash hits cost none") {
  OramRig rig(16384, 44);
  CHECK(rig.oram.depth() == 2);
  auto data = rig.block_of(0x11);
  rig.oram.write(100, data, rig.rng);

  auto r0 = rig.store.read_count();
  auto got = rig.oram.read(100);
  CHECK(rig.store.read_count() - r0 == 4);  // rootptr + 2 nodes + data
  CHECK(got == data);

  // A stashed id must be served from memory.
  rig.oram.stash().put(55, data);
  r0 = rig.store.read_count();
  CHECK(rig.oram.read(55) == data);
  CHECK(rig.store.read_count() - r0 == 0);
}

TEST_CASE("oram: id bound is enforced") {
  OramRig rig(1024, 45);
  CHECK_THROWS_AS(rig.oram.read(rig.oram.logical()), DlError);
  CHECK_THROWS_AS(rig.oram.write(rig.oram.logical(), rig.block_of(0), rig.rng), DlError);
}

TEST_CASE("oram: every write emits the identical region-count vector") {
  OramRig rig(1024, 46);
  const auto expected = hidden_step_shape(rig.oram.depth(), kSelectRounds);
  for (int i = 0; i < 300; ++i) {
    rig.store.begin_trace("write");
    rig.oram.write(rig.rng.random_below(rig.oram.logical()), rig.block_of(Byte(i)), rig.rng);
    auto t = rig.store.end_trace();
    REQUIRE(t.region_counts() == expected);
  }
}

TEST_CASE("oram: simulation matches the write trace shape and preserves data") {
  OramRig rig(1024, 47);
  const auto expected = hidden_step_shape(rig.oram.depth(), kSelectRounds);

  std::map<std::uint64_t, std::vector<Byte>> snapshot;
  for (std::uint64_t id = 0; id < 64; ++id) snapshot[id] = rig.oram.read(id);

  for (int i = 0; i < 100; ++i) {
    rig.store.begin_trace("sim");
    rig.oram.simulate(rig.rng);
    auto t = rig.store.end_trace();
    REQUIRE(t.region_counts() == expected);
  }
  for (auto& [id, want] : snapshot) CHECK(rig.oram.read(id) == want);
  rig.oram.check_invariants(0);
}

TEST_CASE("oram: free picks per selection run average k/2") {
  OramRig rig(1024, 48);
  const int calls = 10000;
  double total = 0;
  for (int i = 0; i < calls; ++i) total += rig.oram.select_free_blocks(rig.rng).free_picked;
  double mean = total / calls;
  // Hypergeometric(2k, k, k): mean k/2, variance k^2/(4(2k-1)).
  double var = (kSelectRounds * kSelectRounds) / (4.0 * (2 * kSelectRounds - 1));
  double sigma = std::sqrt(var / calls);
  CHECK(std::abs(mean - 2.5) < 3 * sigma);
}

TEST_CASE("oram: stash stays small under sustained writes at full utilization") {
  OramRig rig(1024, 49);
  for (int i = 0; i < 3000; ++i) {
    std::uint64_t id = rig.rng.random_below(rig.oram.logical());
    rig.oram.write(id, rig.block_of(Byte(i)), rig.rng);
  }
  CHECK(rig.oram.stash().high_water() <= kStashCapacity);
  CHECK(rig.oram.stash().size() < 20);
  rig.oram.check_invariants(0);
}

TEST_CASE("oram: image export + mount reproduces state") {
  DeviceGeometry g = DeviceGeometry::make(1024, 256, 256);
  MemBlockStore store(g);
  auto rng = Rng::seeded(50);
  auto pub_key = random_key(KeyRole::pub, rng);
  auto hid_key = random_key(KeyRole::hid, rng);
  Pfl pfl(store, pub_key, g);
  pfl.init_fresh(rng);

  std::map<std::uint64_t, std::vector<Byte>> shadow;
  HiddenImage image;
  std::size_t stash_size = 0;
  {
    OramState oram(store, hid_key, pfl, {});
    oram.init(rng, [&](std::uint64_t id, ConstBytes d) {
      shadow[id] = std::vector<Byte>(d.begin(), d.end());
    });
    for (int i = 0; i < 500; ++i) {
      std::uint64_t id = rng.random_below(oram.logical());
      std::vector<Byte> data(kBlockSize);
      rng.fill(data);
      oram.write(id, data, rng);
      shadow[id] = data;
    }
    stash_size = oram.stash().size();
    image = oram.export_image();
  }
  {
    Pfl pfl2(store, pub_key, g);
    pfl2.load();
    OramState oram2(store, hid_key, pfl2, {});
    oram2.mount(image);
    CHECK(oram2.stash().size() == stash_size);
    for (auto& [id, want] : shadow) CHECK(oram2.read(id) == want);
    oram2.check_invariants(0);
  }
}

TEST_CASE("oram: legacy selection works end to end") {
  OramConfig cfg;
  cfg.legacy_selection = true;
  OramRig rig(512, 51, cfg);
  const auto expected = hidden_step_shape(rig.oram.depth(), kSelectRounds, true);
  auto data = rig.block_of(0x77);
  rig.store.begin_trace("legacy");
  rig.oram.write(3, data, rig.rng);
  auto t = rig.store.end_trace();
  CHECK(t.region_counts() == expected);
  CHECK(rig.oram.read(3) == data);
  for (int i = 0; i < 200; ++i)
    rig.oram.write(rig.rng.random_below(rig.oram.logical()), rig.block_of(Byte(i)), rig.rng);
  CHECK(rig.oram.stash().high_water() <= kStashCapacity);
}

TEST_CASE("oram: public_acquire consumes a free block or evicts") {
  OramRig rig(1024, 52);
  auto free_before = rig.oram.fbm().valid_count();
  std::vector<Byte> ct(kBlockSize, 0x5C);
  auto iv = rig.rng.iv();
  BlockAddr got = rig.oram.public_acquire(ct, iv, rig.rng);
  CHECK(got < 1024);
  CHECK(rig.oram.owner_of(got) == OramState::kOwnerPublic);
  auto free_after = rig.oram.fbm().valid_count();
  CHECK((free_after == free_before - 1 || free_after == free_before));
  rig.pfl.fma_remove(got, rig.rng);
  rig.oram.check_invariants(1);
}
