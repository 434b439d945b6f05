#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "datalair/block_store.hpp"
#include "datalair/crypto.hpp"

using namespace datalair;

namespace {

// Independent region-sum oracle: recompute the expected device size from
// first principles instead of trusting DeviceGeometry's accumulation.
std::uint64_t expected_total_blocks(std::uint64_t n, std::uint64_t pub_logical) {
  std::uint64_t cols = ceil_div(n, kAddrsPerMetaBlock);
  std::uint64_t total = 0;
  total += 1;                                                // superblock
  total += 1;                                                // keycheck
  total += 1;                                                // root pointer
  total += cols;                                             // FBM columns
  total += 1;                                                // FBM header
  total += cols;                                             // N-FBM columns
  total += ceil_div(cols * kAddrsPerMetaBlock, kBitsPerBitmapBlock);  // bitmap
  total += 1 + ceil_div(n, kAddrsPerMetaBlock);              // FMA header + FMA
  total += ceil_div(n, kRmaPerBlock);                        // RMA
  total += pub_logical ? ceil_div(pub_logical, kAddrsPerMetaBlock) : 1;  // PPM
  total += kStashRegionBlocks;
  total += n;
  return total;
}

std::array<Byte, kBlockSize> pattern_block(Byte b) {
  std::array<Byte, kBlockSize> blk;
  blk.fill(b);
  return blk;
}

struct TempPath {
  std::string path;
  explicit TempPath(const std::string& name) {
    path = (std::filesystem::temp_directory_path() / name).string();
    std::remove(path.c_str());
  }
  ~TempPath() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("geometry: regions are disjoint, ordered and cover the device") {
  auto g = DeviceGeometry::make(16384, 4096, 4096);
  CHECK(g.total_blocks == expected_total_blocks(16384, 4096));
  CHECK(g.region_of(0) == Region::superblock);
  CHECK(g.region_of(g.off_data) == Region::data);
  CHECK(g.region_of(g.off_data + 16383) == Region::data);
  CHECK(g.region_of(g.off_stash) == Region::stash);
  CHECK(g.region_of(g.off_fbm_hdr) == Region::fbm_hdr);
  CHECK_THROWS(g.region_of(g.total_blocks));

  // Walk every block once; region boundaries must be monotone.
  std::uint64_t counts[kRegionCount] = {};
  for (BlockAddr i = 0; i < g.total_blocks; ++i) ++counts[static_cast<int>(g.region_of(i))];
  CHECK(counts[static_cast<int>(Region::data)] == 16384);
  CHECK(counts[static_cast<int>(Region::stash)] == kStashRegionBlocks);
  CHECK(counts[static_cast<int>(Region::fbm_col)] == g.matrix_cols);
}

TEST_CASE("geometry: rejects invalid shapes") {
  CHECK_THROWS(DeviceGeometry::make(64, 0, 0));           // too small
  CHECK_THROWS(DeviceGeometry::make(1024, 400, 200));     // volumes above N/2
}

TEST_CASE("tree shape: depth steps with logical size") {
  CHECK(TreeShape::make(128).depth == 1);     // single leaf is the root
  CHECK(TreeShape::make(512).depth == 2);     // 3 leaves + root
  CHECK(TreeShape::make(8192).depth == 2);    // 41 leaves + root
  CHECK(TreeShape::make(262144).depth == 3);  // 1286 leaves, 3 internals, root
  auto t = TreeShape::make(8192);
  CHECK(t.level_nodes[0] == 41);
  CHECK(t.level_nodes[1] == 1);
  CHECK(t.total_nodes == 42);
}

TEST_CASE("store: write/read round-trip and bounds") {
  auto g = DeviceGeometry::make(256, 32, 32);
  MemBlockStore store(g);
  auto blk = pattern_block(0xA7);
  store.write_block(7, blk);
  std::array<Byte, kBlockSize> out{};
  store.read_block(7, out);
  CHECK(out == blk);
  CHECK_THROWS(store.write_block(g.total_blocks, blk));
  std::array<Byte, 4095> small{};
  CHECK_THROWS(store.write_block(3, small));
}

TEST_CASE("store: traces record writes in order and do not nest") {
  auto g = DeviceGeometry::make(256, 32, 32);
  MemBlockStore store(g);
  CHECK_THROWS(store.end_trace());

  store.begin_trace("empty");
  CHECK(store.end_trace().entries.empty());

  store.begin_trace("three");
  CHECK_THROWS(store.begin_trace("nested"));
  store.write_block(g.off_data + 1, pattern_block(1));
  store.write_block(g.off_data + 2, pattern_block(2));
  store.write_block(g.off_fbm_hdr, pattern_block(3));
  auto t = store.end_trace();
  REQUIRE(t.entries.size() == 3);
  CHECK(t.entries[0] == TraceEntry{Region::data, g.off_data + 1});
  CHECK(t.entries[1] == TraceEntry{Region::data, g.off_data + 2});
  CHECK(t.entries[2] == TraceEntry{Region::fbm_hdr, g.off_fbm_hdr});

  // Two sequential traces over distinct writes stay disjoint.
  store.begin_trace("a");
  store.write_block(g.off_data + 10, pattern_block(4));
  auto ta = store.end_trace();
  store.begin_trace("b");
  store.write_block(g.off_data + 11, pattern_block(5));
  auto tb = store.end_trace();
  for (const auto& ea : ta.entries)
    for (const auto& eb : tb.entries) CHECK(!(ea == eb));
}

TEST_CASE("store: snapshots diff exactly the written blocks") {
  auto g = DeviceGeometry::make(256, 32, 32);
  MemBlockStore store(g);
  auto s1 = store.snapshot();
  auto s2 = store.snapshot();
  CHECK(s1.digests == s2.digests);
  CHECK(s1.digests.size() == g.total_blocks);

  store.write_block(g.off_data + 5, pattern_block(0x55));
  auto s3 = store.snapshot();
  std::size_t diffs = 0;
  std::size_t where = 0;
  for (std::size_t i = 0; i < s3.digests.size(); ++i)
    if (s3.digests[i] != s2.digests[i]) {
      ++diffs;
      where = i;
    }
  CHECK(diffs == 1);
  CHECK(where == g.off_data + 5);
}

TEST_CASE("store: trace completeness against snapshot diff") {
  auto g = DeviceGeometry::make(256, 32, 32);
  MemBlockStore store(g);
  auto rng = Rng::seeded(7);
  auto before = store.snapshot();
  store.begin_trace("mixed");
  std::set<BlockAddr> touched;
  for (int i = 0; i < 64; ++i) {
    BlockAddr idx = rng.random_below(g.total_blocks - 1) + 1;  // keep superblock intact
    std::array<Byte, kBlockSize> blk;
    rng.fill(blk);
    store.write_block(idx, blk);
    touched.insert(idx);
  }
  auto trace = store.end_trace();
  auto after = store.snapshot();
  std::set<BlockAddr> diff;
  for (std::size_t i = 0; i < after.digests.size(); ++i)
    if (after.digests[i] != before.digests[i]) diff.insert(i);
  std::set<BlockAddr> traced;
  for (const auto& e : trace.entries) traced.insert(e.index);
  CHECK(traced == touched);
  CHECK(diff == touched);
}

TEST_CASE("file store: create, reopen, geometry mismatch") {
  TempPath tmp("dlr_store_test.img");
  auto g = DeviceGeometry::make(256, 32, 32);
  {
    auto store = FileBlockStore::open_or_create(tmp.path, g);
    CHECK(std::filesystem::file_size(tmp.path) == g.total_blocks * kBlockSize);
    store->write_block(g.off_data, pattern_block(0xEE));
    store->flush();
  }
  {
    auto store = FileBlockStore::open_or_create(tmp.path, g);
    std::array<Byte, kBlockSize> out{};
    store->read_block(g.off_data, out);
    CHECK(out == pattern_block(0xEE));
  }
  auto g2 = DeviceGeometry::make(512, 32, 32);
  CHECK_THROWS(FileBlockStore::open_or_create(tmp.path, g2));
}
