#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "datalair/common.hpp"
#include "datalair/geometry.hpp"

namespace datalair {

struct TraceEntry {
  Region region;
  BlockAddr index;  // absolute device block
  bool operator==(const TraceEntry&) const = default;
};

// Per-region write-count vector; byte-comparable across operations.
using RegionCounts = std::array<std::uint32_t, kRegionCount>;

struct WriteTrace {
  std::string label;
  std::vector<TraceEntry> entries;

  RegionCounts region_counts() const {
    RegionCounts c{};
    for (const auto& e : entries) ++c[static_cast<std::size_t>(e.region)];
    return c;
  }
  std::size_t size() const { return entries.size(); }
};

struct Snapshot {
  std::uint64_t total_blocks = 0;
  std::vector<std::array<Byte, kDigestSize>> digests;
};

// Virtual block device with a fixed region layout. Writes are recorded into
// the active trace; snapshots digest the exact on-disk bytes.
class BlockStore {
 public:
  virtual ~BlockStore() = default;

  const DeviceGeometry& geometry() const { return geom_; }
  std::uint64_t total_blocks() const { return geom_.total_blocks; }

  void read_block(BlockAddr idx, Bytes out);
  void write_block(BlockAddr idx, ConstBytes data);

  void begin_trace(const std::string& label);
  WriteTrace end_trace();
  bool tracing() const { return trace_.has_value(); }

  Snapshot snapshot();

  std::uint64_t read_count() const { return reads_; }
  std::uint64_t write_count() const { return writes_; }

 protected:
  explicit BlockStore(DeviceGeometry geom) : geom_(geom) {}
  virtual void do_read(BlockAddr idx, Bytes out) = 0;
  virtual void do_write(BlockAddr idx, ConstBytes data) = 0;

 private:
  DeviceGeometry geom_;
  std::optional<WriteTrace> trace_;
  std::uint64_t reads_ = 0;
  std::uint64_t writes_ = 0;

  // Snapshot digests are maintained lazily: full pass on first use, then
  // only blocks dirtied since the previous snapshot are rehashed.
  std::vector<std::array<Byte, kDigestSize>> digests_;
  std::unordered_set<BlockAddr> dirty_;
  bool digests_ready_ = false;
};

class MemBlockStore : public BlockStore {
 public:
  explicit MemBlockStore(DeviceGeometry geom);

 protected:
  void do_read(BlockAddr idx, Bytes out) override;
  void do_write(BlockAddr idx, ConstBytes data) override;

 private:
  std::vector<Byte> bytes_;
};

class FileBlockStore : public BlockStore {
 public:
  // Creates the file fully allocated and zero-filled if absent; otherwise
  // verifies size and any existing superblock geometry against `geom`.
  static std::unique_ptr<FileBlockStore> open_or_create(const std::string& path,
                                                        DeviceGeometry geom);
  ~FileBlockStore() override;

  void flush();

 protected:
  void do_read(BlockAddr idx, Bytes out) override;
  void do_write(BlockAddr idx, ConstBytes data) override;

 private:
  FileBlockStore(DeviceGeometry geom, int fd) : BlockStore(geom), fd_(fd) {}
  int fd_ = -1;
};

// Reads N/pub/hid out of a device file's superblock without constructing a
// store (used by mount to build the geometry before opening).
std::optional<std::array<std::uint64_t, 3>> peek_superblock_shape(const std::string& path);

std::array<Byte, kDigestSize> sha256(ConstBytes data);

}  // namespace datalair
