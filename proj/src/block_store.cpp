#include "datalair/block_store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include <openssl/sha.h>

namespace datalair {

std::array<Byte, kDigestSize> sha256(ConstBytes data) {
  std::array<Byte, kDigestSize> out;
  SHA256(data.data(), data.size(), out.data());
  return out;
}

void BlockStore::read_block(BlockAddr idx, Bytes out) {
  if (idx >= total_blocks()) throw DlError(DlError::Kind::io, "read_block: index out of range");
  if (out.size() != kBlockSize) throw DlError(DlError::Kind::io, "read_block: bad buffer size");
  do_read(idx, out);
  ++reads_;
}

void BlockStore::write_block(BlockAddr idx, ConstBytes data) {
  if (idx >= total_blocks()) throw DlError(DlError::Kind::io, "write_block: index out of range");
  if (data.size() != kBlockSize) throw DlError(DlError::Kind::io, "write_block: bad data size");
  do_write(idx, data);
  ++writes_;
  if (digests_ready_) dirty_.insert(idx);
  if (trace_) trace_->entries.push_back({geometry().region_of(idx), idx});
}

void BlockStore::begin_trace(const std::string& label) {
  if (trace_) throw DlError(DlError::Kind::state, "begin_trace: trace already active");
  trace_ = WriteTrace{label, {}};
}

WriteTrace BlockStore::end_trace() {
  if (!trace_) throw DlError(DlError::Kind::state, "end_trace without begin_trace");
  WriteTrace t = std::move(*trace_);
  trace_.reset();
  return t;
}

Snapshot BlockStore::snapshot() {
  if (trace_) throw DlError(DlError::Kind::state, "snapshot with operation in flight");
  std::array<Byte, kBlockSize> buf;
  if (!digests_ready_) {
    digests_.resize(total_blocks());
    for (BlockAddr i = 0; i < total_blocks(); ++i) {
      do_read(i, buf);
      digests_[i] = sha256(buf);
    }
    digests_ready_ = true;
  } else {
    for (BlockAddr i : dirty_) {
      do_read(i, buf);
      digests_[i] = sha256(buf);
    }
  }
  dirty_.clear();
  return Snapshot{total_blocks(), digests_};
}

MemBlockStore::MemBlockStore(DeviceGeometry geom) : BlockStore(geom) {
  bytes_.assign(geom.total_blocks * kBlockSize, 0);
}

void MemBlockStore::do_read(BlockAddr idx, Bytes out) {
  std::memcpy(out.data(), bytes_.data() + idx * kBlockSize, kBlockSize);
}

void MemBlockStore::do_write(BlockAddr idx, ConstBytes data) {
  std::memcpy(bytes_.data() + idx * kBlockSize, data.data(), kBlockSize);
}

std::unique_ptr<FileBlockStore> FileBlockStore::open_or_create(const std::string& path,
                                                               DeviceGeometry geom) {
  bool exists = ::access(path.c_str(), F_OK) == 0;
  int fd = ::open(path.c_str(), O_RDWR | O_CREAT, 0600);
  if (fd < 0) throw DlError(DlError::Kind::io, "cannot open " + path + ": " + std::strerror(errno));

  const std::uint64_t want = geom.total_blocks * kBlockSize;
  if (exists) {
    struct stat st{};
    if (::fstat(fd, &st) != 0) {
      ::close(fd);
      throw DlError(DlError::Kind::io, "fstat failed");
    }
    if (static_cast<std::uint64_t>(st.st_size) != want) {
      ::close(fd);
      throw DlError(DlError::Kind::corrupt, "geometry mismatch: device size differs");
    }
    std::array<Byte, kBlockSize> sb;
    if (::pread(fd, sb.data(), kBlockSize, 0) != static_cast<ssize_t>(kBlockSize)) {
      ::close(fd);
      throw DlError(DlError::Kind::io, "cannot read superblock");
    }
    if (std::memcmp(sb.data(), "DLR1", 4) == 0) {
      std::uint64_t n = get_u64(sb, 8);
      std::uint64_t pub = get_u64(sb, 16);
      std::uint64_t hid = get_u64(sb, 24);
      if (n != geom.data_blocks || pub != geom.pub_logical || hid != geom.hid_logical) {
        ::close(fd);
        throw DlError(DlError::Kind::corrupt, "geometry mismatch: superblock differs");
      }
    }
  } else {
    // Fully materialize every block up front so snapshot diffs are
    // well-defined and occupancy never leaks through sparseness.
    std::vector<Byte> zeros(1 << 20, 0);
    std::uint64_t off = 0;
    while (off < want) {
      std::size_t chunk = std::min<std::uint64_t>(zeros.size(), want - off);
      ssize_t w = ::pwrite(fd, zeros.data(), chunk, off);
      if (w <= 0) {
        ::close(fd);
        throw DlError(DlError::Kind::io, "cannot allocate device file");
      }
      off += static_cast<std::uint64_t>(w);
    }
  }
  return std::unique_ptr<FileBlockStore>(new FileBlockStore(geom, fd));
}

FileBlockStore::~FileBlockStore() {
  if (fd_ >= 0) ::close(fd_);
}

void FileBlockStore::flush() {
  if (fd_ >= 0) ::fsync(fd_);
}

void FileBlockStore::do_read(BlockAddr idx, Bytes out) {
  if (::pread(fd_, out.data(), kBlockSize, idx * kBlockSize) != static_cast<ssize_t>(kBlockSize))
    throw DlError(DlError::Kind::io, "pread failed");
}

void FileBlockStore::do_write(BlockAddr idx, ConstBytes data) {
  if (::pwrite(fd_, data.data(), kBlockSize, idx * kBlockSize) != static_cast<ssize_t>(kBlockSize))
    throw DlError(DlError::Kind::io, "pwrite failed");
}

std::optional<std::array<std::uint64_t, 3>> peek_superblock_shape(const std::string& path) {
  int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) return std::nullopt;
  std::array<Byte, kBlockSize> sb;
  ssize_t r = ::pread(fd, sb.data(), kBlockSize, 0);
  ::close(fd);
  if (r != static_cast<ssize_t>(kBlockSize)) return std::nullopt;
  if (std::memcmp(sb.data(), "DLR1", 4) != 0) return std::nullopt;
  return std::array<std::uint64_t, 3>{get_u64(sb, 8), get_u64(sb, 16), get_u64(sb, 24)};
}

}  // namespace datalair
