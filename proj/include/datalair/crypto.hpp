#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "datalair/common.hpp"

namespace datalair {

// Cryptographically strong random source: AES-256-CTR keystream, seedable
// for reproducible tests or seeded from OS entropy in production.
class Rng {
 public:
  static Rng seeded(std::uint64_t seed);
  static Rng os();

  void fill(Bytes out);
  std::uint64_t next_u64();
  // Uniform in [0, bound) via rejection sampling; bound must be >= 1.
  std::uint64_t random_below(std::uint64_t bound);
  std::array<Byte, kIvSize> iv();

  Rng(Rng&&) noexcept;
  Rng& operator=(Rng&&) noexcept;
  ~Rng();
  Rng(const Rng&) = delete;
  Rng& operator=(const Rng&) = delete;

 private:
  explicit Rng(const std::array<Byte, kKeySize>& key);
  void refill();
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

enum class KeyRole : Byte { pub = 0, hid = 1 };

struct VolumeKey {
  KeyRole role = KeyRole::pub;
  std::array<Byte, kKeySize> bytes{};
};

struct KdfParams {
  std::uint8_t log_n = 14;  // scrypt cost; tests use lighter settings
  std::uint8_t r = 8;
  std::uint8_t p = 1;
};

VolumeKey derive_key(const std::string& password, ConstBytes salt, KeyRole role,
                     const KdfParams& params);
VolumeKey random_key(KeyRole role, Rng& rng);

struct SealedBlock {
  std::array<Byte, kIvSize> iv{};
  std::vector<Byte> ciphertext;
};

// Randomized AES-256-CTR. unseal(seal(p)) == p; every seal draws a fresh IV.
SealedBlock seal(const VolumeKey& key, ConstBytes plaintext, Rng& rng);
std::vector<Byte> unseal(const VolumeKey& key, const SealedBlock& sealed);
SealedBlock reencrypt(const VolumeKey& key, const SealedBlock& sealed, Rng& rng);

// In-place CTR transform with an explicit IV (both directions).
void ctr_xcrypt(const VolumeKey& key, ConstBytes iv, ConstBytes in, Bytes out);

// Metadata block wire format: [iv | ct(kMetaPayload)] in one device block.
void seal_meta_block(const VolumeKey& key, ConstBytes payload, Rng& rng, Bytes out_block);
void unseal_meta_block(const VolumeKey& key, ConstBytes block, Bytes out_payload);
// Decrypt+re-encrypt under a fresh IV, payload preserved.
void reencrypt_meta_block(const VolumeKey& key, Bytes block, Rng& rng);

}  // namespace datalair
