#include "datalair/crypto.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "datalair/block_store.hpp"

#include <openssl/evp.h>
#include <openssl/kdf.h>
#include <openssl/rand.h>

namespace datalair {

namespace {

void evp_check(int ok, const char* what) {
  if (ok != 1) throw DlError(DlError::Kind::io, std::string("openssl failure: ") + what);
}

struct CtxDeleter {
  void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CtxDeleter>;

void aes_ctr(const Byte* key, const Byte* iv, const Byte* in, Byte* out, std::size_t len) {
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  evp_check(ctx != nullptr, "ctx");
  evp_check(EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_ctr(), nullptr, key, iv), "init");
  int outl = 0;
  evp_check(EVP_EncryptUpdate(ctx.get(), out, &outl, in, static_cast<int>(len)), "update");
}

}  // namespace

struct Rng::Impl {
  CipherCtx ctx;
  std::array<Byte, 4096> buf;
  std::size_t pos = buf.size();
};

Rng::Rng(const std::array<Byte, kKeySize>& key) : impl_(std::make_unique<Impl>()) {
  impl_->ctx.reset(EVP_CIPHER_CTX_new());
  std::array<Byte, kIvSize> zero_iv{};
  evp_check(EVP_EncryptInit_ex(impl_->ctx.get(), EVP_aes_256_ctr(), nullptr, key.data(),
                               zero_iv.data()),
            "rng init");
}

Rng::Rng(Rng&&) noexcept = default;
Rng& Rng::operator=(Rng&&) noexcept = default;
Rng::~Rng() = default;

Rng Rng::seeded(std::uint64_t seed) {
  std::array<Byte, 16> seed_bytes{};
  put_u64(seed_bytes, 0, seed);
  std::memcpy(seed_bytes.data() + 8, "dlrseed1", 8);
  auto digest = sha256(seed_bytes);
  std::array<Byte, kKeySize> key;
  std::memcpy(key.data(), digest.data(), kKeySize);
  return Rng(key);
}

Rng Rng::os() {
  std::array<Byte, kKeySize> key;
  evp_check(RAND_bytes(key.data(), key.size()), "RAND_bytes");
  return Rng(key);
}

void Rng::refill() {
  std::array<Byte, 4096> zeros{};
  int outl = 0;
  evp_check(EVP_EncryptUpdate(impl_->ctx.get(), impl_->buf.data(), &outl, zeros.data(),
                              static_cast<int>(zeros.size())),
            "rng update");
  impl_->pos = 0;
}

void Rng::fill(Bytes out) {
  std::size_t done = 0;
  while (done < out.size()) {
    if (impl_->pos == impl_->buf.size()) refill();
    std::size_t take = std::min(out.size() - done, impl_->buf.size() - impl_->pos);
    std::memcpy(out.data() + done, impl_->buf.data() + impl_->pos, take);
    impl_->pos += take;
    done += take;
  }
}

std::uint64_t Rng::next_u64() {
  std::array<Byte, 8> b;
  fill(b);
  return get_u64(b, 0);
}

std::uint64_t Rng::random_below(std::uint64_t bound) {
  if (bound == 0) throw DlError(DlError::Kind::usage, "random_below: zero bound");
  if (bound == 1) return 0;
  // Rejection sampling over the largest multiple of bound.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  for (;;) {
    std::uint64_t v = next_u64();
    if (v < limit) return v % bound;
  }
}

std::array<Byte, kIvSize> Rng::iv() {
  std::array<Byte, kIvSize> out;
  fill(out);
  return out;
}

VolumeKey derive_key(const std::string& password, ConstBytes salt, KeyRole role,
                     const KdfParams& params) {
  // Role byte appended to the device salt so both keys derive from one
  // stored salt without any on-disk mode indicator.
  std::vector<Byte> salted(salt.begin(), salt.end());
  salted.push_back(static_cast<Byte>(role));
  VolumeKey key;
  key.role = role;
  evp_check(EVP_PBE_scrypt(password.data(), password.size(), salted.data(), salted.size(),
                           std::uint64_t{1} << params.log_n, params.r, params.p,
                           std::uint64_t{512} << 20, key.bytes.data(), key.bytes.size()),
            "scrypt");
  return key;
}

VolumeKey random_key(KeyRole role, Rng& rng) {
  VolumeKey key;
  key.role = role;
  rng.fill(key.bytes);
  return key;
}

void ctr_xcrypt(const VolumeKey& key, ConstBytes iv, ConstBytes in, Bytes out) {
  if (in.size() != out.size()) throw DlError(DlError::Kind::io, "ctr_xcrypt: size mismatch");
  aes_ctr(key.bytes.data(), iv.data(), in.data(), out.data(), in.size());
}

SealedBlock seal(const VolumeKey& key, ConstBytes plaintext, Rng& rng) {
  SealedBlock s;
  s.iv = rng.iv();
  s.ciphertext.resize(plaintext.size());
  aes_ctr(key.bytes.data(), s.iv.data(), plaintext.data(), s.ciphertext.data(),
          plaintext.size());
  return s;
}

std::vector<Byte> unseal(const VolumeKey& key, const SealedBlock& sealed) {
  std::vector<Byte> p(sealed.ciphertext.size());
  aes_ctr(key.bytes.data(), sealed.iv.data(), sealed.ciphertext.data(), p.data(), p.size());
  return p;
}

SealedBlock reencrypt(const VolumeKey& key, const SealedBlock& sealed, Rng& rng) {
  auto plain = unseal(key, sealed);
  return seal(key, plain, rng);
}

void seal_meta_block(const VolumeKey& key, ConstBytes payload, Rng& rng, Bytes out_block) {
  if (out_block.size() != kBlockSize || payload.size() > kMetaPayload)
    throw DlError(DlError::Kind::io, "seal_meta_block: bad sizes");
  std::array<Byte, kMetaPayload> plain{};
  std::memcpy(plain.data(), payload.data(), payload.size());
  auto iv = rng.iv();
  std::memcpy(out_block.data(), iv.data(), kIvSize);
  aes_ctr(key.bytes.data(), iv.data(), plain.data(), out_block.data() + kIvSize, kMetaPayload);
}

void unseal_meta_block(const VolumeKey& key, ConstBytes block, Bytes out_payload) {
  if (block.size() != kBlockSize || out_payload.size() != kMetaPayload)
    throw DlError(DlError::Kind::io, "unseal_meta_block: bad sizes");
  aes_ctr(key.bytes.data(), block.data(), block.data() + kIvSize, out_payload.data(),
          kMetaPayload);
}

void reencrypt_meta_block(const VolumeKey& key, Bytes block, Rng& rng) {
  std::array<Byte, kMetaPayload> payload;
  unseal_meta_block(key, block, payload);
  seal_meta_block(key, payload, rng, block);
}

}  // namespace datalair
