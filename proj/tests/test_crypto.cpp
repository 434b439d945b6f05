#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "datalair/crypto.hpp"
#include "datalair/stats.hpp"

using namespace datalair;

TEST_CASE("seal/unseal round-trips and randomizes") {
  auto rng = Rng::seeded(1);
  auto key = random_key(KeyRole::hid, rng);
  std::vector<Byte> zeros(kBlockSize, 0);

  auto s1 = seal(key, zeros, rng);
  CHECK(unseal(key, s1) == zeros);

  auto s2 = seal(key, zeros, rng);
  CHECK(s1.ciphertext != s2.ciphertext);
  CHECK(s1.iv != s2.iv);
}

TEST_CASE("reencrypt preserves plaintext, changes bytes") {
  auto rng = Rng::seeded(2);
  auto key = random_key(KeyRole::hid, rng);
  std::vector<Byte> msg(kBlockSize);
  rng.fill(msg);
  auto s = seal(key, msg, rng);
  auto r = reencrypt(key, s, rng);
  CHECK(unseal(key, r) == msg);
  CHECK(r.ciphertext != s.ciphertext);
}

TEST_CASE("ciphertext bytes look uniform (chi-square)") {
  auto rng = Rng::seeded(3);
  auto key = random_key(KeyRole::hid, rng);
  std::vector<Byte> zeros(kBlockSize, 0);
  std::vector<std::uint64_t> counts(256, 0);
  std::size_t total = 0;
  while (total < 10000) {
    auto s = seal(key, zeros, rng);
    for (Byte b : s.ciphertext) ++counts[b];
    total += s.ciphertext.size();
  }
  auto res = chi2_uniform(counts);
  CHECK(res.p > 0.01);
}

TEST_CASE("meta block format round-trips") {
  auto rng = Rng::seeded(4);
  auto key = random_key(KeyRole::hid, rng);
  std::vector<Byte> payload(kMetaPayload);
  rng.fill(payload);
  std::array<Byte, kBlockSize> block;
  seal_meta_block(key, payload, rng, block);
  std::array<Byte, kMetaPayload> out;
  unseal_meta_block(key, block, out);
  CHECK(std::equal(out.begin(), out.end(), payload.begin()));

  auto saved = block;
  reencrypt_meta_block(key, block, rng);
  CHECK(block != saved);
  unseal_meta_block(key, block, out);
  CHECK(std::equal(out.begin(), out.end(), payload.begin()));
}

TEST_CASE("random_below: degenerate and bounds") {
  auto rng = Rng::seeded(5);
  CHECK_THROWS(rng.random_below(0));
  for (int i = 0; i < 100; ++i) CHECK(rng.random_below(1) == 0);
  for (int i = 0; i < 1000; ++i) CHECK(rng.random_below(7) < 7);
}

TEST_CASE("random_below: uniform over small domain") {
  auto rng = Rng::seeded(6);
  std::vector<std::uint64_t> counts(6, 0);
  for (int i = 0; i < 60000; ++i) ++counts[rng.random_below(6)];
  auto res = chi2_uniform(counts);
  CHECK(res.p > 0.01);
}

TEST_CASE("seeded rng reproduces, os rng differs") {
  auto a = Rng::seeded(42);
  auto b = Rng::seeded(42);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
  auto c = Rng::seeded(43);
  bool all_same = true;
  auto d = Rng::seeded(42);
  for (int i = 0; i < 8; ++i) all_same = all_same && (c.next_u64() == d.next_u64());
  CHECK(!all_same);
}

TEST_CASE("kdf: deterministic per password/salt/role, distinct across roles") {
  std::array<Byte, kSaltSize> salt{};
  salt.fill(0x5A);
  KdfParams light{10, 8, 1};
  auto k1 = derive_key("hunter2", salt, KeyRole::pub, light);
  auto k2 = derive_key("hunter2", salt, KeyRole::pub, light);
  auto k3 = derive_key("hunter2", salt, KeyRole::hid, light);
  auto k4 = derive_key("hunter3", salt, KeyRole::pub, light);
  CHECK(k1.bytes == k2.bytes);
  CHECK(k1.bytes != k3.bytes);
  CHECK(k1.bytes != k4.bytes);
}

TEST_CASE("withheld key: fresh seal vs reencrypt indistinguishable to byte test") {
  auto rng = Rng::seeded(9);
  auto key = random_key(KeyRole::hid, rng);
  std::vector<Byte> msg(kBlockSize);
  rng.fill(msg);
  std::vector<std::uint64_t> ca(256, 0), cb(256, 0);
  auto s = seal(key, msg, rng);
  for (int i = 0; i < 8; ++i) {
    auto fresh = seal(key, msg, rng);
    s = reencrypt(key, s, rng);
    for (Byte b : fresh.ciphertext) ++ca[b];
    for (Byte b : s.ciphertext) ++cb[b];
  }
  auto res = chi2_two_sample(ca, cb);
  CHECK(res.p > 0.01);
}
