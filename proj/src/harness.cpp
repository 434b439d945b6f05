#include "datalair/harness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "datalair/oram.hpp"

namespace datalair {

std::vector<std::uint64_t> snapshot_diff(const Snapshot& a, const Snapshot& b) {
  if (a.total_blocks != b.total_blocks || a.digests.size() != b.digests.size())
    throw DlError(DlError::Kind::usage, "snapshot_diff: geometry mismatch");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < a.digests.size(); ++i)
    if (a.digests[i] != b.digests[i]) out.push_back(i);
  return out;
}

void check_game_legal(const AccessPattern& o0, const AccessPattern& o1, std::uint32_t phi) {
  auto pub_writes = [](const AccessPattern& p) {
    std::vector<std::pair<std::uint64_t, Byte>> v;
    for (auto& op : p)
      if (op.kind == AccessOp::Kind::pub_write) v.emplace_back(op.id, op.fill);
    return v;
  };
  auto hid_writes = [](const AccessPattern& p) {
    std::size_t n = 0;
    for (auto& op : p)
      if (op.kind == AccessOp::Kind::hid_write) ++n;
    return n;
  };
  if (pub_writes(o0) != pub_writes(o1))
    throw DlError(DlError::Kind::usage, "game: patterns must share the same public writes");
  std::size_t pubs = pub_writes(o0).size();
  if (hid_writes(o0) > phi * pubs || hid_writes(o1) > phi * pubs)
    throw DlError(DlError::Kind::usage,
                  "game: hidden writes exceed phi times the public writes");
}

namespace {

class ConstantZero : public Distinguisher {
 public:
  std::string name() const override { return "constant-zero"; }
  int guess(const RoundView&) override { return 0; }
};

// Guesses from the total number of changed blocks, trained online.
class CardinalityComparator : public Distinguisher {
 public:
  std::string name() const override { return "diff-cardinality"; }
  int guess(const RoundView& round) override {
    if (seen_[0] == 0 || seen_[1] == 0) return 0;
    double d0 = std::abs(static_cast<double>(round.changed.size()) - mean_[0] / seen_[0]);
    double d1 = std::abs(static_cast<double>(round.changed.size()) - mean_[1] / seen_[1]);
    return d1 < d0 ? 1 : 0;
  }
  void feedback(int truth, const RoundView& round) override {
    mean_[truth] += static_cast<double>(round.changed.size());
    seen_[truth] += 1;
  }

 private:
  double mean_[2] = {0, 0};
  double seen_[2] = {0, 0};
};

// Nearest-centroid over the per-region histogram of changed blocks.
class RegionHistogramComparator : public Distinguisher {
 public:
  std::string name() const override { return "region-histogram"; }
  int guess(const RoundView& round) override {
    if (seen_[0] == 0 || seen_[1] == 0) return 0;
    double d0 = 0, d1 = 0;
    for (std::size_t r = 0; r < kRegionCount; ++r) {
      double v = round.region_histogram[r];
      double m0 = centroid_[0][r] / seen_[0];
      double m1 = centroid_[1][r] / seen_[1];
      d0 += (v - m0) * (v - m0);
      d1 += (v - m1) * (v - m1);
    }
    return d1 < d0 ? 1 : 0;
  }
  void feedback(int truth, const RoundView& round) override {
    for (std::size_t r = 0; r < kRegionCount; ++r)
      centroid_[truth][r] += round.region_histogram[r];
    seen_[truth] += 1;
  }

 private:
  double centroid_[2][kRegionCount] = {};
  double seen_[2] = {0, 0};
};

// Tracks per-block change frequencies under each label and scores a round
// by which label's frequency profile fits the changed set better.
class FrequencyClassifier : public Distinguisher {
 public:
  std::string name() const override { return "frequency"; }
  int guess(const RoundView& round) override {
    if (rounds_[0] < 8 || rounds_[1] < 8) return 0;
    double s0 = 0, s1 = 0;
    for (auto idx : round.changed) {
      s0 += std::log((hit(0, idx) + 1.0) / (rounds_[0] + 2.0));
      s1 += std::log((hit(1, idx) + 1.0) / (rounds_[1] + 2.0));
    }
    return s1 > s0 ? 1 : 0;
  }
  void feedback(int truth, const RoundView& round) override {
    for (auto idx : round.changed) ++counts_[truth][idx];
    rounds_[truth] += 1;
  }

 private:
  double hit(int b, std::uint64_t idx) {
    auto it = counts_[b].find(idx);
    return it == counts_[b].end() ? 0.0 : static_cast<double>(it->second);
  }
  std::unordered_map<std::uint64_t, std::uint64_t> counts_[2];
  double rounds_[2] = {0, 0};
};

}  // namespace

std::vector<std::unique_ptr<Distinguisher>> builtin_distinguishers() {
  std::vector<std::unique_ptr<Distinguisher>> v;
  v.push_back(std::make_unique<ConstantZero>());
  v.push_back(std::make_unique<CardinalityComparator>());
  v.push_back(std::make_unique<RegionHistogramComparator>());
  v.push_back(std::make_unique<FrequencyClassifier>());
  return v;
}

std::vector<GameResult> run_game(const GameConfig& cfg, const AccessPattern& o0,
                                 const AccessPattern& o1,
                                 std::vector<std::unique_ptr<Distinguisher>> distinguishers) {
  check_game_legal(o0, o1, cfg.device.policy == HiddenPolicy::every_write
                               ? 1
                               : std::max<std::uint32_t>(cfg.device.period, 1));

  MemBlockStore store(cfg.device.geometry());
  Rng rng = Rng::seeded(cfg.seed);
  Device::format(store, cfg.device, "game-pub", std::optional<std::string>("game-hid"), rng);
  auto dev = Device::mount(store, "game-pub", std::optional<std::string>("game-hid"));

  auto execute = [&](const AccessPattern& pattern) {
    std::vector<Byte> blk(kBlockSize);
    for (const auto& op : pattern) {
      std::fill(blk.begin(), blk.end(), op.fill);
      switch (op.kind) {
        case AccessOp::Kind::pub_write: dev->public_write(op.id, blk, rng); break;
        case AccessOp::Kind::pub_read: dev->public_read(op.id); break;
        case AccessOp::Kind::hid_write: dev->hidden_write(op.id, blk); break;
        case AccessOp::Kind::hid_read: dev->hidden_read(op.id); break;
      }
    }
  };

  // Both patterns' public writes must be appliable from round one; prime
  // the public ids they touch so reads never fault.
  {
    std::vector<Byte> blk(kBlockSize, 0);
    for (const auto& op : o0)
      if (op.kind == AccessOp::Kind::pub_read || op.kind == AccessOp::Kind::pub_write)
        dev->public_write(op.id, blk, rng);
    for (const auto& op : o1)
      if (op.kind == AccessOp::Kind::hid_read || op.kind == AccessOp::Kind::hid_write) {
        dev->hidden_write(op.id, blk);
        dev->flush_hidden(rng);
      }
    for (const auto& op : o0)
      if (op.kind == AccessOp::Kind::hid_read || op.kind == AccessOp::Kind::hid_write) {
        dev->hidden_write(op.id, blk);
        dev->flush_hidden(rng);
      }
  }

  std::vector<GameResult> results(distinguishers.size());
  for (std::size_t d = 0; d < distinguishers.size(); ++d)
    results[d].distinguisher = distinguishers[d]->name();

  Snapshot prev = store.snapshot();
  for (std::uint32_t round = 0; round < cfg.rounds; ++round) {
    int b = static_cast<int>(rng.random_below(2));
    execute(b == 0 ? o0 : o1);
    Snapshot cur = store.snapshot();

    RoundView view;
    view.changed = snapshot_diff(prev, cur);
    view.region_histogram = RegionCounts{};
    for (auto idx : view.changed)
      ++view.region_histogram[static_cast<std::size_t>(store.geometry().region_of(idx))];
    prev = std::move(cur);

    for (std::size_t d = 0; d < distinguishers.size(); ++d) {
      int guess = distinguishers[d]->guess(view);
      results[d].rounds += 1;
      if (guess == b) results[d].wins += 1;
    }
    for (auto& dist : distinguishers) dist->feedback(b, view);
  }
  for (auto& r : results) r.ci = wilson_ci(r.wins, r.rounds);
  return results;
}

BiasResult bias_attack(std::uint64_t data_blocks, bool legacy, std::uint64_t observations,
                       std::uint64_t seed) {
  DeviceGeometry g = DeviceGeometry::make(data_blocks, data_blocks / 4, data_blocks / 4);
  MemBlockStore store(g);
  Rng rng = Rng::seeded(seed);
  VolumeKey pub_key = random_key(KeyRole::pub, rng);
  VolumeKey hid_key = random_key(KeyRole::hid, rng);
  Pfl pfl(store, pub_key, g);
  pfl.init_fresh(rng);
  OramConfig cfg;
  cfg.legacy_selection = legacy;
  OramState oram(store, hid_key, pfl, cfg);
  oram.init(rng);

  // Observation unit: one selection run's k touched data blocks, with the
  // occupancy state frozen (empty stash means picks are never consumed).
  std::vector<std::uint64_t> touches;
  oram.set_touch_log(&touches);
  std::uint64_t free_obs = 0, free_hits = 0, occ_obs = 0, occ_hits = 0;
  for (std::uint64_t i = 0; i < observations; ++i) {
    BlockAddr target = rng.random_below(data_blocks);
    bool target_free = oram.owner_of(target) == OramState::kOwnerFree;
    touches.clear();
    oram.select_free_blocks(rng);
    bool hit = std::find(touches.begin(), touches.end(), target) != touches.end();
    if (target_free) {
      ++free_obs;
      free_hits += hit;
    } else {
      ++occ_obs;
      occ_hits += hit;
    }
  }
  oram.set_touch_log(nullptr);

  BiasResult r;
  r.observations = observations;
  r.p_touch_free = free_obs ? static_cast<double>(free_hits) / free_obs : 0.0;
  r.p_touch_occupied = occ_obs ? static_cast<double>(occ_hits) / occ_obs : 0.0;
  r.advantage = (r.p_touch_free - r.p_touch_occupied) / 2.0;
  double var_f = free_obs ? r.p_touch_free * (1 - r.p_touch_free) / free_obs : 0.0;
  double var_o = occ_obs ? r.p_touch_occupied * (1 - r.p_touch_occupied) / occ_obs : 0.0;
  r.sigma = std::sqrt(var_f / 4.0 + var_o / 4.0);
  return r;
}

void print_report(std::ostream& os, const ReportLine& line) {
  os << "RESULT name=" << line.name << " stat=" << line.stat << " p=" << line.p
     << " pass=" << (line.pass ? 1 : 0);
  if (!line.detail.empty()) os << " " << line.detail;
  os << "\n";
}

}  // namespace datalair
