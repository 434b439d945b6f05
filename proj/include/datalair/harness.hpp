#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "datalair/device.hpp"
#include "datalair/stats.hpp"

namespace datalair {

// Indices whose digests differ between two snapshots of equal geometry.
std::vector<std::uint64_t> snapshot_diff(const Snapshot& a, const Snapshot& b);

// Logical access patterns for the chosen-pattern game. Payloads are fill
// patterns; data content is irrelevant to the traces under test.
struct AccessOp {
  enum class Kind { pub_write, pub_read, hid_write, hid_read } kind;
  std::uint64_t id = 0;
  Byte fill = 0;
};
using AccessPattern = std::vector<AccessOp>;

// Game-legality (§3.2 restrictions): identical public writes in order, and
// neither pattern's hidden writes may exceed phi times its public writes.
void check_game_legal(const AccessPattern& o0, const AccessPattern& o1, std::uint32_t phi);

struct RoundView {
  std::vector<std::uint64_t> changed;
  RegionCounts region_histogram;
};

class Distinguisher {
 public:
  virtual ~Distinguisher() = default;
  virtual std::string name() const = 0;
  virtual int guess(const RoundView& round) = 0;
  virtual void feedback(int truth, const RoundView& round) {}
};

// Ships: constant-zero baseline, diff-cardinality comparator, frequency
// (per-block change rate) classifier, region-histogram comparator.
std::vector<std::unique_ptr<Distinguisher>> builtin_distinguishers();

struct GameConfig {
  DeviceConfig device;
  std::uint32_t rounds = 1000;
  std::uint64_t seed = 1;
};

struct GameResult {
  std::string distinguisher;
  std::uint64_t rounds = 0;
  std::uint64_t wins = 0;
  BinomialCi ci{};
};

// Runs the PD-CPA game on one PUB_HID device: per round a fresh coin picks
// O_b, the pattern executes, and every distinguisher guesses from the
// snapshot diff history.
std::vector<GameResult> run_game(const GameConfig& cfg, const AccessPattern& o0,
                                 const AccessPattern& o1,
                                 std::vector<std::unique_ptr<Distinguisher>> distinguishers);

// Free/occupied classification advantage of a single-observation adversary
// watching selection-protocol touch sets (the §4.3 bias regression).
struct BiasResult {
  std::uint64_t observations = 0;
  double p_touch_free = 0.0;      // P[target touched | target free]
  double p_touch_occupied = 0.0;  // P[target touched | target occupied]
  double advantage = 0.0;         // (p_f - p_o) / 2
  double sigma = 0.0;             // standard error of the advantage
};

BiasResult bias_attack(std::uint64_t data_blocks, bool legacy, std::uint64_t observations,
                       std::uint64_t seed);

struct ReportLine {
  std::string name;
  double stat = 0.0;
  double p = 0.0;
  bool pass = false;
  std::string detail;
};

void print_report(std::ostream& os, const ReportLine& line);

}  // namespace datalair
