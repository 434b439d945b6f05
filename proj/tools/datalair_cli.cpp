#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "datalair/device.hpp"
#include "datalair/harness.hpp"
#include "datalair/oram.hpp"
#include "datalair/stats.hpp"

using namespace datalair;

namespace {

std::optional<std::string> env_opt(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

std::string require_pub_pw() {
  auto pw = env_opt("DLR_PUB_PW");
  if (!pw) throw DlError(DlError::Kind::usage, "set DLR_PUB_PW with the public password");
  return *pw;
}

Rng make_rng(std::uint64_t seed, bool seeded) {
  return seeded ? Rng::seeded(seed) : Rng::os();
}

std::unique_ptr<FileBlockStore> open_device(const std::string& path) {
  auto shape = peek_superblock_shape(path);
  if (!shape) throw DlError(DlError::Kind::corrupt, "not a datalair device: " + path);
  auto geom = DeviceGeometry::make((*shape)[0], (*shape)[1], (*shape)[2]);
  return FileBlockStore::open_or_create(path, geom);
}

struct MountedDevice {
  std::unique_ptr<FileBlockStore> store;
  std::unique_ptr<Device> dev;
};

MountedDevice mount_device(const std::string& path) {
  MountedDevice m;
  m.store = open_device(path);
  m.dev = Device::mount(*m.store, require_pub_pw(), env_opt("DLR_HID_PW"));
  return m;
}

int cmd_init(const std::string& path, std::uint64_t blocks, std::uint64_t pub_size,
             std::uint64_t hid_size, const std::string& policy, std::uint32_t period,
             bool legacy, unsigned kdf_cost, std::uint64_t seed, bool seeded) {
  DeviceConfig cfg = DeviceConfig::defaults(blocks);
  if (pub_size) cfg.pub_logical = pub_size;
  if (hid_size) cfg.hid_logical = hid_size;
  if (policy == "every") cfg.policy = HiddenPolicy::every_write;
  else if (policy == "period") cfg.policy = HiddenPolicy::period;
  else if (policy == "updates-only") cfg.policy = HiddenPolicy::updates_only;
  else throw DlError(DlError::Kind::usage, "policy must be every|period|updates-only");
  cfg.period = period;
  cfg.legacy = legacy;
  cfg.kdf.log_n = static_cast<std::uint8_t>(kdf_cost);

  auto store = FileBlockStore::open_or_create(path, cfg.geometry());
  auto rng = make_rng(seed, seeded);
  // A second password in the environment selects PUB_HID; the command line
  // itself is identical for both modes.
  Device::format(*store, cfg, require_pub_pw(), env_opt("DLR_HID_PW"), rng);
  store->flush();
  std::cout << "initialized " << path << " blocks=" << blocks
            << " pub=" << cfg.pub_logical << " hid=" << cfg.hid_logical << "\n";
  return 0;
}

int cmd_mount(const std::string& path) {
  auto m = mount_device(path);
  const auto& cfg = m.dev->config();
  std::cout << "device " << path << " blocks=" << cfg.data_blocks
            << " pub_logical=" << cfg.pub_logical << " public_mapped=" << m.dev->public_mapped()
            << " hid_logical=" << cfg.hid_logical << "\n";
  return 0;
}

int cmd_unmount(const std::string& path, std::uint64_t seed, bool seeded) {
  auto m = mount_device(path);
  auto rng = make_rng(seed, seeded);
  m.dev->unmount(rng);
  m.store->flush();
  std::cout << "unmounted " << path << "\n";
  return 0;
}

int cmd_io(const std::string& path, const std::string& vol, const std::string& op,
           std::uint64_t id, const std::string& file, std::uint64_t seed, bool seeded) {
  auto m = mount_device(path);
  auto rng = make_rng(seed, seeded);
  if (op == "write") {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DlError(DlError::Kind::usage, "cannot open input file " + file);
    std::vector<Byte> data((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    data.resize(kBlockSize, 0);
    if (vol == "pub") {
      m.dev->public_write(id, data, rng);
    } else {
      // Pending hidden writes persist in the stash at unmount and land
      // with future public writes, per the coupling policy.
      m.dev->hidden_write(id, data);
    }
  } else if (op == "read") {
    auto data = vol == "pub" ? m.dev->public_read(id) : m.dev->hidden_read(id);
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw DlError(DlError::Kind::usage, "cannot open output file " + file);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
  } else {
    throw DlError(DlError::Kind::usage, "op must be read|write");
  }
  m.dev->unmount(rng);
  m.store->flush();
  return 0;
}

int cmd_audit(const std::string& path) {
  auto m = mount_device(path);
  try {
    m.dev->audit();
  } catch (const DlError& e) {
    print_report(std::cout, {"audit", 0, 0, false, std::string("detail=") + e.what()});
    return e.exit_code();
  }
  print_report(std::cout, {"audit", 0, 0, true,
                           m.dev->hidden_unlocked() ? "volumes=public+hidden"
                                                    : "volumes=public"});
  return 0;
}

struct BenchLine {
  std::string label;
  double ops_per_sec = 0;
  double writes_per_op = 0;
  double reads_per_op = 0;
  std::size_t stash_hwm = 0;
};

BenchLine run_bench(std::uint64_t blocks, const std::string& workload, std::uint64_t ops,
                    HiddenPolicy policy, std::uint32_t period, double hidden_fraction,
                    Rng& rng, const std::string& label) {
  DeviceConfig cfg = DeviceConfig::defaults(blocks);
  cfg.kdf = {10, 8, 1};
  cfg.policy = policy;
  cfg.period = period;
  MemBlockStore store(cfg.geometry());
  Device::format(store, cfg, "bench-pub", std::optional<std::string>("bench-hid"), rng);
  auto dev = Device::mount(store, "bench-pub", std::optional<std::string>("bench-hid"));

  ZipfSampler zipf(cfg.pub_logical, 1.0);
  std::vector<Byte> data(kBlockSize, 0x5A);
  auto pick_id = [&](std::uint64_t i) -> std::uint64_t {
    if (workload == "seq") return i % cfg.pub_logical;
    if (workload == "rand") return rng.random_below(cfg.pub_logical);
    double u = static_cast<double>(rng.random_below(1u << 30)) / (1u << 30);
    return zipf.sample(u);
  };

  auto w0 = store.write_count();
  auto r0 = store.read_count();
  auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t i = 0; i < ops; ++i) {
    if (hidden_fraction > 0 &&
        rng.random_below(1000) < static_cast<std::uint64_t>(hidden_fraction * 1000))
      dev->hidden_write(rng.random_below(cfg.hid_logical), data);
    dev->public_write(pick_id(i), data, rng);
  }
  auto t1 = std::chrono::steady_clock::now();

  BenchLine line;
  line.label = label;
  double secs = std::chrono::duration<double>(t1 - t0).count();
  line.ops_per_sec = secs > 0 ? static_cast<double>(ops) / secs : 0;
  line.writes_per_op = static_cast<double>(store.write_count() - w0) / static_cast<double>(ops);
  line.reads_per_op = static_cast<double>(store.read_count() - r0) / static_cast<double>(ops);
  line.stash_hwm = dev->stash_high_water();
  return line;
}

void print_bench(const BenchLine& line) {
  std::cout << "BENCH label=" << line.label << " ops_per_sec=" << line.ops_per_sec
            << " writes_per_op=" << line.writes_per_op << " reads_per_op=" << line.reads_per_op
            << " stash_hwm=" << line.stash_hwm << "\n";
}

int cmd_bench(std::uint64_t blocks, const std::string& workload, std::uint64_t ops,
              bool sweep, double hidden_fraction, std::uint64_t seed, bool seeded) {
  auto rng = make_rng(seed, seeded);
  if (!sweep) {
    print_bench(run_bench(blocks, workload, ops, HiddenPolicy::every_write, 1,
                          hidden_fraction, rng, "phi=1"));
    return 0;
  }
  // Public-write throughput against the public:hidden ratio, then the
  // updates-only policy. Throughput must rise monotonically with the ratio.
  for (std::uint32_t r = 1; r <= 10; ++r) {
    print_bench(run_bench(blocks, workload, ops, HiddenPolicy::period, r, 0, rng,
                          "ratio=" + std::to_string(r)));
  }
  print_bench(
      run_bench(blocks, workload, ops, HiddenPolicy::updates_only, 1, 0, rng, "updates-only"));
  return 0;
}

int cmd_attack(std::uint64_t blocks, std::uint64_t observations, bool legacy,
               std::uint64_t seed) {
  auto res = bias_attack(blocks, legacy, observations, seed);
  double z = res.sigma > 0 ? res.advantage / res.sigma : 0;
  print_report(std::cout,
               {legacy ? "bias-legacy" : "bias-fixed", res.advantage, 0,
                legacy ? z > 3 : std::abs(z) < 3,
                "advantage=" + std::to_string(res.advantage) +
                    " sigma=" + std::to_string(res.sigma) + " z=" + std::to_string(z)});
  return 0;
}

int cmd_game(std::uint64_t blocks, std::uint32_t rounds, std::uint64_t seed) {
  GameConfig cfg;
  cfg.device = DeviceConfig::defaults(blocks);
  cfg.device.kdf = {10, 8, 1};
  cfg.rounds = rounds;
  cfg.seed = seed;
  AccessPattern o0 = {{AccessOp::Kind::pub_write, 3, 7}};
  AccessPattern o1 = {{AccessOp::Kind::hid_write, 11, 9}, {AccessOp::Kind::pub_write, 3, 7}};
  auto results = run_game(cfg, o0, o1, builtin_distinguishers());
  bool all_ok = true;
  for (auto& r : results) {
    bool ok = r.ci.contains(0.5);
    all_ok = all_ok && ok;
    print_report(std::cout, {"game-" + r.distinguisher, r.ci.rate, 0, ok,
                             "wins=" + std::to_string(r.wins) + "/" + std::to_string(r.rounds) +
                                 " ci=[" + std::to_string(r.ci.lo) + "," +
                                 std::to_string(r.ci.hi) + "]"});
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"datalair: plausibly deniable block storage"};
  app.require_subcommand(1);

  std::string device, vol = "pub", op = "read", file, workload = "zipf", policy = "every";
  std::uint64_t blocks = 16384, pub_size = 0, hid_size = 0, id = 0, ops = 1000;
  std::uint64_t observations = 100000, seed = 0;
  std::uint32_t period = 1, rounds = 1000;
  unsigned kdf_cost = 14;
  bool legacy = false, fixed = false, sweep = false;
  double hidden_fraction = 0.0;

  auto* init = app.add_subcommand("init", "create and format a device file");
  init->add_option("--device", device)->required();
  init->add_option("--blocks", blocks, "ORAM data blocks (N)");
  init->add_option("--pub-size", pub_size, "public logical blocks (default N/4)");
  init->add_option("--hid-size", hid_size, "hidden logical blocks (default N/4)");
  init->add_option("--policy", policy, "every|period|updates-only");
  init->add_option("--period", period, "public writes per hidden step");
  init->add_flag("--legacy", legacy, "biased legacy selection (attack demos)");
  init->add_option("--kdf-cost", kdf_cost, "scrypt log2 cost (default 14)");
  auto* seed_opt_init = init->add_option("--seed", seed, "deterministic randomness");

  auto* mount = app.add_subcommand("mount", "verify passwords and print volume info");
  mount->add_option("--device", device)->required();

  auto* unmount = app.add_subcommand("unmount", "reseal the stash region");
  unmount->add_option("--device", device)->required();
  auto* seed_opt_unmount = unmount->add_option("--seed", seed);

  auto* io = app.add_subcommand("io", "single-block volume I/O");
  io->add_option("--device", device)->required();
  io->add_option("--vol", vol, "pub|hid");
  io->add_option("--op", op, "read|write")->required();
  io->add_option("--id", id, "logical block id")->required();
  io->add_option("--file", file, "data file (4KB)")->required();
  auto* seed_opt_io = io->add_option("--seed", seed);

  auto* audit = app.add_subcommand("audit", "structural invariant checks");
  audit->add_option("--device", device)->required();

  auto* bench = app.add_subcommand("bench", "self-contained throughput benchmark");
  bench->add_option("--blocks", blocks);
  bench->add_option("--workload", workload, "seq|rand|zipf");
  bench->add_option("--ops", ops);
  bench->add_flag("--sweep-phi", sweep, "sweep public:hidden ratio 1..10 + updates-only");
  bench->add_option("--hidden-fraction", hidden_fraction,
                    "fraction of ops preceded by a hidden write");
  auto* seed_opt_bench = bench->add_option("--seed", seed);

  auto* attack = app.add_subcommand("attack", "free/occupied bias measurement");
  attack->add_option("--blocks", blocks);
  attack->add_option("--observations", observations);
  attack->add_flag("--legacy", legacy, "measure the biased legacy protocol");
  attack->add_flag("--fixed", fixed, "measure the fixed protocol (default)");
  attack->add_option("--seed", seed);

  auto* game = app.add_subcommand("game", "PD-CPA game with built-in distinguishers");
  game->add_option("--blocks", blocks);
  game->add_option("--rounds", rounds);
  game->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (init->parsed())
      return cmd_init(device, blocks, pub_size, hid_size, policy, period, legacy, kdf_cost,
                      seed, !seed_opt_init->empty());
    if (mount->parsed()) return cmd_mount(device);
    if (unmount->parsed()) return cmd_unmount(device, seed, !seed_opt_unmount->empty());
    if (io->parsed()) return cmd_io(device, vol, op, id, file, seed, !seed_opt_io->empty());
    if (audit->parsed()) return cmd_audit(device);
    if (bench->parsed())
      return cmd_bench(blocks, workload, ops, sweep, hidden_fraction, seed,
                       !seed_opt_bench->empty());
    if (attack->parsed()) return cmd_attack(blocks, observations, legacy && !fixed, seed);
    if (game->parsed()) return cmd_game(blocks, rounds, seed);
  } catch (const DlError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
