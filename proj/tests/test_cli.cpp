#include <gtest/gtest.h>

#include <cstdio>
#include <random>
#include <sys/wait.h>

#include "revmod/simdata.hpp"

using namespace revmod;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// stdout only; the resolved config on stderr is discarded
Run cli(const std::string& args) {
  const std::string cmd = std::string(REVMOD_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("revmod_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// One seen room and a handful of short utterances.
fs::path small_dataset(const fs::path& d) {
  detail::write_file(d / "rooms.json",
                     R"({"rooms": [{"room_id": "a", "t60": 0.25, "seed": 3, "rir_length": 2500}],
                         "unseen": [{"room_id": "u", "t60": 0.4, "seed": 4, "rir_length": 4000}]})");
  detail::write_file(d / "cfg.json", R"({"sim": {"duration": 0.5}})");
  const auto r = cli("simulate --rooms " + q(d / "rooms.json") + " --utts 12 --seed 5 --config " + q(d / "cfg.json") +
                     " --out " + q(d / "ds"));
  EXPECT_EQ(r.code, 0) << r.out;
  return d / "ds" / "manifest.json";
}

std::string strip_wall_clock(std::string jsonl) {
  std::ostringstream os;
  std::istringstream is(jsonl);
  for (std::string line; std::getline(is, line);) {
    auto j = nlohmann::json::parse(line);
    j.erase("wall_ms");
    os << j.dump() << "\n";
  }
  return os.str();
}

}  // namespace

TEST(Cli, IdentityApplyIsSampleExact) {
  const auto d = scratch("apply");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 0.2);
  std::vector<double> x(3000);
  for (auto& v : x) v = std::clamp(g(rng), -1.0, 1.0);
  write_wav(d / "d.wav", Waveform(x, 8000), WavEncoding::float32);
  write_rir(d / "identity.rir", Rir::identity(8000, 64));
  const auto r = cli("apply --dry " + q(d / "d.wav") + " --rir " + q(d / "identity.rir") + " --out " + q(d / "o.wav"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(read_wav(d / "o.wav").samples, read_wav(d / "d.wav").samples);
}

TEST(Cli, T60OfExponentialFixture) {
  const auto d = scratch("t60");
  const int fs = 8000;
  const double t60 = 0.3;
  // amplitude falls 60 dB over t60 seconds
  std::vector<double> h(4000);
  for (std::size_t n = 0; n < h.size(); ++n) h[n] = std::pow(10.0, -3.0 * static_cast<double>(n) / (t60 * fs));
  write_rir(d / "exp.rir", Rir::from_coefficients(h, fs));
  const auto r = cli("t60 --rir " + q(d / "exp.rir"));
  ASSERT_EQ(r.code, 0);
  EXPECT_NEAR(std::stod(r.out), t60, 0.02 * t60) << r.out;
}

TEST(Cli, EvaluateTruthRirWithinSchroederTolerance) {
  const auto d = scratch("eval");
  const auto manifest = small_dataset(d);
  const auto r = cli("evaluate --manifest " + q(manifest) + " --model " + q(d / "ds" / "rooms" / "a.rir") +
                     " --split train --plot-csv " + q(d / "errs.csv"));
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_LE(std::abs(j["pooled"]["mean_err"].get<double>()), 0.1 * 0.25);
  ASSERT_EQ(j["rooms"].size(), 1u);
  const auto& room = j["rooms"][0];
  EXPECT_EQ(room["room_id"], "a");
  EXPECT_EQ(room["t60_truth"], 0.25);
  for (const char* k : {"mean_err", "median_err", "q1", "q3", "n"}) EXPECT_TRUE(room.contains(k)) << k;
  const auto csv = detail::read_file(d / "errs.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + room["n"].get<long>());
}

TEST(Cli, ExitCodes) {
  const auto d = scratch("codes");
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("t60").code, 2);
  EXPECT_EQ(cli("t60 --rir x.rir --bogus").code, 2);
  EXPECT_EQ(cli("train-gti --manifest m.json --rir-len 8 --steps 1 --loss l1").code, 2);
  EXPECT_EQ(cli("gradcheck --module everything").code, 2);
  EXPECT_EQ(cli("t60 --rir " + q(d / "missing.rir")).code, 1);
  EXPECT_EQ(cli("evaluate --manifest " + q(d / "none.json") + " --model " + q(d / "none.rir")).code, 1);
  detail::write_file(d / "bad.rir", "RIR1 but not really");
  EXPECT_EQ(cli("t60 --rir " + q(d / "bad.rir")).code, 1);
  detail::write_file(d / "cfg.json", R"({"unknown_module": {}})");
  EXPECT_EQ(cli("t60 --config " + q(d / "cfg.json") + " --rir " + q(d / "bad.rir")).code, 2);
  EXPECT_EQ(cli("gradcheck --module losses").code, 0);
}

TEST(Cli, TrainingRunsAreReproducible) {
  const auto d = scratch("repro");
  const auto manifest = small_dataset(d);
  detail::write_file(d / "tiny.json", R"({"utv": {"hidden": 6, "channels": 6, "kernel": 3},
                                         "hyper": {"mrsd": [{"fft_size": 128, "frame_length": 96, "frame_shift": 48}]}})");
  for (const std::string sub : {"train-gti", "train-utv", "train-mt"}) {
    std::string stdout_a;
    for (const char* tag : {"a", "b"}) {
      const auto out = d / (sub + tag);
      const auto r = cli(sub + " --manifest " + q(manifest) + " --rir-len 48 --steps 4 --seed 9 --config " +
                         q(d / "tiny.json") + " --out " + q(out));
      ASSERT_EQ(r.code, 0) << sub;
      if (stdout_a.empty()) {
        stdout_a = r.out;
        continue;
      }
      EXPECT_EQ(r.out, stdout_a) << sub;
      for (const auto& f : fs::directory_iterator(out)) {
        const auto name = f.path().filename();
        const auto mine = detail::read_file(f.path()), theirs = detail::read_file(d / (sub + "a") / name);
        if (name == "report.jsonl") {
          EXPECT_EQ(strip_wall_clock(mine), strip_wall_clock(theirs)) << sub;
        } else {
          EXPECT_EQ(mine, theirs) << sub << " " << name;
        }
      }
    }
  }
}

TEST(Cli, ApplyWithEstimatorCheckpoint) {
  const auto d = scratch("apply_ck");
  const auto manifest = small_dataset(d);
  const auto m = read_manifest(manifest);
  detail::write_file(d / "tiny.json", R"({"utv": {"hidden": 6, "channels": 6, "kernel": 3}})");
  ASSERT_EQ(cli("train-utv --manifest " + q(manifest) + " --rir-len 32 --steps 2 --loss wave --config " +
                q(d / "tiny.json") + " --out " + q(d / "u"))
                .code,
            0);
  const auto& e = m.entries.front();
  const auto r = cli("apply --dry " + q(m.base_dir / e.dry_path) + " --ckpt " + q(d / "u" / "utv.ckpt") +
                     " --las-source " + q(m.base_dir / e.reverb_path) + " --out " + q(d / "o.wav"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(read_wav(d / "o.wav").size(), read_wav(m.base_dir / e.dry_path).size());
  EXPECT_EQ(cli("apply --dry " + q(m.base_dir / e.dry_path) + " --out " + q(d / "x.wav")).code, 2);
}
