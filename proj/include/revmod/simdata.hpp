#pragma once

// Deterministic multi-room dry/reverberant dataset synthesis and the
// manifest that binds audio files to rooms and ground truth.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "revmod/convolution.hpp"
#include "revmod/core.hpp"
#include "revmod/io.hpp"
#include "revmod/rir.hpp"
#include "revmod/vocoder.hpp"

namespace revmod {

struct F0TrackOptions {
  double f0_min = 80.0;
  double f0_max = 300.0;
  std::size_t min_run = 10;  // frames
  std::size_t max_run = 40;
  double voiced_prob = 0.6;
  double pause_prob = 0.15;  // silent (unvoiced, inactive) runs
  double jitter_hz = 3.0;
};

/// Piecewise-smooth F0 random walk with voiced, unvoiced and silent runs of
/// at least min_run frames each.
inline F0Track gen_f0_track(std::uint64_t seed, double duration, int fs, std::size_t frame_shift,
                            const F0TrackOptions& opt = {}) {
  require(fs > 0 && frame_shift >= 1, "gen_f0_track: invalid sample rate or frame shift");
  const auto n = static_cast<std::size_t>(std::llround(duration * fs / static_cast<double>(frame_shift)));
  require(n >= 2, "gen_f0_track: duration must cover at least two frames");
  F0Track tr;
  tr.frame_shift = frame_shift;
  tr.sample_rate = fs;
  tr.f0.assign(n, 0.0);
  tr.vuv.assign(n, 0);
  tr.active.assign(n, 1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> run_len(opt.min_run, opt.max_run);
  std::normal_distribution<double> jitter(0.0, opt.jitter_hz);
  double f0 = opt.f0_min + (opt.f0_max - opt.f0_min) * (0.2 + 0.4 * unit(rng));
  double drift = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t run = run_len(rng);
    // never leave a remainder shorter than one run
    if (n - i - std::min(run, n - i) < opt.min_run) run = n - i;
    const double u = unit(rng);
    const bool voiced = n >= opt.min_run && u < opt.voiced_prob;
    const bool pause = !voiced && u >= 1.0 - opt.pause_prob;
    for (std::size_t j = i; j < i + run; ++j) {
      drift = 0.9 * drift + jitter(rng);
      f0 = std::clamp(f0 + drift, opt.f0_min, opt.f0_max);
      if (f0 == opt.f0_min || f0 == opt.f0_max) drift = -drift;
      tr.f0[j] = f0;
      tr.vuv[j] = voiced ? 1 : 0;
      tr.active[j] = pause ? 0 : 1;
    }
    i += run;
  }
  return tr;
}

enum class Split { train, val, test_seen, test_unseen };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test_seen: return "test_seen";
    case Split::test_unseen: return "test_unseen";
  }
  return "train";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test_seen") return Split::test_seen;
  if (s == "test_unseen") return Split::test_unseen;
  throw FormatError("manifest: unknown split '" + std::string(s) + "'");
}

struct RoomRecord {
  RoomSpec spec;
  std::size_t rir_length = 2048;
  bool unseen = false;
};

struct ManifestEntry {
  std::string utt_id;
  std::string dry_path;     // relative to the manifest directory
  std::string reverb_path;
  std::string f0_path;
  std::string room_id;
  double t60_truth = 0.0;
  Split split = Split::train;
};

struct SimConfig {
  int sample_rate = 8000;
  double duration = 2.0;        // seconds per utterance
  std::size_t f0_frame_shift = 80;
  std::size_t harmonics = 8;
  double amp = 0.1;
  std::size_t dry_fir_length = 32;
  double train_fraction = 0.9;
  double val_fraction = 0.05;
  std::size_t n_unseen_utts = 0;  // 0: n_utts / 20, at least one per unseen room
  F0TrackOptions f0;
};

struct DatasetManifest {
  int sample_rate = 8000;
  std::vector<RoomRecord> rooms;
  std::vector<ManifestEntry> entries;
  SimConfig config;
  std::filesystem::path base_dir;  // directory holding manifest.json

  const RoomRecord& room(std::string_view id) const {
    for (const auto& r : rooms)
      if (r.spec.room_id == id) return r;
    throw FormatError("manifest: unknown room '" + std::string(id) + "'");
  }

  std::vector<const ManifestEntry*> select(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(&e);
    return out;
  }
};

/// Fixed spectrally rich filter shaping the natural dry signal.
inline std::vector<double> natural_dry_fir(std::size_t length, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0xF12));
  std::normal_distribution<double> g(0.0, 0.35);
  std::vector<double> f(length, 0.0);
  f[0] = 1.0;
  for (std::size_t k = 1; k < length; ++k) f[k] = g(rng) * std::pow(0.8, static_cast<double>(k));
  return f;
}

inline std::uint64_t source_seed(std::uint64_t dataset_seed, std::size_t utt_index) {
  return derive_seed(dataset_seed, 0x50000 + utt_index);
}

// F0 file: JSON {sample_rate, frame_shift, f0[], vuv[], active[], source_seed, harmonics, amp}
inline nlohmann::json f0_to_json(const F0Track& tr, std::uint64_t seed, std::size_t harmonics, double amp) {
  return {{"sample_rate", tr.sample_rate}, {"frame_shift", tr.frame_shift}, {"f0", tr.f0},
          {"vuv", tr.vuv},                 {"active", tr.active},           {"source_seed", seed},
          {"harmonics", harmonics},        {"amp", amp}};
}

struct F0File {
  F0Track track;
  std::uint64_t source_seed = 0;
  std::size_t harmonics = 8;
  double amp = 0.1;
};

inline F0File f0_from_json(const nlohmann::json& j) {
  F0File f;
  f.track.sample_rate = j.at("sample_rate").get<int>();
  f.track.frame_shift = j.at("frame_shift").get<std::size_t>();
  f.track.f0 = j.at("f0").get<std::vector<double>>();
  f.track.vuv = j.at("vuv").get<std::vector<std::uint8_t>>();
  if (j.contains("active")) f.track.active = j.at("active").get<std::vector<std::uint8_t>>();
  f.source_seed = j.at("source_seed").get<std::uint64_t>();
  f.harmonics = j.at("harmonics").get<std::size_t>();
  f.amp = j.at("amp").get<double>();
  f.track.validate();
  return f;
}

inline nlohmann::json room_to_json(const RoomRecord& r) {
  return {{"room_id", r.spec.room_id},
          {"t60", r.spec.t60},
          {"direct_to_reverb_db", r.spec.direct_to_reverb_db},
          {"onset_delay", r.spec.onset_delay},
          {"seed", r.spec.seed},
          {"rir_length", r.rir_length},
          {"unseen", r.unseen}};
}

inline RoomRecord room_from_json(const nlohmann::json& j) {
  RoomRecord r;
  r.spec.room_id = j.at("room_id").get<std::string>();
  r.spec.t60 = j.at("t60").get<double>();
  r.spec.direct_to_reverb_db = j.value("direct_to_reverb_db", 0.0);
  r.spec.onset_delay = j.value("onset_delay", std::size_t{1});
  r.spec.seed = j.value("seed", std::uint64_t{0});
  r.rir_length = j.value("rir_length", std::size_t{2048});
  r.unseen = j.value("unseen", false);
  r.spec.validate();
  return r;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json rooms = nlohmann::json::array();
  for (const auto& r : m.rooms) rooms.push_back(room_to_json(r));
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries)
    entries.push_back({{"utt_id", e.utt_id},
                       {"dry_path", e.dry_path},
                       {"reverb_path", e.reverb_path},
                       {"f0_path", e.f0_path},
                       {"room_id", e.room_id},
                       {"t60_truth", e.t60_truth},
                       {"split", to_string(e.split)}});
  const auto& c = m.config;
  const nlohmann::json sim{{"duration", c.duration},           {"f0_frame_shift", c.f0_frame_shift},
                           {"harmonics", c.harmonics},         {"amp", c.amp},
                           {"dry_fir_length", c.dry_fir_length}, {"train_fraction", c.train_fraction},
                           {"val_fraction", c.val_fraction},   {"pause_prob", c.f0.pause_prob}};
  return {{"version", 1}, {"sample_rate", m.sample_rate}, {"sim", sim}, {"rooms", rooms}, {"entries", entries}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, std::filesystem::path base_dir) {
  if (j.value("version", 0) != 1) throw FormatError("manifest: unsupported version");
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  m.sample_rate = j.at("sample_rate").get<int>();
  m.config.sample_rate = m.sample_rate;
  if (j.contains("sim")) {
    const auto& s = j["sim"];
    auto& c = m.config;
    c.duration = s.value("duration", c.duration);
    c.f0_frame_shift = s.value("f0_frame_shift", c.f0_frame_shift);
    c.harmonics = s.value("harmonics", c.harmonics);
    c.amp = s.value("amp", c.amp);
    c.dry_fir_length = s.value("dry_fir_length", c.dry_fir_length);
    c.train_fraction = s.value("train_fraction", c.train_fraction);
    c.val_fraction = s.value("val_fraction", c.val_fraction);
    c.f0.pause_prob = s.value("pause_prob", c.f0.pause_prob);
  }
  for (const auto& r : j.at("rooms")) m.rooms.push_back(room_from_json(r));
  std::set<std::string> ids;
  for (const auto& e : j.at("entries")) {
    ManifestEntry me;
    me.utt_id = e.at("utt_id").get<std::string>();
    me.dry_path = e.at("dry_path").get<std::string>();
    me.reverb_path = e.at("reverb_path").get<std::string>();
    me.f0_path = e.value("f0_path", std::string{});
    me.room_id = e.at("room_id").get<std::string>();
    me.t60_truth = e.at("t60_truth").get<double>();
    me.split = split_from_string(e.at("split").get<std::string>());
    if (!ids.insert(me.utt_id).second) throw FormatError("manifest: duplicate utt_id " + me.utt_id);
    m.entries.push_back(std::move(me));
  }
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  try {
    return manifest_from_json(nlohmann::json::parse(detail::read_file(path)), path.parent_path());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  detail::write_file(path, manifest_to_json(m).dump(2) + "\n");
}

// Float32 storage rounding, applied before deriving the reverberant signal so
// the stored pair satisfies reverb == convolve_fft(dry, rir) exactly.
inline std::vector<double> round_to_float(std::span<const double> x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(static_cast<float>(x[i]));
  return out;
}

/// Writes dry/, reverb/, f0/, rooms/ and manifest.json under out_dir.
inline DatasetManifest build_dataset(const std::vector<RoomSpec>& rooms, const std::vector<RoomSpec>& unseen_rooms,
                                     std::size_t n_utts, const std::filesystem::path& out_dir, std::uint64_t seed,
                                     const SimConfig& cfg = {}, const std::map<std::string, std::size_t>& rir_lengths = {}) {
  require(!rooms.empty(), "build_dataset: at least one seen room is required");
  require(n_utts >= rooms.size(), "build_dataset: fewer utterances than rooms");
  std::set<std::string> ids;
  for (const auto* list : {&rooms, &unseen_rooms})
    for (const auto& r : *list) {
      r.validate();
      if (!ids.insert(r.room_id).second) throw std::invalid_argument("build_dataset: duplicate room_id " + r.room_id);
    }
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"dry", "reverb", "f0", "rooms"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("build_dataset: cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }

  DatasetManifest m;
  m.sample_rate = cfg.sample_rate;
  m.config = cfg;
  m.base_dir = out_dir;
  std::map<std::string, Rir> rirs;
  auto add_room = [&](const RoomSpec& spec, bool unseen) {
    auto it = rir_lengths.find(spec.room_id);
    const std::size_t len = it != rir_lengths.end() ? it->second : 2048;
    RoomRecord rec{spec, len, unseen};
    auto h = synth_rir(spec, len, cfg.sample_rate);
    write_rir(out_dir / "rooms" / (spec.room_id + ".rir"), h);
    rirs.emplace(spec.room_id, std::move(h));
    m.rooms.push_back(rec);
  };
  for (const auto& r : rooms) add_room(r, false);
  for (const auto& r : unseen_rooms) add_room(r, true);

  const auto fir = natural_dry_fir(cfg.dry_fir_length, seed);
  auto make_utt = [&](const std::string& id, std::size_t index, const RoomSpec& room, Split split) {
    const auto track = gen_f0_track(derive_seed(seed, index), cfg.duration, cfg.sample_rate, cfg.f0_frame_shift, cfg.f0);
    const auto sseed = source_seed(seed, index);
    const auto src = sine_source(track, cfg.harmonics, cfg.amp, sseed);
    const auto dry = round_to_float(convolve_fft(src.view(), fir));
    const auto rev = round_to_float(convolve_fft(dry, rirs.at(room.room_id).coefficients()));
    for (double v : rev)
      if (std::abs(v) > 1.0) throw NumericError("build_dataset: reverberant sample exceeds full scale in " + id);
    ManifestEntry e{id, "dry/" + id + ".wav", "reverb/" + id + ".wav", "f0/" + id + ".json", room.room_id, room.t60,
                    split};
    write_wav(out_dir / e.dry_path, Waveform(dry, cfg.sample_rate), WavEncoding::float32);
    write_wav(out_dir / e.reverb_path, Waveform(rev, cfg.sample_rate), WavEncoding::float32);
    detail::write_file(out_dir / e.f0_path, f0_to_json(track, sseed, cfg.harmonics, cfg.amp).dump() + "\n");
    m.entries.push_back(std::move(e));
  };

  const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(n_utts)));
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(n_utts)));
  char buf[32];
  for (std::size_t i = 0; i < n_utts; ++i) {
    const Split split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test_seen);
    std::snprintf(buf, sizeof buf, "utt%04zu", i);
    make_utt(buf, i, rooms[i % rooms.size()], split);
  }
  if (!unseen_rooms.empty()) {
    std::size_t n_unseen = cfg.n_unseen_utts ? cfg.n_unseen_utts : std::max(unseen_rooms.size(), n_utts / 20);
    for (std::size_t i = 0; i < n_unseen; ++i) {
      std::snprintf(buf, sizeof buf, "unseen%04zu", i);
      make_utt(buf, n_utts + i, unseen_rooms[i % unseen_rooms.size()], Split::test_unseen);
    }
  }
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

/// One utterance loaded into memory.
struct Utterance {
  std::string utt_id;
  Waveform dry;
  Waveform reverb;
  std::string room_id;
  double t60_truth = 0.0;
  Split split = Split::train;
  std::optional<F0File> f0;
};

inline std::vector<Utterance> load_split(const DatasetManifest& m, Split split) {
  std::vector<Utterance> out;
  for (const auto* e : m.select(split)) {
    Utterance u;
    u.utt_id = e->utt_id;
    u.dry = read_wav(m.base_dir / e->dry_path);
    u.reverb = read_wav(m.base_dir / e->reverb_path);
    if (u.dry.size() != u.reverb.size())
      throw FormatError("dataset: dry and reverberant lengths differ for " + e->utt_id);
    u.room_id = e->room_id;
    u.t60_truth = e->t60_truth;
    u.split = e->split;
    if (!e->f0_path.empty() && std::filesystem::exists(m.base_dir / e->f0_path))
      u.f0 = f0_from_json(nlohmann::json::parse(detail::read_file(m.base_dir / e->f0_path)));
    out.push_back(std::move(u));
  }
  return out;
}

inline Rir load_room_rir(const DatasetManifest& m, const std::string& room_id) {
  const auto& rec = m.room(room_id);
  return synth_rir(rec.spec, rec.rir_length, m.sample_rate);
}

}  // namespace revmod
