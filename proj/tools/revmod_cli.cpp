// revmod: simulate, train, apply, evaluate and gradient-check from the shell.

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>

#include "revmod/selfcheck.hpp"
#include "revmod/simdata.hpp"
#include "revmod/train.hpp"

using namespace revmod;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Settings {
  TrainHyper hyper;
  UtvConfig utv = UtvConfig::desk_default();
  SimConfig sim;
  std::size_t vocoder_fir = 32;
};

// Wrong-shaped or ill-typed config content is a usage problem, not a runtime failure.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void overlay(Settings& s, const json& j) {
  try {
    for (const auto& [k, v] : j.items())
      if (k != "hyper" && k != "utv" && k != "sim" && k != "vocoder") throw UsageError("config: unknown key '" + k + "'");
    if (j.contains("hyper")) s.hyper = hyper_from_json(j.at("hyper"), s.hyper);
    if (j.contains("utv")) {
      auto u = detail::utv_config_json(s.utv);
      u.update(j.at("utv"));
      s.utv = detail::utv_config_from_json(u);
    }
    if (j.contains("sim")) {
      auto m = manifest_to_json(DatasetManifest{s.sim.sample_rate, {}, {}, s.sim, {}});
      m["sim"].update(j.at("sim"));
      if (j.at("sim").contains("sample_rate")) m["sample_rate"] = j.at("sim").at("sample_rate");
      s.sim = manifest_from_json(m, {}).config;
    }
    if (j.contains("vocoder")) s.vocoder_fir = j.at("vocoder").value("fir_length", s.vocoder_fir);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
}

json resolved(const Settings& s, const std::string& cmd, std::uint64_t seed, const std::string& out) {
  auto sim = manifest_to_json(DatasetManifest{s.sim.sample_rate, {}, {}, s.sim, {}})["sim"];
  sim["sample_rate"] = s.sim.sample_rate;
  return {{"command", cmd},
          {"seed", seed},
          {"out", out},
          {"hyper", hyper_to_json(s.hyper)},
          {"utv", detail::utv_config_json(s.utv)},
          {"sim", sim},
          {"vocoder", {{"fir_length", s.vocoder_fir}}}};
}

json read_json_file(const fs::path& p) {
  const auto text = detail::read_file(p);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

std::vector<RoomSpec> room_list(const json& j, const char* key, std::map<std::string, std::size_t>& lengths) {
  std::vector<RoomSpec> out;
  if (!j.contains(key)) return out;
  for (const auto& r : j.at(key)) {
    const auto rec = room_from_json(r);
    lengths[rec.spec.room_id] = rec.rir_length;
    out.push_back(rec.spec);
  }
  return out;
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  detail::write_file(p, s);
}

fs::path out_dir(const std::string& out) {
  const fs::path d = out.empty() ? fs::path(".") : fs::path(out);
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw IoError("cannot create output directory " + d.string() + ": " + ec.message());
  return d;
}

TrainingData training_set(const std::string& manifest, const TrainHyper& hyper) {
  const auto m = read_manifest(manifest);
  return prepare_training_data(load_split(m, Split::train), hyper);
}

// Per-utterance T60 prediction for whatever kind of model file was given.
struct Model {
  std::optional<double> fixed;  // a single RIR for every utterance
  std::optional<UtvEstimatorParams> utv;
  FeatureNorm norm;
  StftConfig features;
};

Model load_model(const fs::path& p) {
  const auto bytes = detail::read_file(p);
  Model m;
  if (bytes.starts_with("RIR1")) {
    m.fixed = estimate_t60(decode_rir(bytes, p.string()));
    return m;
  }
  const auto ck = decode_checkpoint(bytes, p.string());
  const auto kind = ck.config.value("kind", std::string{});
  if (kind == "gti") {
    m.fixed = estimate_t60(gti_from_checkpoint(ck).rir.assemble());
  } else if (kind == "utv") {
    auto st = utv_from_checkpoint(ck);
    m.utv = std::move(st.params);
    m.norm = st.norm;
  } else if (kind == "mt") {
    auto st = mt_from_checkpoint(ck);
    if (st.model == ReverbModel::gti) {
      m.fixed = estimate_t60(st.gti.assemble());
    } else {
      m.utv = std::move(st.utv);
      m.norm = st.norm;
    }
  } else {
    throw FormatError(p.string() + ": unknown checkpoint kind '" + kind + "'");
  }
  m.features = hyper_from_json(ck.config.at("hyper")).features;
  return m;
}

double predict_t60(const Model& m, const Utterance& u) {
  if (m.fixed) return *m.fixed;
  return estimate_t60(predict_rir(*m.utv, u.reverb.samples, m.features, m.norm, u.reverb.sample_rate));
}

json stats_json(const T60ErrorStats& s) {
  return {{"n", s.n},         {"mean_err", s.mean}, {"median_err", s.median}, {"q1", s.q1},
          {"q3", s.q3},       {"min", s.min},       {"max", s.max},           {"mean_abs_err", s.mean_abs}};
}

std::string num(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reverberation modelling toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::string config_path, out;
  app.add_option("--seed", seed, "random seed")->capture_default_str();
  app.add_option("--config", config_path, "JSON overriding module defaults");
  app.add_option("--out", out, "output directory (a file path for apply)");

  const std::vector<std::string> losses{"mrsd", "wave"};
  std::string manifest, rooms_path, loss = "mrsd", dry_path, rir_path, ckpt_path, las_path, model_path, plot_csv,
                                    split = "all", module = "all", reverb_model = "utv";
  std::size_t utts = 0, rir_len = 0;
  std::uint64_t steps = 0;
  std::optional<double> secondary_weight;

  auto* sim = app.add_subcommand("simulate", "build a synthetic reverberant dataset");
  sim->add_option("--rooms", rooms_path, "JSON {rooms: [...], unseen: [...]}")->required();
  sim->add_option("--utts", utts, "seen-room utterances")->required()->check(CLI::PositiveNumber);

  auto add_train = [&](CLI::App* c) {
    c->add_option("--manifest", manifest)->required();
    c->add_option("--rir-len", rir_len)->required()->check(CLI::PositiveNumber);
    c->add_option("--steps", steps)->required();
    c->add_option("--loss", loss)->check(CLI::IsMember(losses));
  };
  auto* tg = app.add_subcommand("train-gti", "train one global RIR");
  add_train(tg);
  auto* tu = app.add_subcommand("train-utv", "train the per-utterance RIR estimator");
  add_train(tu);
  auto* tm = app.add_subcommand("train-mt", "joint vocoder + reverberation training");
  add_train(tm);
  tm->add_option("--secondary-weight", secondary_weight)->check(CLI::NonNegativeNumber);
  tm->add_option("--model", reverb_model)->check(CLI::IsMember({"utv", "gti"}));

  auto* ap = app.add_subcommand("apply", "reverberate a dry waveform");
  ap->add_option("--dry", dry_path)->required();
  auto* o_rir = ap->add_option("--rir", rir_path);
  auto* o_ck = ap->add_option("--ckpt", ckpt_path);
  auto* o_las = ap->add_option("--las-source", las_path);
  o_rir->excludes(o_ck);
  o_las->needs(o_ck);
  o_ck->needs(o_las);

  auto* t60 = app.add_subcommand("t60", "reverberation time of an RIR file");
  t60->add_option("--rir", rir_path)->required();

  auto* ev = app.add_subcommand("evaluate", "T60 error statistics of a model on a dataset");
  ev->add_option("--manifest", manifest)->required();
  ev->add_option("--model", model_path, "RIR file or checkpoint")->required();
  ev->add_option("--split", split)->check(CLI::IsMember({"all", "train", "val", "test_seen", "test_unseen"}));
  ev->add_option("--plot-csv", plot_csv, "per-utterance errors");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every analytic gradient");
  gc->add_option("--module", module)->check(CLI::IsMember({"all", "gti", "utv", "vocoder", "losses"}));

  for (auto* c : app.get_subcommands({})) c->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const auto* cmd = app.get_subcommands().front();
  Settings s;
  try {
    if (!config_path.empty()) overlay(s, read_json_file(config_path));
    if (cmd == tg || cmd == tu || cmd == tm) {
      s.hyper.main_loss = main_loss_from_string(loss);
      s.utv.rir_length = rir_len;
      if (secondary_weight) s.hyper.secondary_weight = *secondary_weight;
      s.hyper.validate();
    }
    if (cmd == ap && rir_path.empty() && ckpt_path.empty()) throw UsageError("apply: give --rir or --ckpt with --las-source");
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  // stdout stays machine-readable; the resolved config goes to stderr
  std::cerr << "config: " << resolved(s, cmd->get_name(), seed, out).dump() << "\n";

  try {
    if (cmd == sim) {
      const auto j = read_json_file(rooms_path);
      std::map<std::string, std::size_t> lengths;
      const auto seen = room_list(j, "rooms", lengths);
      const auto unseen = room_list(j, "unseen", lengths);
      const auto m = build_dataset(seen, unseen, utts, out_dir(out), seed, s.sim, lengths);
      std::cout << json{{"manifest", (out_dir(out) / "manifest.json").string()}, {"entries", m.entries.size()}}.dump()
                << "\n";
    } else if (cmd == tg) {
      const auto td = training_set(manifest, s.hyper);
      const auto r = train_gti(td, rir_len, steps, s.hyper, seed);
      const auto d = out_dir(out);
      write_rir(d / "gti.rir", r.state.rir.assemble());
      save_checkpoint(d / "gti.ckpt", gti_checkpoint(r.state, s.hyper, seed));
      r.report.write_jsonl(d / "report.jsonl");
      std::cout << json{{"final_main_loss", r.report.final_main_loss()},
                        {"t60", estimate_t60(r.state.rir.assemble())},
                        {"constraints_held", r.report.constraints_held},
                        {"checksum", r.report.checksum}}
                       .dump()
                << "\n";
    } else if (cmd == tu) {
      const auto td = training_set(manifest, s.hyper);
      const auto init = UtvEstimatorParams::initialized(s.utv, derive_seed(seed, 1));
      const auto r = train_utv(td, init, steps, s.hyper, seed);
      const auto d = out_dir(out);
      save_checkpoint(d / "utv.ckpt", utv_checkpoint(r.state, s.hyper, seed, td.sample_rate));
      r.report.write_jsonl(d / "report.jsonl");
      std::cout << json{{"final_main_loss", r.report.final_main_loss()}, {"checksum", r.report.checksum}}.dump()
                << "\n";
    } else if (cmd == tm) {
      const auto td = training_set(manifest, s.hyper);
      MtTrainState st;
      st.vocoder = ToyVocoderParams(s.vocoder_fir);
      st.model = reverb_model == "gti" ? ReverbModel::gti : ReverbModel::utv;
      if (st.model == ReverbModel::gti)
        st.gti = GtiRir(rir_len, td.sample_rate);
      else
        st.utv = UtvEstimatorParams::initialized(s.utv, derive_seed(seed, 1));
      const auto r = train_mt(td, st, steps, s.hyper, seed);
      const auto d = out_dir(out);
      save_checkpoint(d / "mt.ckpt", mt_checkpoint(r.state, s.hyper, seed, td.sample_rate));
      r.report.write_jsonl(d / "report.jsonl");
      const auto& last = r.report.steps;
      std::cout << json{{"final_main_loss", r.report.final_main_loss()},
                        {"final_secondary_loss", last.empty() ? 0.0 : last.back().secondary_loss.value_or(0.0)},
                        {"constraints_held", r.report.constraints_held},
                        {"checksum", r.report.checksum}}
                       .dump()
                << "\n";
    } else if (cmd == ap) {
      require(!out.empty(), "apply: --out must name the output wav");
      const auto dry = read_wav(dry_path);
      Rir h;
      if (!rir_path.empty()) {
        h = read_rir(rir_path);
      } else {
        const auto m = load_model(ckpt_path);
        require(m.utv.has_value(), "apply: --ckpt must hold a per-utterance estimator");
        h = predict_rir(*m.utv, read_wav(las_path).samples, m.features, m.norm, dry.sample_rate);
      }
      if (h.sample_rate() != dry.sample_rate)
        throw std::invalid_argument("apply: RIR sample rate " + std::to_string(h.sample_rate()) +
                                    " differs from the waveform's " + std::to_string(dry.sample_rate));
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      write_wav(out, convolve_fft(dry, h.coefficients()), WavEncoding::float32);
    } else if (cmd == t60) {
      std::cout << num(estimate_t60(read_rir(rir_path))) << "\n";
    } else if (cmd == ev) {
      const auto m = read_manifest(manifest);
      const auto model = load_model(model_path);
      std::vector<Utterance> utts;
      if (split == "all") {
        for (Split sp : {Split::train, Split::val, Split::test_seen, Split::test_unseen}) {
          auto part = load_split(m, sp);
          std::move(part.begin(), part.end(), std::back_inserter(utts));
        }
      } else {
        utts = load_split(m, split_from_string(split));
      }
      require(!utts.empty(), "evaluate: no utterances in split " + split);
      std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_room;
      std::vector<double> est, truth;
      std::ostringstream csv;
      csv << "utt_id,room_id,t60_truth,t60_est,error\n";
      for (const auto& u : utts) {
        const double t = predict_t60(model, u);
        per_room[u.room_id].first.push_back(t);
        per_room[u.room_id].second.push_back(u.t60_truth);
        est.push_back(t);
        truth.push_back(u.t60_truth);
        csv << u.utt_id << "," << u.room_id << "," << num(u.t60_truth) << "," << num(t) << "," << num(t - u.t60_truth)
            << "\n";
      }
      json rooms = json::array();
      for (const auto& [id, v] : per_room) {
        auto r = stats_json(t60_error_stats(v.first, v.second));
        r["room_id"] = id;
        r["t60_truth"] = m.room(id).spec.t60;
        rooms.push_back(r);
      }
      std::cout << json{{"rooms", rooms}, {"pooled", stats_json(t60_error_stats(est, truth))}}.dump() << "\n";
      if (!plot_csv.empty()) write_text(plot_csv, csv.str());
    } else if (cmd == gc) {
      bool ok = true;
      for (const auto& r : run_selfcheck(module)) {
        ok = ok && r.report.pass;
        std::cout << (r.report.pass ? "PASS " : "FAIL ") << r.name << " max_rel_error=" << r.report.max_rel_error
                  << " tol=" << r.tolerance << "\n";
        for (const auto& g : r.report.groups)
          if (!g.pass) std::cout << "  group " << g.name << " max_rel_error=" << g.max_rel_error << "\n";
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
