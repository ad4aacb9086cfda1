#include "taggant/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "taggant/json_io.hpp"

namespace taggant {

namespace fs = std::filesystem;

namespace {

void say(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string cell_dir_name(std::size_t c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cell_%02zu", c);
  return buf;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

std::string rate_text(const std::optional<double>& r) { return r ? fmt("%.4f", *r) : "NA"; }

void write_snr_table(const fs::path& path, const std::vector<SnrRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id\tkey\tlabel\tsnr_db\tmax_abs_delta\n";
  for (const SnrRow& r : rows)
    out << r.id << '\t' << r.key << '\t' << r.label << '\t' << fmt("%.4f", r.snr_db) << '\t'
        << fmt("%.6g", r.max_abs_delta) << '\n';
}

nlohmann::json alignment_report(const CraftResult& r, const CraftConfig& cfg) {
  return {{"craft_config", to_json(cfg)}, {"trace", to_json(r.trace)}, {"warnings", r.warnings}};
}

// Ingest options must agree with the classes a key set was drawn for.
LabeledDataset load_dataset(const fs::path& manifest, const IngestOptions& opts, const Log& log) {
  IngestResult r = ingest(manifest, opts);
  for (const IngestIssue& issue : r.issues)
    say(log, "ingest: skipped row " + std::to_string(issue.row) + " (" + issue.id + "): " + issue.message);
  say(log, "ingested " + std::to_string(r.dataset.size()) + " clips from " + manifest.string());
  return std::move(r.dataset);
}

TrainProgress epoch_logger(const Log& log, const std::string& what) {
  if (!log) return {};
  return [log, what](int epoch, double l) { log(what + ": epoch " + std::to_string(epoch + 1) + " loss " + fmt("%.4f", l)); };
}

}  // namespace

double dataset_mel_peak(const LabeledDataset& ds, const SpectroConfig& spectro, std::size_t max_clips) {
  const std::vector<std::size_t> train = ds.indices(Split::train);
  const std::size_t stride = std::max<std::size_t>(1, train.size() / std::max<std::size_t>(1, max_clips));
  std::vector<AudioClip> clips;
  for (std::size_t n = 0; n < train.size() && clips.size() < max_clips; n += stride) clips.push_back(ds[train[n]].clip);
  return reference_mel_level(clips, spectro);
}

// keygen -----------------------------------------------------------------------

KeySet cmd_keygen(const KeygenOptions& opts, const Log& log) {
  if (opts.out_dir.empty()) throw std::invalid_argument("keygen: no output directory");
  if (fs::exists(opts.out_dir / "keys.json") && !opts.force)
    throw std::runtime_error("key set already exists at " + opts.out_dir.string() + " (use --force to overwrite)");
  KeyGenConfig cfg = opts.config;
  if (opts.reference_manifest) {
    IngestOptions io = opts.ingest;
    io.num_classes = cfg.num_classes;
    const LabeledDataset ds = load_dataset(*opts.reference_manifest, io, log);
    cfg.clip_samples = ds[0].clip.size();
    cfg.mel_peak = dataset_mel_peak(ds, cfg.spectro);
    say(log, "key mel peak " + fmt("%.6g", cfg.mel_peak));
  }
  KeySet keys = generate_keyset(cfg);
  save_keyset(keys, opts.out_dir, opts.force);
  say(log, "wrote " + std::to_string(keys.size()) + " keys to " + opts.out_dir.string());
  return keys;
}

// protect ----------------------------------------------------------------------

std::vector<SnrRow> snr_summary(const LabeledDataset& clean, const PoisonPlan& plan, const PerturbationSet& perts) {
  std::vector<SnrRow> rows;
  for (std::size_t k = 0; k < plan.partition.size(); ++k) {
    for (const std::string& id : plan.partition[k]) {
      const DatasetItem& item = clean[clean.index_of(id)];
      const auto it = perts.deltas.find(id);
      if (it == perts.deltas.end()) throw std::invalid_argument("snr_summary: no delta for '" + id + "'");
      const Eigen::VectorXd x = item.clip.as_double();
      const Eigen::VectorXd y = (x + it->second).cwiseMax(-1.0).cwiseMin(1.0);
      rows.push_back({id, k, item.label, snr_db(x, y), it->second.cwiseAbs().maxCoeff()});
    }
  }
  return rows;
}

ProtectResult protect(const LabeledDataset& ds, const KeySet& keys, const ModelParams& surrogate, double epsilon,
                      std::uint64_t plan_seed, const CraftConfig& craft_cfg, const Log& log) {
  ProtectResult out;
  out.plan = select_poison_set(ds, keys, epsilon, plan_seed);
  for (const std::string& w : out.plan.warnings) say(log, "plan: " + w);
  say(log, "crafting " + std::to_string(out.plan.total()) + " poisons for " + std::to_string(keys.size()) + " keys");
  CraftProgress progress;
  if (log)
    progress = [&log](int r, int step, double l) {
      if (step % 25 == 0) log("craft: restart " + std::to_string(r) + " step " + std::to_string(step) + " loss " + fmt("%.4f", l));
    };
  out.craft = craft(surrogate, ds, out.plan, keys, craft_cfg, progress);
  for (const std::string& w : out.craft.warnings) say(log, "craft: " + w);
  out.protected_dataset = apply_perturbations(ds, out.craft.perturbations);
  out.snr = snr_summary(ds, out.plan, out.craft.perturbations);
  return out;
}

ProtectResult cmd_protect(const ProtectOptions& opts, const Log& log) {
  if (opts.out_dir.empty()) throw std::invalid_argument("protect: no output directory");
  if (fs::exists(opts.out_dir) && !fs::is_empty(opts.out_dir)) {
    if (!opts.force) throw std::runtime_error(opts.out_dir.string() + " is not empty (use --force to replace it)");
    fs::remove_all(opts.out_dir);
  }
  const KeySet keys = load_keyset(opts.keys_dir);
  IngestOptions io = opts.ingest;
  io.num_classes = keys.config.num_classes;
  const LabeledDataset ds = load_dataset(opts.manifest, io, log);
  if (keys.keys.front().clip.size() != ds[0].clip.size() || keys.keys.front().clip.sample_rate() != ds.sample_rate())
    throw std::invalid_argument("protect: key clips and dataset clips differ in length or sample rate");

  fs::create_directories(opts.out_dir);
  try {
    ModelParams surrogate;
    if (opts.surrogate_checkpoint) {
      surrogate = load_checkpoint(*opts.surrogate_checkpoint).params;
      if (surrogate.arch.num_classes != ds.num_classes())
        throw std::invalid_argument("protect: surrogate class count does not match the dataset");
    } else {
      say(log, "training surrogate on the clean dataset");
      const TrainResult tr = train(ds, opts.surrogate_train, epoch_logger(log, "surrogate"));
      say(log, "surrogate validation accuracy " + fmt("%.4f", tr.validation_accuracy));
      surrogate = tr.params;
      save_checkpoint(opts.out_dir / "surrogate.ckpt", surrogate, to_json(opts.surrogate_train));
    }
    if (!(keys.config.spectro == surrogate.spectro))
      say(log, "warning: keys were rendered with a different spectrogram config than the surrogate uses");

    ProtectResult r = protect(ds, keys, surrogate, opts.epsilon, opts.plan_seed, opts.craft, log);
    export_protected(r.protected_dataset, opts.out_dir / "dataset");
    save_perturbations(r.craft.perturbations, r.plan, ds.sample_rate(), opts.out_dir / "perturbations");
    write_snr_table(opts.out_dir / "snr.tsv", r.snr);
    write_json(opts.out_dir / "alignment.json", alignment_report(r.craft, opts.craft));
    std::vector<double> snrs;
    for (const SnrRow& row : r.snr) snrs.push_back(row.snr_db);
    say(log, "alignment loss " + fmt("%.4f", r.craft.trace.loss.front()) + " -> " +
                 fmt("%.4f", *std::min_element(r.craft.trace.loss.begin(), r.craft.trace.loss.end())) +
                 ", mean SNR " + fmt("%.2f", mean(snrs)) + " dB");
    return r;
  } catch (...) {
    std::error_code ec;
    fs::remove_all(opts.out_dir, ec);
    throw;
  }
}

// train ------------------------------------------------------------------------

TrainResult cmd_train(const TrainOptions& opts, const Log& log) {
  if (opts.checkpoint.empty()) throw std::invalid_argument("train: no checkpoint path");
  IngestOptions io = opts.ingest;
  io.sample_rate = opts.config.spectro.sample_rate;
  const LabeledDataset ds = load_dataset(opts.manifest, io, log);
  TrainResult r = train(ds, opts.config, epoch_logger(log, "train"));
  nlohmann::json meta = to_json(opts.config);
  meta["validation_accuracy"] = r.validation_accuracy;
  if (opts.checkpoint.has_parent_path()) fs::create_directories(opts.checkpoint.parent_path());
  save_checkpoint(opts.checkpoint, r.params, meta);
  say(log, "validation accuracy " + fmt("%.4f", r.validation_accuracy) + ", checkpoint " + opts.checkpoint.string());
  return r;
}

// verify -----------------------------------------------------------------------

std::map<std::string, std::vector<int>> read_prediction_log(const fs::path& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw PredictionLogError("cannot read prediction log " + path.string());
  std::map<std::string, std::vector<int>> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    auto fail = [&](const std::string& why) {
      return PredictionLogError(path.string() + ":" + std::to_string(lineno) + ": " + why + ": '" + line + "'");
    };
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string id;
    if (!(fields >> id) || id.front() == '#') continue;
    std::vector<int> classes;
    std::set<int> seen;
    for (std::string tok; fields >> tok;) {
      int c = 0;
      const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), c);
      if (ec != std::errc() || end != tok.data() + tok.size()) throw fail("'" + tok + "' is not a class index");
      if (c < 0 || c >= num_classes) throw fail("class " + tok + " outside [0, " + std::to_string(num_classes) + ")");
      if (!seen.insert(c).second) throw fail("class " + tok + " listed twice");
      classes.push_back(c);
    }
    if (classes.empty()) throw fail("no classes listed");
    if (!out.emplace(id, std::move(classes)).second) throw fail("duplicate key id '" + id + "'");
  }
  return out;
}

nlohmann::json VerifyOutcome::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  std::vector<double> ps;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    rs.push_back({{"source", sources[i]}, {"report", runs[i].to_json()}});
    ps.push_back(runs[i].run_pvalues.back());
  }
  return {{"runs", rs},
          {"run_p_values", ps},
          {"p_value_floor", kPValueFloor},
          {"combined_p_value", combined.combined_pvalue},
          {"verdict", to_string(combined.verdict)}};
}

VerifyOutcome cmd_verify(const VerifyOptions& opts, const Log& log) {
  if (opts.checkpoints.empty() && opts.prediction_logs.empty())
    throw std::invalid_argument("verify: give at least one checkpoint or prediction log");
  const KeySet keys = load_keyset(opts.keys_dir);
  const int C = keys.config.num_classes;
  if (opts.k < 1 || opts.k > C) throw std::invalid_argument("verify: k must lie in [1, C]");
  const int k_max = opts.k_max ? *opts.k_max : std::max(opts.k, std::min(C, 10));

  VerifyOutcome out;
  for (const fs::path& ckpt : opts.checkpoints) {
    const ModelOracle oracle(load_checkpoint(ckpt).params);
    if (oracle.num_classes() != C)
      throw std::invalid_argument("verify: " + ckpt.string() + " has " + std::to_string(oracle.num_classes()) +
                                  " classes but the keys were drawn for " + std::to_string(C));
    out.sources.push_back(ckpt.string());
    out.runs.push_back(verify(oracle, keys, opts.k, opts.alpha, k_max));
  }
  for (const fs::path& path : opts.prediction_logs) {
    const auto entries = read_prediction_log(path, C);
    std::vector<std::vector<int>> rankings;
    int shortest = k_max;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const auto it = entries.find(key_id(i));
      if (it == entries.end()) throw PredictionLogError(path.string() + ": no predictions for key id '" + key_id(i) + "'");
      if (int(it->second.size()) < opts.k)
        throw PredictionLogError(path.string() + ": key id '" + key_id(i) + "' lists fewer than k = " +
                                 std::to_string(opts.k) + " classes");
      shortest = std::min(shortest, int(it->second.size()));
      rankings.push_back(it->second);
    }
    out.sources.push_back(path.string());
    out.runs.push_back(build_report(rankings, keys.labels(), C, opts.k, opts.alpha, shortest));
  }

  std::vector<double> ps;
  for (std::size_t i = 0; i < out.runs.size(); ++i) {
    const VerificationReport& r = out.runs[i];
    ps.push_back(r.run_pvalues.back());
    say(log, out.sources[i] + ": T_" + std::to_string(opts.k) + " = " + std::to_string(r.t_k[std::size_t(opts.k - 1)]) +
                 "/" + std::to_string(r.num_keys) + ", p = " + fmt("%.6g", ps.back()) + ", tau = " + std::to_string(r.threshold));
  }
  out.combined = decide(ps, opts.alpha);
  say(log, "combined p = " + fmt("%.6g", out.combined.combined_pvalue) + " -> " + to_string(out.combined.verdict));
  if (opts.report) {
    if (opts.report->has_parent_path()) fs::create_directories(opts.report->parent_path());
    write_json(*opts.report, out.to_json());
  }
  return out;
}

// experiment -------------------------------------------------------------------

std::string GridCell::label() const {
  return "d" + std::to_string(d) + "-" + to_string(distribution) + "-" + to_string(interpolation);
}

std::vector<GridCell> full_grid() {
  std::vector<GridCell> grid;
  for (int d : {8, 16, 32, 64, 128})
    for (KeyDistribution dist : {KeyDistribution::bernoulli, KeyDistribution::uniform})
      for (Interpolation interp : {Interpolation::nearest, Interpolation::bilinear}) grid.push_back({d, dist, interp});
  return grid;
}

void ExperimentConfig::validate() const {
  if (repetitions < 1) throw std::invalid_argument("ExperimentConfig: repetitions must be >= 1");
  if (grid.empty()) throw std::invalid_argument("ExperimentConfig: empty grid");
  for (const GridCell& c : grid)
    if (c.d < 1) throw std::invalid_argument("ExperimentConfig: grid d must be >= 1");
  if (num_keys < 1) throw std::invalid_argument("ExperimentConfig: num_keys must be >= 1");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("ExperimentConfig: epsilon must be in (0, 1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("ExperimentConfig: alpha must be in (0, 1)");
  if (k < 1) throw std::invalid_argument("ExperimentConfig: k must be >= 1");
  craft.validate();
  train.validate();
  if (!manifest) desk.validate();
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json cells = nlohmann::json::array();
  for (const GridCell& c : grid)
    cells.push_back({{"d", c.d}, {"distribution", to_string(c.distribution)}, {"interpolation", to_string(c.interpolation)}});
  nlohmann::json j = {{"grid", cells},
                      {"num_keys", num_keys},
                      {"gl_iterations", gl_iterations},
                      {"epsilon", epsilon},
                      {"craft", taggant::to_json(craft)},
                      {"train", taggant::to_json(train)},
                      {"repetitions", repetitions},
                      {"alpha", alpha},
                      {"k", k},
                      {"seed", seed}};
  if (manifest) {
    j["manifest"] = manifest->string();
    j["ingest"] = {{"num_classes", ingest.num_classes},
                   {"sample_rate", ingest.sample_rate},
                   {"clip_samples", ingest.clip_samples},
                   {"max_failure_fraction", ingest.max_failure_fraction}};
  } else {
    j["desk"] = {{"num_clips", desk.num_clips},
                 {"sample_rate", desk.sample_rate},
                 {"clip_samples", desk.clip_samples},
                 {"validation_fraction", desk.validation_fraction},
                 {"seed", desk.seed}};
  }
  return j;
}

std::string ExperimentConfig::hash() const {
  const std::string text = to_json().dump();
  return content_hash(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

namespace {

template <typename T, typename F>
std::vector<T> axis(const nlohmann::json& j, const char* name, std::vector<T> fallback, F convert) {
  if (!j.contains(name)) return fallback;
  std::vector<T> out;
  for (const auto& v : j.at(name)) out.push_back(convert(v));
  return out;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("manifest")) c.manifest = fs::path(j.at("manifest").get<std::string>());
  if (j.contains("ingest")) {
    const auto& i = j.at("ingest");
    c.ingest.num_classes = i.value("num_classes", c.ingest.num_classes);
    c.ingest.sample_rate = i.value("sample_rate", c.ingest.sample_rate);
    c.ingest.clip_samples = i.value("clip_samples", c.ingest.clip_samples);
    c.ingest.max_failure_fraction = i.value("max_failure_fraction", c.ingest.max_failure_fraction);
  }
  if (j.contains("desk")) {
    const auto& d = j.at("desk");
    c.desk.num_clips = d.value("num_clips", c.desk.num_clips);
    c.desk.sample_rate = d.value("sample_rate", c.desk.sample_rate);
    c.desk.clip_samples = d.value("clip_samples", c.desk.clip_samples);
    c.desk.validation_fraction = d.value("validation_fraction", c.desk.validation_fraction);
    c.desk.seed = d.value("seed", c.desk.seed);
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    if (g.is_string()) {
      if (g.get<std::string>() != "full") throw std::invalid_argument("grid: expected \"full\", a list of cells or axes");
      c.grid = full_grid();
    } else if (g.is_array()) {
      c.grid.clear();
      for (const auto& cell : g) {
        GridCell gc;
        gc.d = cell.value("d", gc.d);
        if (cell.contains("distribution")) gc.distribution = key_distribution_from_string(cell.at("distribution"));
        if (cell.contains("interpolation")) gc.interpolation = interpolation_from_string(cell.at("interpolation"));
        c.grid.push_back(gc);
      }
    } else {
      const auto ds = axis<int>(g, "d", {128}, [](const nlohmann::json& v) { return v.get<int>(); });
      const auto dists = axis<KeyDistribution>(g, "distribution", {KeyDistribution::uniform},
                                               [](const nlohmann::json& v) { return key_distribution_from_string(v); });
      const auto interps = axis<Interpolation>(g, "interpolation", {Interpolation::bilinear},
                                               [](const nlohmann::json& v) { return interpolation_from_string(v); });
      c.grid.clear();
      for (int d : ds)
        for (KeyDistribution dist : dists)
          for (Interpolation interp : interps) c.grid.push_back({d, dist, interp});
    }
  }
  c.num_keys = j.value("num_keys", c.num_keys);
  c.gl_iterations = j.value("gl_iterations", c.gl_iterations);
  c.epsilon = j.value("epsilon", c.epsilon);
  if (j.contains("craft")) c.craft = craft_config_from_json(j.at("craft"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  c.repetitions = j.value("repetitions", c.repetitions);
  c.alpha = j.value("alpha", c.alpha);
  c.k = j.value("k", c.k);
  c.seed = j.value("seed", c.seed);
  c.save_models = j.value("save_models", c.save_models);
  if (j.contains("out_dir")) c.out_dir = fs::path(j.at("out_dir").get<std::string>());
  return c;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const LabeledDataset& ds, const Log& log) {
  cfg.validate();
  const int C = ds.num_classes();
  if (cfg.k > C) throw std::invalid_argument("experiment: k exceeds the class count");
  ExperimentResult res;
  res.config_hash = cfg.hash();
  res.k_max = std::max(cfg.k, std::min(C, 10));
  const bool persist = !cfg.out_dir.empty();

  auto fit = [&](const LabeledDataset& data, std::uint64_t seed, const std::string& what) {
    TrainConfig t = cfg.train;
    t.seed = seed;
    TrainResult r = train(data, t, epoch_logger(log, what));
    say(log, what + ": validation accuracy " + fmt("%.4f", r.validation_accuracy));
    if (persist && cfg.save_models) {
      fs::create_directories(cfg.out_dir / "models");
      save_checkpoint(cfg.out_dir / "models" / (what + ".ckpt"), r.params, to_json(t));
    }
    return r;
  };

  const TrainResult surrogate = fit(ds, derive_seed(cfg.seed, "surrogate"), "surrogate");
  res.surrogate_accuracy = surrogate.validation_accuracy;
  res.surrogate = surrogate.params;
  std::vector<TrainResult> benign;
  for (int r = 0; r < cfg.repetitions; ++r)
    benign.push_back(fit(ds, derive_seed(cfg.seed, "benign", std::uint64_t(r)), "benign_" + std::to_string(r)));
  const double mel_peak = dataset_mel_peak(ds, cfg.train.spectro);

  for (std::size_t c = 0; c < cfg.grid.size(); ++c) {
    CellResult cell;
    cell.cell = cfg.grid[c];
    const std::string name = cell_dir_name(c);
    say(log, name + ": " + cell.cell.label());
    std::vector<RunRow> rows;
    try {
      KeyGenConfig kc;
      kc.d = cell.cell.d;
      kc.distribution = cell.cell.distribution;
      kc.interpolation = cell.cell.interpolation;
      kc.num_keys = cfg.num_keys;
      kc.num_classes = C;
      kc.seed = derive_seed(cfg.seed, "keygen", c);
      kc.spectro = cfg.train.spectro;
      kc.gl_iterations = cfg.gl_iterations;
      kc.clip_samples = ds[0].clip.size();
      kc.mel_peak = mel_peak;
      cell.keys = generate_keyset(kc);

      CraftConfig cc = cfg.craft;
      cc.seed = derive_seed(cfg.seed, "craft", c);
      ProtectResult pr = protect(ds, cell.keys, surrogate.params, cfg.epsilon, derive_seed(cfg.seed, "plan", c), cc, log);
      cell.plan = pr.plan;
      cell.perturbations = pr.craft.perturbations;
      cell.trace = pr.craft.trace;
      cell.snr = pr.snr;

      std::vector<ModelOracle> oracles;
      std::vector<SuspectRun> suspects;
      std::vector<double> victim_p, benign_p, victim_acc, benign_acc;
      for (int r = 0; r < cfg.repetitions; ++r) {
        const std::uint64_t seed = derive_seed(cfg.seed, "victim", c * 1000 + std::size_t(r));
        const TrainResult v = fit(pr.protected_dataset, seed, name + "_victim_" + std::to_string(r));
        oracles.emplace_back(v.params);
        const VerificationReport rep = verify(oracles.back(), cell.keys, cfg.k, cfg.alpha, res.k_max);
        rows.push_back({c, true, r, seed, v.validation_accuracy, rep.t_k, rep.p_k, rep.verdict});
        victim_p.push_back(rep.run_pvalues.back());
        victim_acc.push_back(v.validation_accuracy);
        say(log, name + " victim " + std::to_string(r) + ": T_k " + nlohmann::json(rep.t_k).dump() + ", p(k=" +
                     std::to_string(cfg.k) + ") = " + fmt("%.3g", victim_p.back()));
      }
      for (int r = 0; r < cfg.repetitions; ++r) {
        const VerificationReport rep = verify(ModelOracle(benign[std::size_t(r)].params), cell.keys, cfg.k, cfg.alpha, res.k_max);
        rows.push_back({c, false, r, derive_seed(cfg.seed, "benign", std::uint64_t(r)),
                        benign[std::size_t(r)].validation_accuracy, rep.t_k, rep.p_k, rep.verdict});
        benign_p.push_back(rep.run_pvalues.back());
        benign_acc.push_back(benign[std::size_t(r)].validation_accuracy);
      }
      for (const ModelOracle& o : oracles) suspects.push_back({&o, true});
      std::vector<ModelOracle> benign_oracles;
      benign_oracles.reserve(benign.size());
      for (const TrainResult& b : benign) benign_oracles.emplace_back(b.params);
      for (const ModelOracle& o : benign_oracles) suspects.push_back({&o, false});
      const RateReport rates = evaluate_rates(suspects, cell.keys, cfg.k, cfg.alpha);

      cell.combined_pvalue_poisoned = decide(victim_p, cfg.alpha).combined_pvalue;
      cell.combined_pvalue_benign = decide(benign_p, cfg.alpha).combined_pvalue;
      cell.fnr = rates.fnr;
      cell.fpr = rates.fpr;
      cell.poisoned_accuracy = mean(victim_acc);
      cell.benign_accuracy = mean(benign_acc);
      say(log, name + ": combined p " + fmt("%.3g", cell.combined_pvalue_poisoned) + ", FNR " + rate_text(cell.fnr) +
                   ", FPR " + rate_text(cell.fpr));

      if (persist) {
        const fs::path dir = cfg.out_dir / name;
        save_keyset(cell.keys, dir / "keys", true);
        fs::remove_all(dir / "perturbations");
        save_perturbations(cell.perturbations, cell.plan, ds.sample_rate(), dir / "perturbations");
        write_snr_table(dir / "snr.tsv", cell.snr);
        write_json(dir / "alignment.json", alignment_report(pr.craft, cc));
      }
    } catch (const std::exception& e) {
      cell.status = std::string("failed: ") + e.what();
      rows.clear();
      say(log, name + ": " + cell.status);
    }
    res.runs.insert(res.runs.end(), rows.begin(), rows.end());
    res.cells.push_back(std::move(cell));
  }
  return res;
}

void write_experiment_tables(const ExperimentResult& res, const ExperimentConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  auto open = [&](const char* name) {
    std::ofstream f(out_dir / name);
    if (!f) throw std::runtime_error("cannot write " + (out_dir / name).string());
    return f;
  };
  auto cell_cols = [&](std::size_t c) {
    const GridCell& g = res.cells[c].cell;
    return res.config_hash + '\t' + std::to_string(c) + '\t' + std::to_string(g.d) + '\t' + to_string(g.distribution) +
           '\t' + to_string(g.interpolation);
  };
  const std::string cell_head = "config_hash\tcell\td\tdistribution\tinterpolation";

  std::ofstream runs = open("runs.tsv");
  runs << cell_head << "\trole\trepetition\tseed\tvalidation_accuracy\tk\tp_value\tverdict";
  for (int k = 1; k <= res.k_max; ++k) runs << "\tT_" << k;
  for (int k = 1; k <= res.k_max; ++k) runs << "\tp_" << k;
  runs << '\n';
  for (const RunRow& r : res.runs) {
    runs << cell_cols(r.cell) << '\t' << (r.poisoned ? "poisoned" : "benign") << '\t' << r.repetition << '\t' << r.seed
         << '\t' << fmt("%.4f", r.validation_accuracy) << '\t' << cfg.k << '\t'
         << fmt("%.6g", r.p_k[std::size_t(cfg.k - 1)]) << '\t' << to_string(r.verdict);
    for (int t : r.t_k) runs << '\t' << t;
    for (double p : r.p_k) runs << '\t' << fmt("%.6g", p);
    runs << '\n';
  }

  std::ofstream summary = open("summary.tsv");
  summary << cell_head
          << "\tstatus\tk\tcombined_p_poisoned\tcombined_p_benign\tverdict\tfnr\tfpr\tinitial_alignment_loss"
             "\tfinal_alignment_loss\tmean_snr_db\n";
  std::ofstream curves = open("curves.tsv");
  curves << cell_head << "\trole\tk\tmean_key_accuracy\tcombined_p_value\n";
  std::ofstream validation = open("validation.tsv");
  validation << cell_head << "\tpoisoned_mean_accuracy\tbenign_mean_accuracy\taccuracy_delta\tsurrogate_accuracy\n";

  for (std::size_t c = 0; c < res.cells.size(); ++c) {
    const CellResult& cell = res.cells[c];
    if (cell.status != "ok") {
      summary << cell_cols(c) << '\t' << cell.status << '\t' << cfg.k << "\tNA\tNA\tNA\tNA\tNA\tNA\tNA\tNA\n";
      continue;
    }
    std::vector<double> snrs;
    for (const SnrRow& s : cell.snr) snrs.push_back(s.snr_db);
    const bool detected = cell.combined_pvalue_poisoned <= cfg.alpha;
    summary << cell_cols(c) << "\tok\t" << cfg.k << '\t' << fmt("%.6g", cell.combined_pvalue_poisoned) << '\t'
            << fmt("%.6g", cell.combined_pvalue_benign) << '\t' << (detected ? "detected" : "not-detected") << '\t'
            << rate_text(cell.fnr) << '\t' << rate_text(cell.fpr) << '\t' << fmt("%.6f", cell.trace.loss.front()) << '\t'
            << fmt("%.6f", *std::min_element(cell.trace.loss.begin(), cell.trace.loss.end())) << '\t'
            << fmt("%.3f", mean(snrs)) << '\n';

    for (bool poisoned : {true, false}) {
      for (int k = 1; k <= res.k_max; ++k) {
        std::vector<double> acc, ps;
        for (const RunRow& r : res.runs) {
          if (r.cell != c || r.poisoned != poisoned) continue;
          acc.push_back(double(r.t_k[std::size_t(k - 1)]) / double(cell.keys.size()));
          ps.push_back(floor_pvalue(r.p_k[std::size_t(k - 1)]));
        }
        if (acc.empty()) continue;
        curves << cell_cols(c) << '\t' << (poisoned ? "poisoned" : "benign") << '\t' << k << '\t' << fmt("%.4f", mean(acc))
               << '\t' << fmt("%.6g", fisher_combine(ps)) << '\n';
      }
    }
    validation << cell_cols(c) << '\t' << fmt("%.4f", cell.poisoned_accuracy) << '\t' << fmt("%.4f", cell.benign_accuracy)
               << '\t' << fmt("%.4f", cell.poisoned_accuracy - cell.benign_accuracy) << '\t'
               << fmt("%.4f", res.surrogate_accuracy) << '\n';
  }
}

ExperimentResult cmd_experiment(const ExperimentConfig& cfg, const Log& log) {
  cfg.validate();
  if (cfg.out_dir.empty()) throw std::invalid_argument("experiment: no output directory");
  LabeledDataset ds;
  if (cfg.manifest) {
    ds = load_dataset(*cfg.manifest, cfg.ingest, log);
  } else {
    say(log, "generating the synthetic desk dataset (" + std::to_string(cfg.desk.num_clips) + " clips)");
    ds = make_desk_dataset(cfg.desk);
  }
  fs::create_directories(cfg.out_dir);
  nlohmann::json j = cfg.to_json();
  j["config_hash"] = cfg.hash();
  write_json(cfg.out_dir / "config.json", j);
  ExperimentResult res = run_experiment(cfg, ds, log);
  write_experiment_tables(res, cfg, cfg.out_dir);
  say(log, "tables written to " + cfg.out_dir.string());
  return res;
}

}  // namespace taggant
