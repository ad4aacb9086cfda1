#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "taggant/desk_data.hpp"
#include "taggant/pipeline.hpp"

namespace fs = std::filesystem;
using namespace taggant;

namespace {

fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::path("taggant_out");
}

// Explicit paths win; otherwise outputs land under $TAGGANT_OUT.
fs::path resolve_out(const std::string& given, const char* fallback) {
  return given.empty() ? output_root() / fallback : fs::path(given);
}

void log_line(std::string_view msg) { std::cerr << "[taggant] " << msg << std::endl; }

void add_spectro(CLI::App* app, SpectroConfig& s) {
  app->add_option("--sample-rate", s.sample_rate, "Sample rate in Hz")->capture_default_str();
  app->add_option("--n-fft", s.n_fft, "STFT size")->capture_default_str();
  app->add_option("--hop", s.hop, "STFT hop")->capture_default_str();
  app->add_option("--n-mels", s.n_mels, "Mel bands")->capture_default_str();
  app->add_option("--fmin", s.fmin, "Lowest mel edge in Hz")->capture_default_str();
  app->add_option("--fmax", s.fmax, "Highest mel edge in Hz")->capture_default_str();
}

void add_ingest(CLI::App* app, IngestOptions& o) {
  app->add_option("--clip-samples", o.clip_samples, "Clip length after trim/pad")->capture_default_str();
  app->add_option("--max-failure-fraction", o.max_failure_fraction, "Abort ingest above this bad-row fraction")
      ->capture_default_str();
}

void add_train(CLI::App* app, TrainConfig& t, const std::string& prefix = "") {
  app->add_option("--" + prefix + "epochs", t.epochs, "Training epochs")->capture_default_str();
  app->add_option("--" + prefix + "batch-size", t.batch_size, "Training batch size")->capture_default_str();
  app->add_option("--" + prefix + "lr", t.learning_rate, "Adam learning rate")->capture_default_str();
  app->add_option("--" + prefix + "beta1", t.beta1, "Adam beta1")->capture_default_str();
  app->add_option("--" + prefix + "beta2", t.beta2, "Adam beta2")->capture_default_str();
  app->add_option("--" + prefix + "adam-eps", t.adam_eps, "Adam epsilon")->capture_default_str();
  app->add_flag("!--" + prefix + "no-cosine", t.cosine_schedule, "Constant learning rate");
  app->add_option("--" + prefix + "mixup-alpha", t.mixup_alpha, "Mixup Beta(alpha, alpha); 0 disables")->capture_default_str();
  app->add_option("--" + prefix + "time-mask", t.time_mask, "Time-mask width in frames")->capture_default_str();
  app->add_option("--" + prefix + "freq-mask", t.freq_mask, "Frequency-mask width in bands")->capture_default_str();
  app->add_option("--" + prefix + "train-seed", t.seed, "Initialisation and shuffling seed")->capture_default_str();
  app->add_option("--" + prefix + "channels", t.channels, "Convolution channels")->capture_default_str();
  app->add_option("--" + prefix + "hidden", t.hidden, "Hidden units")->capture_default_str();
}

void add_craft(CLI::App* app, CraftConfig& c) {
  app->add_option("--steps", c.steps, "Crafting steps")->capture_default_str();
  app->add_option("--step-size", c.step_size, "Signed-Adam step size")->capture_default_str();
  app->add_option("--clip-bound", c.clip_bound, "Max |delta|")->capture_default_str();
  app->add_option("--craft-beta1", c.beta1, "Crafting Adam beta1")->capture_default_str();
  app->add_option("--craft-beta2", c.beta2, "Crafting Adam beta2")->capture_default_str();
  app->add_option("--craft-eps", c.adam_eps, "Crafting Adam epsilon")->capture_default_str();
  app->add_option("--restarts", c.restarts, "Crafting restarts")->capture_default_str();
  app->add_option("--craft-batch", c.batch_size, "Poisons per gradient chunk")->capture_default_str();
  app->add_option("--craft-seed", c.seed, "Crafting seed")->capture_default_str();
}

CLI::Transformer enum_check(const std::vector<std::string>& names) {
  std::map<std::string, std::string> m;
  for (const auto& n : names) m[n] = n;
  return CLI::Transformer(m, CLI::ignore_case);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio data taggants: protect a dataset with secret keys and verify suspect models."};
  app.set_config("--config", "", "TOML/INI file holding any of the flags")->check(CLI::ExistingFile);
  app.require_subcommand(1);
  app.footer(std::string("Outputs default to $") + kOutputRootEnv + " (or ./taggant_out).");

  // keygen
  KeygenOptions kg;
  kg.config.spectro = TrainConfig::desk_spectro();
  std::string kg_out, kg_ref, kg_dist = "uniform", kg_interp = "bilinear";
  auto* keygen = app.add_subcommand("keygen", "Generate a secret key set");
  keygen->add_option("--out", kg_out, "Key set directory");
  keygen->add_flag("--force", kg.force, "Overwrite an existing key set");
  keygen->add_option("--d", kg.config.d, "Source matrix side")->capture_default_str();
  keygen->add_option("--distribution", kg_dist, "bernoulli | uniform")->transform(enum_check({"bernoulli", "uniform"}))
      ->capture_default_str();
  keygen->add_option("--interpolation", kg_interp, "nearest | bilinear")->transform(enum_check({"nearest", "bilinear"}))
      ->capture_default_str();
  keygen->add_option("--num-keys", kg.config.num_keys, "K")->capture_default_str();
  keygen->add_option("--num-classes", kg.config.num_classes, "C")->capture_default_str();
  keygen->add_option("--seed", kg.config.seed, "Key seed")->capture_default_str();
  keygen->add_option("--gl-iterations", kg.config.gl_iterations, "Griffin-Lim iterations")->capture_default_str();
  keygen->add_option("--clip-samples", kg.config.clip_samples, "Key length in samples")->capture_default_str();
  keygen->add_option("--mel-peak", kg.config.mel_peak, "Key mel peak (ignored with --reference)")->capture_default_str();
  keygen->add_option("--reference", kg_ref, "Clean manifest used to set the key loudness")->check(CLI::ExistingFile);
  add_spectro(keygen, kg.config.spectro);

  // protect
  ProtectOptions pr;
  std::string pr_out, pr_surrogate;
  auto* protect_cmd = app.add_subcommand("protect", "Craft taggants into a dataset");
  protect_cmd->add_option("--manifest", pr.manifest, "Clean dataset manifest")->required()->check(CLI::ExistingFile);
  protect_cmd->add_option("--keys", pr.keys_dir, "Key set directory")->required()->check(CLI::ExistingDirectory);
  protect_cmd->add_option("--out", pr_out, "Output directory");
  protect_cmd->add_flag("--force", pr.force, "Replace a non-empty output directory");
  protect_cmd->add_option("--epsilon", pr.epsilon, "Poisoned fraction of the dataset")->capture_default_str();
  protect_cmd->add_option("--plan-seed", pr.plan_seed, "Poison selection seed")->capture_default_str();
  protect_cmd->add_option("--surrogate", pr_surrogate, "Surrogate checkpoint (trained here when absent)")
      ->check(CLI::ExistingFile);
  add_craft(protect_cmd, pr.craft);
  add_train(protect_cmd, pr.surrogate_train);
  add_spectro(protect_cmd, pr.surrogate_train.spectro);
  add_ingest(protect_cmd, pr.ingest);

  // train
  TrainOptions tr;
  std::string tr_out;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier on a dataset");
  train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr_out, "Checkpoint path");
  train_cmd->add_option("--num-classes", tr.ingest.num_classes, "C")->capture_default_str();
  add_train(train_cmd, tr.config);
  add_spectro(train_cmd, tr.config.spectro);
  add_ingest(train_cmd, tr.ingest);

  // verify
  VerifyOptions vf;
  std::string vf_report;
  int vf_kmax = 0;
  auto* verify_cmd = app.add_subcommand("verify", "Test a suspect model for the taggant (exit 0 detected, 1 not, 2 error)");
  verify_cmd->add_option("--keys", vf.keys_dir, "Key set directory")->required()->check(CLI::ExistingDirectory);
  verify_cmd->add_option("--checkpoint", vf.checkpoints, "Suspect checkpoint (repeatable)")->check(CLI::ExistingFile);
  verify_cmd->add_option("--predictions", vf.prediction_logs, "Prediction log (repeatable)")->check(CLI::ExistingFile);
  verify_cmd->add_option("--k", vf.k, "Top-k used for the verdict")->capture_default_str();
  verify_cmd->add_option("--alpha", vf.alpha, "Significance level")->capture_default_str();
  verify_cmd->add_option("--k-max", vf_kmax, "Longest top-k list to query (default max(k, min(C, 10)))");
  verify_cmd->add_option("--report", vf_report, "Report path (default $TAGGANT_OUT/verify_report.json)");

  // experiment
  ExperimentConfig ex;
  std::string ex_out, ex_manifest;
  std::vector<int> ex_d;
  std::vector<std::string> ex_dist, ex_interp;
  bool ex_full = false;
  auto* experiment_cmd = app.add_subcommand("experiment", "Run the detection experiment grid");
  experiment_cmd->add_option("--manifest", ex_manifest, "Clean dataset (synthetic desk set when absent)")
      ->check(CLI::ExistingFile);
  experiment_cmd->add_option("--num-classes", ex.ingest.num_classes, "C of the manifest")->capture_default_str();
  experiment_cmd->add_option("--desk-clips", ex.desk.num_clips, "Synthetic dataset size")->capture_default_str();
  experiment_cmd->add_option("--desk-seed", ex.desk.seed, "Synthetic dataset seed")->capture_default_str();
  experiment_cmd->add_option("--validation-fraction", ex.desk.validation_fraction, "Synthetic validation share")
      ->capture_default_str();
  experiment_cmd->add_option("--d", ex_d, "Grid: key matrix sides");
  experiment_cmd->add_option("--distribution", ex_dist, "Grid: bernoulli and/or uniform")
      ->transform(enum_check({"bernoulli", "uniform"}));
  experiment_cmd->add_option("--interpolation", ex_interp, "Grid: nearest and/or bilinear")
      ->transform(enum_check({"nearest", "bilinear"}));
  experiment_cmd->add_flag("--full-grid", ex_full, "d in {8..128} x both distributions x both interpolations");
  experiment_cmd->add_option("--num-keys", ex.num_keys, "K")->capture_default_str();
  experiment_cmd->add_option("--gl-iterations", ex.gl_iterations, "Griffin-Lim iterations")->capture_default_str();
  experiment_cmd->add_option("--epsilon", ex.epsilon, "Poisoned fraction")->capture_default_str();
  experiment_cmd->add_option("--repetitions", ex.repetitions, "Victim and benign models per cell")->capture_default_str();
  experiment_cmd->add_option("--alpha", ex.alpha, "Significance level")->capture_default_str();
  experiment_cmd->add_option("--k", ex.k, "Top-k used for the verdict")->capture_default_str();
  experiment_cmd->add_option("--seed", ex.seed, "Master seed")->capture_default_str();
  experiment_cmd->add_flag("--save-models", ex.save_models, "Keep every trained checkpoint");
  experiment_cmd->add_option("--out", ex_out, "Output directory");
  add_craft(experiment_cmd, ex.craft);
  add_train(experiment_cmd, ex.train);
  add_spectro(experiment_cmd, ex.train.spectro);
  add_ingest(experiment_cmd, ex.ingest);

  // synth
  DeskDataConfig sy;
  std::string sy_out;
  auto* synth = app.add_subcommand("synth", "Write the synthetic desk dataset as WAVs plus a manifest");
  synth->add_option("--out", sy_out, "Dataset directory");
  synth->add_option("--clips", sy.num_clips, "Number of clips")->capture_default_str();
  synth->add_option("--seed", sy.seed, "Dataset seed")->capture_default_str();
  synth->add_option("--validation-fraction", sy.validation_fraction, "Validation share")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*keygen) {
      kg.out_dir = resolve_out(kg_out, "keys");
      kg.config.distribution = key_distribution_from_string(kg_dist);
      kg.config.interpolation = interpolation_from_string(kg_interp);
      kg.ingest.sample_rate = kg.config.spectro.sample_rate;
      kg.ingest.clip_samples = kg.config.clip_samples;
      if (!kg_ref.empty()) kg.reference_manifest = kg_ref;
      cmd_keygen(kg, log_line);
    } else if (*protect_cmd) {
      pr.out_dir = resolve_out(pr_out, "protected");
      pr.ingest.sample_rate = pr.surrogate_train.spectro.sample_rate;
      if (!pr_surrogate.empty()) pr.surrogate_checkpoint = pr_surrogate;
      cmd_protect(pr, log_line);
    } else if (*train_cmd) {
      tr.checkpoint = resolve_out(tr_out, "model.ckpt");
      cmd_train(tr, log_line);
    } else if (*verify_cmd) {
      if (vf_kmax > 0) vf.k_max = vf_kmax;
      vf.report = resolve_out(vf_report, "verify_report.json");
      const VerifyOutcome out = cmd_verify(vf, log_line);
      std::cout << to_string(out.combined.verdict) << '\t' << out.combined.combined_pvalue << '\n';
      return out.combined.verdict == Verdict::detected ? 0 : 1;
    } else if (*experiment_cmd) {
      ex.out_dir = resolve_out(ex_out, "experiment");
      if (!ex_manifest.empty()) ex.manifest = ex_manifest;
      ex.ingest.sample_rate = ex.train.spectro.sample_rate;
      if (ex_full) {
        ex.grid = full_grid();
      } else if (!ex_d.empty() || !ex_dist.empty() || !ex_interp.empty()) {
        if (ex_d.empty()) ex_d = {GridCell{}.d};
        if (ex_dist.empty()) ex_dist = {to_string(GridCell{}.distribution)};
        if (ex_interp.empty()) ex_interp = {to_string(GridCell{}.interpolation)};
        ex.grid.clear();
        for (int d : ex_d)
          for (const auto& dist : ex_dist)
            for (const auto& interp : ex_interp)
              ex.grid.push_back({d, key_distribution_from_string(dist), interpolation_from_string(interp)});
      }
      cmd_experiment(ex, log_line);
    } else if (*synth) {
      const fs::path out = resolve_out(sy_out, "desk_dataset");
      const fs::path manifest = export_protected(make_desk_dataset(sy), out);
      log_line("wrote " + std::to_string(sy.num_clips) + " clips, manifest " + manifest.string());
    }
  } catch (const std::exception& e) {
    std::cerr << "[taggant] error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
