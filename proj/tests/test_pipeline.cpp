#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "taggant/pipeline.hpp"

using namespace taggant;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

KeygenOptions tiny_keygen_options(const fs::path& dir) {
  KeygenOptions o;
  o.config = fixtures::tiny_keygen(4);
  o.out_dir = dir;
  return o;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TAGGANT_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

// One line per key with `first` as the top class and the rest in order.
std::string prediction_lines(const KeySet& keys, bool hit) {
  std::string text = "# suspect predictions\n";
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const int label = keys.keys[i].label;
    const int first = hit ? label : (label + 1) % 10;
    text += key_id(i) + " " + std::to_string(first);
    for (int c = 0; c < 10; ++c)
      if (c != first) text += " " + std::to_string(c);
    text += "\n";
  }
  return text;
}

}  // namespace

TEST_CASE("keygen is deterministic and refuses to overwrite") {
  fixtures::TempDir tmp("keygen");
  const KeySet a = cmd_keygen(tiny_keygen_options(tmp.path / "a"));
  const KeySet b = cmd_keygen(tiny_keygen_options(tmp.path / "b"));
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(slurp(tmp.path / "a" / (key_id(i) + ".wav")) == slurp(tmp.path / "b" / (key_id(i) + ".wav")));
    CHECK(a.keys[i].label == b.keys[i].label);
  }
  CHECK_THROWS(cmd_keygen(tiny_keygen_options(tmp.path / "a")));
  KeygenOptions again = tiny_keygen_options(tmp.path / "a");
  again.force = true;
  again.config.seed = 99;
  cmd_keygen(again);
  CHECK(load_keyset(tmp.path / "a").config.seed == 99);
}

TEST_CASE("prediction logs are parsed strictly") {
  fixtures::TempDir tmp("predlog");
  const fs::path p = tmp.path / "log.txt";
  spit(p, "# header\n\nkey_000 3 1 2\nkey_001\t0 9\n");
  const auto log = read_prediction_log(p, 10);
  CHECK(log.at("key_000") == std::vector<int>{3, 1, 2});
  CHECK(log.at("key_001") == std::vector<int>{0, 9});

  const std::vector<std::pair<std::string, std::string>> bad{
      {"key_000 3 x\n", ":1:"},       {"key_000 3 10\n", ":1:"},       {"key_000 3 3\n", ":1:"},
      {"key_000\n", ":1:"},           {"key_000 1\nkey_000 2\n", ":2:"}, {"key_000 -1\n", ":1:"}};
  for (const auto& [text, where] : bad) {
    spit(p, text);
    try {
      read_prediction_log(p, 10);
      FAIL("accepted: " << text);
    } catch (const PredictionLogError& e) {
      CHECK(std::string(e.what()).find(where) != std::string::npos);
    }
  }
  CHECK_THROWS_AS(read_prediction_log(tmp.path / "missing.txt", 10), PredictionLogError);
}

TEST_CASE("verify from prediction logs") {
  fixtures::TempDir tmp("verify");
  const KeySet keys = cmd_keygen(tiny_keygen_options(tmp.path / "keys"));
  spit(tmp.path / "hit.txt", prediction_lines(keys, true));
  spit(tmp.path / "miss.txt", prediction_lines(keys, false));

  VerifyOptions o;
  o.keys_dir = tmp.path / "keys";
  o.k = 1;
  o.prediction_logs = {tmp.path / "hit.txt"};
  o.report = tmp.path / "report.json";
  const VerifyOutcome hit = cmd_verify(o);
  CHECK(hit.combined.verdict == Verdict::detected);
  CHECK(hit.runs.front().t_k.front() == 4);
  CHECK(hit.combined.combined_pvalue == doctest::Approx(1e-4));
  const auto report = nlohmann::json::parse(slurp(tmp.path / "report.json"));
  CHECK(report.at("verdict") == "detected");

  o.prediction_logs = {tmp.path / "miss.txt", tmp.path / "hit.txt"};
  const VerifyOutcome both = cmd_verify(o);
  REQUIRE(both.runs.size() == 2);
  CHECK(both.combined.combined_pvalue == doctest::Approx(fisher_combine({1.0, 1e-4})));

  spit(tmp.path / "short.txt", "key_000 1\n");
  o.prediction_logs = {tmp.path / "short.txt"};
  CHECK_THROWS_AS(cmd_verify(o), PredictionLogError);
}

TEST_CASE("verify exit codes") {
  fixtures::TempDir tmp("cli");
  const KeySet keys = cmd_keygen(tiny_keygen_options(tmp.path / "keys"));
  spit(tmp.path / "hit.txt", prediction_lines(keys, true));
  spit(tmp.path / "miss.txt", prediction_lines(keys, false));
  spit(tmp.path / "bad.txt", "key_000 1 1\n");
  const std::string base = "verify --keys " + (tmp.path / "keys").string() + " --k 1 --report " +
                           (tmp.path / "r.json").string() + " --predictions ";
  CHECK(run_cli(base + (tmp.path / "hit.txt").string()) == 0);
  CHECK(run_cli(base + (tmp.path / "miss.txt").string()) == 1);
  CHECK(run_cli(base + (tmp.path / "bad.txt").string()) == 2);
  CHECK(run_cli(base + (tmp.path / "nope.txt").string()) == 2);
  CHECK(run_cli("verify --keys " + (tmp.path / "keys").string() + " --k 0 --predictions " +
                (tmp.path / "hit.txt").string()) == 2);
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("frobnicate") == 2);
}

TEST_CASE("protect writes a shareable dataset and cleans up on failure") {
  fixtures::TempDir tmp("protect");
  const LabeledDataset clean = make_desk_dataset(fixtures::tiny_desk(100));
  const fs::path manifest = export_protected(clean, tmp.path / "clean");
  const KeySet keys = cmd_keygen(tiny_keygen_options(tmp.path / "keys"));

  ProtectOptions o;
  o.manifest = manifest;
  o.ingest.clip_samples = 4000;
  o.keys_dir = tmp.path / "keys";
  o.epsilon = 0.1;
  o.craft.steps = 3;
  o.craft.step_size = 1e-3;
  o.surrogate_train = fixtures::tiny_train(1);
  o.out_dir = tmp.path / "out";
  const ProtectResult r = cmd_protect(o);

  CHECK(r.plan.total() == 10);
  CHECK(r.snr.size() == 10);
  for (const char* f : {"dataset/manifest.csv", "perturbations", "snr.tsv", "alignment.json", "surrogate.ckpt"})
    CHECK(fs::exists(o.out_dir / f));
  for (const SnrRow& row : r.snr) {
    CHECK(row.max_abs_delta <= 0.05);
    CHECK(row.snr_db > 0.0);
  }

  // The shareable part carries no key material and no poison markers.
  std::set<std::string> key_hashes;
  for (const Key& k : keys.keys) key_hashes.insert(content_hash(k.clip));
  for (std::size_t i = 0; i < keys.size(); ++i) key_hashes.insert(content_hash(read_clip(tmp.path / "keys" / (key_id(i) + ".wav"))));
  std::size_t wavs = 0;
  for (const auto& e : fs::recursive_directory_iterator(o.out_dir / "dataset")) {
    if (!e.is_regular_file()) continue;
    CHECK(e.path().filename().string().find("key") == std::string::npos);
    if (e.path().extension() == ".wav") {
      ++wavs;
      CHECK(key_hashes.count(content_hash(read_clip(e.path()))) == 0);
    }
  }
  CHECK(wavs == clean.size());
  const std::string head = slurp(o.out_dir / "dataset" / "manifest.csv").substr(0, 19);
  CHECK(head == "id,path,label,split");

  CHECK_THROWS(cmd_protect(o));  // non-empty output
  spit(tmp.path / "broken.ckpt", "not a checkpoint");
  o.force = true;
  o.surrogate_checkpoint = tmp.path / "broken.ckpt";
  CHECK_THROWS(cmd_protect(o));
  CHECK_FALSE(fs::exists(o.out_dir));
}

TEST_CASE("tiny experiment") {
  fixtures::TempDir tmp("experiment");
  ExperimentConfig cfg;
  cfg.desk = fixtures::tiny_desk(100);
  cfg.grid = {GridCell{8, KeyDistribution::bernoulli, Interpolation::nearest}};
  cfg.num_keys = 3;
  cfg.gl_iterations = 8;
  cfg.epsilon = 0.1;
  cfg.craft.steps = 2;
  cfg.train = fixtures::tiny_train(1);
  cfg.repetitions = 2;
  cfg.k = 3;
  cfg.out_dir = tmp.path / "a";
  const ExperimentResult a = cmd_experiment(cfg);

  REQUIRE(a.cells.size() == 1);
  CHECK(a.cells[0].status == "ok");
  REQUIRE(a.runs.size() == 4);
  std::vector<double> poisoned, benign;
  for (const RunRow& r : a.runs) (r.poisoned ? poisoned : benign).push_back(floor_pvalue(r.p_k[2]));
  CHECK(poisoned.size() == 2);
  CHECK(a.cells[0].combined_pvalue_poisoned == doctest::Approx(fisher_combine(poisoned)).epsilon(1e-12));
  CHECK(a.cells[0].combined_pvalue_benign == doctest::Approx(fisher_combine(benign)).epsilon(1e-12));
  CHECK(a.cells[0].fnr.has_value());
  CHECK(a.cells[0].fpr.has_value());

  const std::string hash = cfg.hash();
  for (const char* t : {"runs.tsv", "summary.tsv", "curves.tsv", "validation.tsv"}) {
    std::istringstream in(slurp(cfg.out_dir / t));
    std::string line;
    std::getline(in, line);
    int rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK(line.find(hash) != std::string::npos);
    }
    CHECK(rows > 0);
  }

  cfg.out_dir = tmp.path / "b";
  CHECK(cfg.hash() == hash);
  cmd_experiment(cfg);
  for (const char* t : {"runs.tsv", "summary.tsv", "curves.tsv", "validation.tsv", "config.json"})
    CHECK(slurp(tmp.path / "a" / t) == slurp(tmp.path / "b" / t));
}

TEST_CASE("experiment config round trip") {
  ExperimentConfig cfg;
  cfg.grid = full_grid();
  cfg.repetitions = 5;
  const ExperimentConfig back = experiment_config_from_json(cfg.to_json());
  CHECK(back.hash() == cfg.hash());
  CHECK(back.grid.size() == 20);
  const ExperimentConfig full = experiment_config_from_json({{"grid", "full"}});
  CHECK(full.grid.size() == 20);
  CHECK_THROWS(experiment_config_from_json({{"grid", "most"}}));
}
