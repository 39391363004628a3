#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "ripo/io_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "ripo_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Result {
  int code = 0;
  std::string err;
};

Result run(const std::string& args, const std::string& env = {}) {
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string("\"") + RIPO_CLI_PATH + "\" " + args + " 2> \"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = ripo::read_text_file(err);
  return r;
}

std::string slurp(const fs::path& p) { return ripo::read_text_file(p); }

std::size_t line_count(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

void expect_error(const Result& r, int code, const std::string& kind) {
  CHECK(r.code == code);
  std::string last, line;
  std::istringstream in(r.err);
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  const json j = json::parse(last);
  CHECK(j.at("kind") == kind);
  CHECK(j.at("error").is_string());
}

const std::string kTiny = "--layers 1 --heads 2 --model-dim 16 --fme-dim 8 --ffn-dim 16 --batch-size 8 -q";

// Shared 50-piece corpus and one trained tiny model.
const fs::path& corpus_dir() {
  static const fs::path d = [] {
    const fs::path out = work_dir() / "corpus50";
    REQUIRE(run("make-corpus -q --pieces 50 --seed 4 --out-dir " + q(out)).code == 0);
    return out;
  }();
  return d;
}

const fs::path& trained_dir() {
  static const fs::path d = [] {
    const fs::path out = work_dir() / "trained";
    const Result r = run("train " + kTiny + " --epochs 2 --train " + q(corpus_dir() / "train.jsonl") + " --test " +
                         q(corpus_dir() / "test.jsonl") + " --out-dir " + q(out));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return out;
  }();
  return d;
}

}  // namespace

TEST_CASE("make-corpus splits 90/10 with floor rounding and is deterministic") {
  const fs::path a = work_dir() / "mc_a", b = work_dir() / "mc_b", c = work_dir() / "mc_c";
  REQUIRE(run("make-corpus -q --pieces 10 --seed 5 --out-dir " + q(a)).code == 0);
  CHECK(line_count(a / "train.jsonl") == 9);
  CHECK(line_count(a / "test.jsonl") == 1);
  CHECK(fs::exists(a / "vocabulary.json"));
  CHECK(json::parse(slurp(a / "vocabulary.json")).is_object());

  REQUIRE(run("make-corpus -q --pieces 10 --seed 5 --out-dir " + q(b)).code == 0);
  CHECK(slurp(a / "train.jsonl") == slurp(b / "train.jsonl"));
  CHECK(slurp(a / "test.jsonl") == slurp(b / "test.jsonl"));

  REQUIRE(run("make-corpus -q --pieces 10 --seed 6 --out-dir " + q(c)).code == 0);
  CHECK(slurp(a / "train.jsonl") != slurp(c / "train.jsonl"));

  const fs::path d = work_dir() / "mc_default";
  REQUIRE(run("make-corpus -q --out-dir " + q(d)).code == 0);
  CHECK(line_count(d / "train.jsonl") == 180);
  CHECK(line_count(d / "test.jsonl") == 20);

  // Every piece appears in exactly one split.
  std::set<std::string> names;
  for (const char* f : {"train.jsonl", "test.jsonl"}) {
    std::istringstream in(slurp(d / f));
    std::string line;
    while (std::getline(in, line)) names.insert(json::parse(line).at("name").get<std::string>());
  }
  CHECK(names.size() == 200);
}

TEST_CASE("make-corpus reruns from its resolved config") {
  const fs::path a = work_dir() / "mc_rerun_a", b = work_dir() / "mc_rerun_b";
  REQUIRE(run("make-corpus -q --pieces 12 --bars 4 --seed 8 --out-dir " + q(a)).code == 0);
  const json cfg = json::parse(slurp(a / "resolved_config.json"));
  CHECK(cfg.at("command") == "make-corpus");
  CHECK(cfg.at("corpus").at("num_pieces") == 12);
  REQUIRE(run("make-corpus -q --config " + q(a / "resolved_config.json") + " --out-dir " + q(b)).code == 0);
  CHECK(slurp(a / "train.jsonl") == slurp(b / "train.jsonl"));
  CHECK(slurp(a / "test.jsonl") == slurp(b / "test.jsonl"));
}

TEST_CASE("every attention ablation combination trains") {
  const std::vector<std::string> flags = {"--no-rel-index", "--no-rel-onset", "--no-rel-pitch"};
  for (int mask = 0; mask < 8; ++mask) {
    std::string extra;
    for (int b = 0; b < 3; ++b) {
      if (mask & (1 << b)) extra += " " + flags[b];
    }
    const fs::path out = work_dir() / ("ablate_" + std::to_string(mask));
    const Result r = run("train " + kTiny + " --epochs 1" + extra + " --train " + q(corpus_dir() / "train.jsonl") +
                         " --test " + q(corpus_dir() / "test.jsonl") + " --out-dir " + q(out));
    CHECK_MESSAGE(r.code == 0, extra << ": " << r.err);
    CHECK(line_count(out / "loss.csv") == 3);
    const json abl = json::parse(slurp(out / "resolved_config.json")).at("model").at("ablation");
    CHECK(abl.at("use_rel_index") == ((mask & 1) == 0));
    CHECK(abl.at("use_rel_onset") == ((mask & 2) == 0));
    CHECK(abl.at("use_rel_pitch") == ((mask & 4) == 0));
  }
}

TEST_CASE("train writes its artifacts and echoes every default") {
  const fs::path out = trained_dir();
  for (const char* f : {"loss.csv", "checkpoint.bin", "parameter_census.json", "resolved_config.json"}) {
    CHECK_MESSAGE(fs::exists(out / f), f);
  }
  const auto rows = read_csv(out / "loss.csv");
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == std::vector<std::string>{"epoch", "split", "ce_pitch", "ce_duration", "ce_sum"});
  CHECK(rows[1][1] == "train");
  CHECK(rows[2][1] == "test");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(std::stod(rows[i][4]) == doctest::Approx(std::stod(rows[i][2]) + std::stod(rows[i][3])).epsilon(1e-12));
  }

  const json cfg = json::parse(slurp(out / "resolved_config.json"));
  CHECK(cfg.at("epochs") == 2);
  const json& m = cfg.at("model");
  CHECK(m.at("lr") == 0.001);
  CHECK(m.at("lr_decay") == 0.95);
  CHECK(m.at("batch_size") == 8);
  CHECK(m.at("proj_dim") == 8);
  CHECK(m.at("max_len") == 246);
  CHECK(m.at("embedding_mode") == "fme");
  CHECK(m.at("bases").at("pitch") == 9919.0);
  for (const char* key : {"num_layers", "num_heads", "model_dim", "fme_dim", "ffn_dim", "ablation", "seed"}) {
    CHECK_MESSAGE(m.contains(key), key);
  }

  const json census = json::parse(slurp(out / "parameter_census.json"));
  std::size_t total = 0;
  for (const auto& e : census.at("parameters")) total += e.at("count").get<std::size_t>();
  CHECK(census.at("total") == total);
}

TEST_CASE("train reruns from its resolved config byte for byte") {
  const fs::path again = work_dir() / "trained_again";
  const Result r = run("train -q --config " + q(trained_dir() / "resolved_config.json") + " --out-dir " + q(again));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(slurp(trained_dir() / "loss.csv") == slurp(again / "loss.csv"));
  CHECK(slurp(trained_dir() / "checkpoint.bin") == slurp(again / "checkpoint.bin"));
}

TEST_CASE("generate continues each seed piece and writes traces") {
  const fs::path out = work_dir() / "gen";
  const Result r = run("generate -q --checkpoint " + q(trained_dir() / "checkpoint.bin") + " --seeds " +
                       q(corpus_dir() / "test.jsonl") + " --strategy top_k --k 5 --temperature 1.2 --rng-seed 3 "
                       "--out-dir " + q(out));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const std::size_t n_test = line_count(corpus_dir() / "test.jsonl");
  const std::size_t n_gen = line_count(out / "generated.jsonl");
  CHECK(n_gen <= n_test);
  CHECK(n_gen > 0);

  std::istringstream in(slurp(out / "generated.jsonl"));
  std::string line;
  std::size_t traces = 0;
  while (std::getline(in, line)) {
    const json piece = json::parse(line);
    double span = 0.0;
    for (const auto& note : piece.at("notes")) span += note.at("dur").get<double>();
    CHECK(span >= 64.0);
    CHECK(span < 68.0);
    CHECK(piece.at("name").get<std::string>().find("/generated") != std::string::npos);
  }
  for (const auto& e : fs::directory_iterator(out / "traces")) {
    const std::string name = e.path().filename().string();
    if (name.find(".truth.") != std::string::npos) continue;
    ++traces;
    const auto rows = read_csv(e.path());
    CHECK(rows[0] == std::vector<std::string>{"step", "pitch_token", "p_pitch", "dur_token", "p_dur", "onset"});
    for (std::size_t i = 1; i < rows.size(); ++i) {
      CHECK(std::stoul(rows[i][1]) != 0);
      CHECK(std::stod(rows[i][2]) > 0.0);
      CHECK(std::stod(rows[i][2]) <= 1.0);
    }
  }
  CHECK(traces == n_gen);

  const fs::path again = work_dir() / "gen_again";
  REQUIRE(run("generate -q --config " + q(out / "resolved_config.json") + " --out-dir " + q(again)).code == 0);
  CHECK(slurp(out / "generated.jsonl") == slurp(again / "generated.jsonl"));
}

TEST_CASE("generate skips seeds shorter than the seed bars") {
  const fs::path seeds = work_dir() / "short_seeds.jsonl";
  ripo::write_text_file(seeds,
                        R"({"name":"short","beats_per_bar":4,"notes":[{"pitch":60,"dur":1.0},{"pitch":62,"dur":1.0}]})"
                        "\n");
  const fs::path out = work_dir() / "gen_short";
  const Result r = run("generate -q --checkpoint " + q(trained_dir() / "checkpoint.bin") + " --seeds " + q(seeds) +
                       " --out-dir " + q(out));
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  CHECK(line_count(out / "generated.jsonl") == 0);
}

TEST_CASE("evaluate writes metrics and one CSV row per piece") {
  const fs::path out = work_dir() / "eval";
  const fs::path ref = corpus_dir() / "test.jsonl";
  REQUIRE(run("evaluate -q --generated " + q(ref) + " --reference " + q(ref) + " --out-dir " + q(out)).code == 0);
  const json m = json::parse(slurp(out / "metrics.json"));
  CHECK(std::abs(m.at("metrics").at("kl_pitch").get<double>()) < 1e-9);
  CHECK(std::abs(m.at("metrics").at("kl_duration").get<double>()) < 1e-9);
  CHECK(m.at("metrics").at("isr") == 1.0);
  CHECK(m.at("metadata").at("kl_direction") == "generated||reference");
  for (const char* key : {"metrics", "counts", "metadata"}) CHECK(m.contains(key));
  CHECK(line_count(out / "per_piece.csv") == line_count(ref) + 1);

  const fs::path again = work_dir() / "eval_again";
  REQUIRE(run("evaluate -q --config " + q(out / "resolved_config.json") + " --out-dir " + q(again)).code == 0);
  CHECK(slurp(out / "metrics.json") == slurp(again / "metrics.json"));

  const fs::path rev = work_dir() / "eval_rev";
  REQUIRE(run("evaluate -q --kl-direction \"reference||generated\" --generated " + q(ref) + " --reference " +
              q(corpus_dir() / "train.jsonl") + " --out-dir " + q(rev))
              .code == 0);
  CHECK(json::parse(slurp(rev / "metrics.json")).at("metadata").at("kl_direction") == "reference||generated");
}

TEST_CASE("inspect writes self-distance matrices with constant diagonals in FME mode") {
  const fs::path out = work_dir() / "inspect";
  REQUIRE(run("inspect -q --seed 2 --out-dir " + q(out)).code == 0);
  const auto pitch = read_csv(out / "pitch_distance.csv");
  REQUIRE(pitch.size() == 129);
  REQUIRE(pitch[0].size() == 129);
  double spread = 0.0;
  for (std::size_t k = 0; k < 128; ++k) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i + k < 128; ++i) {
      const double v = std::stod(pitch[i + 1][i + k + 1]);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (k == 0) CHECK(hi == 0.0);
    spread = std::max(spread, hi - lo);
  }
  CHECK(spread < 1e-9);

  const auto dur = read_csv(out / "duration_distance.csv");
  REQUIRE(dur.size() == 17);
  for (std::size_t i = 1; i <= 16; ++i) CHECK(std::stod(dur[i][i]) == 0.0);

  const auto curve = read_csv(out / "interval_curve.csv");
  REQUIRE(curve.size() == 1 + 127 * 4 + 1);
  CHECK(curve[0] == std::vector<std::string>{"delta", "l2"});
  CHECK(std::stod(curve[1][1]) == 0.0);
  CHECK(std::stod(curve.back()[0]) == 127.0);
  // Distance at an integer shift matches the matrix.
  CHECK(std::stod(curve[1 + 12 * 4][1]) == doctest::Approx(std::stod(pitch[1][13])).epsilon(1e-9));

  const fs::path table = work_dir() / "inspect_table";
  REQUIRE(run("inspect -q --embedding table --out-dir " + q(table)).code == 0);
  const fs::path from_ckpt = work_dir() / "inspect_ckpt";
  REQUIRE(run("inspect -q --checkpoint " + q(trained_dir() / "checkpoint.bin") + " --out-dir " + q(from_ckpt)).code ==
          0);
  CHECK(read_csv(from_ckpt / "pitch_distance.csv").size() == 129);

  const fs::path again = work_dir() / "inspect_again";
  REQUIRE(run("inspect -q --config " + q(out / "resolved_config.json") + " --out-dir " + q(again)).code == 0);
  CHECK(slurp(out / "pitch_distance.csv") == slurp(again / "pitch_distance.csv"));
}

TEST_CASE("output directory precedence") {
  const fs::path env_dir = work_dir() / "from_env";
  REQUIRE(run("make-corpus -q --pieces 4", "RIPO_OUT_DIR=" + q(env_dir)).code == 0);
  CHECK(fs::exists(env_dir / "train.jsonl"));
  const fs::path flag_dir = work_dir() / "from_flag";
  REQUIRE(run("make-corpus -q --pieces 4 --out-dir " + q(flag_dir), "RIPO_OUT_DIR=" + q(env_dir / "unused")).code == 0);
  CHECK(fs::exists(flag_dir / "train.jsonl"));
  CHECK(!fs::exists(env_dir / "unused"));
  // Without flag or env, the config's out_dir is used.
  REQUIRE(run("make-corpus -q --config " + q(flag_dir / "resolved_config.json"), "RIPO_OUT_DIR=").code == 0);
  CHECK(json::parse(slurp(flag_dir / "resolved_config.json")).at("out_dir") == flag_dir.string());
}

TEST_CASE("errors are reported as JSON with distinct exit codes") {
  expect_error(run("train -q --out-dir " + q(work_dir() / "e1")), 2, "invalid_argument");
  expect_error(run("train -q --train " + q(work_dir() / "missing.jsonl") + " --out-dir " + q(work_dir() / "e2")), 5,
               "io");
  expect_error(run("generate -q --checkpoint " + q(corpus_dir() / "train.jsonl") + " --seeds " +
                   q(corpus_dir() / "test.jsonl") + " --out-dir " + q(work_dir() / "e3")),
               5, "io");
  expect_error(run("train -q --epochs 3 --config " + q(trained_dir() / "resolved_config.json")), 2,
               "invalid_argument");
  expect_error(run("generate -q --config " + q(trained_dir() / "resolved_config.json") + " --out-dir " +
                   q(work_dir() / "e4")),
               2, "invalid_argument");
  expect_error(run("frobnicate"), 2, "usage");
  expect_error(run("train --embedding w2v --train x"), 2, "usage");
  expect_error(run("generate -q --checkpoint " + q(trained_dir() / "checkpoint.bin") + " --seeds " +
                   q(corpus_dir() / "test.jsonl") + " --p 0 --out-dir " + q(work_dir() / "e5")),
               2, "invalid_argument");
  expect_error(run("train -q --layers 1 --heads 4 --model-dim 18 --fme-dim 8 --train " + q(corpus_dir() / "train.jsonl") +
                   " --out-dir " + q(work_dir() / "e6")),
               2, "invalid_argument");
  expect_error(run("train -q --lr 1e300 --epochs 1 " + kTiny + " --train " + q(corpus_dir() / "train.jsonl") +
                   " --out-dir " + q(work_dir() / "e7")),
               6, "divergence");
}
