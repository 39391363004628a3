#include "ripo/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ripo/checkpoint.hpp"
#include "ripo/decoder.hpp"
#include "ripo/error.hpp"
#include "ripo/io_util.hpp"
#include "ripo/metrics.hpp"
#include "ripo/random.hpp"
#include "ripo/training.hpp"

namespace ripo::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kOutDirEnv = "RIPO_OUT_DIR";
constexpr const char* kResolvedName = "resolved_config.json";
constexpr double kTrainFraction = 0.9;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
      return 2;
    case ErrorKind::kDimension:
      return 3;
    case ErrorKind::kDomain:
      return 4;
    case ErrorKind::kIo:
      return 5;
    case ErrorKind::kDivergence:
      return 6;
  }
  return 1;
}

void report_error(std::string_view kind, const std::string& message) {
  std::cerr << json{{"error", message}, {"kind", kind}}.dump() << "\n";
}

void warn(const std::string& message) { std::cerr << json{{"warning", message}}.dump() << "\n"; }

std::vector<TokenSequence> load_sequences(const std::string& path) {
  std::vector<TokenSequence> out;
  for (const Melody& m : read_melodies(path)) out.push_back(encode(m));
  if (out.empty()) throw Error(ErrorKind::kInvalidArgument, path + " contains no melodies");
  return out;
}

std::string safe_name(const std::string& name) {
  std::string out;
  for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out.empty() ? "piece" : out;
}

template <typename T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& ex) {
    throw Error(ErrorKind::kInvalidArgument, std::string("config field '") + key + "': " + ex.what());
  }
}

// ---- subcommands, each driven only by its resolved config --------------------

void run_make_corpus(const json& cfg, const fs::path& out) {
  const CorpusSpec spec = CorpusSpec::from_json(cfg.at("corpus"));
  const double fraction = field<double>(cfg, "train_fraction");
  std::vector<Melody> pieces = generate_corpus_melodies(spec);
  std::mt19937_64 rng = make_stream(spec.seed, "split");
  std::shuffle(pieces.begin(), pieces.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pieces.size())));
  const std::span<const Melody> all(pieces);
  write_melodies(out / "train.jsonl", all.first(n_train));
  write_melodies(out / "test.jsonl", all.subspan(n_train));
  write_text_file(out / "vocabulary.json", Vocabulary::to_json().dump(2) + "\n");
}

void run_train(const json& cfg, const fs::path& out, bool verbose) {
  const ModelConfig model_cfg = ModelConfig::from_json(cfg.at("model"));
  const auto epochs = field<std::size_t>(cfg, "epochs");
  const auto train_set = load_sequences(field<std::string>(cfg, "train"));
  std::vector<TokenSequence> test_set;
  if (!cfg.at("test").is_null()) test_set = load_sequences(field<std::string>(cfg, "test"));

  RipoModel model(model_cfg);
  TrainState state = TrainState::fresh(model);
  const auto log = train(model, train_set, test_set, epochs, state, [verbose](const LossRecord& r) {
    if (verbose) {
      std::cerr << "epoch " << r.epoch << " " << r.split << " ce_p=" << format_double(r.ce_pitch)
                << " ce_d=" << format_double(r.ce_duration) << " ce_sum=" << format_double(r.ce_sum) << "\n";
    }
  });
  write_text_file(out / "loss.csv", loss_csv(log));
  save_checkpoint(out / "checkpoint.bin", make_checkpoint(model, state.adam, state.rng_state(), state.epoch));

  json census = json::array();
  for (const auto& e : model.census()) census.push_back({{"name", e.name}, {"shape", e.shape}, {"count", e.count}});
  write_text_file(out / "parameter_census.json",
                  json{{"total", model.parameter_count()}, {"parameters", census}}.dump(2) + "\n");
}

void run_generate(const json& cfg, const fs::path& out) {
  const GenerationConfig base = GenerationConfig::from_json(cfg.at("generation"));
  const auto limit = field<std::size_t>(cfg, "limit");
  const RipoModel model = restore_model(load_checkpoint(field<std::string>(cfg, "checkpoint")));
  const auto pieces = load_sequences(field<std::string>(cfg, "seeds"));

  std::vector<Melody> generated;
  for (std::size_t i = 0; i < pieces.size() && (limit == 0 || i < limit); ++i) {
    const TokenSequence& piece = pieces[i];
    const TokenSequence seed = seed_prefix(piece, base.seed_bars);
    if (seed.size() == 0 || seed.end_time() < static_cast<double>(base.seed_bars) * piece.beat) {
      warn("skipping '" + piece.name + "': shorter than " + std::to_string(base.seed_bars) + " bars");
      continue;
    }
    GenerationConfig gc = base;
    gc.rng_seed = stream_seed(base.rng_seed, "piece/" + std::to_string(i));
    GenerationResult result = generate(model, seed, gc);
    result.sequence.name = piece.name + "/generated";
    generated.push_back(token_melody(result.sequence));

    char index[16];
    std::snprintf(index, sizeof(index), "%04zu", i);
    const std::string stem = std::string(index) + "_" + safe_name(piece.name);
    write_text_file(out / "traces" / (stem + ".csv"), trace_csv(result.trace));
    if (piece.size() >= 2) write_text_file(out / "traces" / (stem + ".truth.csv"), trace_csv(trace_ground_truth(model, piece)));
  }
  write_melodies(out / "generated.jsonl", generated);
}

void run_evaluate(const json& cfg, const fs::path& out) {
  EvaluationOptions options;
  const auto direction = field<std::string>(cfg, "kl_direction");
  if (direction == "generated||reference") {
    options.kl_direction = KlDirection::kGeneratedToReference;
  } else if (direction == "reference||generated") {
    options.kl_direction = KlDirection::kReferenceToGenerated;
  } else {
    throw Error(ErrorKind::kInvalidArgument, "unknown kl_direction '" + direction + "'");
  }
  const auto generated = load_sequences(field<std::string>(cfg, "generated"));
  const auto reference = load_sequences(field<std::string>(cfg, "reference"));
  const MetricsReport report = evaluate(generated, reference, options);
  write_text_file(out / "metrics.json", report.to_json().dump(2) + "\n");
  write_text_file(out / "per_piece.csv", report.per_piece_csv());
}

std::string distance_matrix_csv(const std::vector<std::vector<double>>& rows, const std::vector<std::string>& labels) {
  std::string out = "token";
  for (const auto& l : labels) out += "," + l;
  out += "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out += labels[i];
    for (std::size_t j = 0; j < rows.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < rows[i].size(); ++k) s += (rows[i][k] - rows[j][k]) * (rows[i][k] - rows[j][k]);
      out += "," + format_double(std::sqrt(s));
    }
    out += "\n";
  }
  return out;
}

void run_inspect(const json& cfg, const fs::path& out) {
  const std::optional<RipoModel> model =
      cfg.at("checkpoint").is_null() ? RipoModel(ModelConfig::from_json(cfg.at("model")))
                                     : restore_model(load_checkpoint(field<std::string>(cfg, "checkpoint")));

  std::vector<std::vector<double>> pitch_rows, dur_rows;
  std::vector<std::string> pitch_labels, dur_labels;
  for (int midi = 0; midi < 128; ++midi) {
    pitch_rows.push_back(model->raw_pitch_embedding(Vocabulary::pitch_index(Pitch::note(midi))));
    pitch_labels.push_back(std::to_string(midi));
  }
  for (std::size_t token = 1; token < Vocabulary::kDurationSize; ++token) {
    dur_rows.push_back(model->raw_duration_embedding(token));
    dur_labels.push_back(format_double(Vocabulary::duration_value(token)));
  }
  write_text_file(out / "pitch_distance.csv", distance_matrix_csv(pitch_rows, pitch_labels));
  write_text_file(out / "duration_distance.csv", distance_matrix_csv(dur_rows, dur_labels));

  const ModelConfig& mc = model->config();
  const FmeParams params = model->pitch_fme() ? *model->pitch_fme() : FmeParams::create(mc.bases.pitch_base, mc.fme_dim, 0, 0);
  std::string curve = "delta,l2\n";
  for (int i = 0; i <= 127 * 4; ++i) {
    const double delta = i * 0.25;
    curve += format_double(delta) + "," + format_double(closed_form_distance(delta, params)) + "\n";
  }
  write_text_file(out / "interval_curve.csv", curve);
}

// ---- argument handling ------------------------------------------------------------

struct Common {
  std::string config_path;
  std::string out_dir;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "Rerun from a resolved_config.json (other options are then not allowed)");
  sub->add_option("--out-dir", c.out_dir, "Output directory (overrides $RIPO_OUT_DIR and the config's out_dir)");
  sub->add_flag("-q,--quiet", c.quiet, "Suppress progress output");
}

// With --config, every setting comes from the file; only --out-dir and
// --quiet may accompany it.
void reject_mixed(const CLI::App* sub) {
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_name();
    if (opt->count() > 0 && name != "--config" && name != "--out-dir" && name != "--quiet" && name != "--help") {
      throw Error(ErrorKind::kInvalidArgument, name + " cannot be combined with --config");
    }
  }
}

fs::path resolve_out_dir(const Common& c, const json& cfg, const std::string& command) {
  if (!c.out_dir.empty()) return c.out_dir;
  if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') return env;
  if (cfg.contains("out_dir") && cfg["out_dir"].is_string()) return cfg["out_dir"].get<std::string>();
  return fs::path("ripo_out") / command;
}

template <typename T>
void require(const T& value, const T& empty, const char* flag) {
  if (value == empty) throw Error(ErrorKind::kInvalidArgument, std::string(flag) + " is required");
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Melody modelling with fundamental music embeddings and RIPO attention"};
  app.require_subcommand(1);

  // make-corpus
  Common mc_common;
  CorpusSpec corpus;
  auto* mc = app.add_subcommand("make-corpus", "Generate the synthetic motif corpus and its 90/10 split");
  add_common(mc, mc_common);
  mc->add_option("--pieces", corpus.num_pieces, "Number of pieces")->capture_default_str();
  mc->add_option("--bars", corpus.bars_per_piece, "Bars per piece")->capture_default_str();
  mc->add_option("--motif-bars", corpus.motif_bars, "Bars per motif")->capture_default_str();
  mc->add_option("--motif-min-notes", corpus.motif_min_notes)->capture_default_str();
  mc->add_option("--motif-max-notes", corpus.motif_max_notes)->capture_default_str();
  mc->add_option("--rest-probability", corpus.rest_probability)->capture_default_str();
  mc->add_option("--rhythm-variation", corpus.rhythm_variation)->capture_default_str();
  mc->add_option("--seed", corpus.seed, "Corpus seed")->capture_default_str();

  // train
  Common tr_common;
  ModelConfig model_cfg;
  std::string train_path, test_path, embedding = "fme";
  std::size_t epochs = 50;
  auto* tr = app.add_subcommand("train", "Train a model and write checkpoint.bin and loss.csv");
  add_common(tr, tr_common);
  tr->add_option("--train", train_path, "Training melodies (JSONL)");
  tr->add_option("--test", test_path, "Held-out melodies (JSONL)");
  tr->add_option("--epochs", epochs)->capture_default_str();
  tr->add_option("--seed", model_cfg.seed, "Initialization and shuffling seed")->capture_default_str();
  tr->add_option("--lr", model_cfg.lr)->capture_default_str();
  tr->add_option("--lr-decay", model_cfg.lr_decay, "Learning-rate factor applied after each epoch")->capture_default_str();
  tr->add_option("--batch-size", model_cfg.batch_size)->capture_default_str();
  tr->add_option("--layers", model_cfg.num_layers)->capture_default_str();
  tr->add_option("--heads", model_cfg.num_heads)->capture_default_str();
  tr->add_option("--model-dim", model_cfg.model_dim, "Model width; each token family projects to half of it")
      ->capture_default_str();
  tr->add_option("--fme-dim", model_cfg.fme_dim)->capture_default_str();
  tr->add_option("--ffn-dim", model_cfg.ffn_dim)->capture_default_str();
  tr->add_option("--embedding", embedding, "Token embedding: fme, table or onehot")
      ->check(CLI::IsMember({"fme", "table", "onehot"}))
      ->capture_default_str();
  bool no_rel_onset = false, no_rel_pitch = false, no_rel_index = false, no_pe_onset = false, no_pe_beat = false;
  tr->add_flag("--no-rel-onset", no_rel_onset, "Drop the relative-onset attention term");
  tr->add_flag("--no-rel-pitch", no_rel_pitch, "Drop the relative-pitch attention term");
  tr->add_flag("--no-rel-index", no_rel_index, "Drop the relative-index attention term");
  tr->add_flag("--no-pe-onset", no_pe_onset, "Drop the onset positional encoding");
  tr->add_flag("--no-pe-beat", no_pe_beat, "Drop the metrical (onset mod beat) positional encoding");

  // generate
  Common ge_common;
  GenerationConfig gen;
  std::string checkpoint_path, seeds_path, strategy = "top_p";
  std::size_t limit = 0;
  auto* ge = app.add_subcommand("generate", "Continue the opening bars of each seed piece");
  add_common(ge, ge_common);
  ge->add_option("--checkpoint", checkpoint_path, "Trained checkpoint");
  ge->add_option("--seeds", seeds_path, "Pieces whose opening bars seed generation (JSONL)");
  ge->add_option("--strategy", strategy)->check(CLI::IsMember({"top_k", "top_p"}))->capture_default_str();
  ge->add_option("--k", gen.k)->capture_default_str();
  ge->add_option("--p", gen.p)->capture_default_str();
  ge->add_option("--temperature", gen.temperature)->capture_default_str();
  ge->add_option("--seed-bars", gen.seed_bars)->capture_default_str();
  ge->add_option("--target-bars", gen.target_bars, "Total bars including the seed")->capture_default_str();
  ge->add_option("--rng-seed", gen.rng_seed)->capture_default_str();
  ge->add_option("--limit", limit, "Use at most this many seed pieces (0 = all)")->capture_default_str();

  // evaluate
  Common ev_common;
  std::string generated_path, reference_path, kl_direction = "generated||reference";
  auto* ev = app.add_subcommand("evaluate", "Objective metrics of generated melodies against a reference set");
  add_common(ev, ev_common);
  ev->add_option("--generated", generated_path, "Generated melodies (JSONL)");
  ev->add_option("--reference", reference_path, "Reference melodies (JSONL)");
  ev->add_option("--kl-direction", kl_direction)
      ->check(CLI::IsMember({"generated||reference", "reference||generated"}))
      ->capture_default_str();

  // inspect
  Common in_common;
  std::string inspect_checkpoint, inspect_embedding = "fme";
  std::uint64_t inspect_seed = 0;
  auto* in = app.add_subcommand("inspect", "Embedding self-distance matrices and the interval-distance curve");
  add_common(in, in_common);
  in->add_option("--checkpoint", inspect_checkpoint, "Checkpoint to inspect (default: freshly initialized model)");
  in->add_option("--embedding", inspect_embedding)->check(CLI::IsMember({"fme", "table", "onehot"}))
      ->capture_default_str();
  in->add_option("--seed", inspect_seed, "Initialization seed of the fresh model")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    Common* common = command == "make-corpus" ? &mc_common
                     : command == "train"     ? &tr_common
                     : command == "generate"  ? &ge_common
                     : command == "evaluate"  ? &ev_common
                                              : &in_common;
    json cfg;
    if (!common->config_path.empty()) {
      reject_mixed(sub);
      try {
        cfg = json::parse(read_text_file(common->config_path));
      } catch (const json::exception& ex) {
        throw Error(ErrorKind::kInvalidArgument, common->config_path + ": " + ex.what());
      }
      if (field<std::string>(cfg, "command") != command) {
        throw Error(ErrorKind::kInvalidArgument, common->config_path + " was written by '" +
                                                     field<std::string>(cfg, "command") + "', not '" + command + "'");
      }
    } else if (command == "make-corpus") {
      corpus.validate();
      cfg = {{"corpus", corpus.to_json()}, {"train_fraction", kTrainFraction}};
    } else if (command == "train") {
      require(train_path, std::string(), "--train");
      model_cfg.proj_dim = model_cfg.model_dim / 2;
      model_cfg.embedding_mode = embedding_mode_from_string(embedding);
      model_cfg.ablation.use_rel_onset = !no_rel_onset;
      model_cfg.ablation.use_rel_pitch = !no_rel_pitch;
      model_cfg.ablation.use_rel_index = !no_rel_index;
      model_cfg.ablation.use_pe_onset = !no_pe_onset;
      model_cfg.ablation.use_pe_beat = !no_pe_beat;
      model_cfg.validate();
      cfg = {{"train", train_path},
             {"test", test_path.empty() ? json() : json(test_path)},
             {"epochs", epochs},
             {"model", model_cfg.to_json()}};
    } else if (command == "generate") {
      require(checkpoint_path, std::string(), "--checkpoint");
      require(seeds_path, std::string(), "--seeds");
      gen.strategy = strategy == "top_k" ? SamplingStrategy::kTopK : SamplingStrategy::kTopP;
      gen.validate();
      cfg = {{"checkpoint", checkpoint_path}, {"seeds", seeds_path}, {"generation", gen.to_json()}, {"limit", limit}};
    } else if (command == "evaluate") {
      require(generated_path, std::string(), "--generated");
      require(reference_path, std::string(), "--reference");
      cfg = {{"generated", generated_path}, {"reference", reference_path}, {"kl_direction", kl_direction}};
    } else {
      ModelConfig fresh;
      fresh.embedding_mode = embedding_mode_from_string(inspect_embedding);
      fresh.seed = inspect_seed;
      cfg = {{"checkpoint", inspect_checkpoint.empty() ? json() : json(inspect_checkpoint)},
             {"model", fresh.to_json()}};
    }

    const fs::path out = resolve_out_dir(*common, cfg, command);
    cfg["command"] = command;
    cfg["out_dir"] = out.string();
    write_text_file(out / kResolvedName, cfg.dump(2) + "\n");

    if (command == "make-corpus") {
      run_make_corpus(cfg, out);
    } else if (command == "train") {
      run_train(cfg, out, !common->quiet);
    } else if (command == "generate") {
      run_generate(cfg, out);
    } else if (command == "evaluate") {
      run_evaluate(cfg, out);
    } else {
      run_inspect(cfg, out);
    }
    if (!common->quiet) std::cerr << command << ": wrote " << out.string() << "\n";
    return 0;
  } catch (const Error& e) {
    report_error(to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    report_error(to_string(ErrorKind::kInvalidArgument), std::string("config: ") + e.what());
    return exit_code(ErrorKind::kInvalidArgument);
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
}

}  // namespace ripo::cli
