// Command-line front end: alignment curation, feature export, synthetic data,
// the two training loops, the four inference protocols, and the self checks.
//
// Exit codes: 0 success, 1 failed checks, 2 usage error, 3 bad data or I/O.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evogen/checkpoint.hpp"
#include "evogen/critic.hpp"
#include "evogen/errors.hpp"
#include "evogen/featurize.hpp"
#include "evogen/model.hpp"
#include "evogen/msa.hpp"
#include "evogen/protocols.hpp"
#include "evogen/selfcheck.hpp"
#include "evogen/training.hpp"
#include "evogen/trim.hpp"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace evogen;

std::uint64_t env_seed() {
  const char* s = std::getenv("EVOGEN_SEED");
  if (!s || !*s) return 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (end == s || *end != '\0')
    throw DataError("EVOGEN_SEED must be an unsigned integer");
  return static_cast<std::uint64_t>(v);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("short write to " + path);
}

// Checkpoints travel with a sibling <path>.json carrying the architecture, so
// any command can rebuild the model from the file pair alone.
void save_model(const Model& model, const std::string& path) {
  save_checkpoint(path, model.params(), model.config().digest());
  write_text_file(path + ".json", config_to_json(model.config()));
}

Model load_model(const std::string& path) {
  const ModelConfig cfg = config_from_json(read_text_file(path + ".json"));
  ParamStore store = load_checkpoint(path, cfg.digest());
  return Model(cfg, std::move(store));
}

std::vector<Msa> load_corpus_dir(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".a3m")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .a3m files under " + dir);
  std::vector<Msa> out;
  out.reserve(files.size());
  for (const fs::path& f : files) out.push_back(parse_a3m_file(f.string()));
  return out;
}

// --- config-file overlay -------------------------------------------------------
// Precedence: built-in defaults < JSON config file < explicit flags.

json load_config_json(const std::string& path) {
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw DataError("config file is not a JSON object: " + path);
  return j;
}

void reject_unknown_keys(const json& cfg, std::initializer_list<const char*> known,
                         const std::string& path) {
  for (const auto& [key, value] : cfg.items()) {
    (void)value;
    if (std::find_if(known.begin(), known.end(), [&](const char* k) {
          return key == k;
        }) == known.end())
      throw DataError("unknown key '" + key + "' in " + path);
  }
}

template <typename T>
void overlay(const CLI::App& cmd, const json& cfg, const std::string& flag,
             const char* key, T& target) {
  if (cfg.contains(key) && cmd.count(flag) == 0) cfg.at(key).get_to(target);
}

void write_run_manifest(const std::string& path, const std::string& command,
                        const json& resolved) {
  json j;
  j["command"] = command;
  j["resolved"] = resolved;
  write_text_file(path, j.dump(2) + "\n");
}

// done up front so a long run can't fail at the final save
void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

// --- shared option groups ------------------------------------------------------

struct SynthOpts {
  SyntheticFamilyConfig cfg;
  void attach(CLI::App* cmd) {
    cmd->add_option("--families", cfg.families, "synthetic family count")
        ->capture_default_str();
    cmd->add_option("--depth", cfg.depth, "rows per family")->capture_default_str();
    cmd->add_option("--length", cfg.length, "columns per family")->capture_default_str();
    cmd->add_option("--conserved-fraction", cfg.conserved_fraction,
                    "fraction of columns that keep the ancestor residue")
        ->capture_default_str();
    cmd->add_option("--mutation-rate", cfg.mutation_rate,
                    "per-cell substitution rate in free columns")
        ->capture_default_str();
    cmd->add_option("--gap-rate", cfg.gap_rate, "per-cell gap rate")
        ->capture_default_str();
  }
  json resolved() const {
    return {{"families", cfg.families},
            {"depth", cfg.depth},
            {"length", cfg.length},
            {"conserved_fraction", cfg.conserved_fraction},
            {"mutation_rate", cfg.mutation_rate},
            {"gap_rate", cfg.gap_rate}};
  }
};

std::vector<Msa> load_training_corpus(const std::string& data_dir,
                                      SyntheticFamilyConfig synth,
                                      std::uint64_t seed) {
  if (!data_dir.empty()) return load_corpus_dir(data_dir);
  synth.seed = seed;
  std::vector<Msa> out;
  for (SyntheticFamily& fam : synth_corpus(synth)) out.push_back(std::move(fam.msa));
  return out;
}

std::vector<Msa> rotate_batch(const std::vector<Msa>& corpus, int step, int batch) {
  std::vector<Msa> out;
  out.reserve(static_cast<std::size_t>(batch));
  const std::size_t n = corpus.size();
  for (int i = 0; i < batch; ++i)
    out.push_back(corpus[(static_cast<std::size_t>(step) * batch + i) % n]);
  return out;
}

std::vector<int> profile_tokens_from_string(const std::string& residues) {
  std::vector<int> out;
  out.reserve(residues.size());
  for (char c : residues) out.push_back(token_id(c));
  return out;
}

// --- protocol output writing ---------------------------------------------------

json record_json(const TrialRecord& r) {
  return {{"protocol", r.protocol}, {"r_ctx", r.r_ctx},   {"n_rows", r.n_rows},
          {"trial", r.trial},       {"seed", r.seed},     {"confidence", r.confidence},
          {"note", r.note}};
}

void write_protocol_outputs(const std::string& dir, const std::string& command,
                            std::span<const ProtocolOutput> outs, json resolved,
                            json extra = json::object()) {
  fs::create_directories(dir);
  json trials = json::array();
  for (std::size_t k = 0; k < outs.size(); ++k) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "out_%03zu", k);
    const std::string base = (fs::path(dir) / stem).string();
    write_a3m_file(outs[k].msa, base + ".a3m");
    export_features(outs[k].grid, base + ".feat");
    json rec = record_json(outs[k].meta);
    rec["a3m"] = std::string(stem) + ".a3m";
    rec["features"] = std::string(stem) + ".feat";
    trials.push_back(std::move(rec));
    std::printf("%s.a3m  protocol=%s r_ctx=%.3g rows=%d trial=%d\n", stem,
                outs[k].meta.protocol.c_str(), outs[k].meta.r_ctx,
                outs[k].meta.n_rows, outs[k].meta.trial);
  }
  json manifest;
  manifest["command"] = command;
  manifest["resolved"] = std::move(resolved);
  manifest["trials"] = std::move(trials);
  for (const auto& [key, value] : extra.items()) manifest[key] = value;
  write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

int print_checks(const std::vector<CheckResult>& results) {
  int failures = 0;
  for (const CheckResult& r : results) {
    std::printf("[%s] %s%s%s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                r.pass ? "" : ": ", r.pass ? "" : r.detail.c_str());
    if (!r.pass) ++failures;
  }
  return failures;
}

// --- subcommands ----------------------------------------------------------------

void add_trim_command(CLI::App& app) {
  struct Opts {
    std::string input, output, config;
    TrimConfig tc;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* cmd = app.add_subcommand(
      "trim", "Reduce an alignment to a diverse, query-covering subset of rows");
  cmd->add_option("-i,--input", o->input, "input .a3m")->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("-o,--output", o->output, "output .a3m")->required();
  cmd->add_option("--config", o->config, "JSON file with option defaults");
  cmd->add_option("--n-max", o->tc.n_max, "maximum rows kept")->capture_default_str();
  cmd->add_option("--cov-min", o->tc.cov_min, "minimum query coverage")
      ->capture_default_str();
  cmd->add_option("--ident-max", o->tc.ident_max, "redundancy identity ceiling")
      ->capture_default_str();
  cmd->add_option("--ident-min", o->tc.ident_min, "relatedness identity floor")
      ->capture_default_str();
  cmd->callback([o, cmd] {
    if (!o->config.empty()) {
      const json cfg = load_config_json(o->config);
      reject_unknown_keys(cfg, {"n_max", "cov_min", "ident_max", "ident_min"},
                          o->config);
      overlay(*cmd, cfg, "--n-max", "n_max", o->tc.n_max);
      overlay(*cmd, cfg, "--cov-min", "cov_min", o->tc.cov_min);
      overlay(*cmd, cfg, "--ident-max", "ident_max", o->tc.ident_max);
      overlay(*cmd, cfg, "--ident-min", "ident_min", o->tc.ident_min);
    }
    ensure_parent_dir(o->output);
    const Msa msa = parse_a3m_file(o->input);
    const Msa out = trim(msa, o->tc);
    write_a3m_file(out, o->output);
    write_run_manifest(o->output + ".run.json", "trim",
                       {{"input", o->input},
                        {"output", o->output},
                        {"n_max", o->tc.n_max},
                        {"cov_min", o->tc.cov_min},
                        {"ident_max", o->tc.ident_max},
                        {"ident_min", o->tc.ident_min}});
    std::printf("kept %d of %d rows -> %s\n", out.depth(), msa.depth(),
                o->output.c_str());
  });
}

void add_featurize_command(CLI::App& app) {
  struct Opts {
    std::string input, output;
  };
  auto o = std::make_shared<Opts>();
  CLI::App* cmd = app.add_subcommand(
      "featurize", "Export an alignment as a one-hot residue probability grid");
  cmd->add_option("-i,--input", o->input, "input .a3m")->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("-o,--output", o->output, "output feature file")->required();
  cmd->callback([o] {
    ensure_parent_dir(o->output);
    const Msa msa = parse_a3m_file(o->input);
    const FeatureGrid grid = features_from_grid(tokenize(msa), msa.query().symbols);
    export_features(grid, o->output);
    write_run_manifest(o->output + ".run.json", "featurize",
                       {{"input", o->input}, {"output", o->output}});
    std::printf("wrote %d x %d grid -> %s\n", grid.rows, grid.length,
                o->output.c_str());
  });
}

void add_synth_data_command(CLI::App& app, std::uint64_t default_seed) {
  struct Opts {
    std::string out_dir;
    SynthOpts synth;
    std::uint64_t seed;
  };
  auto o = std::make_shared<Opts>();
  o->seed = default_seed;
  CLI::App* cmd = app.add_subcommand(
      "synth-data", "Write a synthetic alignment corpus with known column statistics");
  cmd->add_option("--out-dir", o->out_dir, "output directory")->required();
  o->synth.attach(cmd);
  cmd->add_option("--seed", o->seed, "corpus seed")->capture_default_str();
  cmd->callback([o] {
    o->synth.cfg.seed = o->seed;
    const std::vector<SyntheticFamily> corpus = synth_corpus(o->synth.cfg);
    fs::create_directories(o->out_dir);
    json families = json::array();
    for (std::size_t k = 0; k < corpus.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "family_%03zu.a3m", k);
      write_a3m_file(corpus[k].msa, (fs::path(o->out_dir) / name).string());
      json fam;
      fam["file"] = name;
      fam["conserved"] = json::array();
      for (std::uint8_t c : corpus[k].conserved) fam["conserved"].push_back(c != 0);
      families.push_back(std::move(fam));
    }
    json resolved = o->synth.resolved();
    resolved["seed"] = o->seed;
    resolved["out_dir"] = o->out_dir;
    resolved["families_detail"] = std::move(families);
    write_run_manifest((fs::path(o->out_dir) / "corpus.json").string(), "synth-data",
                       resolved);
    std::printf("wrote %zu families -> %s\n", corpus.size(), o->out_dir.c_str());
  });
}

void add_pretrain_command(CLI::App& app, std::uint64_t default_seed) {
  struct Opts {
    std::string data_dir, model_config, resume, out, config;
    SynthOpts synth;
    TrainConfig tc;
    int steps = 200;
    int log_every = 10;
    int total_override = 0;
    int decay_override = 0;
    std::uint64_t seed;
  };
  auto o = std::make_shared<Opts>();
  o->seed = default_seed;
  o->tc.batch_size = 4;
  o->tc.warmup_steps = 10;
  CLI::App* cmd = app.add_subcommand(
      "pretrain", "Train the generator on alignment reconstruction");
  cmd->add_option("--data-dir", o->data_dir,
                  "directory of .a3m files (omit to train on a synthetic corpus)")
      ->check(CLI::ExistingDirectory);
  o->synth.attach(cmd);
  cmd->add_option("--model-config", o->model_config,
                  "JSON architecture description (omit for the small default)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--resume", o->resume, "checkpoint to continue from")
      ->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", o->out, "output checkpoint path")->required();
  cmd->add_option("--config", o->config, "JSON file with option defaults");
  cmd->add_option("--steps", o->steps, "optimizer steps")->capture_default_str();
  cmd->add_option("--batch", o->tc.batch_size, "alignments per step")
      ->capture_default_str();
  cmd->add_option("--lr-peak", o->tc.lr_peak, "peak learning rate")
      ->capture_default_str();
  cmd->add_option("--lr-final", o->tc.lr_final, "floor learning rate")
      ->capture_default_str();
  cmd->add_option("--warmup", o->tc.warmup_steps, "linear warmup steps")
      ->capture_default_str();
  cmd->add_option("--decay", o->decay_override,
                  "cosine decay steps (default: steps - warmup)");
  cmd->add_option("--total-steps", o->total_override,
                  "divergence-ramp horizon (default: steps)");
  cmd->add_option("--clip", o->tc.clip_norm, "global gradient norm bound")
      ->capture_default_str();
  cmd->add_option("--kl-warmup-fraction", o->tc.kl_warmup_fraction,
                  "fraction of the horizon spent ramping the divergence weight")
      ->capture_default_str();
  cmd->add_option("--crop-length", o->tc.crop_length, "column crop bound")
      ->capture_default_str();
  cmd->add_option("--crop-depth", o->tc.crop_depth, "row subsample bound")
      ->capture_default_str();
  cmd->add_option("--r-ctx-min", o->tc.r_ctx_min, "context fraction lower bound")
      ->capture_default_str();
  cmd->add_option("--r-ctx-max", o->tc.r_ctx_max, "context fraction upper bound")
      ->capture_default_str();
  cmd->add_option("--log-every", o->log_every, "steps between metric lines")
      ->capture_default_str();
  cmd->add_option("--seed", o->seed, "run seed")->capture_default_str();
  cmd->callback([o, cmd] {
    if (!o->config.empty()) {
      const json cfg = load_config_json(o->config);
      reject_unknown_keys(
          cfg,
          {"steps", "batch", "lr_peak", "lr_final", "warmup", "decay", "total_steps",
           "clip", "kl_warmup_fraction", "crop_length", "crop_depth", "r_ctx_min",
           "r_ctx_max", "log_every", "seed"},
          o->config);
      overlay(*cmd, cfg, "--steps", "steps", o->steps);
      overlay(*cmd, cfg, "--batch", "batch", o->tc.batch_size);
      overlay(*cmd, cfg, "--lr-peak", "lr_peak", o->tc.lr_peak);
      overlay(*cmd, cfg, "--lr-final", "lr_final", o->tc.lr_final);
      overlay(*cmd, cfg, "--warmup", "warmup", o->tc.warmup_steps);
      overlay(*cmd, cfg, "--decay", "decay", o->decay_override);
      overlay(*cmd, cfg, "--total-steps", "total_steps", o->total_override);
      overlay(*cmd, cfg, "--clip", "clip", o->tc.clip_norm);
      overlay(*cmd, cfg, "--kl-warmup-fraction", "kl_warmup_fraction",
              o->tc.kl_warmup_fraction);
      overlay(*cmd, cfg, "--crop-length", "crop_length", o->tc.crop_length);
      overlay(*cmd, cfg, "--crop-depth", "crop_depth", o->tc.crop_depth);
      overlay(*cmd, cfg, "--r-ctx-min", "r_ctx_min", o->tc.r_ctx_min);
      overlay(*cmd, cfg, "--r-ctx-max", "r_ctx_max", o->tc.r_ctx_max);
      overlay(*cmd, cfg, "--log-every", "log_every", o->log_every);
      overlay(*cmd, cfg, "--seed", "seed", o->seed);
    }
    if (o->steps < 1) throw DataError("--steps must be positive");
    ensure_parent_dir(o->out);
    o->tc.total_steps = o->total_override > 0 ? o->total_override : o->steps;
    o->tc.decay_steps = o->decay_override > 0
                            ? o->decay_override
                            : std::max(1, o->steps - o->tc.warmup_steps);

    const std::vector<Msa> corpus =
        load_training_corpus(o->data_dir, o->synth.cfg, o->seed);
    Model model = [&] {
      if (!o->resume.empty()) return load_model(o->resume);
      ModelConfig mc;
      if (!o->model_config.empty())
        mc = config_from_json(read_text_file(o->model_config));
      return Model(mc, o->seed);
    }();

    AdamState opt;
    const SeedStream run("pretrain", o->seed);
    for (int step = 0; step < o->steps; ++step) {
      const std::vector<Msa> batch = rotate_batch(corpus, step, o->tc.batch_size);
      const StepMetrics m = pretrain_step(model, batch, opt, step, o->tc, run);
      if (step % o->log_every == 0 || step + 1 == o->steps)
        std::puts(metrics_line(m).c_str());
    }
    save_model(model, o->out);
    json resolved = {{"data_dir", o->data_dir},
                     {"steps", o->steps},
                     {"batch", o->tc.batch_size},
                     {"lr_peak", o->tc.lr_peak},
                     {"lr_final", o->tc.lr_final},
                     {"warmup", o->tc.warmup_steps},
                     {"decay", o->tc.decay_steps},
                     {"total_steps", o->tc.total_steps},
                     {"clip", o->tc.clip_norm},
                     {"kl_warmup_fraction", o->tc.kl_warmup_fraction},
                     {"crop_length", o->tc.crop_length},
                     {"crop_depth", o->tc.crop_depth},
                     {"r_ctx_min", o->tc.r_ctx_min},
                     {"r_ctx_max", o->tc.r_ctx_max},
                     {"seed", o->seed},
                     {"model", json::parse(config_to_json(model.config()))}};
    if (o->data_dir.empty()) resolved["synth"] = o->synth.resolved();
    write_run_manifest(o->out + ".run.json", "pretrain", resolved);
    std::printf("saved %s\n", o->out.c_str());
  });
}

void add_finetune_command(CLI::App& app, std::uint64_t default_seed) {
  struct Opts {
    std::string ckpt, out, data_dir, profile, config;
    SynthOpts synth;
    TrainConfig tc;
    int steps = 20;
    int log_every = 5;
    std::uint64_t seed;
  };
  auto o = std::make_shared<Opts>();
  o->seed = default_seed;
  o->tc.batch_size = 2;
  o->tc.lr_peak = 1e-4;
  o->tc.warmup_steps = 0;
  CLI::App* cmd = app.add_subcommand(
      "finetune", "Refine a trained generator against an external scorer");
  cmd->add_option("--ckpt", o->ckpt, "input checkpoint")->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", o->out, "output checkpoint path")->required();
  cmd->add_option("--data-dir", o->data_dir,
                  "directory of .a3m files (omit for a synthetic corpus)")
      ->check(CLI::ExistingDirectory);
  o->synth.attach(cmd);
  cmd->add_option("--profile", o->profile,
                  "residue string scored by the stand-in critic "
                  "(default: each alignment's query)");
  cmd->add_option("--config", o->config, "JSON file with option defaults");
  cmd->add_option("--steps", o->steps, "optimizer steps")->capture_default_str();
  cmd->add_option("--batch", o->tc.batch_size, "alignments per step")
      ->capture_default_str();
  cmd->add_option("--lr-peak", o->tc.lr_peak, "peak learning rate")
      ->capture_default_str();
  cmd->add_option("--lr-final", o->tc.lr_final, "floor learning rate")
      ->capture_default_str();
  cmd->add_option("--elbo-weight", o->tc.elbo_weight,
                  "auxiliary reconstruction weight")
      ->capture_default_str();
  cmd->add_flag("--hard-tokens", o->tc.hard_tokens,
                "score sampled one-hot rows instead of soft rows");
  cmd->add_option("--temperature", o->tc.gumbel_temperature,
                  "relaxation temperature for sampled rows")
      ->capture_default_str();
  cmd->add_option("--gen-rows", o->tc.finetune_gen_rows,
                  "rows generated per alignment")
      ->capture_default_str();
  cmd->add_option("--fape-weight", o->tc.critic_weights.fape, "critic channel weight")
      ->capture_default_str();
  cmd->add_option("--torsion-weight", o->tc.critic_weights.torsion,
                  "critic channel weight")
      ->capture_default_str();
  cmd->add_option("--violation-weight", o->tc.critic_weights.violation,
                  "critic channel weight")
      ->capture_default_str();
  cmd->add_option("--confidence-weight", o->tc.critic_weights.confidence,
                  "critic channel weight")
      ->capture_default_str();
  cmd->add_option("--log-every", o->log_every, "steps between metric lines")
      ->capture_default_str();
  cmd->add_option("--seed", o->seed, "run seed")->capture_default_str();
  cmd->callback([o, cmd] {
    if (!o->config.empty()) {
      const json cfg = load_config_json(o->config);
      reject_unknown_keys(cfg,
                          {"steps", "batch", "lr_peak", "lr_final", "elbo_weight",
                           "hard_tokens", "temperature", "gen_rows", "fape_weight",
                           "torsion_weight", "violation_weight", "confidence_weight",
                           "log_every", "seed"},
                          o->config);
      overlay(*cmd, cfg, "--steps", "steps", o->steps);
      overlay(*cmd, cfg, "--batch", "batch", o->tc.batch_size);
      overlay(*cmd, cfg, "--lr-peak", "lr_peak", o->tc.lr_peak);
      overlay(*cmd, cfg, "--lr-final", "lr_final", o->tc.lr_final);
      overlay(*cmd, cfg, "--elbo-weight", "elbo_weight", o->tc.elbo_weight);
      overlay(*cmd, cfg, "--hard-tokens", "hard_tokens", o->tc.hard_tokens);
      overlay(*cmd, cfg, "--temperature", "temperature", o->tc.gumbel_temperature);
      overlay(*cmd, cfg, "--gen-rows", "gen_rows", o->tc.finetune_gen_rows);
      overlay(*cmd, cfg, "--fape-weight", "fape_weight", o->tc.critic_weights.fape);
      overlay(*cmd, cfg, "--torsion-weight", "torsion_weight",
              o->tc.critic_weights.torsion);
      overlay(*cmd, cfg, "--violation-weight", "violation_weight",
              o->tc.critic_weights.violation);
      overlay(*cmd, cfg, "--confidence-weight", "confidence_weight",
              o->tc.critic_weights.confidence);
      overlay(*cmd, cfg, "--log-every", "log_every", o->log_every);
      overlay(*cmd, cfg, "--seed", "seed", o->seed);
    }
    if (o->steps < 1) throw DataError("--steps must be positive");
    ensure_parent_dir(o->out);
    o->tc.total_steps = o->steps;
    o->tc.decay_steps = std::max(1, o->steps - o->tc.warmup_steps);

    const std::vector<Msa> corpus =
        load_training_corpus(o->data_dir, o->synth.cfg, o->seed);
    Model model = load_model(o->ckpt);

    std::vector<std::unique_ptr<Critic>> critics;
    if (!o->profile.empty()) {
      critics.push_back(synthetic_critic(profile_tokens_from_string(o->profile),
                                         o->tc.critic_weights));
    } else {
      for (const Msa& msa : corpus)
        critics.push_back(synthetic_critic(
            profile_tokens_from_string(msa.query().symbols), o->tc.critic_weights));
    }

    AdamState opt;
    const SeedStream run("finetune", o->seed);
    for (int step = 0; step < o->steps; ++step) {
      std::vector<FinetuneExample> batch(static_cast<std::size_t>(o->tc.batch_size));
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const std::size_t at =
            (static_cast<std::size_t>(step) * batch.size() + i) % corpus.size();
        batch[i].msa = &corpus[at];
        batch[i].critic = critics[o->profile.empty() ? at : 0].get();
      }
      const FinetuneMetrics m = finetune_step(model, batch, opt, step, o->tc, run);
      if (step % o->log_every == 0 || step + 1 == o->steps)
        std::puts(metrics_line(m).c_str());
    }
    save_model(model, o->out);
    json resolved = {{"ckpt", o->ckpt},
                     {"data_dir", o->data_dir},
                     {"steps", o->steps},
                     {"batch", o->tc.batch_size},
                     {"lr_peak", o->tc.lr_peak},
                     {"lr_final", o->tc.lr_final},
                     {"elbo_weight", o->tc.elbo_weight},
                     {"hard_tokens", o->tc.hard_tokens},
                     {"temperature", o->tc.gumbel_temperature},
                     {"gen_rows", o->tc.finetune_gen_rows},
                     {"profile", o->profile},
                     {"seed", o->seed}};
    if (o->data_dir.empty()) resolved["synth"] = o->synth.resolved();
    write_run_manifest(o->out + ".run.json", "finetune", resolved);
    std::printf("saved %s\n", o->out.c_str());
  });
}

void add_calibrate_command(CLI::App& app, std::uint64_t default_seed) {
  struct Opts {
    std::string ckpt, input, out_dir, config;
    CalibrationConfig pc;
  };
  auto o = std::make_shared<Opts>();
  o->pc.seed = default_seed;
  CLI::App* cmd = app.add_subcommand(
      "calibrate",
      "Rewrite held-out rows of an alignment from the rest, at several context sizes");
  cmd->add_option("--ckpt", o->ckpt, "model checkpoint")->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("-i,--input", o->input, "input .a3m")->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", o->out_dir, "output directory")->required();
  cmd->add_option("--config", o->config, "JSON file with option defaults");
  cmd->add_option("--r-ctx", o->pc.r_ctx, "context fractions")->capture_default_str();
  cmd->add_option("--trials", o->pc.trials, "trials per fraction")
      ->capture_default_str();
  cmd->add_flag("--hard", o->pc.hard_tokens, "emit sampled one-hot rows");
  cmd->add_option("--seed", o->pc.seed, "run seed")->capture_default_str();
  cmd->callback([o, cmd] {
    if (!o->config.empty()) {
      const json cfg = load_config_json(o->config);
      reject_unknown_keys(cfg, {"r_ctx", "trials", "hard", "seed"}, o->config);
      overlay(*cmd, cfg, "--r-ctx", "r_ctx", o->pc.r_ctx);
      overlay(*cmd, cfg, "--trials", "trials", o->pc.trials);
      overlay(*cmd, cfg, "--hard", "hard", o->pc.hard_tokens);
      overlay(*cmd, cfg, "--seed", "seed", o->pc.seed);
    }
    const Msa msa = parse_a3m_file(o->input);
    const Model model = load_model(o->ckpt);
    const CalibrationResult res = calibrate(msa, model, o->pc);
    json resolved = {{"ckpt", o->ckpt},       {"input", o->input},
                     {"r_ctx", o->pc.r_ctx},  {"trials", o->pc.trials},
                     {"hard", o->pc.hard_tokens}, {"seed", o->pc.seed}};
    write_protocol_outputs(o->out_dir, "calibrate", res.outputs, std::move(resolved),
                           {{"depth_too_small", res.depth_too_small}});
  });
}

void add_augment_command(CLI::App& app, std::uint64_t default_seed) {
  struct Opts {
    std::string ckpt, input, out_dir, config;
    AugmentationConfig pc;
  };
  auto o = std::make_shared<Opts>();
  o->pc.seed = default_seed;
  o->pc.n_aug = 16;
  CLI::App* cmd = app.add_subcommand(
      "augment", "Deepen an alignment with generated rows conditioned on real ones");
  cmd->add_option("--ckpt", o->ckpt, "model checkpoint")->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("-i,--input", o->input, "input .a3m")->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", o->out_dir, "output directory")->required();
  cmd->add_option("--config", o->config, "JSON file with option defaults");
  cmd->add_option("--n-aug", o->pc.n_aug, "rows per emitted alignment")
      ->capture_default_str();
  cmd->add_option("--r-ctx", o->pc.r_ctx, "context fractions")->capture_default_str();
  cmd->add_option("--trials", o->pc.trials, "trials per fraction")
      ->capture_default_str();
  cmd->add_flag("--hard", o->pc.hard_tokens, "emit sampled one-hot rows");
  cmd->add_option("--seed", o->pc.seed, "run seed")->capture_default_str();
  cmd->callback([o, cmd] {
    if (!o->config.empty()) {
      const json cfg = load_config_json(o->config);
      reject_unknown_keys(cfg, {"n_aug", "r_ctx", "trials", "hard", "seed"},
                          o->config);
      overlay(*cmd, cfg, "--n-aug", "n_aug", o->pc.n_aug);
      overlay(*cmd, cfg, "--r-ctx", "r_ctx", o->pc.r_ctx);
      overlay(*cmd, cfg, "--trials", "trials", o->pc.trials);
      overlay(*cmd, cfg, "--hard", "hard", o->pc.hard_tokens);
      overlay(*cmd, cfg, "--seed", "seed", o->pc.seed);
    }
    const Msa msa = parse_a3m_file(o->input);
    const Model model = load_model(o->ckpt);
    const std::vector<ProtocolOutput> outs = augment(msa, model, o->pc);
    json resolved = {{"ckpt", o->ckpt},      {"input", o->input},
                     {"n_aug", o->pc.n_aug}, {"r_ctx", o->pc.r_ctx},
                     {"trials", o->pc.trials}, {"hard", o->pc.hard_tokens},
                     {"seed", o->pc.seed}};
    write_protocol_outputs(o->out_dir, "augment", outs, std::move(resolved));
  });
}

void add_zeroshot_command(CLI::App& app, std::uint64_t default_seed) {
  struct Opts {
    std::string ckpt, query, query_file, out_dir, config;
    ZeroShotConfig pc;
  };
  auto o = std::make_shared<Opts>();
  o->pc.seed = default_seed;
  CLI::App* cmd = app.add_subcommand(
      "zeroshot", "Build alignments for a lone query sequence with no homologs");
  cmd->add_option("--ckpt", o->ckpt, "model checkpoint")->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--query", o->query, "query residue string");
  cmd->add_option("--query-file", o->query_file,
                  "file holding the query (FASTA or bare sequence)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", o->out_dir, "output directory")->required();
  cmd->add_option("--config", o->config, "JSON file with option defaults");
  cmd->add_option("--n-aug", o->pc.n_aug, "alignment sizes to emit")
      ->capture_default_str();
  cmd->add_option("--trials", o->pc.trials, "trials per size")->capture_default_str();
  cmd->add_flag("--hard", o->pc.hard_tokens, "emit sampled one-hot rows");
  cmd->add_option("--seed", o->pc.seed, "run seed")->capture_default_str();
  cmd->callback([o, cmd] {
    if (!o->config.empty()) {
      const json cfg = load_config_json(o->config);
      reject_unknown_keys(cfg, {"n_aug", "trials", "hard", "seed"}, o->config);
      overlay(*cmd, cfg, "--n-aug", "n_aug", o->pc.n_aug);
      overlay(*cmd, cfg, "--trials", "trials", o->pc.trials);
      overlay(*cmd, cfg, "--hard", "hard", o->pc.hard_tokens);
      overlay(*cmd, cfg, "--seed", "seed", o->pc.seed);
    }
    std::string query = o->query;
    if (query.empty() && !o->query_file.empty()) {
      std::istringstream in(read_text_file(o->query_file));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '>') continue;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
          line.pop_back();
        query += line;
      }
    }
    if (query.empty()) throw DataError("no query given (--query or --query-file)");
    const Model model = load_model(o->ckpt);
    const std::vector<ProtocolOutput> outs = zero_shot(query, model, o->pc);
    json resolved = {{"ckpt", o->ckpt},      {"query", query},
                     {"n_aug", o->pc.n_aug}, {"trials", o->pc.trials},
                     {"hard", o->pc.hard_tokens}, {"seed", o->pc.seed}};
    write_protocol_outputs(o->out_dir, "zeroshot", outs, std::move(resolved));
  });
}

void add_probe_command(CLI::App& app, std::uint64_t default_seed) {
  struct Opts {
    std::string ckpt, input, out_dir, profile, config;
    ProbeConfig pc;
  };
  auto o = std::make_shared<Opts>();
  o->pc.seed = default_seed;
  CLI::App* cmd = app.add_subcommand(
      "probe",
      "Rewrite many small row subsets and group the confident results by similarity");
  cmd->add_option("--ckpt", o->ckpt, "model checkpoint")->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("-i,--input", o->input, "input .a3m")->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", o->out_dir, "output directory")->required();
  cmd->add_option("--profile", o->profile,
                  "residue string scored by the stand-in critic "
                  "(default: the alignment's query)");
  cmd->add_option("--config", o->config, "JSON file with option defaults");
  cmd->add_option("--n-max", o->pc.n_max, "depth caps before probing")
      ->capture_default_str();
  cmd->add_option("--n-sub", o->pc.n_sub, "subset sizes")->capture_default_str();
  cmd->add_option("--r-ctx", o->pc.r_ctx, "context fractions within a subset")
      ->capture_default_str();
  cmd->add_option("--trials", o->pc.trials, "trials per size and fraction")
      ->capture_default_str();
  cmd->add_option("--similarity-threshold", o->pc.similarity_threshold,
                  "grouping threshold")
      ->capture_default_str();
  cmd->add_option("--confidence-min", o->pc.confidence_min,
                  "minimum critic confidence to keep an item")
      ->capture_default_str();
  cmd->add_option("--seed", o->pc.seed, "run seed")->capture_default_str();
  cmd->callback([o, cmd] {
    if (!o->config.empty()) {
      const json cfg = load_config_json(o->config);
      reject_unknown_keys(cfg,
                          {"n_max", "n_sub", "r_ctx", "trials",
                           "similarity_threshold", "confidence_min", "seed"},
                          o->config);
      overlay(*cmd, cfg, "--n-max", "n_max", o->pc.n_max);
      overlay(*cmd, cfg, "--n-sub", "n_sub", o->pc.n_sub);
      overlay(*cmd, cfg, "--r-ctx", "r_ctx", o->pc.r_ctx);
      overlay(*cmd, cfg, "--trials", "trials", o->pc.trials);
      overlay(*cmd, cfg, "--similarity-threshold", "similarity_threshold",
              o->pc.similarity_threshold);
      overlay(*cmd, cfg, "--confidence-min", "confidence_min", o->pc.confidence_min);
      overlay(*cmd, cfg, "--seed", "seed", o->pc.seed);
    }
    const Msa msa = parse_a3m_file(o->input);
    const Model model = load_model(o->ckpt);
    const std::string profile =
        o->profile.empty() ? msa.query().symbols : o->profile;
    const auto critic =
        synthetic_critic(profile_tokens_from_string(profile));
    const ProbeResult res = probe(msa, model, *critic, o->pc);

    fs::create_directories(o->out_dir);
    json items = json::array();
    for (std::size_t k = 0; k < res.items.size(); ++k) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "item_%03zu", k);
      export_features(res.items[k].grid,
                      (fs::path(o->out_dir) / (std::string(stem) + ".feat")).string());
      json rec = record_json(res.items[k].meta);
      rec["features"] = std::string(stem) + ".feat";
      rec["channels"] = res.items[k].report.channels;
      rec["weighted_total"] = res.items[k].report.weighted_total;
      items.push_back(std::move(rec));
    }
    json manifest;
    manifest["command"] = "probe";
    manifest["resolved"] = {{"ckpt", o->ckpt},
                            {"input", o->input},
                            {"profile", profile},
                            {"n_max", o->pc.n_max},
                            {"n_sub", o->pc.n_sub},
                            {"r_ctx", o->pc.r_ctx},
                            {"trials", o->pc.trials},
                            {"similarity_threshold", o->pc.similarity_threshold},
                            {"confidence_min", o->pc.confidence_min},
                            {"seed", o->pc.seed}};
    manifest["items"] = std::move(items);
    manifest["ensembles"] = res.ensembles;
    write_text_file((fs::path(o->out_dir) / "manifest.json").string(),
                    manifest.dump(2) + "\n");
    std::printf("probed %zu subsets, %zu confident group(s)\n", res.items.size(),
                res.ensembles.size());
  });
}

void add_check_commands(CLI::App& app, int* exit_code) {
  CLI::App* gc = app.add_subcommand(
      "gradcheck", "Compare every analytic gradient against finite differences");
  gc->callback([exit_code] {
    const int failures = print_checks(gradient_checks());
    std::printf("%s\n", failures ? "FAILED" : "OK");
    if (failures) *exit_code = 1;
  });
  CLI::App* vf = app.add_subcommand(
      "verify", "Run the gradient checks plus every behavioral invariant");
  vf->callback([exit_code] {
    int failures = print_checks(gradient_checks());
    failures += print_checks(property_checks());
    std::printf("%s\n", failures ? "FAILED" : "OK");
    if (failures) *exit_code = 1;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative alignment modeling toolkit"};
  app.require_subcommand(1);
  int exit_code = 0;
  try {
    const std::uint64_t seed = env_seed();
    add_trim_command(app);
    add_featurize_command(app);
    add_synth_data_command(app, seed);
    add_pretrain_command(app, seed);
    add_finetune_command(app, seed);
    add_calibrate_command(app, seed);
    add_augment_command(app, seed);
    add_zeroshot_command(app, seed);
    add_probe_command(app, seed);
    add_check_commands(app, &exit_code);
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return exit_code;
}
