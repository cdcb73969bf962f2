// Command-line front end: data generation, two-stage training, attack-time
// evaluation, the alpha sweep, and the representation analysis. One
// subcommand per process; every run writes a manifest with hashes of its
// outputs. Exit codes: 0 success, 2 input/parse error, 3 pipeline
// precondition error, 4 analysis error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "adpo/adpo.hpp"
#include "adpo/config.hpp"

namespace fs = std::filesystem;
using namespace adpo;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitParse = 2;
constexpr int kExitPrecondition = 3;
constexpr int kExitAnalysis = 4;

int report_error(const std::exception& e, int code) {
  std::cerr << "error: " << e.what() << "\n";
  return code;
}

template <class F>
int run_mapped(F&& f) {
  try {
    f();
    return kExitOk;
  } catch (const PreconditionError& e) {
    return report_error(e, kExitPrecondition);
  } catch (const AnalysisError& e) {
    return report_error(e, kExitAnalysis);
  } catch (const ParseError& e) {
    return report_error(e, kExitParse);
  } catch (const std::invalid_argument& e) {
    return report_error(e, kExitParse);
  } catch (const nlohmann::json::exception& e) {
    return report_error(e, kExitParse);
  } catch (const std::exception& e) {
    return report_error(e, kExitPrecondition);
  }
}

std::vector<PreferenceExample> load_split(const fs::path& dir, const std::string& name) {
  return read_jsonl((dir / (name + ".jsonl")).string());
}

SyntheticSpec data_dir_spec(const fs::path& dir) {
  fs::path spec_path = dir / "spec.json";
  if (fs::exists(spec_path)) return synthetic_spec_from_json(load_json_file(spec_path.string()));
  return SyntheticSpec{};
}

std::string provenance_string(const std::string& stage, const std::string& variant,
                              std::uint64_t seed) {
  return "stage=" + stage + " variant=" + variant + " seed=" + std::to_string(seed);
}

struct GenDataArgs {
  std::string spec_path, out_dir;
  std::optional<std::uint64_t> seed;
};

void cmd_gen_data(const GenDataArgs& args) {
  SyntheticSpec spec;
  if (!args.spec_path.empty())
    spec = synthetic_spec_from_json(load_json_file(args.spec_path));
  else {
    PipelinePresets presets;
    spec = presets.data_spec(0);
    spec.seed = 0;
  }
  if (args.seed) spec.seed = *args.seed;

  RunManifest manifest;
  manifest.subcommand = "gen-data";
  manifest.seed = spec.seed;
  manifest.resolved_config = synthetic_spec_to_json(spec);
  if (!args.spec_path.empty()) manifest.inputs.push_back(args.spec_path);
  manifest.start();

  fs::create_directories(args.out_dir);
  SyntheticData data = make_synthetic(spec);
  fs::path out(args.out_dir);
  const std::pair<std::string, const std::vector<PreferenceExample>*> splits[] = {
      {"harmful_train", &data.harmful_train},
      {"harmful_eval", &data.harmful_eval},
      {"benign_train", &data.benign_train},
      {"benign_eval", &data.benign_eval},
  };
  for (const auto& [name, split] : splits) {
    std::string path = (out / (name + ".jsonl")).string();
    write_jsonl(*split, path);
    manifest.outputs.push_back(path);
  }
  {
    std::string spec_out = (out / "spec.json").string();
    std::ofstream f(spec_out);
    f << synthetic_spec_to_json(spec).dump(2) << "\n";
    manifest.outputs.push_back(spec_out);
  }
  manifest.finish_and_write((out / "manifest.json").string());
}

struct TrainArgs {
  std::string config_path, stage, data_dir, out_ckpt, init_ckpt, ref_ckpt;
  std::string variant = "dpo", space = "image", sft_on = "both";
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> alpha;
};

void cmd_train(const TrainArgs& args) {
  if (args.stage != "reference" && args.stage != "dpo")
    throw ParseError("train: --stage must be reference or dpo, got '" + args.stage + "'");
  Variant variant = variant_from_string(args.variant);
  Space space = space_from_string(args.space);

  fs::path data_dir(args.data_dir);
  SyntheticSpec spec = data_dir_spec(data_dir);
  PipelinePresets presets;
  presets.dims = spec.dims;

  // Per-stage seed streams match the in-process pipeline, so CLI stages
  // reproduce it bit-for-bit given the same master seed.
  const char* stream = "train-sft";
  if (args.stage == "reference")
    stream = "train-reference";
  else if (variant != Variant::sft)
    stream = "train-dpo";
  else if (args.sft_on == "benign")
    stream = "train-echo";
  else if (args.sft_on == "compliance")
    stream = "train-comply";

  std::uint64_t master = args.seed.value_or(0);
  TrainCfg cfg;
  if (args.stage == "reference") {
    cfg = presets.reference_cfg(master, args.alpha.value_or(presets.alpha), space);
  } else if (variant == Variant::sft) {
    int epochs = presets.sft_epochs;
    if (args.sft_on == "benign") epochs = presets.base_echo_epochs;
    if (args.sft_on == "compliance") epochs = presets.base_comply_epochs;
    cfg = presets.sft_stage_cfg(derive_seed(master, stream), epochs);
  } else {
    cfg = presets.variant_cfg(master, variant, space);
  }
  if (!args.config_path.empty())
    cfg = train_cfg_from_json(load_json_file(args.config_path), cfg);
  if (args.seed) cfg.seed = derive_seed(*args.seed, stream);
  if (args.epochs) cfg.epochs = *args.epochs;
  if (args.alpha) cfg.loss.alpha = *args.alpha;

  RunManifest manifest;
  manifest.subcommand = "train";
  manifest.seed = master;
  manifest.start();
  manifest.inputs.push_back(args.data_dir);
  if (!args.config_path.empty()) manifest.inputs.push_back(args.config_path);
  if (!args.init_ckpt.empty()) manifest.inputs.push_back(args.init_ckpt);
  if (!args.ref_ckpt.empty()) manifest.inputs.push_back(args.ref_ckpt);

  auto initial_params = [&]() {
    if (!args.init_ckpt.empty()) return load_checkpoint(args.init_ckpt).params;
    return init_params(derive_seed(manifest.seed, "init"), spec.dims);
  };

  TrainRun run;
  if (args.stage == "reference") {
    auto harmful = load_split(data_dir, "harmful_train");
    auto benign = load_split(data_dir, "benign_train");
    run = train_reference(initial_params(), harmful, benign, cfg);
  } else if (variant == Variant::sft) {
    std::vector<PreferenceExample> corpus;
    auto harmful = load_split(data_dir, "harmful_train");
    auto benign = load_split(data_dir, "benign_train");
    if (args.sft_on == "benign") {
      corpus = benign;
    } else if (args.sft_on == "harmful") {
      corpus = harmful;
    } else if (args.sft_on == "both") {
      corpus = harmful;
      corpus.insert(corpus.end(), benign.begin(), benign.end());
    } else if (args.sft_on == "compliance") {
      corpus = compliance_corpus(benign, harmful);
    } else {
      throw ParseError("train: --sft-on must be benign|harmful|both|compliance, got '" +
                       args.sft_on + "'");
    }
    run = train_sft(initial_params(), corpus, cfg);
  } else {
    if (args.ref_ckpt.empty())
      throw PreconditionError("train: variant " + to_string(variant) +
                              ": reference checkpoint required (--ref-ckpt)");
    ToyVlmParams ref = load_checkpoint(args.ref_ckpt).params;
    ToyVlmParams init = args.init_ckpt.empty() ? ref : load_checkpoint(args.init_ckpt).params;
    run = train_dpo(init, ref, load_split(data_dir, "harmful_train"), cfg);
  }

  manifest.resolved_config = train_cfg_to_json(cfg);
  manifest.resolved_config["stage"] = args.stage;
  manifest.resolved_config["sft_on"] = args.sft_on;

  Checkpoint ckpt{std::move(run.params), manifest.seed,
                  provenance_string(args.stage,
                                    args.stage == "reference" ? "-" : to_string(variant),
                                    manifest.seed)};
  if (fs::path(args.out_ckpt).has_parent_path())
    fs::create_directories(fs::path(args.out_ckpt).parent_path());
  save_checkpoint(ckpt, args.out_ckpt);
  manifest.outputs.push_back(args.out_ckpt);
  std::string trace_path = args.out_ckpt + ".trace.csv";
  run.checkpoint_path = args.out_ckpt;
  write_trace_csv(run, trace_path);
  manifest.outputs.push_back(trace_path);
  manifest.finish_and_write(args.out_ckpt + ".manifest.json");
}

struct EvalArgs {
  std::string ckpt, data_dir, out_dir, attacks = "none,whitebox,universal,blackbox-pattern";
  std::string space = "image", label;
  std::string save_attacks, load_attacks;  // white-box perturbation reuse (JSONL)
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon;
  std::optional<int> iters;
};

void cmd_eval(const EvalArgs& args) {
  Checkpoint ckpt = load_checkpoint(args.ckpt);
  fs::path data_dir(args.data_dir);
  SyntheticSpec spec = data_dir_spec(data_dir);
  auto harmful_eval = load_split(data_dir, "harmful_eval");
  auto benign_eval = load_split(data_dir, "benign_eval");

  PipelinePresets presets;
  presets.dims = ckpt.params.dims;
  PerturbCfg attack = presets.eval_attack;
  attack.space = space_from_string(args.space);
  if (attack.space == Space::latent) attack.norm = Norm::l2;
  if (args.epsilon) attack.epsilon = *args.epsilon;
  if (args.iters) attack.iters = *args.iters;
  if (args.seed) attack.seed = *args.seed;

  std::vector<AttackKind> kinds;
  std::string token;
  std::istringstream list(args.attacks);
  while (std::getline(list, token, ',')) {
    if (!token.empty()) kinds.push_back(attack_kind_from_string(token));
  }
  if (kinds.empty()) throw ParseError("eval: --attacks selected nothing");

  RunManifest manifest;
  manifest.subcommand = "eval";
  manifest.seed = args.seed.value_or(ckpt.seed);
  manifest.inputs = {args.ckpt, args.data_dir};
  manifest.start();

  std::vector<Perturbation> whitebox_deltas;
  if (!args.load_attacks.empty()) {
    std::ifstream in(args.load_attacks);
    if (!in) throw ParseError("eval: cannot open '" + args.load_attacks + "'");
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) whitebox_deltas.push_back(perturbation_from_json(nlohmann::json::parse(line)));
    manifest.inputs.push_back(args.load_attacks);
  }

  EvalReport report;
  report.method = args.label.empty() ? ckpt.provenance : args.label;
  for (AttackKind kind : kinds) {
    bool track = kind == AttackKind::whitebox &&
                 (!args.save_attacks.empty() || !args.load_attacks.empty());
    report.attacks[to_string(kind)] =
        eval_asr(ckpt.params, harmful_eval, kind, attack, spec.pattern,
                 track ? &whitebox_deltas : nullptr);
  }
  report.utility = eval_utility(ckpt.params, benign_eval);
  report.config_echo = nlohmann::json{{"attack", perturb_cfg_to_json(attack)},
                                      {"attacks", args.attacks},
                                      {"ckpt", args.ckpt},
                                      {"data", args.data_dir}};
  report.timestamp = iso8601_utc(manifest_now());
  manifest.resolved_config = report.config_echo;

  fs::create_directories(args.out_dir);
  fs::path out(args.out_dir);
  write_eval_report_json(report, (out / "report.json").string());
  write_eval_report_csv(report, (out / "report.csv").string());
  manifest.outputs = {(out / "report.json").string(), (out / "report.csv").string()};
  if (!args.save_attacks.empty()) {
    std::ofstream f(args.save_attacks);
    if (!f) throw ParseError("eval: cannot open '" + args.save_attacks + "' for writing");
    for (const Perturbation& p : whitebox_deltas) f << perturbation_to_json(p).dump() << "\n";
    manifest.outputs.push_back(args.save_attacks);
  }
  manifest.finish_and_write((out / "manifest.json").string());
}

struct SweepArgs {
  std::string config_path, out_csv;
  std::optional<std::uint64_t> seed;
};

void cmd_sweep(const SweepArgs& args) {
  nlohmann::json cfg = load_json_file(args.config_path);
  std::vector<double> alphas = cfg.at("alphas").get<std::vector<double>>();
  std::vector<std::uint64_t> seeds = cfg.value("seeds", std::vector<std::uint64_t>{1});
  if (args.seed) {
    seeds.clear();
    seeds.push_back(*args.seed);
  }
  PipelinePresets presets;
  if (cfg.contains("n_harmful")) presets.n_harmful = cfg.at("n_harmful").get<int>();
  if (cfg.contains("n_benign")) presets.n_benign = cfg.at("n_benign").get<int>();

  RunManifest manifest;
  manifest.subcommand = "sweep";
  manifest.seed = args.seed.value_or(seeds.front());
  manifest.inputs = {args.config_path};
  manifest.resolved_config = cfg;
  manifest.start();

  std::vector<SweepRow> rows = alpha_sweep(presets, alphas, seeds);
  if (fs::path(args.out_csv).has_parent_path())
    fs::create_directories(fs::path(args.out_csv).parent_path());
  write_sweep_csv(rows, args.out_csv);
  manifest.outputs = {args.out_csv};
  manifest.finish_and_write(args.out_csv + ".manifest.json");
}

struct PcaArgs {
  std::string ckpt, data_dir, out_dir;
  std::optional<std::uint64_t> seed;
};

void cmd_pca(const PcaArgs& args) {
  Checkpoint ckpt = load_checkpoint(args.ckpt);
  auto harmful_eval = load_split(fs::path(args.data_dir), "harmful_eval");

  PipelinePresets presets;
  presets.dims = ckpt.params.dims;
  std::uint64_t seed = args.seed.value_or(ckpt.seed);

  RunManifest manifest;
  manifest.subcommand = "pca";
  manifest.seed = seed;
  manifest.inputs = {args.ckpt, args.data_dir};
  manifest.resolved_config = nlohmann::json{{"ckpt", args.ckpt}, {"data", args.data_dir}};
  manifest.start();

  RepresentationAnalysis analysis;
  try {
    analysis = analyze_representations(presets, ckpt.params, harmful_eval, seed);
  } catch (const AnalysisError&) {
    throw;
  } catch (const std::exception& e) {
    throw AnalysisError(std::string("pca: ") + e.what());
  }

  fs::create_directories(args.out_dir);
  fs::path out(args.out_dir);
  write_pca_csv(analysis.projections, analysis.labels, (out / "points.csv").string());
  {
    nlohmann::json geo = cluster_geometry_to_json(analysis.geometry);
    geo["explained_variance"] = {analysis.pca.ratio1, analysis.pca.ratio2};
    std::ofstream f(out / "geometry.json");
    f << geo.dump(2) << "\n";
  }
  manifest.outputs = {(out / "points.csv").string(), (out / "geometry.json").string()};
  manifest.finish_and_write((out / "manifest.json").string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial preference-optimization laboratory"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "synthesize the preference datasets");
  gen_cmd->add_option("--spec", gen.spec_path, "synthetic spec JSON");
  gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "seed override");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a pipeline stage");
  train_cmd->add_option("--config", train.config_path, "TrainCfg JSON");
  train_cmd->add_option("--stage", train.stage, "reference|dpo")->required();
  train_cmd->add_option("--data", train.data_dir, "dataset directory")->required();
  train_cmd->add_option("--out-ckpt", train.out_ckpt, "output checkpoint")->required();
  train_cmd->add_option("--init-ckpt", train.init_ckpt, "initial parameters");
  train_cmd->add_option("--ref-ckpt", train.ref_ckpt, "frozen reference checkpoint");
  train_cmd->add_option("--variant", train.variant, "sft|dpo|ar-dpo|at-dpo|adpo");
  train_cmd->add_option("--space", train.space, "image|latent");
  train_cmd->add_option("--sft-on", train.sft_on, "benign|harmful|both|compliance");
  train_cmd->add_option("--seed", train.seed, "seed override");
  train_cmd->add_option("--epochs", train.epochs, "epoch override");
  train_cmd->add_option("--alpha", train.alpha, "utility weight override");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "attack-time evaluation");
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--data", eval_args.data_dir, "dataset directory")->required();
  eval_cmd->add_option("--out", eval_args.out_dir, "output directory")->required();
  eval_cmd->add_option("--attacks", eval_args.attacks, "comma list of attacks");
  eval_cmd->add_option("--space", eval_args.space, "white-box attack space");
  eval_cmd->add_option("--label", eval_args.label, "method label for the report");
  eval_cmd->add_option("--seed", eval_args.seed, "seed override");
  eval_cmd->add_option("--epsilon", eval_args.epsilon, "attack budget override");
  eval_cmd->add_option("--iters", eval_args.iters, "attack iteration override");
  eval_cmd->add_option("--save-attacks", eval_args.save_attacks,
                       "write white-box perturbations (JSONL) for reuse");
  eval_cmd->add_option("--load-attacks", eval_args.load_attacks,
                       "reuse stored white-box perturbations instead of attacking");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "alpha ablation sweep");
  sweep_cmd->add_option("--config", sweep.config_path, "sweep config JSON")->required();
  sweep_cmd->add_option("--out", sweep.out_csv, "output CSV")->required();
  sweep_cmd->add_option("--seed", sweep.seed, "restrict to one seed");

  PcaArgs pca;
  auto* pca_cmd = app.add_subcommand("pca", "representation analysis");
  pca_cmd->add_option("--ckpt", pca.ckpt, "model checkpoint")->required();
  pca_cmd->add_option("--data", pca.data_dir, "dataset directory")->required();
  pca_cmd->add_option("--out", pca.out_dir, "output directory")->required();
  pca_cmd->add_option("--seed", pca.seed, "seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitParse;
  }

  if (gen_cmd->parsed()) return run_mapped([&] { cmd_gen_data(gen); });
  if (train_cmd->parsed()) return run_mapped([&] { cmd_train(train); });
  if (eval_cmd->parsed()) return run_mapped([&] { cmd_eval(eval_args); });
  if (sweep_cmd->parsed()) return run_mapped([&] { cmd_sweep(sweep); });
  if (pca_cmd->parsed()) return run_mapped([&] { cmd_pca(pca); });
  return kExitParse;
}
