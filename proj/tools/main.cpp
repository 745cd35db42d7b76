// Command-line front end: meta-train, sample, evaluate, diagnose, probe,
// export. One command per process; every command writes a manifest and
// stays inside its --out directory.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "sgmcmc/diagnostics.hpp"
#include "sgmcmc/meta_train.hpp"
#include "sgmcmc/metrics.hpp"
#include "sgmcmc/persist.hpp"
#include "sgmcmc/probe.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sgmcmc;

namespace {

std::string timestamp_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in " + ctx);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

Dataset build_dataset(const json& spec) {
  check_keys(spec, {"kind", "num_classes", "n", "dim", "separation", "gen_seed", "intervals",
                    "images", "labels"},
             "dataset");
  const auto kind = spec.at("kind").get<std::string>();
  if (kind == "blobs") {
    return gen_blobs(spec.at("num_classes").get<int>(), spec.at("n").get<int>(),
                     spec.at("dim").get<int>(), spec.at("separation").get<double>(),
                     spec.at("gen_seed").get<std::uint64_t>());
  }
  if (kind == "sine") {
    std::vector<std::pair<double, double>> intervals = {{-5.0, 1.0}, {1.0, 4.0}};
    if (spec.contains("intervals")) {
      intervals.clear();
      for (const auto& iv : spec.at("intervals"))
        intervals.emplace_back(iv.at(0).get<double>(), iv.at(1).get<double>());
    }
    return gen_sine_regression(spec.at("gen_seed").get<std::uint64_t>(), intervals,
                               get_or(spec, "n", 1000));
  }
  if (kind == "idx") {
    return load_idx_dataset(spec.at("images").get<std::string>(),
                            spec.at("labels").get<std::string>());
  }
  throw ConfigError("unknown dataset kind '" + kind + "'");
}

ArchitectureConfig parse_arch(const json& j, const Dataset& ds) {
  check_keys(j, {"kind", "layer_widths", "hidden", "channels", "conv_depth", "residual",
                 "activation"},
             "model.arch");
  ArchitectureConfig arch;
  arch.input_shape = ds.input_shape;
  arch.num_outputs = ds.output_dim();
  arch.classification = ds.classification();
  const auto kind = j.at("kind").get<std::string>();
  const auto act = get_or<std::string>(j, "activation", "relu");
  if (act == "relu")
    arch.activation = Activation::relu;
  else if (act == "identity")
    arch.activation = Activation::identity;
  else
    throw ConfigError("unknown activation '" + act + "'");
  if (kind == "mlp") {
    arch.kind = ArchKind::mlp;
    if (j.contains("layer_widths")) {
      arch.layer_widths = j.at("layer_widths").get<std::vector<int>>();
    } else {
      arch.layer_widths.push_back(arch.input_size());
      for (int h : get_or(j, "hidden", std::vector<int>{})) arch.layer_widths.push_back(h);
      arch.layer_widths.push_back(arch.num_outputs);
    }
  } else if (kind == "conv") {
    arch.kind = ArchKind::conv;
    arch.channels = j.at("channels").get<int>();
    arch.conv_depth = j.at("conv_depth").get<int>();
    arch.residual = get_or(j, "residual", false);
  } else {
    throw ConfigError("unknown architecture kind '" + kind + "'");
  }
  arch.validate();
  return arch;
}

EnergyModel parse_model(const json& j, const Dataset& ds) {
  check_keys(j, {"arch", "prior_lambda", "temperature"}, "model");
  EnergyModel model;
  model.arch = parse_arch(j.at("arch"), ds);
  model.prior_precision_lambda = get_or(j, "prior_lambda", 0.0);
  model.temperature = get_or(j, "temperature", 1.0);
  if (model.temperature <= 0.0) throw ConfigError("model temperature must be positive");
  return model;
}

// "x_steps" or "x_epochs"; epochs resolve via batches per epoch.
std::int64_t resolve_steps(const json& j, const std::string& base, std::int64_t steps_per_epoch,
                           std::int64_t fallback, std::vector<std::string>* notes) {
  const std::string steps_key = base + "_steps";
  const std::string epochs_key = base + "_epochs";
  if (j.contains(steps_key) && j.contains(epochs_key))
    throw ConfigError(steps_key + " and " + epochs_key + " are mutually exclusive");
  if (j.contains(steps_key)) return j.at(steps_key).get<std::int64_t>();
  if (j.contains(epochs_key)) {
    const auto epochs = j.at(epochs_key).get<std::int64_t>();
    const auto steps = epochs * steps_per_epoch;
    if (notes)
      notes->push_back(base + "_epochs " + std::to_string(epochs) + " resolved to " +
                       std::to_string(steps) + " steps (" + std::to_string(steps_per_epoch) +
                       " steps/epoch)");
    return steps;
  }
  return fallback;
}

const std::set<std::string>& sampler_section_keys() {
  static const std::set<std::string> keys = {
      "kind",        "step_size",    "momentum_decay", "friction_c",   "mass_m",
      "psgld_alpha", "psgld_lambda", "temperature",    "schedule",     "batch_size",
      "num_samples", "total_steps",  "total_epochs",   "burnin_steps", "burnin_epochs",
      "thin_steps",  "thin_epochs"};
  return keys;
}

ScheduleSpec parse_schedule(const json& j, double base_eps) {
  check_keys(j, {"kind", "num_cycles", "exploration_ratio"}, "sampler.schedule");
  ScheduleSpec s;
  s.base_eps = base_eps;
  const auto kind = get_or<std::string>(j, "kind", "constant");
  if (kind == "constant")
    s.kind = ScheduleKind::constant;
  else if (kind == "cosine_decay")
    s.kind = ScheduleKind::cosine_decay;
  else if (kind == "cyclical")
    s.kind = ScheduleKind::cyclical;
  else
    throw ConfigError("unknown schedule kind '" + kind + "'");
  s.num_cycles = get_or<std::int64_t>(j, "num_cycles", 1);
  s.exploration_ratio = get_or(j, "exploration_ratio", 0.8);
  return s;
}

SamplerConfig parse_sampler_config(const json& j) {
  SamplerConfig cfg;
  cfg.step_size = j.at("step_size").get<double>();
  if (j.contains("momentum_decay")) cfg.momentum_decay = j.at("momentum_decay").get<double>();
  cfg.friction_c = get_or(j, "friction_c", 0.0);
  cfg.mass_m = get_or(j, "mass_m", 1.0);
  cfg.psgld_alpha = get_or(j, "psgld_alpha", 0.99);
  cfg.psgld_lambda = get_or(j, "psgld_lambda", 1e-5);
  cfg.temperature = get_or(j, "temperature", 1.0);
  if (j.contains("schedule")) cfg.schedule = parse_schedule(j.at("schedule"), cfg.step_size);
  cfg.schedule.base_eps = cfg.step_size;
  cfg.validate();
  return cfg;
}

struct CliPaths {
  fs::path out_dir;
  fs::path resolve(const std::string& name) const { return out_dir / name; }
};

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::string checkpoint_path;
  std::string reference_path;
  std::string samples_path;
  std::int64_t seed_override = -1;
  int threads = 1;
};

// every command accepts the same top-level sections and reads the ones it
// needs; unknown section names are typos and fail fast
void check_top_level(const json& config) {
  check_keys(config,
             {"version", "seed", "dataset", "model", "sampler", "split", "paths", "meta_train",
              "task_distribution", "diagnostics", "probe"},
             "config");
}

std::uint64_t effective_seed(const json& config, const CommonArgs& args) {
  if (args.seed_override >= 0) return static_cast<std::uint64_t>(args.seed_override);
  return config.at("seed").get<std::uint64_t>();
}

Manifest start_manifest(const std::string& command, const json& config, std::uint64_t seed) {
  Manifest m;
  m.command = command;
  m.seed = seed;
  m.config_hash = config_hash(config);
  m.code_version = kVersion;
  m.started_at = timestamp_now();
  return m;
}

void finish_manifest(Manifest& m, const CliPaths& paths) {
  m.finished_at = timestamp_now();
  write_manifest(paths.resolve("manifest.json").string(), m);
}

TaskDistribution parse_task_distribution(const json& j) {
  check_keys(j, {"datasets", "conv_channels", "conv_depths", "sample_residual", "mlp_hidden",
                 "val_fraction"},
             "task_distribution");
  TaskDistribution dist;
  for (const auto& spec : j.at("datasets")) dist.pool.push_back(build_dataset(spec));
  if (j.contains("conv_channels"))
    dist.conv_channel_choices = j.at("conv_channels").get<std::vector<int>>();
  if (j.contains("conv_depths"))
    dist.conv_depth_choices = j.at("conv_depths").get<std::vector<int>>();
  dist.sample_residual = get_or(j, "sample_residual", true);
  if (j.contains("mlp_hidden"))
    dist.mlp_hidden_choices = j.at("mlp_hidden").get<std::vector<std::vector<int>>>();
  dist.val_fraction = get_or(j, "val_fraction", 0.2);
  dist.validate();
  return dist;
}

int cmd_meta_train(const json& config, const CommonArgs& args) {
  check_top_level(config);
  const auto seed = effective_seed(config, args);
  const CliPaths paths{fs::path(args.out_dir)};
  fs::create_directories(paths.out_dir);
  Manifest manifest = start_manifest("meta-train", config, seed);

  const TaskDistribution dist = parse_task_distribution(config.at("task_distribution"));

  const json& mt = config.at("meta_train");
  check_keys(mt, {"sigma", "pairs_per_iter", "outer_iters", "learning_rate", "clip_max_norm",
                  "checkpoint_interval", "divergence_abort_after", "inner"},
             "meta_train");
  const json& in = mt.at("inner");
  check_keys(in, {"steps", "burnin", "thin", "num_samples", "train_batch_size",
                  "val_batch_size", "step_size", "momentum_decay", "friction_c", "temperature",
                  "prior_lambda", "divergence_penalty_factor"},
             "meta_train.inner");

  ESConfig es;
  es.sigma = get_or(mt, "sigma", 0.01);
  es.pairs_per_iter = get_or(mt, "pairs_per_iter", 1);
  es.threads = args.threads;
  es.inner.sampler = parse_sampler_config(in);
  es.inner.inner_steps = in.at("steps").get<std::int64_t>();
  es.inner.thin = get_or<std::int64_t>(in, "thin", 50);
  es.inner.num_samples = get_or(in, "num_samples", 10);
  es.inner.burnin = get_or<std::int64_t>(
      in, "burnin", es.inner.inner_steps - es.inner.num_samples * es.inner.thin);
  es.inner.train_batch_size = get_or(in, "train_batch_size", 32);
  es.inner.val_batch_size = get_or(in, "val_batch_size", 64);
  es.inner.prior_lambda = get_or(in, "prior_lambda", 1e-2);
  es.inner.divergence_penalty_factor = get_or(in, "divergence_penalty_factor", 10.0);

  OuterConfig outer;
  outer.outer_iters = mt.at("outer_iters").get<int>();
  outer.learning_rate = get_or(mt, "learning_rate", 0.01);
  outer.clip_max_norm = get_or(mt, "clip_max_norm", 1.0);
  outer.checkpoint_interval = get_or(mt, "checkpoint_interval", 100);
  outer.divergence_abort_after = get_or(mt, "divergence_abort_after", 25);

  const auto checkpoint_hook = [&](int iter, const MetaParams& m) {
    char name[64];
    std::snprintf(name, sizeof(name), "meta_%05d.l2ck", iter);
    save_meta_params(paths.resolve(name).string(), m);
    manifest.artifacts.push_back(name);
  };

  const MetaTrainResult result = meta_train(dist, es, outer, seed, checkpoint_hook);

  save_meta_params(paths.resolve("meta_final.l2ck").string(), result.meta);
  manifest.artifacts.push_back("meta_final.l2ck");

  std::ofstream csv(paths.resolve("meta_loss.csv"));
  csv << "outer_iter,task_id,loss_plus,loss_minus,grad_norm,wall_clock_s\n";
  for (const auto& rec : result.trace)
    csv << rec.outer_iter << "," << rec.task_id << "," << rec.loss_plus << ","
        << rec.loss_minus << "," << rec.grad_norm << "," << rec.wall_clock_s << "\n";
  manifest.artifacts.push_back("meta_loss.csv");

  finish_manifest(manifest, paths);
  std::cout << "meta-train: " << result.trace.size() << " outer iterations, final checkpoint "
            << paths.resolve("meta_final.l2ck").string() << "\n";
  return 0;
}

int cmd_sample(const json& config, const CommonArgs& args) {
  check_top_level(config);
  const auto seed = effective_seed(config, args);
  const CliPaths paths{fs::path(args.out_dir)};
  fs::create_directories(paths.out_dir);
  Manifest manifest = start_manifest("sample", config, seed);

  const Dataset full = build_dataset(config.at("dataset"));
  double val_fraction = 0.2;
  std::uint64_t split_seed = derive_seed(seed, 0x5b117ull);
  if (config.contains("split")) {
    check_keys(config.at("split"), {"val_fraction", "split_seed"}, "split");
    val_fraction = get_or(config.at("split"), "val_fraction", 0.2);
    split_seed = get_or(config.at("split"), "split_seed", split_seed);
  }
  const auto [train, val] = split_dataset(full, val_fraction, split_seed);
  const EnergyModel model = parse_model(config.at("model"), full);

  const json& sj = config.at("sampler");
  check_keys(sj, sampler_section_keys(), "sampler");
  const SamplerKind kind = parse_sampler_kind(sj.at("kind").get<std::string>());
  const SamplerConfig cfg = parse_sampler_config(sj);

  ChainSpec spec;
  spec.batch_size = sj.at("batch_size").get<int>();
  const std::int64_t steps_per_epoch = std::max<std::int64_t>(1, train.n() / spec.batch_size);
  spec.total_steps = resolve_steps(sj, "total", steps_per_epoch, 0, &manifest.notes);
  spec.burnin = resolve_steps(sj, "burnin", steps_per_epoch, 0, &manifest.notes);
  spec.thin = resolve_steps(sj, "thin", steps_per_epoch, 1, &manifest.notes);
  spec.num_samples = sj.at("num_samples").get<int>();
  spec.seed = seed;

  const MetaParams* meta = nullptr;
  MetaParams loaded;
  if (is_learned_kind(kind)) {
    if (args.checkpoint_path.empty())
      throw ConfigError(sampler_kind_name(kind) + " requires --checkpoint");
    loaded = load_meta_params(args.checkpoint_path);
    meta = &loaded;
  }

  const SampleSet samples = run_chain(kind, model, train, cfg, spec, meta);
  save_sample_set(paths.resolve("samples.l2ss").string(), samples);
  manifest.artifacts.push_back("samples.l2ss");
  if (samples.diverged)
    manifest.notes.push_back("chain diverged at step " + std::to_string(samples.divergence_step) +
                             ": " + samples.divergence_detail);
  finish_manifest(manifest, paths);
  std::cout << "sample: wrote " << samples.num_samples() << " snapshots to "
            << paths.resolve("samples.l2ss").string()
            << (samples.diverged ? " (diverged)" : "") << "\n";
  return samples.diverged ? 3 : 0;
}

// Shared by evaluate/probe/export: rebuild the dataset + model and load the
// sample set named by --samples (or paths.samples in the config).
struct EvalContext {
  Dataset full, train, val;
  EnergyModel model;
  SampleSet samples;
};

EvalContext load_eval_context(const json& config, const CommonArgs& args) {
  EvalContext ctx;
  ctx.full = build_dataset(config.at("dataset"));
  double val_fraction = 0.2;
  std::uint64_t split_seed = derive_seed(config.at("seed").get<std::uint64_t>(), 0x5b117ull);
  if (config.contains("split")) {
    val_fraction = get_or(config.at("split"), "val_fraction", 0.2);
    split_seed = get_or(config.at("split"), "split_seed", split_seed);
  }
  std::tie(ctx.train, ctx.val) = split_dataset(ctx.full, val_fraction, split_seed);
  ctx.model = parse_model(config.at("model"), ctx.full);

  std::string samples_path = args.samples_path;
  if (samples_path.empty() && config.contains("paths"))
    samples_path = get_or<std::string>(config.at("paths"), "samples", "");
  if (samples_path.empty()) throw ConfigError("no sample set given (--samples or paths.samples)");
  ctx.samples = load_sample_set(samples_path);
  if (ctx.samples.dim() != param_count(ctx.model.arch))
    throw ContractError("sample set dimension does not match the configured architecture");
  return ctx;
}

int cmd_evaluate(const json& config, const CommonArgs& args) {
  check_top_level(config);
  const auto seed = effective_seed(config, args);
  const CliPaths paths{fs::path(args.out_dir)};
  fs::create_directories(paths.out_dir);
  Manifest manifest = start_manifest("evaluate", config, seed);

  EvalContext ctx = load_eval_context(config, args);
  const DataBatch eval_batch = full_batch(ctx.val);

  json metrics;
  if (ctx.full.classification()) {
    const PredictiveSet set = member_predictives(ctx.samples, ctx.model, eval_batch);
    Eigen::MatrixXd bma = Eigen::MatrixXd::Zero(set.num_points(), set.num_classes());
    json curve_acc = json::array(), curve_nll = json::array();
    for (int k = 0; k < set.num_members(); ++k) {
      bma += set.members[k];
      const Eigen::MatrixXd prefix = bma / (k + 1);
      curve_acc.push_back(accuracy(prefix, eval_batch.labels));
      curve_nll.push_back(nll(prefix, eval_batch.labels));
    }
    bma /= set.num_members();
    metrics["acc"] = accuracy(bma, eval_batch.labels);
    metrics["nll"] = nll(bma, eval_batch.labels);
    metrics["ece"] = ece(bma, eval_batch.labels, 15);
    if (set.num_members() >= 2) metrics["kld"] = pairwise_kld(set, eval_batch.labels);
    metrics["bma_curve_acc"] = curve_acc;
    metrics["bma_curve_nll"] = curve_nll;

    std::string reference_path = args.reference_path;
    if (reference_path.empty() && config.contains("paths"))
      reference_path = get_or<std::string>(config.at("paths"), "reference", "");
    if (!reference_path.empty()) {
      const Eigen::MatrixXd reference = load_reference_predictive(reference_path);
      if (reference.rows() != bma.rows() || reference.cols() != bma.cols())
        throw ContractError("reference predictive shape does not match evaluation set");
      metrics["agreement"] = agreement(bma, reference);
      metrics["total_variation"] = total_variation(bma, reference);
    }
  } else {
    // regression: predictive mean/std summary over the eval split
    ParamVector theta;
    theta.layout = ctx.samples.layout;
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(eval_batch.size(), 1);
    Eigen::MatrixXd sq = means;
    for (const auto& snap : ctx.samples.snapshots) {
      theta.values = snap;
      const Eigen::MatrixXd out = forward(ctx.model, theta, eval_batch);
      means += out;
      sq += out.cwiseProduct(out);
    }
    means /= ctx.samples.num_samples();
    sq /= ctx.samples.num_samples();
    const Eigen::MatrixXd var = (sq - means.cwiseProduct(means)).cwiseMax(0.0);
    metrics["rmse"] = std::sqrt((means - eval_batch.targets).squaredNorm() / eval_batch.size());
    metrics["mean_predictive_std"] = var.cwiseSqrt().mean();
  }

  std::ofstream out(paths.resolve("metrics.json"));
  out << metrics.dump(2) << "\n";
  manifest.artifacts.push_back("metrics.json");
  finish_manifest(manifest, paths);
  std::cout << "evaluate: " << metrics.dump() << "\n";
  return 0;
}

int cmd_diagnose(const json& config, const CommonArgs& args) {
  check_top_level(config);
  const auto seed = effective_seed(config, args);
  const CliPaths paths{fs::path(args.out_dir)};
  fs::create_directories(paths.out_dir);
  Manifest manifest = start_manifest("diagnose", config, seed);

  std::string samples_path = args.samples_path;
  if (samples_path.empty() && config.contains("paths"))
    samples_path = get_or<std::string>(config.at("paths"), "samples", "");
  if (samples_path.empty()) throw ConfigError("no sample set given (--samples or paths.samples)");
  const SampleSet samples = load_sample_set(samples_path);
  if (samples.num_samples() < 4)
    throw ContractError("diagnose needs at least 4 snapshots");

  json dj = config.contains("diagnostics") ? config.at("diagnostics") : json::object();
  check_keys(dj, {"kappa", "max_coords", "ess_scale_1e5", "rank_normalize"}, "diagnostics");
  const int kappa = get_or(dj, "kappa", 2);
  const int max_coords = get_or(dj, "max_coords", 1024);
  const bool scale_1e5 = get_or(dj, "ess_scale_1e5", false);
  const bool rank_normalize = get_or(dj, "rank_normalize", false);

  const ChainMatrix cm = chain_matrix_from(samples, max_coords);
  const RhatResult rhats = chain_split_rhat(cm.traces, kappa, rank_normalize);

  json out_json;
  out_json["kappa"] = kappa;
  out_json["num_snapshots"] = samples.num_samples();
  out_json["num_coords"] = static_cast<int>(cm.coordinate_ids.size());
  out_json["proportion_rhat_below_1.1"] = rhat_summary(rhats.rhat, 1.1);
  out_json["degenerate_coords"] =
      static_cast<int>(std::count(rhats.degenerate.begin(), rhats.degenerate.end(), true));
  json per_layer = json::object();
  for (const auto& [layer, frac] : rhat_summary_by_layer(rhats.rhat, cm.coordinate_layers, 1.1))
    per_layer[layer] = frac;
  out_json["rhat_per_layer"] = per_layer;
  if (samples.wall_clock_per_interval > 0.0 && samples.num_samples() >= 10) {
    out_json["ess_per_second"] = ess_per_second(samples, max_coords, false);
    if (scale_1e5)
      out_json["ess_per_second_1e5"] = ess_per_second(samples, max_coords, true);
  } else {
    // ESS needs at least 10 snapshots and timing metadata
    out_json["ess_per_second"] = nullptr;
  }

  double eps = 1.0;
  if (config.contains("sampler")) {
    check_keys(config.at("sampler"), sampler_section_keys(), "sampler");
    eps = config.at("sampler").at("step_size").get<double>();
  }
  const UpdateNormTrace unt = update_norm_trace(samples.snapshots, eps);

  // per-snapshot train NLL alongside the update norms, when the model and
  // dataset are configured
  std::vector<double> train_nll;
  if (config.contains("dataset") && config.contains("model")) {
    const Dataset full = build_dataset(config.at("dataset"));
    const EnergyModel model = parse_model(config.at("model"), full);
    if (samples.dim() == param_count(model.arch)) {
      const DataBatch batch = full_batch(full);
      ParamVector theta;
      theta.layout = samples.layout;
      for (const auto& snap : samples.snapshots) {
        theta.values = snap;
        const Eigen::MatrixXd out = forward(model, theta, batch);
        if (batch.classification)
          train_nll.push_back(nll(softmax_rows(out), batch.labels));
        else
          train_nll.push_back(0.5 * (out - batch.targets).squaredNorm() / batch.size());
      }
    }
  }

  std::ofstream csv(paths.resolve("update_norms.csv"));
  csv << "interval,dtheta_sq,beta_sq" << (train_nll.empty() ? "" : ",train_nll") << "\n";
  for (std::size_t i = 0; i < unt.dtheta_sq.size(); ++i) {
    csv << i << "," << unt.dtheta_sq[i] << "," << unt.beta_sq[i];
    if (!train_nll.empty()) csv << "," << train_nll[i + 1];
    csv << "\n";
  }
  manifest.artifacts.push_back("update_norms.csv");

  std::ofstream out(paths.resolve("diagnostics.json"));
  out << out_json.dump(2) << "\n";
  manifest.artifacts.push_back("diagnostics.json");
  finish_manifest(manifest, paths);
  std::cout << "diagnose: " << out_json.dump() << "\n";
  return 0;
}

int cmd_probe(const json& config, const CommonArgs& args) {
  check_top_level(config);
  const auto seed = effective_seed(config, args);
  const CliPaths paths{fs::path(args.out_dir)};
  fs::create_directories(paths.out_dir);
  Manifest manifest = start_manifest("probe", config, seed);

  EvalContext ctx = load_eval_context(config, args);
  json pj = config.contains("probe") ? config.at("probe") : json::object();
  check_keys(pj, {"num_points", "max_pairs"}, "probe");
  const int num_points = get_or(pj, "num_points", 21);
  const int max_pairs = get_or(pj, "max_pairs", 15);

  std::ofstream csv(paths.resolve("linear_path.csv"));
  csv << "pair_id,t,loss,error_percent\n";
  int pair_id = 0;
  json barriers = json::array();
  const int k = ctx.samples.num_samples();
  for (int i = 0; i < k && pair_id < max_pairs; ++i) {
    for (int j = i + 1; j < k && pair_id < max_pairs; ++j, ++pair_id) {
      PathSpec spec;
      spec.theta_a.layout = ctx.samples.layout;
      spec.theta_a.values = ctx.samples.snapshots[i];
      spec.theta_b.layout = ctx.samples.layout;
      spec.theta_b.values = ctx.samples.snapshots[j];
      spec.num_points = num_points;
      const auto path = linear_path_losses(ctx.model, ctx.val, spec);
      for (const auto& p : path)
        csv << pair_id << "," << p.t << "," << p.loss << "," << p.error_percent << "\n";
      barriers.push_back({{"pair_id", pair_id},
                          {"i", i},
                          {"j", j},
                          {"barrier", path_barrier(path)}});
    }
  }
  manifest.artifacts.push_back("linear_path.csv");

  const CosineResult cos = pairwise_cosine(ctx.samples);
  std::ofstream ccsv(paths.resolve("cosine.csv"));
  ccsv << "i,j,cosine\n";
  for (int i = 0; i < cos.similarity.rows(); ++i)
    for (int j = 0; j < cos.similarity.cols(); ++j)
      ccsv << i << "," << j << "," << cos.similarity(i, j) << "\n";
  manifest.artifacts.push_back("cosine.csv");

  json out_json;
  out_json["barriers"] = barriers;
  out_json["any_zero_norm"] = cos.any_zero_norm;
  std::ofstream out(paths.resolve("probe.json"));
  out << out_json.dump(2) << "\n";
  manifest.artifacts.push_back("probe.json");
  finish_manifest(manifest, paths);
  std::cout << "probe: " << pair_id << " pairs, outputs in " << paths.out_dir.string() << "\n";
  return 0;
}

int cmd_export(const json& config, const CommonArgs& args) {
  check_top_level(config);
  const auto seed = effective_seed(config, args);
  const CliPaths paths{fs::path(args.out_dir)};
  fs::create_directories(paths.out_dir);
  Manifest manifest = start_manifest("export", config, seed);

  EvalContext ctx = load_eval_context(config, args);
  if (!ctx.full.classification())
    throw ConfigError("export needs a classification dataset");
  const DataBatch eval_batch = full_batch(ctx.val);
  const Eigen::MatrixXd bma = bma_predict(ctx.samples, ctx.model, eval_batch);

  save_reference_predictive(paths.resolve("predictive.l2rp").string(), bma);
  manifest.artifacts.push_back("predictive.l2rp");

  // max-softmax confidence per point, usable as an OOD score
  std::ofstream csv(paths.resolve("max_softmax.csv"));
  csv << "index,max_softmax\n";
  for (int i = 0; i < bma.rows(); ++i)
    csv << i << "," << bma.row(i).maxCoeff() << "\n";
  manifest.artifacts.push_back("max_softmax.csv");

  finish_manifest(manifest, paths);
  std::cout << "export: wrote predictive (" << bma.rows() << "x" << bma.cols() << ") and scores\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic-gradient MCMC samplers with a meta-learned kinetic-energy kernel"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "config file (JSON)");
    if (needs_config) opt->required();
    cmd->add_option("--seed", args.seed_override, "seed override");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--checkpoint", args.checkpoint_path, "meta-parameter checkpoint");
    cmd->add_option("--reference", args.reference_path, "reference predictive file");
    cmd->add_option("--samples", args.samples_path, "sample-set file");
    cmd->add_option("--threads", args.threads, "worker threads for ES rollouts");
  };

  auto* c_meta = app.add_subcommand("meta-train", "meta-train the learned sampler");
  auto* c_sample = app.add_subcommand("sample", "run one chain and store snapshots");
  auto* c_eval = app.add_subcommand("evaluate", "predictive metrics for a sample set");
  auto* c_diag = app.add_subcommand("diagnose", "convergence diagnostics for a sample set");
  auto* c_probe = app.add_subcommand("probe", "linear-path and cosine mode probes");
  auto* c_export = app.add_subcommand("export", "export BMA predictive + max-softmax scores");
  for (auto* cmd : {c_meta, c_sample, c_eval, c_diag, c_probe, c_export}) add_common(cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    const json config = load_config(args.config_path);
    if (c_meta->parsed()) return cmd_meta_train(config, args);
    if (c_sample->parsed()) return cmd_sample(config, args);
    if (c_eval->parsed()) return cmd_evaluate(config, args);
    if (c_diag->parsed()) return cmd_diagnose(config, args);
    if (c_probe->parsed()) return cmd_probe(config, args);
    if (c_export->parsed()) return cmd_export(config, args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "contract error: " << e.what() << "\n";
    return 2;
  } catch (const ChainDivergence& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
