// headprobe command line: extract, diff, probe, finetune, report, selftest.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "headprobe/activation_store.hpp"
#include "headprobe/checkpoint.hpp"
#include "headprobe/common.hpp"
#include "headprobe/diff_analysis.hpp"
#include "headprobe/heatmap.hpp"
#include "headprobe/labels.hpp"
#include "headprobe/micro_transformer.hpp"
#include "headprobe/probe_engine.hpp"
#include "headprobe/report.hpp"
#include "headprobe/selftest.hpp"
#include "headprobe/split.hpp"
#include "headprobe/tokenizer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace headprobe;

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3, kCriterionFailed = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- option sets; each one is stored verbatim in the run manifest ----

struct ArchOpts {
  int layers = 6;
  int heads = 8;
  int head_dim = 16;
  int mlp_dim = 256;
  int max_context = 512;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ArchOpts, layers, heads, head_dim, mlp_dim, max_context)

struct ExtractOpts {
  std::string model;  // empty: builtin architecture
  std::string lora;
  std::string labels;
  std::vector<std::string> taps{"head", "post_attn", "post_mlp"};
  ArchOpts arch;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExtractOpts, model, lora, labels, taps, arch)

struct DiffOpts {
  std::string acts;
  std::string labels;
  std::string construct{kTrustworthiness};
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DiffOpts, acts, labels, construct)

struct ProbeOpts {
  std::string acts;
  std::string labels;
  std::vector<std::string> constructs;
  bool all_constructs = false;
  std::string probe = "linear";
  std::optional<double> l2;
  bool standardize = true;
  std::optional<int> max_iterations;
  bool layer_sweep = false;
  bool concat_heads = false;
  std::string metric = "macro_f1";
};

void to_json(json& j, const ProbeOpts& o) {
  j = json{{"acts", o.acts},
           {"labels", o.labels},
           {"constructs", o.constructs},
           {"all_constructs", o.all_constructs},
           {"probe", o.probe},
           {"l2", o.l2 ? json(*o.l2) : json(nullptr)},
           {"standardize", o.standardize},
           {"max_iterations", o.max_iterations ? json(*o.max_iterations) : json(nullptr)},
           {"layer_sweep", o.layer_sweep},
           {"concat_heads", o.concat_heads},
           {"metric", o.metric}};
}

void from_json(const json& j, ProbeOpts& o) {
  o.acts = j.value("acts", "");
  o.labels = j.value("labels", "");
  o.constructs = j.value("constructs", std::vector<std::string>{});
  o.all_constructs = j.value("all_constructs", false);
  o.probe = j.value("probe", "linear");
  if (j.contains("l2") && !j["l2"].is_null()) o.l2 = j["l2"].get<double>();
  o.standardize = j.value("standardize", true);
  if (j.contains("max_iterations") && !j["max_iterations"].is_null()) {
    o.max_iterations = j["max_iterations"].get<int>();
  }
  o.layer_sweep = j.value("layer_sweep", false);
  o.concat_heads = j.value("concat_heads", false);
  o.metric = j.value("metric", "macro_f1");
}

struct FinetuneOpts {
  std::string model;
  std::string labels;
  ArchOpts arch;
  int rank = 8;
  double alpha = 32.0;
  double dropout = 0.1;
  std::vector<std::string> targets{"q", "k", "v", "o", "gate", "up", "down"};
  double lr = 1e-3;
  int batch = 16;
  int epochs = 10;
  double warmup = 0.1;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FinetuneOpts, model, labels, arch, rank, alpha, dropout, targets, lr,
                                                batch, epochs, warmup)

struct ReportOpts {
  std::vector<std::string> compare;  // base sweep, tuned sweep
  bool generation_eval = false;
  std::string model;
  std::string lora;
  std::string labels;
  ArchOpts arch;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ReportOpts, compare, generation_eval, model, lora, labels, arch)

struct Context {
  std::uint64_t seed = 42;
  unsigned workers = 1;
  std::string out_root = "reports";
};

// ---- helpers ----

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open input: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

void log(const std::string& msg) { std::cerr << "[headprobe] " << msg << '\n'; }

struct Run {
  std::string id;
  fs::path dir;
};

// Hashes every input file so a changed input yields a new run id, then
// writes the manifest before anything else.
Run begin_run(const Context& ctx, const std::string& command, const json& config,
              const std::vector<std::pair<std::string, std::string>>& inputs, const std::string& model_id) {
  json manifest;
  manifest["toolkit_version"] = std::string(kToolkitVersion);
  manifest["command"] = command;
  manifest["seed"] = ctx.seed;
  manifest["model"] = model_id;
  json in = json::array();
  for (const auto& [role, path] : inputs) {
    if (path.empty()) continue;
    in.push_back({{"role", role}, {"path", path}, {"fnv1a64", hex64(hash_label(read_bytes(path)))}});
  }
  manifest["inputs"] = in;
  manifest["config"] = config;
  const std::string id = hex64(hash_label(manifest.dump()));
  manifest["run_id"] = id;

  Run run{id, fs::path(ctx.out_root) / id};
  fs::create_directories(run.dir);
  write_text(run.dir / "manifest.json", manifest.dump(2) + "\n");
  log(command + " run " + id + " -> " + run.dir.string());
  return run;
}

std::vector<int> aligned_labels(const LabelTable& table, const ActivationSet& acts, std::string_view construct) {
  const auto idx = table.align_to(acts.sample_ids);
  const auto all = table.binary_labels(construct);
  std::vector<int> y(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) y[i] = all[idx[i]];
  return y;
}

void check_construct(const std::string& name) {
  if (!construct_index(name)) throw UsageError("unknown construct: " + name);
}

ModelConfig builtin_config(const ArchOpts& a, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.n_layers = a.layers;
  cfg.n_heads = a.heads;
  cfg.head_dim = a.head_dim;
  cfg.model_dim = a.heads * a.head_dim;
  cfg.mlp_hidden_dim = a.mlp_dim;
  cfg.max_context = a.max_context;
  cfg.seed = derive_seed(seed, "model");
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

MicroTransformer load_model(const std::string& model_path, const std::string& lora_path, const ArchOpts& arch,
                            std::uint64_t seed) {
  MicroTransformer m = model_path.empty() ? MicroTransformer::initialize(builtin_config(arch, seed))
                                          : read_model_file(model_path);
  if (!lora_path.empty()) m = read_lora_file(m, lora_path);
  return m;
}

std::string model_id(const std::string& model_path, const std::string& lora_path, const ArchOpts& arch,
                     std::uint64_t seed) {
  std::string id;
  if (model_path.empty()) {
    MicroTransformer shape;
    shape.config = builtin_config(arch, seed);
    id = "builtin:" + shape.name();
  } else {
    id = "checkpoint:" + model_path;
  }
  if (!lora_path.empty()) id += "+lora:" + lora_path;
  return id;
}

// ---- commands ----

int cmd_extract(const ExtractOpts& o, const Context& ctx) {
  if (o.labels.empty()) throw UsageError("extract needs --labels");
  if (o.taps.empty()) throw UsageError("extract needs at least one tap");
  std::vector<TapKind> taps;
  for (const auto& t : o.taps) {
    try {
      taps.push_back(parse_tap(t));
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
  }
  const auto run = begin_run(ctx, "extract", json(o), {{"labels", o.labels}, {"model", o.model}, {"lora", o.lora}},
                             model_id(o.model, o.lora, o.arch, ctx.seed));
  const auto labels = read_labels_file(o.labels);
  const auto model = load_model(o.model, o.lora, o.arch, ctx.seed);
  const auto& cfg = model.config;
  const std::size_t n = labels.size();

  std::vector<TapBundle> bundles(n);
  std::vector<std::size_t> dropped(n);
  parallel_for(n, ctx.workers, [&](std::size_t i) {
    const auto prompt = format_prompt(labels[i].text, static_cast<std::size_t>(cfg.max_context));
    dropped[i] = prompt.dropped;
    bundles[i] = forward_with_taps(model, prompt.tokens).taps;
  });
  std::size_t truncated = 0;
  for (auto d : dropped) truncated += d > 0 ? 1 : 0;
  char frac[64];
  std::snprintf(frac, sizeof frac, "%.2f%%", n ? 100.0 * static_cast<double>(truncated) / static_cast<double>(n) : 0.0);
  log("truncated " + std::to_string(truncated) + " of " + std::to_string(n) + " prompts (" + frac + ")");

  for (auto tap : taps) {
    ActivationSet set;
    set.model_name = model.name();
    set.tap = tap;
    set.n_samples = n;
    set.n_layers = static_cast<std::uint32_t>(cfg.n_layers);
    set.n_heads = tap == TapKind::HeadPreProjection ? static_cast<std::uint32_t>(cfg.n_heads) : 1u;
    set.dim = tap == TapKind::HeadPreProjection ? static_cast<std::uint32_t>(cfg.head_dim)
                                                : static_cast<std::uint32_t>(cfg.model_dim);
    for (const auto& r : labels.records()) set.sample_ids.push_back(r.id);
    set.data.reserve(n * cfg.n_layers * cfg.model_dim);
    for (const auto& b : bundles) {
      const Matrix& m = tap == TapKind::HeadPreProjection  ? b.head_pre_proj
                        : tap == TapKind::PostAttentionResidual ? b.post_attn_residual
                                                                : b.post_mlp_residual;
      for (Eigen::Index k = 0; k < m.size(); ++k) set.data.push_back(static_cast<float>(m.data()[k]));
    }
    const auto path = run.dir / ("acts_" + std::string(tap_name(tap)) + ".hpa");
    write_activations_file(set, path.string());
    std::cout << path.string() << '\n';
  }
  return kOk;
}

int cmd_diff(const DiffOpts& o, const Context& ctx) {
  if (o.acts.empty() || o.labels.empty()) throw UsageError("diff needs --acts and --labels");
  check_construct(o.construct);
  const auto run = begin_run(ctx, "diff", json(o), {{"acts", o.acts}, {"labels", o.labels}}, "");
  const auto acts = read_activations_file(o.acts);
  const auto y = aligned_labels(read_labels_file(o.labels), acts, o.construct);
  if (is_residual(acts.tap)) {
    write_text(run.dir / "residual_curve.csv", residual_curve_table(residual_norm_diff(acts, y)));
    std::cout << (run.dir / "residual_curve.csv").string() << '\n';
    return kOk;
  }
  const auto map = diff_map(acts, y);
  write_text(run.dir / "diffmap.csv", diffmap_table(map));
  HeatmapStyle style;
  style.palette = Palette::Diverging;
  style.title = o.construct + ": normalized activation difference (" + acts.model_name + ")";
  style.value_label = "normalized delta";
  write_text(run.dir / "diffmap.svg", render_heatmap_svg(map.normalized, style));
  const auto cell = map.strongest_cell();
  std::cout << "strongest cell: layer " << cell.layer << ", head " << cell.head << '\n';
  return kOk;
}

int cmd_probe(const ProbeOpts& o, const Context& ctx) {
  if (o.acts.empty() || o.labels.empty()) throw UsageError("probe needs --acts and --labels");
  std::vector<std::string> names = o.constructs;
  if (o.all_constructs) {
    if (!names.empty()) throw UsageError("--construct and --all-constructs are exclusive");
    for (const auto& c : constructs()) names.emplace_back(c.name);
  }
  if (names.empty()) names.emplace_back(kTrustworthiness);
  for (const auto& n : names) check_construct(n);
  if (o.probe != "linear" && o.probe != "mlp") throw UsageError("--probe must be linear or mlp");
  SelectionMetric metric;
  try {
    metric = parse_metric(o.metric);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  ProbeConfig cfg = o.probe == "mlp" ? ProbeConfig::mlp() : ProbeConfig::linear();
  if (o.l2) cfg.l2 = *o.l2;
  if (o.max_iterations) cfg.max_iterations = *o.max_iterations;
  cfg.standardize = o.standardize;
  cfg.seed = derive_seed(ctx.seed, "probe");
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }

  const auto run = begin_run(ctx, "probe", json(o), {{"acts", o.acts}, {"labels", o.labels}}, "");
  const auto acts = read_activations_file(o.acts);
  const auto table = read_labels_file(o.labels);
  const bool layers = is_residual(acts.tap) || o.layer_sweep || o.concat_heads;

  std::vector<SweepResult> sweeps;
  for (const auto& name : names) {
    const auto y = aligned_labels(table, acts, name);
    SplitAssignment split;
    try {
      split = make_split(y.size(), construct_split_seed(ctx.seed, name), y, name);
    } catch (const InvalidArgument& e) {
      log("skipping " + name + ": " + e.what());
      continue;
    }
    auto sweep = layers ? sweep_layers(acts, y, split, cfg, ctx.workers, !is_residual(acts.tap))
                        : sweep_heads(acts, y, split, cfg, ctx.workers);
    sweep.construct = name;
    write_text(run.dir / ("sweep_" + name + ".csv"), sweep_table(sweep));
    std::vector<bool> missing;
    const Grid grid = sweep_grid(sweep, metric, &missing);
    HeatmapStyle style;
    style.title = name + ": probe " + std::string(metric_name(metric)) + " (" + std::string(tap_name(acts.tap)) + ")";
    style.value_label = std::string(metric_name(metric));
    write_text(run.dir / ("heatmap_" + name + ".svg"), render_heatmap_svg(grid, style, missing));
    if (auto best = sweep.best_cell(metric)) {
      std::cout << name << ": best " << metric_name(metric) << " " << metric_value(*sweep.at(best->layer, best->head).metrics, metric)
                << " at layer " << best->layer << ", head " << best->head << '\n';
    } else {
      std::cout << name << ": every cell failed\n";
    }
    sweeps.push_back(std::move(sweep));
  }
  if (sweeps.empty()) throw InvalidArgument("no construct could be probed");
  write_text(run.dir / "best_per_construct.csv", best_table(best_per_construct(sweeps, metric)));
  return kOk;
}

int cmd_finetune(const FinetuneOpts& o, const Context& ctx) {
  if (o.labels.empty()) throw UsageError("finetune needs --labels");
  LoraConfig lc;
  lc.rank = o.rank;
  lc.alpha = o.alpha;
  lc.dropout = o.dropout;
  lc.seed = derive_seed(ctx.seed, "lora");
  lc.targets.clear();
  TrainConfig tc;
  tc.learning_rate = o.lr;
  tc.batch_size = o.batch;
  tc.epochs = o.epochs;
  tc.warmup_fraction = o.warmup;
  tc.seed = derive_seed(ctx.seed, "train");
  tc.workers = ctx.workers;
  try {
    for (const auto& t : o.targets) lc.targets.push_back(parse_projection(t));
    lc.validate();
    tc.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }

  const auto run = begin_run(ctx, "finetune", json(o), {{"labels", o.labels}, {"model", o.model}},
                             model_id(o.model, "", o.arch, ctx.seed));
  const auto labels = read_labels_file(o.labels);
  const auto base = load_model(o.model, "", o.arch, ctx.seed);
  const auto trust = labels.binary_labels(kTrustworthiness);
  std::vector<LabeledText> data;
  for (std::size_t i = 0; i < labels.size(); ++i) data.push_back({labels[i].text, trust[i]});

  const auto result = train_lora(apply_lora(base, lc), data, tc);
  write_model_file(base, (run.dir / "base_model.hpm").string());
  write_lora_file(result.model, (run.dir / "lora.hpl").string());
  std::ostringstream logcsv;
  logcsv << "epoch,mean_loss\n";
  char buf[64];
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1, result.epoch_losses[e]);
    logcsv << buf;
  }
  write_text(run.dir / "training_log.csv", logcsv.str());
  log("trained " + std::to_string(result.steps) + " steps");
  std::cout << (run.dir / "base_model.hpm").string() << '\n' << (run.dir / "lora.hpl").string() << '\n';
  return kOk;
}

SweepResult read_sweep(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open sweep table: " + path);
  return parse_sweep_table(in);
}

int cmd_report(const ReportOpts& o, const Context& ctx) {
  if (o.compare.empty() && !o.generation_eval) throw UsageError("report needs --compare and/or --generation-eval");
  if (!o.compare.empty() && o.compare.size() != 2) throw UsageError("--compare takes a base and a tuned sweep table");
  if (o.generation_eval && o.labels.empty()) throw UsageError("--generation-eval needs --labels");

  std::vector<std::pair<std::string, std::string>> inputs;
  if (!o.compare.empty()) {
    inputs.emplace_back("base_sweep", o.compare[0]);
    inputs.emplace_back("tuned_sweep", o.compare[1]);
  }
  if (o.generation_eval) {
    inputs.emplace_back("labels", o.labels);
    inputs.emplace_back("model", o.model);
    inputs.emplace_back("lora", o.lora);
  }
  const auto run = begin_run(ctx, "report", json(o), inputs,
                             o.generation_eval ? model_id(o.model, o.lora, o.arch, ctx.seed) : "");

  if (!o.compare.empty()) {
    const auto cmp = compare_runs(read_sweep(o.compare[0]), read_sweep(o.compare[1]));
    write_text(run.dir / "comparison.jsonl", comparison_jsonl(cmp));
    write_text(run.dir / "layer_curves.csv", layer_curves_table(cmp));
    Grid delta(cmp.n_layers, cmp.n_heads);
    std::vector<bool> missing(delta.values.size(), false);
    for (std::size_t i = 0; i < delta.values.size(); ++i) {
      delta.values[i] = cmp.accuracy_delta[i];
      missing[i] = !std::isfinite(delta.values[i]);
    }
    HeatmapStyle style;
    style.palette = Palette::Diverging;
    style.title = cmp.construct + ": accuracy change after fine-tuning";
    style.value_label = "tuned - base accuracy";
    write_text(run.dir / "accuracy_delta.svg", render_heatmap_svg(delta, style, missing));
    std::cout << "spearman rho " << cmp.rank_correlation << ", mean accuracy " << cmp.mean_base_accuracy() << " -> "
              << cmp.mean_tuned_accuracy() << ", structure preserved: " << (cmp.structure_preserved() ? "yes" : "no")
              << '\n';
  }

  if (o.generation_eval) {
    const auto table = read_labels_file(o.labels);
    const auto trust = table.binary_labels(kTrustworthiness);
    std::vector<LabeledReview> reviews;
    for (std::size_t i = 0; i < table.size(); ++i) reviews.push_back({table[i].id, table[i].text, trust[i]});
    const auto base = load_model(o.model, "", o.arch, ctx.seed);
    std::vector<MicroTransformer> models{base};
    std::vector<std::string> names{"base"};
    if (!o.lora.empty()) {
      models.push_back(read_lora_file(base, o.lora));
      names.emplace_back("lora");
    }
    // Classify every review up front on the worker pool; variants then
    // read the cached answers, keeping output order fixed.
    std::vector<std::vector<Classification>> cache(models.size(), std::vector<Classification>(reviews.size()));
    parallel_for(models.size() * reviews.size(), ctx.workers, [&](std::size_t k) {
      const auto v = k / reviews.size();
      const auto i = k % reviews.size();
      cache[v][i] = classify(models[v], reviews[i].text);
    });
    std::vector<ModelVariant> variants;
    for (std::size_t v = 0; v < models.size(); ++v) {
      auto counter = std::make_shared<std::size_t>(0);
      variants.push_back({names[v], [&cache, v, counter](std::string_view) { return cache[v][(*counter)++]; }});
    }
    const auto eval = generation_eval(variants, reviews);
    write_text(run.dir / "generation_eval.csv", generation_eval_table(eval));
    write_text(run.dir / "generation_predictions.csv", generation_predictions_table(eval));
    std::cout << generation_eval_table(eval);
  }
  return kOk;
}

int cmd_selftest(int trials, int required, const Context& ctx) {
  SelftestOptions opts;
  opts.trials = trials;
  opts.required_passes = required;
  opts.workers = ctx.workers;
  opts.seed = ctx.seed;
  bool all = true;
  for (const auto& r : run_selftest(opts)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    all = all && r.passed;
  }
  return all ? kOk : kCriterionFailed;
}

int replay(const std::string& manifest_path, Context ctx) {
  json m;
  try {
    m = json::parse(read_bytes(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError("unreadable manifest " + manifest_path + ": " + e.what());
  }
  if (m.value("toolkit_version", "") != kToolkitVersion) {
    log("warning: manifest written by toolkit " + m.value("toolkit_version", "?") + ", running " +
        std::string(kToolkitVersion));
  }
  ctx.seed = m.at("seed").get<std::uint64_t>();
  const auto command = m.at("command").get<std::string>();
  const auto& cfg = m.at("config");
  if (command == "extract") return cmd_extract(cfg.get<ExtractOpts>(), ctx);
  if (command == "diff") return cmd_diff(cfg.get<DiffOpts>(), ctx);
  if (command == "probe") return cmd_probe(cfg.get<ProbeOpts>(), ctx);
  if (command == "finetune") return cmd_finetune(cfg.get<FinetuneOpts>(), ctx);
  if (command == "report") return cmd_report(cfg.get<ReportOpts>(), ctx);
  throw FormatError("manifest names unknown command: " + command);
}

void add_arch_options(CLI::App* app, ArchOpts& a) {
  app->add_option("--layers", a.layers, "Builtin model: layer count")->capture_default_str();
  app->add_option("--heads", a.heads, "Builtin model: heads per layer")->capture_default_str();
  app->add_option("--head-dim", a.head_dim, "Builtin model: per-head width")->capture_default_str();
  app->add_option("--mlp-dim", a.mlp_dim, "Builtin model: MLP hidden width")->capture_default_str();
  app->add_option("--max-context", a.max_context, "Builtin model: context length in tokens")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"headprobe: head-level activation analysis for a micro transformer"};
  app.set_version_flag("--version", std::string(kToolkitVersion));
  app.set_config("--config", "", "Key-value config file; command-line flags take precedence");

  Context ctx;
  std::string from_manifest;
  app.add_option("--seed", ctx.seed, "Base seed for every derived seed")->envname("HEADPROBE_SEED")->capture_default_str();
  app.add_option("--workers", ctx.workers, "Worker threads (outputs do not depend on this)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--out-dir", ctx.out_root, "Root directory for run outputs")->capture_default_str();
  app.add_option("--from-manifest", from_manifest, "Re-run the command recorded in a manifest")
      ->check(CLI::ExistingFile);
  app.require_subcommand(0, 1);

  ExtractOpts ex;
  auto* extract = app.add_subcommand("extract", "Run the model over labeled reviews and store tapped activations");
  extract->add_option("--model", ex.model, "Model checkpoint (default: builtin architecture)");
  extract->add_option("--lora", ex.lora, "Adapter checkpoint applied on top of the model");
  extract->add_option("--labels", ex.labels, "Label file (JSON lines)")->required();
  extract->add_option("--taps", ex.taps, "Tap kinds: head, post_attn, post_mlp")->delimiter(',')->capture_default_str();
  add_arch_options(extract, ex.arch);

  DiffOpts df;
  auto* diff = app.add_subcommand("diff", "Groupwise activation-difference map");
  diff->add_option("--acts", df.acts, "Activation file")->required();
  diff->add_option("--labels", df.labels, "Label file")->required();
  diff->add_option("--construct", df.construct, "Construct that defines the groups")->capture_default_str();

  ProbeOpts po;
  double l2 = 0.0;
  int max_iter = 0;
  bool no_standardize = false;
  auto* probe = app.add_subcommand("probe", "Train one probe per (layer, head) or per layer");
  probe->add_option("--acts", po.acts, "Activation file")->required();
  probe->add_option("--labels", po.labels, "Label file")->required();
  auto* construct_opt = probe->add_option("--construct", po.constructs, "Construct to probe (repeatable)");
  probe->add_flag("--all-constructs", po.all_constructs, "Probe all 32 constructs")->excludes(construct_opt);
  probe->add_option("--probe", po.probe, "linear or mlp")->capture_default_str();
  auto* l2_opt = probe->add_option("--l2", l2, "L2 strength (default 1 linear, 10 mlp)");
  auto* iter_opt = probe->add_option("--max-iterations", max_iter, "Newton iterations or MLP epochs");
  probe->add_flag("--no-standardize", no_standardize, "Skip feature z-scoring");
  probe->add_flag("--layer-sweep", po.layer_sweep, "One probe per layer on concatenated heads");
  probe->add_flag("--concat-heads", po.concat_heads, "Alias of --layer-sweep for head taps");
  probe->add_option("--metric", po.metric, "Selection metric for best cells and heatmaps")->capture_default_str();

  FinetuneOpts ft;
  auto* finetune = app.add_subcommand("finetune", "LoRA fine-tuning on trustworthiness labels");
  finetune->add_option("--model", ft.model, "Model checkpoint (default: builtin architecture)");
  finetune->add_option("--labels", ft.labels, "Label file")->required();
  add_arch_options(finetune, ft.arch);
  finetune->add_option("--rank", ft.rank, "Adapter rank")->capture_default_str();
  finetune->add_option("--alpha", ft.alpha, "Adapter scaling numerator")->capture_default_str();
  finetune->add_option("--dropout", ft.dropout, "Dropout on adapter inputs")->capture_default_str();
  finetune->add_option("--targets", ft.targets, "Projections to adapt")->delimiter(',')->capture_default_str();
  finetune->add_option("--lr", ft.lr, "Peak learning rate")->capture_default_str();
  finetune->add_option("--batch", ft.batch, "Batch size")->capture_default_str();
  finetune->add_option("--epochs", ft.epochs, "Epochs")->capture_default_str();
  finetune->add_option("--warmup", ft.warmup, "Warmup fraction of steps")->capture_default_str();

  ReportOpts ro;
  auto* report = app.add_subcommand("report", "Base vs fine-tuned comparison and generation evaluation");
  report->add_option("--compare", ro.compare, "Base and tuned sweep tables")->expected(2);
  report->add_flag("--generation-eval", ro.generation_eval, "Classify labeled reviews with base and adapted models");
  report->add_option("--model", ro.model, "Model checkpoint (default: builtin architecture)");
  report->add_option("--lora", ro.lora, "Adapter checkpoint for the fine-tuned variant");
  report->add_option("--labels", ro.labels, "Label file for --generation-eval");
  add_arch_options(report, ro.arch);

  int trials = 100;
  int required = 95;
  auto* selftest = app.add_subcommand("selftest", "Planted-signal acceptance checks");
  selftest->add_option("--trials", trials, "Seeds per criterion")->capture_default_str();
  selftest->add_option("--required", required, "Passing seeds required")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  if (*l2_opt) po.l2 = l2;
  if (*iter_opt) po.max_iterations = max_iter;
  po.standardize = !no_standardize;

  try {
    if (!from_manifest.empty()) {
      if (app.get_subcommands().size() > 0) throw UsageError("--from-manifest replaces the subcommand");
      return replay(from_manifest, ctx);
    }
    if (*extract) return cmd_extract(ex, ctx);
    if (*diff) return cmd_diff(df, ctx);
    if (*probe) return cmd_probe(po, ctx);
    if (*finetune) return cmd_finetune(ft, ctx);
    if (*report) return cmd_report(ro, ctx);
    if (*selftest) return cmd_selftest(trials, required, ctx);
    std::cerr << app.help();
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
}
