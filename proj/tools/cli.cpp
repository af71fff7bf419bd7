#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <unistd.h>

#include "prefillsim/errors.hpp"
#include "prefillsim/exec_model.hpp"
#include "prefillsim/hybrid_numerics.hpp"
#include "prefillsim/jct.hpp"
#include "prefillsim/presets.hpp"
#include "prefillsim/sim.hpp"
#include "prefillsim/workload.hpp"

namespace prefillsim::cli {

namespace {

constexpr const char* kDefaultModel = "qwen-32b-fp8";
constexpr const char* kDefaultGpu = "a100-40gb";
constexpr std::uint32_t kDefaultClusterGpus = 2;

// Longest request each bundled workload can produce.
constexpr Tokens kPostRecMaxLength = kPostRecProfileMax + kPostRecSuffixTokens;
constexpr Tokens kCreditMaxLength = kCreditMaxTokens;

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& what) {
  std::vector<T> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw ConfigError(fmt::format("empty entry in {} list '{}'", what, text));
    std::size_t used = 0;
    T v{};
    try {
      if constexpr (std::is_same_v<T, double>) {
        v = std::stod(item, &used);
      } else {
        if (item[0] == '-') throw std::invalid_argument("negative");
        v = static_cast<T>(std::stoull(item, &used));
      }
    } catch (const std::logic_error&) {
      throw ConfigError(fmt::format("bad {} value '{}'", what, item));
    }
    if (used != item.size()) throw ConfigError(fmt::format("bad {} value '{}'", what, item));
    values.push_back(v);
  }
  if (values.empty()) throw ConfigError(fmt::format("empty {} list", what));
  return values;
}

// Writes to `out` for "-" and otherwise through a temporary file renamed into place.
void emit(const std::string& path, const std::string& content, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << content;
    return;
  }
  const std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += fmt::format(".tmp{}", ::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(fmt::format("cannot write {}", path));
    f << content;
    f.close();
    if (!f) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError(fmt::format("write failed for {}", path));
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError(fmt::format("cannot move output into {}", path));
  }
}

struct Loaded {
  ModelPreset model;
  GpuPreset gpu;
  CostParams params;
};

Loaded load_presets(const std::string& model, const std::string& gpu) {
  Loaded l{load_model_preset(model), load_gpu_preset(gpu), {}};
  l.params = derive_cost_params(l.model.geometry, l.gpu.gpu, l.gpu.knobs);
  return l;
}

struct MilRow {
  std::string config;
  EngineVariant variant;
  std::optional<PrefillMode> raw_mode;  // set for rows that are plain memory modes
};

std::vector<MilRow> mil_rows(const std::string& selector) {
  std::vector<MilRow> all{
      {"full", variant::PagedAttention{}, std::nullopt},
      {"kv-discard", variant::PagedAttention{}, PrefillMode{mode::KvDiscard{}}},
      {fmt::format("chunked:{}", kDefaultChunkedPrefillChunk), variant::ChunkedPrefill{}, std::nullopt},
      {fmt::format("hybrid:{}", kDefaultHybridChunk), variant::PrefillOnlyHybrid{}, std::nullopt},
      {"tp:2", variant::TensorParallel{2}, std::nullopt},
      {"pp:2", variant::PipelineParallel{2}, std::nullopt},
  };
  if (selector == "all") return all;
  if (selector == "full" || selector == "paged") return {all[0]};
  if (selector == "kv-discard") return {all[1]};
  const auto colon = selector.find(':');
  const std::string head = selector.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : selector.substr(colon);
  if (head == "hybrid") {
    const auto v = parse_variant("prefillonly" + arg);
    return {{fmt::format("hybrid:{}", std::get<variant::PrefillOnlyHybrid>(v).chunk), v, std::nullopt}};
  }
  if (head == "chunked" || head == "tp" || head == "pp") {
    const auto v = parse_variant(selector);
    return {{to_string(v), v, std::nullopt}};
  }
  throw ConfigError(fmt::format("unknown mode '{}'", selector));
}

std::string cmd_mil(const std::string& model, const std::string& gpu, const std::string& selector) {
  const auto l = load_presets(model, gpu);
  std::string out = "model,gpu,config,mil,wl1_feasible,wl2_feasible\n";
  for (const auto& row : mil_rows(selector)) {
    const Tokens mil = row.raw_mode ? max_input_length(l.model.geometry, l.gpu.gpu, *row.raw_mode)
                                    : variant_max_input_length(row.variant, l.model.geometry, l.gpu.gpu);
    out += fmt::format("{},{},{},{},{},{}\n", l.model.geometry.name, l.gpu.gpu.name, row.config, mil,
                       kPostRecMaxLength <= mil ? "yes" : "no", kCreditMaxLength <= mil ? "yes" : "no");
  }
  return out;
}

struct RunOptions {
  std::string model = kDefaultModel;
  std::string gpu = kDefaultGpu;
  std::string trace = "post-rec";
  std::uint64_t seed = 42;
  std::string variant = "prefillonly";
  std::string policy;
  std::string lambda;
  std::string scoring = "proxy";
  std::string multipliers = "0.25,0.5,1,2,3,4";
  std::size_t instances = 0;
  std::string out = "-";
  bool interleave_users = false;
  std::string jct_profile;
  double qps = 0.0;
};

SimConfig build_config(const RunOptions& o, const Loaded& l, std::optional<double> lambda) {
  SimConfig cfg;
  cfg.variant = parse_variant(o.variant);
  cfg.num_instances = o.instances != 0 ? o.instances
                                       : std::max<std::uint32_t>(1, kDefaultClusterGpus / gpus_per_instance(cfg.variant));
  const Scoring scoring = parse_scoring(o.scoring);
  cfg.policy = o.policy.empty() ? native_policy(cfg.variant) : make_policy(o.policy, scoring, lambda);
  if (o.policy.empty() && std::holds_alternative<policy::SrjfCalibrated>(cfg.policy)) {
    cfg.policy = make_policy("srjf-calibrated", scoring, lambda);
  }
  cfg.geometry = l.model.geometry;
  cfg.gpu = l.gpu.gpu;
  cfg.cost_params = l.params;
  cfg.seed = o.seed;
  cfg.arrivals.interleave_users = o.interleave_users;
  if (!o.jct_profile.empty()) cfg.jct_profile = JctProfile::load(o.jct_profile);
  cfg.validate();
  return cfg;
}

std::string cmd_simulate(const RunOptions& o) {
  const auto l = load_presets(o.model, o.gpu);
  std::optional<double> lambda;
  if (!o.lambda.empty()) {
    const auto values = parse_list<double>(o.lambda, "lambda");
    if (values.size() != 1) throw ConfigError("simulate takes a single --lambda; use lambda-sweep for several");
    lambda = values.front();
  }
  const SimConfig cfg = build_config(o, l, lambda);
  const Trace trace = load_trace(o.trace, o.seed);
  const auto multipliers = parse_list<double>(o.multipliers, "multiplier");
  const auto points = sweep_qps(trace, cfg, multipliers, o.qps > 0.0 ? std::optional<double>(o.qps) : std::nullopt);
  std::string out = report_csv_header() + "\n";
  for (const auto& p : points) out += report_csv_row(cfg, p.qps, p.report) + "\n";
  return out;
}

std::string cmd_lambda_sweep(const RunOptions& o) {
  const auto l = load_presets(o.model, o.gpu);
  if (!o.policy.empty() && o.policy != "srjf-calibrated") {
    throw ConfigError("lambda-sweep requires --policy srjf-calibrated");
  }
  const auto lambdas = parse_list<double>(o.lambda.empty() ? "0,0.5,5" : o.lambda, "lambda");
  const auto multipliers = parse_list<double>(o.multipliers, "multiplier");
  if (multipliers.size() != 1) throw ConfigError("lambda-sweep runs at one QPS; give a single --multipliers value");
  RunOptions calibrated = o;
  calibrated.policy = "srjf-calibrated";
  const Trace trace = load_trace(o.trace, o.seed);

  std::optional<double> base = o.qps > 0.0 ? std::optional<double>(o.qps) : std::nullopt;
  std::string out = report_csv_header() + "\n";
  for (const double lambda : lambdas) {
    const SimConfig cfg = build_config(calibrated, l, lambda);
    if (!base) base = reference_qps(trace, cfg);
    const auto points = sweep_qps(trace, cfg, multipliers, base);
    out += report_csv_row(cfg, points.front().qps, points.front().report) + "\n";
  }
  return out;
}

struct FitOptions {
  std::string model = kDefaultModel;
  std::string gpu = kDefaultGpu;
  std::string variant = "prefillonly";
  Tokens max_input = 60000;
  Tokens step = 1000;
  double noise = 0.0;
  std::uint64_t seed = 42;
  std::string out = "-";
};

std::string cmd_fit_jct(const FitOptions& o) {
  const auto l = load_presets(o.model, o.gpu);
  const ExecModel exec(parse_variant(o.variant), l.model.geometry, l.gpu.gpu, l.params);
  ProfileGrid grid;
  grid.step = o.step;
  grid.max_input = o.max_input;
  grid.noise_stddev = o.noise;
  grid.noise_seed = o.seed;
  const auto p = profile_from_model(exec, grid);
  return fmt::format("coef_input = {:.17g}\ncoef_cached = {:.17g}\nintercept = {:.17g}\nfit_r2 = {:.17g}\n",
                     p.coef_input, p.coef_cached, p.intercept, p.fit_r2);
}

struct NumericsOptions {
  std::uint64_t seed = 42;
  std::size_t tokens = 64;
  std::size_t hidden = 16;
  std::size_t intermediate = 64;
  std::string chunks = "1,2,4,8,16,32,64";
  std::string out = "-";
};

std::string cmd_verify_numerics(const NumericsOptions& o) {
  using namespace numerics;
  const auto params = ToyBlockParams::random(o.seed, o.hidden, o.intermediate);
  const auto x = random_input(o.seed, o.tokens, o.hidden);
  ScratchTracker full_tracker;
  const Matrix full = block_forward_full(params, x, full_tracker);
  std::string out =
      "tokens,hidden,intermediate,chunk,max_rel_error,frobenius_error,full_peak_bytes,hybrid_peak_bytes,"
      "peak_ratio,peak_ratio_no_inplace,peak_ratio_no_prealloc\n";
  for (const auto chunk : parse_list<std::size_t>(o.chunks, "chunk")) {
    if (chunk == 0) throw ConfigError("chunk must be >= 1");
    ScratchTracker hybrid_tracker, no_inplace, no_prealloc;
    const Matrix hybrid = block_forward_hybrid(params, x, {chunk, true, true}, hybrid_tracker);
    block_forward_hybrid(params, x, {chunk, true, false}, no_inplace);
    block_forward_hybrid(params, x, {chunk, false, false}, no_prealloc);
    out += fmt::format("{},{},{},{},{:.6g},{:.6g},{},{},{:.6f},{:.6f},{:.6f}\n", o.tokens, o.hidden, o.intermediate,
                       chunk, max_relative_error(hybrid, full), relative_frobenius_error(hybrid, full),
                       full_tracker.peak(), hybrid_tracker.peak(), peak_ratio(full_tracker, hybrid_tracker),
                       peak_ratio(full_tracker, no_inplace), peak_ratio(full_tracker, no_prealloc));
  }
  return out;
}

struct TraceOptions {
  std::string trace = "post-rec";
  std::uint64_t seed = 42;
  double qps = 0.0;
  bool interleave_users = false;
  std::string out = "-";
};

std::string cmd_gen_trace(const TraceOptions& o) {
  Trace t = generate_trace(o.trace, o.seed);
  if (o.qps > 0.0) t = poisson_arrivals(t, o.qps, o.seed, {o.interleave_users});
  return trace_csv(t);
}

struct CalibrateOptions {
  std::string gpu = kDefaultGpu;
  std::string model;
  Tokens anchor = 0;
  std::string out = "-";
};

// Chunked-prefill anchor: chunk 512 at 20,000 tokens costs 14% of throughput.
constexpr Tokens kChunkAnchorTokens = 20000;
constexpr Tokens kChunkAnchorChunk = 512;
constexpr double kChunkAnchorLoss = 0.14;

std::string cmd_calibrate(const CalibrateOptions& o) {
  const auto gpu = load_gpu_preset(o.gpu);
  const std::string model_name = o.model.empty() ? gpu.paired_model : o.model;
  if (model_name.empty()) throw ConfigError(fmt::format("gpu preset '{}' names no paired model; pass --model", o.gpu));
  const auto model = load_model_preset(model_name);
  const Tokens anchor = o.anchor != 0 ? o.anchor : gpu.mil_anchor;
  if (anchor == 0) throw ConfigError("no MIL anchor; pass --anchor");
  const double factor = calibrate_act_overhead(model.geometry, gpu.gpu, anchor);
  const auto params = derive_cost_params(model.geometry, gpu.gpu, gpu.knobs);
  const double k = calibrate_chunk_penalty(params, kChunkAnchorTokens, kChunkAnchorChunk, kChunkAnchorLoss);
  return fmt::format("model,gpu,mil_anchor,act_overhead_factor,chunk_penalty_k\n{},{},{},{:.6f},{:.4f}\n",
                     model.geometry.name, gpu.gpu.name, anchor, factor, k);
}

void add_run_flags(CLI::App* sub, RunOptions& o) {
  sub->add_option("--model", o.model, "Model preset name or file")->capture_default_str();
  sub->add_option("--gpu", o.gpu, "GPU preset name or file")->capture_default_str();
  sub->add_option("--trace", o.trace, "post-rec, credit, or a trace CSV")->capture_default_str();
  sub->add_option("--seed", o.seed, "Seed for trace generation and arrivals")->capture_default_str();
  sub->add_option("--variant", o.variant, "prefillonly[:chunk] | paged | chunked[:chunk] | tp[:P] | pp[:P]")
      ->capture_default_str();
  sub->add_option("--policy", o.policy, "fifo | srjf | srjf-calibrated (default: the variant's native policy)");
  sub->add_option("--scoring", o.scoring, "proxy | profile")->capture_default_str();
  sub->add_option("--multipliers", o.multipliers, "Comma list of QPS multipliers of x")->capture_default_str();
  sub->add_option("--instances", o.instances, "Engine instances (default: 2 GPUs worth)");
  sub->add_option("--out", o.out, "Output file, - for stdout")->capture_default_str();
  sub->add_flag("--interleave-users", o.interleave_users, "Shuffle requests instead of user sessions");
  sub->add_option("--jct-profile", o.jct_profile, "Profile file written by fit-jct");
  sub->add_option("--qps", o.qps, "Use this reference rate x instead of measuring it");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Analytical model and simulator of prefill-only LLM serving", "prefillsim"};
  app.require_subcommand(1);

  std::string mil_model = kDefaultModel, mil_gpu = kDefaultGpu, mil_mode = "all", mil_out = "-";
  auto* mil = app.add_subcommand("mil", "Maximum input length per execution mode");
  mil->add_option("--model", mil_model)->capture_default_str();
  mil->add_option("--gpu", mil_gpu)->capture_default_str();
  mil->add_option("--mode", mil_mode, "all | full | kv-discard | chunked[:c] | hybrid[:c] | tp[:P] | pp[:P]")
      ->capture_default_str();
  mil->add_option("--out", mil_out)->capture_default_str();

  FitOptions fit_opts;
  auto* fit = app.add_subcommand("fit-jct", "Fit a linear JCT profile on the cost model");
  fit->add_option("--model", fit_opts.model)->capture_default_str();
  fit->add_option("--gpu", fit_opts.gpu)->capture_default_str();
  fit->add_option("--variant", fit_opts.variant)->capture_default_str();
  fit->add_option("--max-input", fit_opts.max_input, "Largest profiled input length")->capture_default_str();
  fit->add_option("--step", fit_opts.step, "Grid granularity in tokens")->capture_default_str();
  fit->add_option("--noise", fit_opts.noise, "Relative Gaussian latency noise")->capture_default_str();
  fit->add_option("--seed", fit_opts.seed)->capture_default_str();
  fit->add_option("--out", fit_opts.out)->capture_default_str();

  RunOptions sim_opts;
  auto* sim = app.add_subcommand("simulate", "QPS sweep of one engine configuration");
  add_run_flags(sim, sim_opts);
  sim->add_option("--lambda", sim_opts.lambda, "Starvation offset weight for srjf-calibrated");

  RunOptions sweep_opts;
  sweep_opts.scoring = "profile";
  sweep_opts.multipliers = "2";
  sweep_opts.instances = 1;
  auto* sweep = app.add_subcommand("lambda-sweep", "One srjf-calibrated run per lambda at a fixed QPS");
  add_run_flags(sweep, sweep_opts);
  sweep->add_option("--lambda", sweep_opts.lambda, "Comma list of lambdas (default 0,0.5,5)");

  NumericsOptions num_opts;
  auto* num = app.add_subcommand("verify-numerics", "Hybrid vs full forward on the toy block");
  num->add_option("--seed", num_opts.seed)->capture_default_str();
  num->add_option("--tokens", num_opts.tokens)->capture_default_str();
  num->add_option("--hidden", num_opts.hidden)->capture_default_str();
  num->add_option("--intermediate", num_opts.intermediate)->capture_default_str();
  num->add_option("--chunks", num_opts.chunks, "Comma list of chunk sizes")->capture_default_str();
  num->add_option("--out", num_opts.out)->capture_default_str();

  TraceOptions trace_opts;
  auto* gen = app.add_subcommand("gen-trace", "Write a trace CSV");
  gen->add_option("--trace", trace_opts.trace)->capture_default_str();
  gen->add_option("--seed", trace_opts.seed)->capture_default_str();
  gen->add_option("--qps", trace_opts.qps, "Poisson arrival rate; 0 keeps all arrivals at 0")->capture_default_str();
  gen->add_flag("--interleave-users", trace_opts.interleave_users);
  gen->add_option("--out", trace_opts.out)->capture_default_str();

  CalibrateOptions cal_opts;
  auto* cal = app.add_subcommand("calibrate", "Solve the memory and chunking knobs for a GPU preset");
  cal->add_option("--gpu", cal_opts.gpu)->capture_default_str();
  cal->add_option("--model", cal_opts.model, "Defaults to the GPU preset's paired model");
  cal->add_option("--anchor", cal_opts.anchor, "Full-prefill MIL target (default: preset anchor)");
  cal->add_option("--out", cal_opts.out)->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (mil->parsed()) {
      emit(mil_out, cmd_mil(mil_model, mil_gpu, mil_mode), out);
    } else if (fit->parsed()) {
      emit(fit_opts.out, cmd_fit_jct(fit_opts), out);
    } else if (sim->parsed()) {
      emit(sim_opts.out, cmd_simulate(sim_opts), out);
    } else if (sweep->parsed()) {
      emit(sweep_opts.out, cmd_lambda_sweep(sweep_opts), out);
    } else if (num->parsed()) {
      emit(num_opts.out, cmd_verify_numerics(num_opts), out);
    } else if (gen->parsed()) {
      emit(trace_opts.out, cmd_gen_trace(trace_opts), out);
    } else if (cal->parsed()) {
      emit(cal_opts.out, cmd_calibrate(cal_opts), out);
    }
  } catch (const CapacityError& e) {
    err << "capacity error: " << e.what() << "\n";
    return kCapacityError;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const FitError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  return kOk;
}

}  // namespace prefillsim::cli
