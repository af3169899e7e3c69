#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "mground/eval.hpp"
#include "mground/io.hpp"
#include "mground/lsp.hpp"
#include "mground/synth.hpp"
#include "run_config.hpp"

namespace mground::cli {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(ErrorCode code, const std::string& command) {
  switch (code) {
    case ErrorCode::kDiverged:
    case ErrorCode::kNumerical:
    case ErrorCode::kDegeneratePooling:
      return kExitDiverged;
    case ErrorCode::kLspUnavailable:
    case ErrorCode::kParse:
      return kExitLsp;
    case ErrorCode::kValidation:
    case ErrorCode::kIo:
      return command == "eval" ? kExitEvalInput : kExitConfig;
    default:
      return kExitConfig;
  }
}

namespace {

void ensure_logger() {
  static std::once_flag once;
  std::call_once(once, [] {
    auto logger = spdlog::get("mground");
    if (!logger) logger = spdlog::stderr_logger_mt("mground");
    logger->set_pattern("mground: [%l] %v");
    spdlog::set_default_logger(logger);
  });
}

struct Common {
  std::string config_path;
  std::string log_level = "warn";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file; flags override its values")
      ->check(CLI::ExistingFile);
  sub->add_option("--log-level", c.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
}

RunConfig base_config(const Common& c) {
  spdlog::set_level(spdlog::level::from_str(c.log_level));
  return c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
}

// Assigns `value` to `target` only when the flag was given on the command line.
template <typename T, typename U>
void take(const CLI::Option* opt, T& target, const U& value) {
  if (opt->count() > 0) target = static_cast<T>(value);
}

json artifact_header(const RunConfig& cfg) {
  return {{"tool_version", io::tool_version()}, {"config", to_json(cfg)}};
}

std::vector<io::InstanceFile> load_instances(const std::vector<fs::path>& files) {
  std::vector<io::InstanceFile> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(io::load_instance(f));
  return out;
}

std::vector<fs::path> as_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::string spec_path;
  std::string out_dir;
  int count = 10;
  std::uint64_t seed = 0;
  int d = 0, k = 0, L = 0, min_seg_len = 0, transition_width = 0;
  double noise = 0.0;
  std::string frames = "inline";
  CLI::Option *o_seed, *o_d, *o_k, *o_L, *o_min, *o_tw, *o_noise;
};

int cmd_synth(const SynthArgs& a, std::ostream&, std::ostream& err) {
  RunConfig cfg = base_config(a.common);
  if (!a.spec_path.empty()) {
    json spec;
    try {
      spec = io::read_json_file(a.spec_path);
    } catch (const Error& e) {
      fail(ErrorCode::kConfig, std::string("spec: ") + e.what());
    }
    apply_synth_json(cfg.synth, spec, a.spec_path);
  }
  take(a.o_seed, cfg.synth.seed, a.seed);
  take(a.o_d, cfg.synth.d, a.d);
  take(a.o_k, cfg.synth.k, a.k);
  take(a.o_L, cfg.synth.L, a.L);
  take(a.o_min, cfg.synth.min_seg_len, a.min_seg_len);
  take(a.o_tw, cfg.synth.transition_width, a.transition_width);
  take(a.o_noise, cfg.synth.noise_sigma, a.noise);
  if (a.count < 1) fail(ErrorCode::kConfig, "synth: --count must be >= 1");
  cfg.synth.validate();
  cfg.paths = {{"out", a.out_dir}};

  const io::FrameStorage storage = a.frames == "f32"   ? io::FrameStorage::kBinary32
                                   : a.frames == "f64" ? io::FrameStorage::kBinary64
                                                       : io::FrameStorage::kInline;
  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) fail(ErrorCode::kIo, "synth: cannot create " + a.out_dir + ": " + ec.message());

  json files = json::array();
  for (int i = 0; i < a.count; ++i) {
    const SynthInstance inst = generate_indexed(cfg.synth, static_cast<std::uint64_t>(i));
    io::InstanceFile file = io::instance_from_synth(inst);
    file.meta = {{"tool_version", io::tool_version()}, {"synth", to_json(cfg.synth)}, {"index", i}};
    const std::string name = inst.id + ".json";
    io::save_instance(file, fs::path(a.out_dir) / name, storage);
    files.push_back(name);
  }
  json manifest = artifact_header(cfg);
  manifest["count"] = a.count;
  manifest["files"] = std::move(files);
  io::write_json_file(fs::path(a.out_dir) / "manifest.json", manifest);
  err << "wrote " << a.count << " instances to " << a.out_dir << "\n";
  return kExitOk;
}

// ---- pretrain ------------------------------------------------------------

struct PretrainArgs {
  Common common;
  std::vector<std::string> data;
  std::string out_weights;
  std::string loss_csv;
  double tau = 0.0, lr = 0.0;
  int steps = 0, batch = 0;
  std::uint64_t seed = 0;
  CLI::Option *o_tau, *o_lr, *o_steps, *o_batch, *o_seed;
};

std::vector<PretrainPair> pretrain_pairs(const std::vector<io::InstanceFile>& instances) {
  std::vector<PretrainPair> pairs;
  for (const auto& inst : instances) {
    Vec mean(inst.dim());
    for (const auto& q : inst.queries) axpy(1.0, q.embedding.vec(), mean.span());
    if (norm(mean) <= 1e-12) {
      fail(ErrorCode::kInvalidInput, "pretrain: query embeddings of '" + inst.id + "' cancel out");
    }
    pairs.push_back({inst.frames, TextEmbedding(l2_normalize(mean).span())});
  }
  return pairs;
}

int cmd_pretrain(const PretrainArgs& a, std::ostream&, std::ostream& err) {
  RunConfig cfg = base_config(a.common);
  take(a.o_tau, cfg.pretrain.tau, a.tau);
  take(a.o_lr, cfg.pretrain.lr, a.lr);
  take(a.o_steps, cfg.pretrain.steps, a.steps);
  take(a.o_batch, cfg.pretrain.batch, a.batch);
  take(a.o_seed, cfg.pretrain.seed, a.seed);
  cfg.pretrain.validate();
  fs::path loss_csv = a.loss_csv;
  if (loss_csv.empty()) loss_csv = fs::path(a.out_weights).replace_extension(".loss.csv");
  cfg.paths = {{"data", a.data}, {"out_weights", a.out_weights}, {"loss_csv", loss_csv.string()}};

  const auto files = io::expand_instance_paths(as_paths(a.data));
  if (files.size() < 2) fail(ErrorCode::kConfig, "pretrain: need at least two instances");
  const auto pairs = pretrain_pairs(load_instances(files));
  const PretrainResult res = pretrain(pairs, cfg.pretrain);
  const double r1 = retrieval_recall_at_1(res.params, pairs);

  io::WeightsFile w;
  w.params = res.params;
  w.meta = artifact_header(cfg);
  w.meta["seed"] = cfg.pretrain.seed;
  w.meta["steps"] = cfg.pretrain.steps;
  w.meta["tau"] = cfg.pretrain.tau;
  w.meta["pairs"] = pairs.size();
  w.meta["initial_loss"] = res.initial_loss;
  w.meta["final_loss"] = res.final_loss;
  w.meta["recall_at_1"] = r1;
  w.meta["loss_csv"] = loss_csv.string();
  io::save_weights(w, a.out_weights);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t s = 0; s < res.loss_trace.size(); ++s) {
    rows.push_back({std::to_string(s + 1), io::format_double(res.loss_trace[s])});
  }
  io::write_csv(loss_csv, {"step", "loss"}, rows);
  err << "pretrained on " << pairs.size() << " pairs: loss " << fixed(res.initial_loss, 4) << " -> "
      << fixed(res.final_loss, 4) << ", R@1 " << fixed(r1, 3) << "\n";
  return kExitOk;
}

// ---- decompose -----------------------------------------------------------

struct DecomposeArgs {
  Common common;
  std::string text;
  std::string file;
  std::string client = "http";
  std::string mock_table;
  int n_paraphrases = 0, max_in_flight = 0, max_retries = 0;
  double timeout = 0.0;
  std::string cache_dir;
  bool fallback_rules = false;
  std::string out;
  CLI::Option *o_n, *o_inflight, *o_retries, *o_timeout, *o_cache;
};

int cmd_decompose(const DecomposeArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = base_config(a.common);
  take(a.o_n, cfg.lsp.n_paraphrases, a.n_paraphrases);
  take(a.o_inflight, cfg.lsp.max_in_flight, a.max_in_flight);
  take(a.o_retries, cfg.lsp.max_retries, a.max_retries);
  take(a.o_timeout, cfg.lsp.timeout_seconds, a.timeout);
  if (a.o_cache->count() > 0) cfg.lsp.cache_path = a.cache_dir;
  cfg.lsp.validate();

  std::vector<std::string> texts;
  if (!a.text.empty()) texts.push_back(a.text);
  if (!a.file.empty()) {
    std::ifstream in(a.file);
    if (!in) fail(ErrorCode::kConfig, "decompose: cannot open " + a.file);
    for (std::string line; std::getline(in, line);) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) texts.push_back(line);
    }
  }
  if (texts.empty()) fail(ErrorCode::kConfig, "decompose: give --text or a non-empty --file");

  std::unique_ptr<lsp::LlmClient> client;
  if (a.client == "mock") {
    lsp::MockClient::Table table;
    if (!a.mock_table.empty()) table = lsp::MockClient::table_from_json(io::read_json_file(a.mock_table));
    client = std::make_unique<lsp::MockClient>(std::move(table));
  } else if (a.client == "http") {
    lsp::HttpClientOptions opts;
    opts.max_retries = cfg.lsp.max_retries;
    opts.timeout_seconds = cfg.lsp.timeout_seconds;
    client = std::make_unique<lsp::HttpChatClient>(lsp::HttpChatClient::options_from_env(opts));
  }
  cfg.paths = {{"client", a.client}};

  json results = json::array();
  for (const std::string& text : texts) {
    lsp::DecompositionResult r;
    if (!client) {
      r = lsp::decompose_rule_based(text);
    } else {
      try {
        r = lsp::decompose_with_voting(*client, text, cfg.lsp);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kLspUnavailable || !a.fallback_rules) throw;
        spdlog::warn("{}; using the rule-based split", e.what());
        r = lsp::decompose_rule_based(text);
      }
    }
    results.push_back({{"text", text}, {"result", lsp::result_to_json(r)}});
  }
  json doc = artifact_header(cfg);
  doc["decompositions"] = std::move(results);
  if (a.out.empty()) {
    out << doc.dump(2) << "\n";
  } else {
    io::write_json_file(a.out, doc);
    err << "wrote " << texts.size() << " decompositions to " << a.out << "\n";
  }
  return kExitOk;
}

// ---- ground --------------------------------------------------------------

struct GroundArgs {
  Common common;
  std::string weights;
  std::vector<std::string> instances;
  std::string out;
  double alpha = 0, beta = 0, gamma = 0, tau = 0, lr = 0;
  int steps = 0, jobs = 1;
  std::uint64_t seed = 0;
  std::string decoder = "argmax";
  std::string trace_dir;
  bool append = false;
  CLI::Option *o_alpha, *o_beta, *o_gamma, *o_tau, *o_lr, *o_steps, *o_seed, *o_jobs, *o_decoder;
};

struct GroundOutcome {
  std::optional<json> record;
  std::string error;
  ErrorCode code = ErrorCode::kInvalidInput;
  std::size_t param_count = 0;
};

GroundOutcome ground_one(const fs::path& file, const AttentionPoolParams& params, const RunConfig& cfg,
                         const std::string& trace_dir) {
  GroundOutcome o;
  try {
    const io::InstanceFile inst = io::load_instance(file);
    if (inst.dim() != params.dim()) {
      fail(ErrorCode::kShape, "feature dim " + std::to_string(inst.dim()) + " does not match weights dim " +
                                  std::to_string(params.dim()));
    }
    const auto queries = inst.query_embeddings();
    const GroundingResult res = optimize_masks(params, inst.frames, queries, cfg.smo, cfg.decoder);
    std::optional<std::string> trace_path;
    if (!trace_dir.empty()) {
      trace_path = (fs::path(trace_dir) / (inst.id + ".csv")).string();
      io::write_loss_trace_csv(*trace_path, res.loss_trace);
    }
    o.record = io::result_to_json(io::make_result_record(inst.id, res, trace_path));
    o.param_count = res.param_count;
  } catch (const Error& e) {
    const std::string msg = e.what();
    o.error = msg.rfind(file.string(), 0) == 0 ? msg : file.string() + ": " + msg;
    o.code = e.code();
  }
  return o;
}

int cmd_ground(const GroundArgs& a, std::ostream&, std::ostream& err) {
  RunConfig cfg = base_config(a.common);
  take(a.o_alpha, cfg.smo.alpha, a.alpha);
  take(a.o_beta, cfg.smo.beta, a.beta);
  take(a.o_gamma, cfg.smo.gamma, a.gamma);
  take(a.o_tau, cfg.smo.tau, a.tau);
  take(a.o_lr, cfg.smo.lr, a.lr);
  take(a.o_steps, cfg.smo.steps, a.steps);
  take(a.o_seed, cfg.smo.seed, a.seed);
  take(a.o_jobs, cfg.jobs, a.jobs);
  if (a.o_decoder->count() > 0) cfg.decoder = parse_decoder(a.decoder);
  cfg.smo.validate();
  if (cfg.jobs < 1) fail(ErrorCode::kConfig, "ground: --jobs must be >= 1");
  cfg.paths = {{"weights", a.weights}, {"instances", a.instances}, {"out", a.out}};
  if (!a.trace_dir.empty()) cfg.paths["trace_dir"] = a.trace_dir;

  const io::WeightsFile w = io::load_weights(a.weights);
  w.params.validate();
  const auto files = io::expand_instance_paths(as_paths(a.instances));
  if (files.empty()) fail(ErrorCode::kConfig, "ground: no instance files found");
  if (!a.trace_dir.empty()) {
    std::error_code ec;
    fs::create_directories(a.trace_dir, ec);
    if (ec) fail(ErrorCode::kIo, "ground: cannot create " + a.trace_dir + ": " + ec.message());
  }

  const auto t0 = std::chrono::steady_clock::now();
  io::JsonlWriter writer(a.out, !a.append);
  const std::size_t n = files.size();
  std::vector<std::optional<GroundOutcome>> slots(n);
  std::mutex mu;
  std::condition_variable ready;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      GroundOutcome o = ground_one(files[i], w.params, cfg, a.trace_dir);
      {
        std::lock_guard lock(mu);
        slots[i] = std::move(o);
      }
      ready.notify_all();
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);

  std::size_t ok = 0;
  std::size_t param_total = 0;
  std::optional<ErrorCode> first_code;
  json failures = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    std::unique_lock lock(mu);
    ready.wait(lock, [&] { return slots[i].has_value(); });
    GroundOutcome o = std::move(*slots[i]);
    slots[i].reset();
    lock.unlock();
    if (o.record) {
      writer.append(*o.record);
      ++ok;
      param_total += o.param_count;
    } else {
      spdlog::error("{}", o.error);
      failures.push_back({{"path", files[i].string()}, {"error", o.error}});
      if (!first_code) first_code = o.code;
    }
  }
  for (auto& t : pool) t.join();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json manifest = artifact_header(cfg);
  manifest["weights_meta"] = {{"seed", w.meta.value("seed", json())}, {"steps", w.meta.value("steps", json())},
                              {"tau", w.meta.value("tau", json())}};
  manifest["instances"] = n;
  manifest["grounded"] = ok;
  manifest["failures"] = std::move(failures);
  io::write_json_file(a.out + ".manifest.json", manifest);

  const double mean_params = ok ? static_cast<double>(param_total) / static_cast<double>(ok) : 0.0;
  err << "grounded " << ok << "/" << n << " instances in " << fixed(secs, 3) << " s ("
      << fixed(static_cast<double>(n) / std::max(secs, 1e-9), 1) << " instances/s); mean param_count "
      << fixed(mean_params, 1) << "\n";
  if (ok == 0) return exit_code_for(*first_code, "ground");
  return kExitOk;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string results;
  std::vector<std::string> instances;
  std::string thresholds = "0.3:0.1:0.8";
  std::string report;
  std::string matches_csv;
  std::string similarity_csv;
  std::string weights;
  std::string method = "smo";
  bool include_fragments = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = base_config(a.common);
  const std::vector<double> thresholds = parse_threshold_range(a.thresholds);
  if (!a.similarity_csv.empty() && a.weights.empty()) {
    fail(ErrorCode::kConfig, "eval: --similarity-csv needs --weights");
  }
  cfg.paths = {{"results", a.results}, {"instances", a.instances}, {"thresholds", a.thresholds}};

  const auto records = io::load_results(a.results);
  const auto instances = load_instances(io::expand_instance_paths(as_paths(a.instances)));
  std::map<std::string, const io::InstanceFile*> by_id;
  std::vector<GroundTruth> gts;
  for (const auto& inst : instances) {
    if (!inst.gt_segments) fail(ErrorCode::kValidation, "eval: instance '" + inst.id + "' has no gt_segments");
    if (!by_id.emplace(inst.id, &inst).second) fail(ErrorCode::kValidation, "eval: duplicate instance id '" + inst.id + "'");
    for (const auto& g : *inst.gt_segments) gts.push_back({inst.id, g});
  }
  if (gts.empty()) fail(ErrorCode::kValidation, "eval: no ground-truth segments");

  std::vector<Prediction> preds;
  std::map<std::string, const io::ResultRecord*> result_by_id;
  for (const auto& r : records) {
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) fail(ErrorCode::kValidation, "eval: result '" + r.id + "' has no matching instance");
    if (r.L != static_cast<int>(it->second->frames.frames()) ||
        r.k != static_cast<int>(it->second->queries.size())) {
      fail(ErrorCode::kValidation, "eval: result '" + r.id + "' disagrees with its instance on k or L");
    }
    if (!result_by_id.emplace(r.id, &r).second) fail(ErrorCode::kValidation, "eval: duplicate result '" + r.id + "'");
    for (const auto& s : r.segments) preds.push_back({r.id, s});
    if (a.include_fragments) {
      for (const auto& s : r.fragments) preds.push_back({r.id, s});
    }
  }
  for (const auto& [id, inst] : by_id) {
    if (!result_by_id.count(id)) spdlog::warn("instance '{}' has no result; its spans count as misses", id);
  }

  const EvalReport report = mean_ap(preds, gts, thresholds);
  json doc = artifact_header(cfg);
  doc.update(io::eval_report_to_json(report));

  if (!a.similarity_csv.empty()) {
    const io::WeightsFile w = io::load_weights(a.weights);
    std::vector<SimilarityInput> inputs;
    for (const auto& [id, rec] : result_by_id) {
      const io::InstanceFile& inst = *by_id.at(id);
      if (inst.dim() != w.params.dim()) fail(ErrorCode::kValidation, "eval: weights dim does not match '" + id + "'");
      inputs.push_back({id, inst.frames, inst.query_embeddings(), rec->segments});
    }
    const SimilarityReport sim = semantic_similarity_report(w.params, inputs, a.method);
    for (const auto& note : sim.notes) spdlog::info("{}", note);
    io::write_similarity_csv(a.similarity_csv, sim);
    doc["similarity"] = io::similarity_summary_to_json(sim);
    doc["similarity_notes"] = sim.notes;
  }
  if (!a.matches_csv.empty()) io::write_matches_csv(a.matches_csv, report.per_instance);
  if (!a.report.empty()) io::write_json_file(a.report, doc);

  for (std::size_t i = 0; i < report.thresholds.size(); ++i) {
    out << "AP@" << io::format_double(report.thresholds[i]) << " " << fixed(report.ap_per_threshold[i], 4) << "\n";
  }
  out << "mAP " << fixed(report.map_mean, 4) << "\n";
  err << "evaluated " << records.size() << " results against " << gts.size() << " ground-truth spans\n";
  return kExitOk;
}

// ---- gradcheck -----------------------------------------------------------

struct GradcheckArgs {
  Common common;
  std::uint64_t seed = 0;
  int trials = 20;
  double h = 1e-5;
  double perturb = 0.0;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream&) {
  base_config(a.common);
  if (a.trials < 1) fail(ErrorCode::kConfig, "gradcheck: --trials must be >= 1");
  const GradCheckReport r = run_gradcheck(a.seed, a.trials, a.h, a.perturb);
  const bool pass = r.max_rel_error < 1e-4;
  char line[256];
  std::snprintf(line, sizeof(line), "gradcheck: %d trials, max relative error %.3e", r.trials, r.max_rel_error);
  out << line << "\n";
  std::snprintf(line, sizeof(line), "worst: trial %d, M[%zu,%zu], analytic %.10e, numeric %.10e", r.worst_trial,
                r.worst_row, r.worst_col, r.worst_analytic, r.worst_numeric);
  out << line << "\n" << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? kExitOk : kExitGradcheck;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  ensure_logger();
  CLI::App app{"Test-time motion grounding: split a description into sub-actions and locate them in a motion sequence.",
               "mground"};
  app.require_subcommand(1);
  app.set_version_flag("--version", io::tool_version());

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate synthetic instances with planted segments");
  add_common(s, synth.common);
  s->add_option("--spec", synth.spec_path, "JSON file with synth fields")->check(CLI::ExistingFile);
  s->add_option("--out", synth.out_dir, "Output directory")->required();
  s->add_option("--count", synth.count, "Number of instances")->capture_default_str();
  synth.o_seed = s->add_option("--seed", synth.seed, "Generator seed");
  synth.o_d = s->add_option("--d", synth.d, "Feature dimension");
  synth.o_k = s->add_option("--k", synth.k, "Sub-actions per instance");
  synth.o_L = s->add_option("--L", synth.L, "Frames per instance");
  synth.o_min = s->add_option("--min-seg-len", synth.min_seg_len, "Shortest planted segment");
  synth.o_tw = s->add_option("--transition-width", synth.transition_width, "Cross-fade frames at boundaries");
  synth.o_noise = s->add_option("--noise", synth.noise, "Gaussian noise sigma");
  s->add_option("--frames", synth.frames, "Frame storage")
      ->check(CLI::IsMember({"inline", "f32", "f64"}))
      ->capture_default_str();

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Train the attention pool on instance files");
  add_common(p, pre.common);
  p->add_option("--data", pre.data, "Instance files, directories or manifests")->required();
  p->add_option("--out-weights", pre.out_weights, "Weights JSON to write")->required();
  p->add_option("--loss-csv", pre.loss_csv, "Per-step loss CSV (default: <weights>.loss.csv)");
  pre.o_tau = p->add_option("--tau", pre.tau, "Contrastive temperature");
  pre.o_steps = p->add_option("--steps", pre.steps, "Optimizer steps");
  pre.o_lr = p->add_option("--lr", pre.lr, "Adam learning rate");
  pre.o_batch = p->add_option("--batch", pre.batch, "Minibatch size");
  pre.o_seed = p->add_option("--seed", pre.seed, "Initialization and shuffling seed");

  DecomposeArgs dec;
  auto* d = app.add_subcommand("decompose", "Split descriptions into ordered sub-actions");
  add_common(d, dec.common);
  auto* o_text = d->add_option("--text", dec.text, "Description to split");
  auto* o_file = d->add_option("--file", dec.file, "File with one description per line")->check(CLI::ExistingFile);
  o_text->excludes(o_file);
  d->add_option("--client", dec.client, "LLM backend")
      ->check(CLI::IsMember({"http", "mock", "rules"}))
      ->capture_default_str();
  d->add_option("--mock-table", dec.mock_table, "JSON reply table for --client mock")->check(CLI::ExistingFile);
  dec.o_n = d->add_option("--n-paraphrases", dec.n_paraphrases, "Paraphrase ballots besides the original");
  dec.o_inflight = d->add_option("--max-in-flight", dec.max_in_flight, "Concurrent paraphrase ballots");
  dec.o_retries = d->add_option("--max-retries", dec.max_retries, "HTTP retries per request");
  dec.o_timeout = d->add_option("--timeout", dec.timeout, "HTTP timeout in seconds");
  dec.o_cache = d->add_option("--cache-dir", dec.cache_dir, "Decomposition cache directory");
  d->add_flag("--fallback-rules", dec.fallback_rules, "Use the rule-based split when the LLM is unavailable");
  d->add_option("--out", dec.out, "Write JSON here instead of stdout");

  GroundArgs gr;
  auto* g = app.add_subcommand("ground", "Optimize soft masks per instance and decode segments");
  add_common(g, gr.common);
  g->add_option("--weights", gr.weights, "Weights JSON")->required()->check(CLI::ExistingFile);
  g->add_option("--instances", gr.instances, "Instance files, directories or manifests")->required();
  g->add_option("--out", gr.out, "Results JSONL")->required();
  gr.o_alpha = g->add_option("--alpha", gr.alpha, "Alignment weight");
  gr.o_beta = g->add_option("--beta", gr.beta, "Exclusivity weight");
  gr.o_gamma = g->add_option("--gamma", gr.gamma, "Smoothness weight");
  gr.o_tau = g->add_option("--tau", gr.tau, "Contrastive temperature");
  gr.o_steps = g->add_option("--steps", gr.steps, "Optimizer steps per instance");
  gr.o_lr = g->add_option("--lr", gr.lr, "Adam learning rate");
  gr.o_seed = g->add_option("--seed", gr.seed, "Mask initialization seed");
  gr.o_decoder = g->add_option("--decoder", gr.decoder, "Segment decoder")->check(CLI::IsMember({"argmax", "ordered"}));
  gr.o_jobs = g->add_option("--jobs", gr.jobs, "Instances optimized in parallel");
  g->add_option("--trace-dir", gr.trace_dir, "Write one loss-trace CSV per instance here");
  g->add_flag("--append", gr.append, "Append to --out instead of truncating it");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score grounded segments against ground truth");
  add_common(e, ev.common);
  e->add_option("--results", ev.results, "Results JSONL")->required()->check(CLI::ExistingFile);
  e->add_option("--instances", ev.instances, "Instance files, directories or manifests")->required();
  e->add_option("--thresholds", ev.thresholds, "IoU thresholds as start:step:end")->capture_default_str();
  e->add_option("--report", ev.report, "EvalReport JSON");
  e->add_option("--matches-csv", ev.matches_csv, "Per ground-truth span match CSV");
  e->add_option("--similarity-csv", ev.similarity_csv, "Segment/query cosine similarity CSV");
  e->add_option("--weights", ev.weights, "Weights JSON for the similarity report")->check(CLI::ExistingFile);
  e->add_option("--method", ev.method, "Method label for similarity rows")->capture_default_str();
  e->add_flag("--include-fragments", ev.include_fragments, "Score fragments as extra predictions");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Compare analytic and finite-difference mask gradients");
  c->set_help_flag("--help", "Print this help message and exit");  // frees -h-style "h" for --h
  add_common(c, gc.common);
  c->add_option("--seed", gc.seed, "Trial seed")->capture_default_str();
  c->add_option("--trials", gc.trials, "Random trials")->capture_default_str();
  c->add_option("--h", gc.h, "Central-difference step")->capture_default_str();
  c->add_option("--perturb", gc.perturb)->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "synth") return cmd_synth(synth, out, err);
    if (command == "pretrain") return cmd_pretrain(pre, out, err);
    if (command == "decompose") return cmd_decompose(dec, out, err);
    if (command == "ground") return cmd_ground(gr, out, err);
    if (command == "eval") return cmd_eval(ev, out, err);
    if (command == "gradcheck") return cmd_gradcheck(gc, out, err);
  } catch (const Error& ex) {
    err << "mground " << command << ": error: " << ex.what() << "\n";
    return exit_code_for(ex.code(), command);
  } catch (const std::exception& ex) {
    err << "mground " << command << ": error: " << ex.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace mground::cli
