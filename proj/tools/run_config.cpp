#include "run_config.hpp"

#include <functional>
#include <map>

#include "mground/errors.hpp"
#include "mground/io.hpp"

namespace mground::cli {

using nlohmann::json;

namespace {

using Setter = std::function<void(const json&, const std::string&)>;

template <typename T>
Setter field(T& target) {
  return [&target](const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) fail(ErrorCode::kConfig, where + ": expected a number");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(ErrorCode::kConfig, where + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned() == false && v.get<long long>() < 0) {
          fail(ErrorCode::kConfig, where + ": expected a non-negative integer");
        }
      }
    } else {
      if (!v.is_string()) fail(ErrorCode::kConfig, where + ": expected a string");
    }
    target = v.get<T>();
  };
}

void apply(const json& obj, const std::string& section, const std::map<std::string, Setter>& fields) {
  if (!obj.is_object()) fail(ErrorCode::kConfig, "config " + section + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) fail(ErrorCode::kConfig, "config " + section + ": unknown key '" + key + "'");
    it->second(value, "config " + section + "/" + key);
  }
}

}  // namespace

void apply_synth_json(SynthSpec& s, const json& j, const std::string& where) {
  apply(j, where, {{"d", field(s.d)},
                   {"k", field(s.k)},
                   {"L", field(s.L)},
                   {"noise_sigma", field(s.noise_sigma)},
                   {"transition_width", field(s.transition_width)},
                   {"min_seg_len", field(s.min_seg_len)},
                   {"prototype_min_angle_deg", field(s.prototype_min_angle_deg)},
                   {"seed", field(s.seed)}});
}

void apply_config_json(RunConfig& cfg, const json& j) {
  if (!j.is_object()) fail(ErrorCode::kConfig, "config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "smo") {
      SmoConfig& c = cfg.smo;
      apply(value, "/smo", {{"alpha", field(c.alpha)},
                            {"beta", field(c.beta)},
                            {"gamma", field(c.gamma)},
                            {"tau", field(c.tau)},
                            {"steps", field(c.steps)},
                            {"lr", field(c.lr)},
                            {"init_jitter", field(c.init_jitter)},
                            {"seed", field(c.seed)}});
    } else if (key == "pretrain") {
      PretrainConfig& c = cfg.pretrain;
      apply(value, "/pretrain", {{"tau", field(c.tau)},
                                 {"steps", field(c.steps)},
                                 {"lr", field(c.lr)},
                                 {"batch", field(c.batch)},
                                 {"init_jitter", field(c.init_jitter)},
                                 {"seed", field(c.seed)}});
    } else if (key == "lsp") {
      lsp::LspConfig& c = cfg.lsp;
      std::string cache;
      apply(value, "/lsp", {{"n_paraphrases", field(c.n_paraphrases)},
                            {"max_retries", field(c.max_retries)},
                            {"timeout_seconds", field(c.timeout_seconds)},
                            {"max_in_flight", field(c.max_in_flight)},
                            {"cache_path", field(cache)}});
      if (!cache.empty()) c.cache_path = cache;
    } else if (key == "synth") {
      apply_synth_json(cfg.synth, value, "/synth");
    } else if (key == "decoder") {
      if (!value.is_string()) fail(ErrorCode::kConfig, "config /decoder: expected a string");
      cfg.decoder = parse_decoder(value.get<std::string>());
    } else if (key == "jobs") {
      field(cfg.jobs)(value, "config /jobs");
    } else {
      fail(ErrorCode::kConfig, "config: unknown section '" + key + "'");
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = io::read_json_file(path);
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, std::string("config: ") + e.what());
  }
  RunConfig cfg;
  apply_config_json(cfg, j);
  return cfg;
}

void RunConfig::validate() const {
  smo.validate();
  pretrain.validate();
  lsp.validate();
  synth.validate();
  if (jobs < 1) fail(ErrorCode::kConfig, "jobs must be >= 1");
}

json to_json(const SmoConfig& c) {
  return {{"alpha", c.alpha}, {"beta", c.beta}, {"gamma", c.gamma}, {"tau", c.tau},
          {"steps", c.steps}, {"lr", c.lr},     {"init_jitter", c.init_jitter}, {"seed", c.seed}};
}

json to_json(const PretrainConfig& c) {
  return {{"tau", c.tau},     {"steps", c.steps}, {"lr", c.lr},
          {"batch", c.batch}, {"init_jitter", c.init_jitter}, {"seed", c.seed}};
}

json to_json(const lsp::LspConfig& c) {
  return {{"n_paraphrases", c.n_paraphrases},
          {"max_retries", c.max_retries},
          {"timeout_seconds", c.timeout_seconds},
          {"max_in_flight", c.max_in_flight},
          {"cache_path", c.cache_path ? json(c.cache_path->string()) : json(nullptr)}};
}

json to_json(const SynthSpec& s) {
  return {{"d", s.d},
          {"k", s.k},
          {"L", s.L},
          {"noise_sigma", s.noise_sigma},
          {"transition_width", s.transition_width},
          {"min_seg_len", s.min_seg_len},
          {"prototype_min_angle_deg", s.prototype_min_angle_deg},
          {"seed", s.seed}};
}

json to_json(const RunConfig& c) {
  return {{"smo", to_json(c.smo)},          {"pretrain", to_json(c.pretrain)},
          {"lsp", to_json(c.lsp)},          {"synth", to_json(c.synth)},
          {"decoder", to_string(c.decoder)}, {"jobs", c.jobs},
          {"paths", c.paths}};
}

const char* to_string(Decoder d) { return d == Decoder::kOrdered ? "ordered" : "argmax"; }

Decoder parse_decoder(const std::string& name) {
  if (name == "argmax") return Decoder::kArgmax;
  if (name == "ordered") return Decoder::kOrdered;
  fail(ErrorCode::kConfig, "unknown decoder '" + name + "' (expected argmax or ordered)");
}

}  // namespace mground::cli
