#pragma once

// Merged configuration for every subcommand: JSON config file first, then
// command-line flags on top. The resolved value is echoed into outputs.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "mground/lsp.hpp"
#include "mground/model.hpp"
#include "mground/smo.hpp"
#include "mground/synth.hpp"

namespace mground::cli {

struct RunConfig {
  SmoConfig smo;
  PretrainConfig pretrain;
  lsp::LspConfig lsp;
  SynthSpec synth;
  Decoder decoder = Decoder::kArgmax;
  int jobs = 1;
  nlohmann::json paths = nlohmann::json::object();

  void validate() const;
};

// Sections: "smo", "pretrain", "lsp", "synth", plus "decoder" and "jobs".
// Unknown keys and wrongly typed values raise kConfig.
void apply_config_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

void apply_synth_json(SynthSpec& spec, const nlohmann::json& j, const std::string& where);

nlohmann::json to_json(const SmoConfig& c);
nlohmann::json to_json(const PretrainConfig& c);
nlohmann::json to_json(const lsp::LspConfig& c);
nlohmann::json to_json(const SynthSpec& s);
nlohmann::json to_json(const RunConfig& c);

const char* to_string(Decoder d);
Decoder parse_decoder(const std::string& name);

}  // namespace mground::cli
