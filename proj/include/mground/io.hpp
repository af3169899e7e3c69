#pragma once

// File schemas: instance JSON (inline or raw binary frames), weights JSON,
// JSONL result records and CSV reports. Loaders validate everything and name
// the offending field with a JSON pointer.

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mground/eval.hpp"
#include "mground/model.hpp"
#include "mground/smo.hpp"
#include "mground/synth.hpp"

namespace mground::io {

std::string tool_version();

enum class FrameStorage { kInline, kBinary32, kBinary64 };

struct QueryEntry {
  std::string text;
  TextEmbedding embedding;
};

struct InstanceFile {
  std::string id;
  std::string text;
  FrameFeatures frames;
  std::vector<QueryEntry> queries;  // temporal order
  std::optional<std::vector<GtSegment>> gt_segments;
  nlohmann::json meta;  // free-form provenance, written only when set

  std::size_t dim() const noexcept { return frames.dim(); }
  std::vector<TextEmbedding> query_embeddings() const;
};

InstanceFile instance_from_synth(const SynthInstance& inst);

// base_dir resolves relative "frames_bin" paths.
InstanceFile instance_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
InstanceFile load_instance(const std::filesystem::path& path);

// kBinary* writes the frames next to `path` as <stem>.f32 / <stem>.f64.
void save_instance(const InstanceFile& inst, const std::filesystem::path& path,
                   FrameStorage storage = FrameStorage::kInline);

// Expands a mix of instance files, directories (every *.json except
// manifest.json, sorted) and manifests (their "files" list).
std::vector<std::filesystem::path> expand_instance_paths(
    const std::vector<std::filesystem::path>& inputs);

struct WeightsFile {
  AttentionPoolParams params;
  nlohmann::json meta;  // at least {"seed", "steps", "tau"}
};

nlohmann::json weights_to_json(const WeightsFile& w);
WeightsFile weights_from_json(const nlohmann::json& j);
void save_weights(const WeightsFile& w, const std::filesystem::path& path);
WeightsFile load_weights(const std::filesystem::path& path);

struct ResultRecord {
  std::string id;
  int k = 0;
  int L = 0;
  std::size_t param_count = 0;
  std::vector<int> labels;
  std::vector<Segment> segments;
  std::vector<Segment> fragments;
  std::vector<int> absent_queries;
  std::optional<std::string> loss_trace_path;
  LossBreakdown final_loss;
  int steps_run = 0;
};

ResultRecord make_result_record(const std::string& id, const GroundingResult& result,
                                std::optional<std::string> trace_path = std::nullopt);
nlohmann::json result_to_json(const ResultRecord& r);
ResultRecord result_from_json(const nlohmann::json& j, const std::string& where = "");
std::vector<ResultRecord> load_results(const std::filesystem::path& path);

// Appends one JSON value per line. Each record, newline included, goes out in
// a single write(2) on an O_APPEND descriptor, so a crash never leaves a
// partial line behind a complete one. Safe to share between threads.
class JsonlWriter {
 public:
  JsonlWriter(const std::filesystem::path& path, bool truncate);
  ~JsonlWriter();
  JsonlWriter(const JsonlWriter&) = delete;
  JsonlWriter& operator=(const JsonlWriter&) = delete;

  void append(const nlohmann::json& record);

 private:
  std::mutex mu_;
  int fd_ = -1;
  std::filesystem::path path_;
};

// Shortest decimal that round-trips the double.
std::string format_double(double v);

// RFC 4180 field quoting.
std::string csv_field(std::string_view s);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

void write_loss_trace_csv(const std::filesystem::path& path,
                          const std::vector<LossBreakdown>& trace);
void write_similarity_csv(const std::filesystem::path& path, const SimilarityReport& report);
void write_matches_csv(const std::filesystem::path& path, const std::vector<MatchRecord>& records);

nlohmann::json loss_to_json(const LossBreakdown& l);
nlohmann::json eval_report_to_json(const EvalReport& report);
nlohmann::json similarity_summary_to_json(const SimilarityReport& report);

// Serializes with 2-space indent and a trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace mground::io
