#include "mground/io.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mground/errors.hpp"

namespace mground::io {

using nlohmann::json;
namespace fs = std::filesystem;

std::string tool_version() { return std::string("mground ") + MGROUND_VERSION; }

namespace {

[[noreturn]] void invalid(const std::string& pointer, const std::string& message) {
  fail(ErrorCode::kValidation, (pointer.empty() ? std::string("/") : pointer) + ": " + message);
}

const json& require(const json& obj, const std::string& key, const std::string& pointer) {
  if (!obj.is_object()) invalid(pointer, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) invalid(pointer + "/" + key, "missing required field");
  return *it;
}

double as_number(const json& v, const std::string& pointer) {
  if (!v.is_number()) invalid(pointer, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) invalid(pointer, "non-finite number");
  return x;
}

std::int64_t as_int(const json& v, const std::string& pointer) {
  if (!v.is_number_integer()) invalid(pointer, "expected an integer");
  return v.get<std::int64_t>();
}

std::string as_string(const json& v, const std::string& pointer) {
  if (!v.is_string()) invalid(pointer, "expected a string");
  return v.get<std::string>();
}

const json& as_array(const json& v, const std::string& pointer) {
  if (!v.is_array()) invalid(pointer, "expected an array");
  return v;
}

std::vector<double> number_array(const json& v, const std::string& pointer,
                                 std::optional<std::size_t> expected_len) {
  as_array(v, pointer);
  if (expected_len && v.size() != *expected_len) {
    invalid(pointer, "expected " + std::to_string(*expected_len) + " values, found " +
                         std::to_string(v.size()));
  }
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], pointer + "/" + std::to_string(i)));
  return out;
}

Mat matrix_from_json(const json& v, const std::string& pointer, std::size_t cols) {
  as_array(v, pointer);
  Mat m(v.size(), cols);
  for (std::size_t r = 0; r < v.size(); ++r) {
    const auto row = number_array(v[r], pointer + "/" + std::to_string(r), cols);
    std::copy(row.begin(), row.end(), m.row(r).begin());
  }
  return m;
}

json matrix_to_json(const Mat& m) { return m.to_rows(); }

Mat read_binary_frames(const fs::path& file, std::size_t rows, std::size_t cols, int width,
                       const std::string& pointer) {
  std::ifstream in(file, std::ios::binary);
  if (!in) invalid(pointer, "cannot open frames file " + file.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t elem = static_cast<std::size_t>(width / 8);
  if (bytes.size() != rows * cols * elem) {
    invalid(pointer, "frames file " + file.string() + " has " + std::to_string(bytes.size()) +
                         " bytes, expected " + std::to_string(rows * cols * elem));
  }
  Mat m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    std::uint64_t word = 0;
    for (std::size_t b = 0; b < elem; ++b) word |= static_cast<std::uint64_t>(bytes[i * elem + b]) << (8 * b);
    m.flat()[i] = width == 32 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(word)))
                              : std::bit_cast<double>(word);
  }
  if (!all_finite(m.flat())) invalid(pointer, "frames file contains NaN or Inf");
  return m;
}

void write_binary_frames(const fs::path& file, const Mat& m, int width) {
  std::vector<unsigned char> bytes;
  const std::size_t elem = static_cast<std::size_t>(width / 8);
  bytes.reserve(m.size() * elem);
  for (double v : m.flat()) {
    const std::uint64_t word = width == 32
                                   ? std::bit_cast<std::uint32_t>(static_cast<float>(v))
                                   : std::bit_cast<std::uint64_t>(v);
    for (std::size_t b = 0; b < elem; ++b) bytes.push_back(static_cast<unsigned char>(word >> (8 * b)));
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for " + file.string());
}

json segment_to_json(const Segment& s) {
  return {{"query_idx", s.query_idx}, {"start", s.start}, {"end", s.end}, {"confidence", s.confidence}};
}

Segment segment_from_json(const json& j, const std::string& pointer) {
  Segment s;
  s.query_idx = static_cast<int>(as_int(require(j, "query_idx", pointer), pointer + "/query_idx"));
  s.start = static_cast<int>(as_int(require(j, "start", pointer), pointer + "/start"));
  s.end = static_cast<int>(as_int(require(j, "end", pointer), pointer + "/end"));
  s.confidence = as_number(require(j, "confidence", pointer), pointer + "/confidence");
  if (s.start < 0 || s.end <= s.start) invalid(pointer, "segment must satisfy 0 <= start < end");
  return s;
}

}  // namespace

std::vector<TextEmbedding> InstanceFile::query_embeddings() const {
  std::vector<TextEmbedding> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(q.embedding);
  return out;
}

InstanceFile instance_from_synth(const SynthInstance& inst) {
  InstanceFile f;
  f.id = inst.id;
  f.text = inst.text;
  f.frames = inst.features;
  for (std::size_t i = 0; i < inst.queries.size(); ++i) f.queries.push_back({inst.query_texts[i], inst.queries[i]});
  f.gt_segments = inst.gt;
  return f;
}

InstanceFile instance_from_json(const json& j, const fs::path& base_dir) {
  InstanceFile f;
  f.id = as_string(require(j, "id", ""), "/id");
  f.text = as_string(require(j, "text", ""), "/text");
  const std::int64_t dim = as_int(require(j, "dim", ""), "/dim");
  if (dim < 1) invalid("/dim", "must be >= 1");
  const auto d = static_cast<std::size_t>(dim);

  const json& frames = require(j, "frames", "");
  Mat m;
  if (frames.is_array()) {
    m = matrix_from_json(frames, "/frames", d);
  } else if (frames.is_object()) {
    const fs::path bin = as_string(require(frames, "frames_bin", "/frames"), "/frames/frames_bin");
    const std::int64_t L = as_int(require(frames, "L", "/frames"), "/frames/L");
    if (L < 1) invalid("/frames/L", "must be >= 1");
    std::int64_t width = 64;
    if (frames.contains("width")) width = as_int(frames["width"], "/frames/width");
    if (width != 32 && width != 64) invalid("/frames/width", "must be 32 or 64");
    m = read_binary_frames(bin.is_absolute() ? bin : base_dir / bin, static_cast<std::size_t>(L), d,
                           static_cast<int>(width), "/frames/frames_bin");
  } else {
    invalid("/frames", "expected an array of frames or a {\"frames_bin\", \"L\"} object");
  }
  if (m.rows() < 1) invalid("/frames", "need at least one frame");
  f.frames = FrameFeatures(std::move(m));
  const auto L = static_cast<std::int64_t>(f.frames.frames());

  const json& queries = as_array(require(j, "queries", ""), "/queries");
  if (queries.empty()) invalid("/queries", "need at least one query");
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const std::string p = "/queries/" + std::to_string(i);
    QueryEntry q;
    q.text = as_string(require(queries[i], "text", p), p + "/text");
    const auto emb = number_array(require(queries[i], "embedding", p), p + "/embedding", d);
    if (norm(emb) <= 1e-12) invalid(p + "/embedding", "zero vector");
    q.embedding = TextEmbedding(emb);
    f.queries.push_back(std::move(q));
  }

  if (j.contains("gt_segments") && !j["gt_segments"].is_null()) {
    const json& gts = as_array(j["gt_segments"], "/gt_segments");
    std::vector<GtSegment> out;
    std::vector<bool> seen(f.queries.size(), false);
    for (std::size_t i = 0; i < gts.size(); ++i) {
      const std::string p = "/gt_segments/" + std::to_string(i);
      const std::int64_t q = as_int(require(gts[i], "query_idx", p), p + "/query_idx");
      const std::int64_t s = as_int(require(gts[i], "start", p), p + "/start");
      const std::int64_t e = as_int(require(gts[i], "end", p), p + "/end");
      if (q < 0 || q >= static_cast<std::int64_t>(f.queries.size())) {
        invalid(p + "/query_idx", "out of range [0, " + std::to_string(f.queries.size()) + ")");
      }
      if (s < 0 || s >= L) invalid(p + "/start", std::to_string(s) + " outside [0, " + std::to_string(L) + ")");
      if (e > L) invalid(p + "/end", std::to_string(e) + " exceeds L = " + std::to_string(L));
      if (e <= s) invalid(p + "/end", "must be greater than start");
      if (seen[static_cast<std::size_t>(q)]) invalid(p + "/query_idx", "duplicate span for this query");
      seen[static_cast<std::size_t>(q)] = true;
      out.push_back({static_cast<int>(q), static_cast<int>(s), static_cast<int>(e)});
    }
    f.gt_segments = std::move(out);
  }
  if (j.contains("meta")) f.meta = j["meta"];
  return f;
}

InstanceFile load_instance(const fs::path& path) {
  const json j = read_json_file(path);
  try {
    return instance_from_json(j, path.parent_path());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void save_instance(const InstanceFile& inst, const fs::path& path, FrameStorage storage) {
  json j;
  j["id"] = inst.id;
  j["text"] = inst.text;
  j["dim"] = inst.dim();
  if (storage == FrameStorage::kInline) {
    j["frames"] = matrix_to_json(inst.frames.matrix());
  } else {
    const int width = storage == FrameStorage::kBinary32 ? 32 : 64;
    fs::path bin = path;
    bin.replace_extension(width == 32 ? ".f32" : ".f64");
    write_binary_frames(bin, inst.frames.matrix(), width);
    j["frames"] = {{"frames_bin", bin.filename().string()}, {"L", inst.frames.frames()}, {"width", width}};
  }
  json queries = json::array();
  for (const auto& q : inst.queries) queries.push_back({{"text", q.text}, {"embedding", q.embedding.vec().values()}});
  j["queries"] = std::move(queries);
  if (inst.gt_segments) {
    json gts = json::array();
    for (const auto& g : *inst.gt_segments) gts.push_back({{"query_idx", g.query_idx}, {"start", g.start}, {"end", g.end}});
    j["gt_segments"] = std::move(gts);
  }
  if (!inst.meta.is_null()) j["meta"] = inst.meta;
  write_json_file(path, j);
}

std::vector<fs::path> expand_instance_paths(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> out;
  for (const fs::path& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(in)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json" &&
            entry.path().filename() != "manifest.json") {
          found.push_back(entry.path());
        }
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (in.filename() == "manifest.json") {
      const json m = read_json_file(in);
      const json& files = as_array(require(m, "files", ""), "/files");
      for (std::size_t i = 0; i < files.size(); ++i) {
        out.push_back(in.parent_path() / as_string(files[i], "/files/" + std::to_string(i)));
      }
    } else if (fs::is_regular_file(in)) {
      out.push_back(in);
    } else {
      fail(ErrorCode::kIo, "no such instance file or directory: " + in.string());
    }
  }
  return out;
}

json weights_to_json(const WeightsFile& w) {
  json j;
  j["d"] = w.params.dim();
  j["wk"] = matrix_to_json(w.params.wk);
  j["wv"] = matrix_to_json(w.params.wv);
  j["q"] = w.params.q.values();
  j["meta"] = w.meta.is_object() ? w.meta : json::object();
  return j;
}

WeightsFile weights_from_json(const json& j) {
  const std::int64_t dim = as_int(require(j, "d", ""), "/d");
  if (dim < 1) invalid("/d", "must be >= 1");
  const auto d = static_cast<std::size_t>(dim);
  WeightsFile w;
  w.params.wk = matrix_from_json(require(j, "wk", ""), "/wk", d);
  w.params.wv = matrix_from_json(require(j, "wv", ""), "/wv", d);
  if (w.params.wk.rows() != d) invalid("/wk", "expected " + std::to_string(d) + " rows");
  if (w.params.wv.rows() != d) invalid("/wv", "expected " + std::to_string(d) + " rows");
  w.params.q = Vec(number_array(require(j, "q", ""), "/q", d));
  const json& meta = require(j, "meta", "");
  if (!meta.is_object()) invalid("/meta", "expected an object");
  for (const char* key : {"seed", "steps", "tau"}) require(meta, key, "/meta");
  w.meta = meta;
  return w;
}

void save_weights(const WeightsFile& w, const fs::path& path) { write_json_file(path, weights_to_json(w)); }

WeightsFile load_weights(const fs::path& path) {
  try {
    return weights_from_json(read_json_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kIo) throw;
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

ResultRecord make_result_record(const std::string& id, const GroundingResult& result,
                                std::optional<std::string> trace_path) {
  ResultRecord r;
  r.id = id;
  r.k = static_cast<int>(result.masks.queries());
  r.L = static_cast<int>(result.masks.frames());
  r.param_count = result.param_count;
  r.labels = result.labels;
  r.segments = result.segments;
  r.fragments = result.fragments;
  r.absent_queries = result.absent_queries;
  r.loss_trace_path = std::move(trace_path);
  if (!result.loss_trace.empty()) r.final_loss = result.loss_trace.back();
  r.steps_run = result.steps_run;
  return r;
}

json loss_to_json(const LossBreakdown& l) {
  return {{"total", l.total}, {"contrastive", l.contrastive}, {"exclusivity", l.exclusivity}, {"smoothness", l.smoothness}};
}

json result_to_json(const ResultRecord& r) {
  json j;
  j["id"] = r.id;
  j["k"] = r.k;
  j["L"] = r.L;
  j["param_count"] = r.param_count;
  j["labels"] = r.labels;
  json segs = json::array();
  for (const auto& s : r.segments) segs.push_back(segment_to_json(s));
  j["segments"] = std::move(segs);
  json frags = json::array();
  for (const auto& s : r.fragments) frags.push_back(segment_to_json(s));
  j["fragments"] = std::move(frags);
  j["absent_queries"] = r.absent_queries;
  if (r.loss_trace_path) j["loss_trace_path"] = *r.loss_trace_path;
  j["final_loss"] = loss_to_json(r.final_loss);
  j["steps_run"] = r.steps_run;
  return j;
}

ResultRecord result_from_json(const json& j, const std::string& where) {
  try {
    ResultRecord r;
    r.id = as_string(require(j, "id", ""), "/id");
    r.k = static_cast<int>(as_int(require(j, "k", ""), "/k"));
    r.L = static_cast<int>(as_int(require(j, "L", ""), "/L"));
    r.param_count = static_cast<std::size_t>(as_int(require(j, "param_count", ""), "/param_count"));
    if (r.k < 1 || r.L < 1) invalid("/k", "k and L must be >= 1");
    if (r.param_count != static_cast<std::size_t>(r.k) * static_cast<std::size_t>(r.L)) {
      invalid("/param_count", "must equal k*L");
    }
    const json& labels = as_array(require(j, "labels", ""), "/labels");
    if (labels.size() != static_cast<std::size_t>(r.L)) invalid("/labels", "length must equal L");
    for (std::size_t t = 0; t < labels.size(); ++t) {
      const auto v = as_int(labels[t], "/labels/" + std::to_string(t));
      if (v < 0 || v >= r.k) invalid("/labels/" + std::to_string(t), "label out of range");
      r.labels.push_back(static_cast<int>(v));
    }
    const json& segs = as_array(require(j, "segments", ""), "/segments");
    for (std::size_t i = 0; i < segs.size(); ++i) r.segments.push_back(segment_from_json(segs[i], "/segments/" + std::to_string(i)));
    if (j.contains("fragments")) {
      const json& frags = as_array(j["fragments"], "/fragments");
      for (std::size_t i = 0; i < frags.size(); ++i) r.fragments.push_back(segment_from_json(frags[i], "/fragments/" + std::to_string(i)));
    }
    if (j.contains("absent_queries")) r.absent_queries = j["absent_queries"].get<std::vector<int>>();
    if (j.contains("loss_trace_path")) r.loss_trace_path = as_string(j["loss_trace_path"], "/loss_trace_path");
    const json& fl = require(j, "final_loss", "");
    r.final_loss.total = as_number(require(fl, "total", "/final_loss"), "/final_loss/total");
    r.final_loss.contrastive = as_number(require(fl, "contrastive", "/final_loss"), "/final_loss/contrastive");
    r.final_loss.exclusivity = as_number(require(fl, "exclusivity", "/final_loss"), "/final_loss/exclusivity");
    r.final_loss.smoothness = as_number(require(fl, "smoothness", "/final_loss"), "/final_loss/smoothness");
    if (j.contains("steps_run")) r.steps_run = static_cast<int>(as_int(j["steps_run"], "/steps_run"));
    for (const auto& s : r.segments) {
      if (s.end > r.L || s.query_idx < 0 || s.query_idx >= r.k) invalid("/segments", "segment outside [0, L) or bad query");
    }
    return r;
  } catch (const Error& e) {
    if (where.empty()) throw;
    throw Error(e.code(), where + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kValidation, where + ": " + e.what());
  }
}

std::vector<ResultRecord> load_results(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<ResultRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::kValidation, where + ": " + e.what());
    }
    out.push_back(result_from_json(j, where));
  }
  return out;
}

JsonlWriter::JsonlWriter(const fs::path& path, bool truncate) : path_(path) {
  int flags = O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC;
  if (truncate) flags |= O_TRUNC;
  fd_ = ::open(path.c_str(), flags, 0644);
  if (fd_ < 0) fail(ErrorCode::kIo, "cannot open " + path.string() + ": " + std::strerror(errno));
}

JsonlWriter::~JsonlWriter() {
  if (fd_ >= 0) ::close(fd_);
}

void JsonlWriter::append(const json& record) {
  const std::string line = record.dump() + "\n";
  std::lock_guard lock(mu_);
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::kIo, "write to " + path_.string() + " failed: " + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  auto emit = [&os](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << ',';
      os << csv_field(row[i]);
    }
    os << "\r\n";
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << os.str();
}

void write_loss_trace_csv(const fs::path& path, const std::vector<LossBreakdown>& trace) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t s = 0; s < trace.size(); ++s) {
    rows.push_back({std::to_string(s), format_double(trace[s].total), format_double(trace[s].contrastive),
                    format_double(trace[s].exclusivity), format_double(trace[s].smoothness)});
  }
  write_csv(path, {"step", "total", "contrastive", "exclusivity", "smoothness"}, rows);
}

void write_similarity_csv(const fs::path& path, const SimilarityReport& report) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : report.rows) {
    rows.push_back({r.instance_id, std::to_string(r.query_idx), r.method, format_double(r.similarity)});
  }
  write_csv(path, {"instance_id", "query_idx", "method", "similarity"}, rows);
}

void write_matches_csv(const fs::path& path, const std::vector<MatchRecord>& records) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : records) {
    rows.push_back({r.instance_id, std::to_string(r.query_idx), std::to_string(r.gt_start),
                    std::to_string(r.gt_end), r.predicted ? "1" : "0", std::to_string(r.pred_start),
                    std::to_string(r.pred_end), format_double(r.confidence), format_double(r.iou)});
  }
  write_csv(path, {"instance_id", "query_idx", "gt_start", "gt_end", "predicted", "pred_start", "pred_end",
                   "confidence", "iou"},
            rows);
}

json eval_report_to_json(const EvalReport& report) {
  json j;
  j["thresholds"] = report.thresholds;
  json ap = json::object();
  for (std::size_t i = 0; i < report.thresholds.size(); ++i) ap[format_double(report.thresholds[i])] = report.ap_per_threshold[i];
  j["ap_per_threshold"] = std::move(ap);
  j["map"] = report.map_mean;
  json per = json::array();
  for (const auto& r : report.per_instance) {
    json rec = {{"instance_id", r.instance_id}, {"query_idx", r.query_idx}, {"gt_start", r.gt_start},
                {"gt_end", r.gt_end}, {"predicted", r.predicted}, {"iou", r.iou}};
    if (r.predicted) {
      rec["pred_start"] = r.pred_start;
      rec["pred_end"] = r.pred_end;
      rec["confidence"] = r.confidence;
    }
    per.push_back(std::move(rec));
  }
  j["per_instance"] = std::move(per);
  return j;
}

json similarity_summary_to_json(const SimilarityReport& report) {
  json out = json::array();
  for (const auto& s : report.summaries) {
    out.push_back({{"method", s.method}, {"count", s.count}, {"min", s.min}, {"q1", s.q1},
                   {"median", s.median}, {"q3", s.q3}, {"max", s.max}, {"mean", s.mean}});
  }
  return out;
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kValidation, path.string() + ": invalid JSON: " + e.what());
  }
}

}  // namespace mground::io
