#include "mground/lsp.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <future>
#include <mutex>
#include <regex>

#include <spdlog/spdlog.h>

#include "mground/errors.hpp"

namespace mground::lsp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

bool is_trim_char(unsigned char c) {
  return std::isspace(c) || (std::ispunct(c) && c != '(' && c != ')' && c != '\'');
}

std::string trim(std::string_view s, bool strip_punct) {
  auto drop = [strip_punct](unsigned char c) { return strip_punct ? is_trim_char(c) : std::isspace(c) != 0; };
  std::size_t b = 0, e = s.size();
  while (b < e && drop(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && drop(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string numbered(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += std::to_string(i + 1) + ". " + items[i] + "\n";
  return out;
}

}  // namespace

MockClient::Table MockClient::table_from_json(const json& j) {
  Table t;
  if (!j.is_object()) fail(ErrorCode::kValidation, "mock table: expected an object");
  if (j.contains("decompositions")) t.decompositions = j["decompositions"].get<std::map<std::string, std::string>>();
  if (j.contains("paraphrases")) {
    t.paraphrases = j["paraphrases"].get<std::map<std::string, std::vector<std::string>>>();
  }
  if (j.contains("failing")) {
    for (const auto& s : j["failing"]) t.failing.insert(s.get<std::string>());
  }
  return t;
}

std::string MockClient::complete(const ChatRequest& request) {
  ++calls_;
  if (table_.failing.count(request.subject)) {
    fail(ErrorCode::kLspUnavailable, "mock client: no answer for '" + request.subject + "'");
  }
  if (request.kind == RequestKind::kParaphrase) {
    const auto it = table_.paraphrases.find(request.subject);
    if (it != table_.paraphrases.end() && request.variant >= 1 &&
        static_cast<std::size_t>(request.variant) <= it->second.size()) {
      return it->second[static_cast<std::size_t>(request.variant - 1)];
    }
    return request.subject;
  }
  const auto it = table_.decompositions.find(request.subject);
  if (it != table_.decompositions.end()) return it->second;
  return numbered(rule_based_split(request.subject));
}

std::string build_decomposition_prompt(std::string_view text) {
  const std::string t = trim(text, false);
  if (t.empty()) fail(ErrorCode::kInvalidInput, "decomposition prompt: empty description");
  std::string p;
  p += "Split the description of human motion below into its sub-actions.\n";
  p += "Follow two criteria:\n";
  p += "- semantic completeness: every sub-action is a complete action phrase that is meaningful on its own.\n";
  p += "- temporal order: list sub-actions in the order they happen; actions that overlap in time keep the order in which they are mentioned.\n";
  p += "Reuse the wording of the description and never add actions it does not mention.\n";
  p += "Answer with a numbered list only, one sub-action per line, formatted as \"1. ...\", \"2. ...\". No other text.\n\n";
  p += "Description: a person walks forward, then turns around and sits down\n";
  p += "1. walks forward\n2. turns around\n3. sits down\n\n";
  p += "Description: someone jumps twice while clapping\n";
  p += "1. jumps twice\n2. claps\n\n";
  p += "Description: the man crouches low before kicking with his right leg\n";
  p += "1. crouches low\n2. kicks with his right leg\n\n";
  p += "Description: " + t + "\n";
  return p;
}

std::string build_paraphrase_prompt(std::string_view text, int variant) {
  const std::string t = trim(text, false);
  if (t.empty()) fail(ErrorCode::kInvalidInput, "paraphrase prompt: empty description");
  return "Rewrite the following description of human motion in different words (variant " +
         std::to_string(variant) +
         "). Keep every action and their order. Answer with the rewritten sentence only.\n\n"
         "Description: " + t + "\n";
}

std::vector<std::string> parse_decomposition(std::string_view reply) {
  static const std::regex marker(R"((^|\s)(\d+)[.)]\s+)");
  const std::string s(reply);
  struct Hit {
    std::size_t begin, end;
  };
  std::vector<Hit> hits;
  int expected = 1;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), marker); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    if (std::stoi(m.str(2)) != expected) continue;
    hits.push_back({static_cast<std::size_t>(m.position(0)), static_cast<std::size_t>(m.position(0) + m.length(0))});
    ++expected;
  }
  if (hits.empty()) fail(ErrorCode::kParse, "decomposition: no numbered list in reply");
  std::vector<std::string> items;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const std::size_t stop = i + 1 < hits.size() ? hits[i + 1].begin : s.size();
    std::string_view body(s.data() + hits[i].end, stop - hits[i].end);
    body = body.substr(0, body.find('\n'));
    std::string item = trim(body, true);
    if (item.empty()) fail(ErrorCode::kParse, "decomposition: item " + std::to_string(i + 1) + " is empty");
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<std::string> rule_based_split(std::string_view text) {
  static constexpr std::string_view kMarkers[] = {", then", " then ", " and then ", " while ", " and ", ", "};
  std::vector<std::string> out;
  std::size_t piece = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t best = 0;
    for (std::string_view m : kMarkers) {
      if (m.size() > best && text.substr(pos, m.size()) == m) best = m.size();
    }
    if (best == 0) {
      ++pos;
      continue;
    }
    std::string frag = trim(text.substr(piece, pos - piece), true);
    if (!frag.empty()) out.push_back(std::move(frag));
    pos += best;
    piece = pos;
  }
  std::string frag = trim(text.substr(piece), true);
  if (!frag.empty()) out.push_back(std::move(frag));
  if (out.empty()) {
    const std::string whole = trim(text, false);
    if (whole.empty()) fail(ErrorCode::kInvalidInput, "rule_based_split: empty description");
    out.push_back(whole);
  }
  return out;
}

std::string canonicalize(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += '|';
    std::string word;
    bool pending_space = false;
    for (unsigned char c : items[i]) {
      if (std::ispunct(c)) continue;
      if (std::isspace(c)) {
        pending_space = !word.empty();
        continue;
      }
      if (pending_space) word += ' ';
      pending_space = false;
      word += static_cast<char>(std::tolower(c));
    }
    out += word;
  }
  return out;
}

void LspConfig::validate() const {
  if (n_paraphrases < 0) fail(ErrorCode::kConfig, "lsp: n_paraphrases must be >= 0");
  if (max_retries < 0) fail(ErrorCode::kConfig, "lsp: max_retries must be >= 0");
  if (!(timeout_seconds > 0.0)) fail(ErrorCode::kConfig, "lsp: timeout_seconds must be > 0");
  if (max_in_flight < 1) fail(ErrorCode::kConfig, "lsp: max_in_flight must be >= 1");
}

const char* to_string(DecompositionSource s) {
  switch (s) {
    case DecompositionSource::kLlmVoted: return "llm_voted";
    case DecompositionSource::kRuleBased: return "rule_based";
    case DecompositionSource::kCached: return "cached";
  }
  return "unknown";
}

json result_to_json(const DecompositionResult& r) {
  return {{"sub_actions", r.sub_actions}, {"k", r.k}, {"votes", r.votes}, {"source", to_string(r.source)}};
}

DecompositionResult result_from_json(const json& j) {
  DecompositionResult r;
  try {
    r.sub_actions = j.at("sub_actions").get<std::vector<std::string>>();
    r.k = j.at("k").get<std::size_t>();
    r.votes = j.at("votes").get<std::map<std::string, int>>();
    const std::string src = j.at("source").get<std::string>();
    if (src == "llm_voted") r.source = DecompositionSource::kLlmVoted;
    else if (src == "rule_based") r.source = DecompositionSource::kRuleBased;
    else if (src == "cached") r.source = DecompositionSource::kCached;
    else fail(ErrorCode::kValidation, "decomposition: unknown source '" + src + "'");
  } catch (const json::exception& e) {
    fail(ErrorCode::kValidation, std::string("decomposition: ") + e.what());
  }
  if (r.sub_actions.empty() || r.k != r.sub_actions.size()) {
    fail(ErrorCode::kValidation, "decomposition: k must equal the number of sub-actions and be >= 1");
  }
  for (const auto& s : r.sub_actions) {
    if (s.empty()) fail(ErrorCode::kValidation, "decomposition: empty sub-action");
  }
  return r;
}

std::string cache_key(std::string_view text) {
  const std::string payload = std::string(kPromptVersion) + '\n' + std::string(text);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(payload.data(), payload.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::kNumerical, "cache_key: SHA-256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

DecompositionCache::DecompositionCache(fs::path dir) : dir_(std::move(dir)) {}

std::optional<DecompositionResult> DecompositionCache::get(std::string_view text) const {
  const fs::path file = dir_ / (cache_key(text) + ".json");
  std::ifstream in(file);
  if (!in) return std::nullopt;
  try {
    const json j = json::parse(in);
    if (j.value("text", std::string()) != text) {
      spdlog::warn("ignoring cache entry {}: text does not match", file.string());
      return std::nullopt;
    }
    return result_from_json(j.at("result"));
  } catch (const std::exception& e) {
    spdlog::warn("ignoring corrupt cache entry {}: {}", file.string(), e.what());
    return std::nullopt;
  }
}

void DecompositionCache::put(std::string_view text, const DecompositionResult& result) const {
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) fail(ErrorCode::kIo, "cache: cannot create " + dir_.string() + ": " + ec.message());
  const std::string key = cache_key(text);
  const fs::path file = dir_ / (key + ".json");
  const fs::path tmp = dir_ / (key + ".json.tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cache: cannot write " + tmp.string());
    const json j = {{"prompt_version", kPromptVersion}, {"text", std::string(text)}, {"result", result_to_json(result)}};
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, file, ec);
  if (ec) fail(ErrorCode::kIo, "cache: cannot rename into " + file.string() + ": " + ec.message());
}

namespace {

using Ballot = std::optional<std::vector<std::string>>;

Ballot decompose_once(LlmClient& client, const std::string& subject) {
  ChatRequest req;
  req.kind = RequestKind::kDecompose;
  req.subject = subject;
  req.prompt = build_decomposition_prompt(subject);
  req.temperature = 0.0;
  try {
    return parse_decomposition(client.complete(req));
  } catch (const Error& e) {
    spdlog::warn("decomposition ballot for '{}' dropped: {}", subject, e.what());
    return std::nullopt;
  }
}

Ballot paraphrase_ballot(LlmClient& client, const std::string& text, int variant) {
  ChatRequest req;
  req.kind = RequestKind::kParaphrase;
  req.subject = text;
  req.variant = variant;
  req.prompt = build_paraphrase_prompt(text, variant);
  req.temperature = 0.7;
  std::string para;
  try {
    para = trim(client.complete(req), false);
  } catch (const Error& e) {
    spdlog::warn("paraphrase {} dropped: {}", variant, e.what());
    return std::nullopt;
  }
  if (para.empty()) {
    spdlog::warn("paraphrase {} dropped: empty reply", variant);
    return std::nullopt;
  }
  return decompose_once(client, para);
}

}  // namespace

DecompositionResult decompose_with_voting(LlmClient& client, std::string_view text, const LspConfig& cfg) {
  cfg.validate();
  const std::string subject = trim(text, false);
  if (subject.empty()) fail(ErrorCode::kInvalidInput, "decompose: empty description");

  std::optional<DecompositionCache> cache;
  if (cfg.cache_path) {
    cache.emplace(*cfg.cache_path);
    if (auto hit = cache->get(subject)) {
      hit->source = DecompositionSource::kCached;
      return *hit;
    }
  }

  std::vector<Ballot> ballots(static_cast<std::size_t>(cfg.n_paraphrases) + 1);
  ballots[0] = decompose_once(client, subject);
  for (int first = 1; first <= cfg.n_paraphrases; first += cfg.max_in_flight) {
    const int last = std::min(cfg.n_paraphrases, first + cfg.max_in_flight - 1);
    std::vector<std::future<Ballot>> inflight;
    for (int v = first; v <= last; ++v) {
      inflight.push_back(std::async(std::launch::async, paraphrase_ballot, std::ref(client), subject, v));
    }
    for (int v = first; v <= last; ++v) ballots[static_cast<std::size_t>(v)] = inflight[static_cast<std::size_t>(v - first)].get();
  }

  DecompositionResult result;
  std::map<std::string, std::size_t> first_seen;
  for (std::size_t b = 0; b < ballots.size(); ++b) {
    if (!ballots[b]) continue;
    const std::string canon = canonicalize(*ballots[b]);
    ++result.votes[canon];
    first_seen.emplace(canon, b);
  }
  if (result.votes.empty()) {
    fail(ErrorCode::kLspUnavailable, "decompose: every ballot failed for '" + subject + "'");
  }
  // Ballot 0 is the original text, so "earliest" also covers the original-wins tie rule.
  std::size_t winner = ballots.size();
  int best = 0;
  for (const auto& [canon, tally] : result.votes) {
    const std::size_t at = first_seen.at(canon);
    if (tally > best || (tally == best && at < winner)) {
      best = tally;
      winner = at;
    }
  }
  result.sub_actions = *ballots[winner];
  result.k = result.sub_actions.size();
  result.source = DecompositionSource::kLlmVoted;
  if (cache) cache->put(subject, result);
  return result;
}

DecompositionResult decompose_rule_based(std::string_view text) {
  DecompositionResult r;
  r.sub_actions = rule_based_split(text);
  r.k = r.sub_actions.size();
  r.votes[canonicalize(r.sub_actions)] = 1;
  r.source = DecompositionSource::kRuleBased;
  return r;
}

}  // namespace mground::lsp
