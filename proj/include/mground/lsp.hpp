#pragma once

// Language semantic partition: split a free-form description into ordered
// sub-action phrases with an LLM, stabilized by paraphrase voting.

#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace mground::lsp {

inline constexpr const char* kPromptVersion = "decompose-v1";

enum class RequestKind { kDecompose, kParaphrase };

struct ChatRequest {
  RequestKind kind = RequestKind::kDecompose;
  std::string subject;  // the description being decomposed or paraphrased
  int variant = 0;      // paraphrase index, 1-based
  std::string prompt;
  double temperature = 0.0;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  // Throws mground::Error(kLspUnavailable) when the backend cannot answer.
  virtual std::string complete(const ChatRequest& request) = 0;
};

// Answers from a fixed table; a pure function of (kind, subject, variant).
// Unlisted decompositions echo rule_based_split as a numbered list and
// unlisted paraphrases return the subject unchanged.
class MockClient : public LlmClient {
 public:
  struct Table {
    std::map<std::string, std::string> decompositions;               // subject → reply
    std::map<std::string, std::vector<std::string>> paraphrases;     // subject → variant replies
    std::set<std::string> failing;                                   // subjects that error
  };

  MockClient() = default;
  explicit MockClient(Table table) : table_(std::move(table)) {}

  static Table table_from_json(const nlohmann::json& j);

  std::string complete(const ChatRequest& request) override;
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  Table table_;
  std::atomic<std::size_t> calls_{0};
};

struct HttpClientOptions {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key;
  std::string model = "gpt-4o-mini";
  int max_retries = 2;
  double timeout_seconds = 30.0;
};

// OpenAI-compatible /chat/completions over HTTP(S).
class HttpChatClient : public LlmClient {
 public:
  using Options = HttpClientOptions;

  explicit HttpChatClient(Options opts);
  // ZOMG_LLM_BASE_URL, ZOMG_LLM_API_KEY, ZOMG_LLM_MODEL override the defaults.
  static Options options_from_env(Options base = {});

  std::string complete(const ChatRequest& request) override;
  const Options& options() const noexcept { return opts_; }

 private:
  Options opts_;
};

std::string build_decomposition_prompt(std::string_view text);
std::string build_paraphrase_prompt(std::string_view text, int variant);

// Numbered items ("1. a", "2) b") in order; throws kParse when none are found.
std::vector<std::string> parse_decomposition(std::string_view reply);

std::vector<std::string> rule_based_split(std::string_view text);

// Lowercased, punctuation stripped, items joined with "|".
std::string canonicalize(const std::vector<std::string>& items);

struct LspConfig {
  int n_paraphrases = 2;
  int max_retries = 2;
  double timeout_seconds = 30.0;
  int max_in_flight = 4;
  std::optional<std::filesystem::path> cache_path;  // directory

  void validate() const;
};

enum class DecompositionSource { kLlmVoted, kRuleBased, kCached };
const char* to_string(DecompositionSource s);

struct DecompositionResult {
  std::vector<std::string> sub_actions;
  std::size_t k = 0;
  std::map<std::string, int> votes;  // canonical decomposition → tally
  DecompositionSource source = DecompositionSource::kLlmVoted;

  bool operator==(const DecompositionResult&) const = default;
};

nlohmann::json result_to_json(const DecompositionResult& r);
DecompositionResult result_from_json(const nlohmann::json& j);

// SHA-256 of prompt version and text, hex encoded.
std::string cache_key(std::string_view text);

class DecompositionCache {
 public:
  explicit DecompositionCache(std::filesystem::path dir);

  // Misses on absent or unreadable entries; the latter are logged.
  std::optional<DecompositionResult> get(std::string_view text) const;
  void put(std::string_view text, const DecompositionResult& result) const;

 private:
  std::filesystem::path dir_;
};

DecompositionResult decompose_with_voting(LlmClient& client, std::string_view text,
                                          const LspConfig& cfg);

DecompositionResult decompose_rule_based(std::string_view text);

}  // namespace mground::lsp
