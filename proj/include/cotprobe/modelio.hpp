#pragma once

#include <atomic>
#include <compare>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cotprobe/corpus.hpp"
#include "json.hpp"

namespace cotprobe {

// ---- errors ---------------------------------------------------------------

struct BackendError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Connection-level failure; safe to retry.
struct TransportError : BackendError {
  using BackendError::BackendError;
};
/// Request violates the protocol (bad head id, empty intervention set).
struct RequestRejected : BackendError {
  using BackendError::BackendError;
};
/// The model could not serve this item (e.g. context overflow). Recorded
/// against the item, never retried.
struct ItemError : BackendError {
  using BackendError::BackendError;
};

// ---- request and result types ----------------------------------------------

enum class PositionIdMap { identity, stretch_2p5x, random_gaps_1to5 };

std::string_view to_string(PositionIdMap m);
std::optional<PositionIdMap> position_id_map_from_string(std::string_view s);

struct FewShotExample {
  std::string question;
  std::string completion;
};

struct GenerateRequest {
  std::string question;
  /// Assistant-turn prefix ending in delimiter + space; empty selects free
  /// generation.
  std::string injected_prefix;
  int max_new_tokens = 32;
  std::vector<FewShotExample> few_shot;
  std::optional<PositionIdMap> position_id_map;
};

inline constexpr int kFreeGenerationTokens = 512;

struct HeadId {
  int layer = 0;
  int head = 0;
  friend auto operator<=>(const HeadId&, const HeadId&) = default;
};

std::string to_string(const HeadId& h);

enum class InterventionKind { zero_ablate, mean_ablate, patch_from_ordered };

std::string_view to_string(InterventionKind k);
std::optional<InterventionKind> intervention_kind_from_string(std::string_view s);

struct InterventionSpec {
  InterventionKind kind = InterventionKind::zero_ablate;
  std::vector<HeadId> heads;
  std::optional<std::string> mean_reference;
};

enum class ScoreKind { attention_mass, prefix_match, copy_score, logit_recovery };

std::string_view to_string(ScoreKind k);

/// Dense per-(layer, query head) scores.
struct HeadScoreMatrix {
  int layers = 0;
  int heads = 0;
  ScoreKind kind = ScoreKind::attention_mass;
  std::vector<double> scores;

  HeadScoreMatrix() = default;
  HeadScoreMatrix(int layers_, int heads_, ScoreKind kind_)
      : layers(layers_), heads(heads_), kind(kind_), scores(static_cast<std::size_t>(layers_ * heads_), 0.0) {}

  [[nodiscard]] double at(HeadId h) const { return scores.at(index(h)); }
  double& at(HeadId h) { return scores.at(index(h)); }
  [[nodiscard]] std::size_t index(HeadId h) const { return static_cast<std::size_t>(h.layer * heads + h.head); }
  [[nodiscard]] HeadId head_at(std::size_t i) const {
    return {static_cast<int>(i) / heads, static_cast<int>(i) % heads};
  }
  [[nodiscard]] std::size_t size() const { return scores.size(); }
};

struct AttentionItem {
  std::string prompt;
  std::vector<CharRange> spans;
};

struct AttentionMassResult {
  HeadScoreMatrix scores;
  std::size_t items_used = 0;
  std::size_t items_skipped = 0;
};

struct PatchResult {
  double logit_delta = 0.0;
  std::string text;
};

struct InductionScores {
  HeadScoreMatrix prefix_match;
  HeadScoreMatrix copy;
};

struct ModelInfo {
  std::string family;
  int layers = 0;
  int query_heads = 0;
  int kv_heads = 0;
  int head_dim = 0;
  std::string eos;
  bool supports_position_ids = false;
  /// Token subset used for induction sequences, logged for reproducibility.
  std::vector<std::string> induction_vocab;

  [[nodiscard]] int total_heads() const { return layers * query_heads; }
  [[nodiscard]] bool valid_head(HeadId h) const {
    return h.layer >= 0 && h.layer < layers && h.head >= 0 && h.head < query_heads;
  }
};

// ---- backend interface -----------------------------------------------------

/// The capability set every model backend provides. Public entry points
/// validate arguments and enforce the concurrency contract: plain
/// generate/tokenize calls may run concurrently, while interventions,
/// patching, attention and induction requests hold the instance exclusively.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  std::string generate(const GenerateRequest& req);
  std::vector<std::string> tokenize(std::string_view text);
  AttentionMassResult attention_mass(const std::vector<AttentionItem>& items);
  /// Heads must be nonempty: K = 0 is expressed by calling generate.
  std::string generate_with_intervention(const GenerateRequest& req, const InterventionSpec& spec);
  PatchResult patch_and_score(const std::string& ordered_prompt, const std::string& shuffled_prompt,
                              const std::vector<HeadId>& heads, const std::string& gold_token);
  InductionScores induction_scores(int K, int N, std::uint64_t seed);
  ModelInfo model_info();

  /// Generation calls served so far (plain, intervened and patched).
  [[nodiscard]] std::uint64_t generation_calls() const { return generation_calls_.load(); }
  /// Every request that reached the backend, including tokenization and
  /// score matrices (cached model_info lookups excluded).
  [[nodiscard]] std::uint64_t total_calls() const { return total_calls_.load(); }

 protected:
  virtual std::string do_generate(const GenerateRequest& req) = 0;
  virtual std::vector<std::string> do_tokenize(std::string_view text) = 0;
  virtual AttentionMassResult do_attention_mass(const std::vector<AttentionItem>& items) = 0;
  virtual std::string do_generate_with_intervention(const GenerateRequest& req, const InterventionSpec& spec) = 0;
  virtual PatchResult do_patch_and_score(const std::string& ordered_prompt, const std::string& shuffled_prompt,
                                         const std::vector<HeadId>& heads, const std::string& gold_token) = 0;
  virtual InductionScores do_induction_scores(int K, int N, std::uint64_t seed) = 0;
  virtual ModelInfo do_model_info() = 0;

 private:
  void validate_heads(const std::vector<HeadId>& heads);

  std::shared_mutex instance_mutex_;
  std::mutex info_mutex_;
  std::optional<ModelInfo> info_;
  std::atomic<std::uint64_t> generation_calls_{0};
  std::atomic<std::uint64_t> total_calls_{0};
};

// ---- wire protocol ---------------------------------------------------------

namespace wire {

nlohmann::json to_json(const GenerateRequest& req);
GenerateRequest generate_request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const InterventionSpec& spec);
InterventionSpec intervention_from_json(const nlohmann::json& j);
nlohmann::json heads_to_json(const std::vector<HeadId>& heads);
std::vector<HeadId> heads_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HeadScoreMatrix& m);
HeadScoreMatrix score_matrix_from_json(const nlohmann::json& j, int layers, int heads, ScoreKind kind);
nlohmann::json to_json(const ModelInfo& info);
ModelInfo model_info_from_json(const nlohmann::json& j);

}  // namespace wire

/// Client for a backend served over the HTTP wire protocol.
class HttpBackend final : public ModelBackend {
 public:
  struct Options {
    int max_attempts = 3;
    int connect_timeout_ms = 2000;
    int read_timeout_ms = 600000;
    int backoff_ms = 100;
  };

  /// `url` is "http://host:port".
  explicit HttpBackend(std::string url);
  HttpBackend(std::string url, Options options);

 protected:
  std::string do_generate(const GenerateRequest& req) override;
  std::vector<std::string> do_tokenize(std::string_view text) override;
  AttentionMassResult do_attention_mass(const std::vector<AttentionItem>& items) override;
  std::string do_generate_with_intervention(const GenerateRequest& req, const InterventionSpec& spec) override;
  PatchResult do_patch_and_score(const std::string& ordered_prompt, const std::string& shuffled_prompt,
                                 const std::vector<HeadId>& heads, const std::string& gold_token) override;
  InductionScores do_induction_scores(int K, int N, std::uint64_t seed) override;
  ModelInfo do_model_info() override;

 private:
  nlohmann::json call(const std::string& method, const std::string& path, const nlohmann::json& body);
  ModelInfo cached_info();

  std::string host_;
  int port_ = 0;
  Options options_;
  std::mutex info_mutex_;
  std::optional<ModelInfo> info_;
};

/// Serves a backend over the wire protocol on a background thread.
class BackendServer {
 public:
  BackendServer(ModelBackend& backend, std::string host, int port);
  ~BackendServer();
  BackendServer(const BackendServer&) = delete;
  BackendServer& operator=(const BackendServer&) = delete;

  /// Port actually bound (useful when 0 was requested).
  [[nodiscard]] int port() const { return port_; }
  void stop();
  /// Blocks until the server stops.
  void wait();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

/// Runs the server in the calling thread until stopped.
void serve_backend_blocking(ModelBackend& backend, const std::string& host, int port);

}  // namespace cotprobe
