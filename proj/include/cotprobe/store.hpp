#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotprobe/corpus.hpp"
#include "cotprobe/stats.hpp"
#include "json.hpp"

namespace cotprobe {

/// A stored record disagrees with a new write, or a file failed to parse.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json record_to_json(const GenerationRecord& rec);
GenerationRecord record_from_json(const nlohmann::json& j);

/// StatResult as {estimate, ci: [lo, hi] | null, p, method, n} with reals
/// as decimal strings.
nlohmann::json stat_to_json(const stats::StatResult& r);
stats::StatResult stat_from_json(const nlohmann::json& j);

/// Persistent run directory:
///   <out>/<run_id>/config.json
///   <out>/<run_id>/records.jsonl          append-only generation records
///   <out>/<run_id>/measurements/*.json    raw non-generation model outputs
///   <out>/<run_id>/artifacts/*.json       derived analysis results
///   <out>/<run_id>/tables/*.{txt,json}    rendered tables
///
/// One writer per store. Records are keyed by (item, condition,
/// intervention); rewriting a key with the same payload is a no-op and with
/// a different payload an IntegrityError.
class RunStore {
 public:
  /// Opens the run directory, creating it if needed. An existing run must
  /// carry the same config.
  static RunStore open_or_create(const std::filesystem::path& out_dir, const std::string& run_id,
                                 const nlohmann::json& config);
  /// Opens an existing run; throws std::runtime_error when absent.
  static RunStore open_existing(const std::filesystem::path& out_dir, const std::string& run_id);

  [[nodiscard]] const std::string& run_id() const { return run_id_; }
  [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }
  [[nodiscard]] const nlohmann::json& config() const { return config_; }
  [[nodiscard]] const std::string& config_hash() const { return config_hash_; }

  /// Appends new records (fsync'd before returning); returns how many were
  /// actually written.
  std::size_t write_records(const std::vector<GenerationRecord>& records);
  [[nodiscard]] const GenerationRecord* find(const std::string& key) const;
  [[nodiscard]] const std::vector<GenerationRecord>& records() const { return records_; }

  void put_measurement(const std::string& name, const nlohmann::json& value);
  [[nodiscard]] std::optional<nlohmann::json> measurement(const std::string& name) const;
  [[nodiscard]] std::map<std::string, nlohmann::json> measurements() const;

  void put_artifact(const std::string& name, const nlohmann::json& value);
  [[nodiscard]] std::optional<nlohmann::json> artifact(const std::string& name) const;
  [[nodiscard]] std::vector<std::string> artifact_names() const;

  void put_table(const std::string& name, const std::string& text, const nlohmann::json& value);
  [[nodiscard]] std::optional<std::string> table_text(const std::string& name) const;

  /// Canonical on-disk form of a JSON document in this store.
  static std::string canonical(const nlohmann::json& value);
  static std::string hash_config(const nlohmann::json& config);

 private:
  RunStore() = default;
  void load_records();

  std::string run_id_;
  std::filesystem::path dir_;
  nlohmann::json config_;
  std::string config_hash_;
  std::vector<GenerationRecord> records_;
  std::map<std::string, std::size_t> index_;
};

/// Reads a whole file; throws std::runtime_error if it cannot be opened.
std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename, then fsyncs.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace cotprobe
