#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cotprobe/harness.hpp"
#include "cotprobe/store.hpp"
#include "json.hpp"

namespace cotprobe {

enum class TableName { decomposition, ladder, distractor, framing, hierarchy, position, fidelity, mech, freegen };

std::string_view to_string(TableName t);
std::optional<TableName> table_from_string(std::string_view s);
std::vector<TableName> all_tables();

struct RenderedTable {
  TableName name = TableName::decomposition;
  /// Fixed-width ASCII.
  std::string text;
  /// Machine-readable sibling: columns, rows, and the source artifact.
  nlohmann::json value;
  /// False when the artifact behind the table is missing; every cell is
  /// then rendered absent with a reason.
  bool complete = false;
};

/// Renders one table from a set of artifacts. Pure.
RenderedTable render_table(const Artifacts& artifacts, TableName table);
/// Same, reading the artifacts stored in a run.
RenderedTable render_table(const RunStore& store, TableName table);

/// Writes every table whose artifact exists into the store.
std::vector<TableName> publish_tables(RunStore& store, const Artifacts& artifacts);

struct VerifyReport {
  std::size_t records = 0;
  std::size_t artifacts_checked = 0;
  std::size_t tables_checked = 0;
  std::vector<std::string> problems;
  [[nodiscard]] bool ok() const { return problems.empty(); }
};

/// Re-scores every stored record, checks the record invariants, recomputes
/// every artifact from records and measurements alone, and compares
/// artifacts and tables byte for byte with what the store holds.
VerifyReport verify_run(const RunStore& store);

/// Paired contrast of two conditions over the items both have usable
/// records for: accuracies, bootstrap difference and exact McNemar.
nlohmann::json contrast(const std::vector<GenerationRecord>& records, const std::string& condition_a,
                        const std::string& condition_b, const std::string& intervention = "none",
                        int resamples = 10000, std::uint64_t seed = 0);

struct RunOutcome {
  std::string run_id;
  std::filesystem::path dir;
  Artifacts artifacts;
  std::vector<TableName> tables;
  /// Model calls issued by this invocation (0 when fully cached).
  std::uint64_t model_calls = 0;
  std::size_t problems = 0;
  std::vector<DatasetIssue> dataset_errors;
};

/// Loads the plan's dataset, opens (or resumes) its run under `out_dir`,
/// collects, analyses and writes artifacts and tables. Uses `backend` when
/// given, otherwise builds one from plan.backend.
RunOutcome run_plan(const ExperimentPlan& plan, const std::filesystem::path& out_dir, ModelBackend* backend = nullptr);

/// Reads a records.jsonl file (IntegrityError on malformed lines).
std::vector<GenerationRecord> load_records_file(const std::filesystem::path& path);

}  // namespace cotprobe
