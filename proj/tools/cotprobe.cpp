// Command-line front end: ingest, run, report, stats, serve-sim, verify, fixture.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <iostream>
#include <map>
#include <memory>

#include "CLI11.hpp"
#include "cotprobe/corpus.hpp"
#include "cotprobe/fixtures.hpp"
#include "cotprobe/harness.hpp"
#include "cotprobe/report.hpp"
#include "cotprobe/simbots.hpp"
#include "cotprobe/store.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kIncomplete = 3,
  kIntegrity = 4,
  kPlanInvalid = 5,
};

struct Globals {
  std::string out = "runs";
  std::string backend;
  std::vector<int> seeds;
  int parallelism = 0;
};

int cmd_ingest(const std::string& path, const std::string& format_name) {
  const auto format = cotprobe::dataset_format_from_string(format_name);
  if (!format) {
    std::cerr << "unknown dataset format '" << format_name << "'\n";
    return kUsage;
  }
  const auto ds = cotprobe::load_dataset(path, *format);
  std::size_t steps = 0, with_answer_step = 0, fallback = 0;
  for (const auto& p : ds.problems) {
    const auto trace = cotprobe::parse_trace(p.reference_cot, p.gold);
    steps += trace.steps.size();
    with_answer_step += trace.answer_step_index ? 1 : 0;
    fallback += trace.sentence_fallback ? 1 : 0;
  }
  json summary{{"dataset", path},
               {"format", format_name},
               {"problems", ds.problems.size()},
               {"errors", ds.errors.size()},
               {"skipped", ds.skipped.size()},
               {"mean_steps", ds.problems.empty() ? 0.0 : static_cast<double>(steps) / static_cast<double>(ds.problems.size())},
               {"gold_in_cot", with_answer_step},
               {"sentence_fallback", fallback},
               {"sha256", cotprobe::sha256_hex(cotprobe::read_file(path))}};
  for (const auto& e : ds.errors) std::cerr << path << ":" << e.line << ": " << e.message << "\n";
  for (const auto& e : ds.skipped) std::cerr << path << ":" << e.line << ": skipped: " << e.message << "\n";
  std::cout << summary.dump(2) << "\n";
  return ds.errors.empty() ? kOk : kFailure;
}

int cmd_run(const Globals& g, const std::string& plan_path) {
  cotprobe::ExperimentPlan plan;
  try {
    plan = cotprobe::load_plan(plan_path);
  } catch (const cotprobe::PlanError& e) {
    std::cerr << "invalid plan " << plan_path << ":\n";
    for (const auto& issue : e.issues())
      std::cerr << "  " << (issue.pointer.empty() ? "/" : issue.pointer) << ": " << issue.message << "\n";
    return kPlanInvalid;
  }
  if (!g.backend.empty()) plan.backend = g.backend;
  if (!g.seeds.empty()) plan.seeds = g.seeds;
  if (g.parallelism > 0) plan.parallelism = g.parallelism;

  const auto outcome = cotprobe::run_plan(plan, g.out);
  for (const auto& e : outcome.dataset_errors) std::cerr << plan.dataset << ":" << e.line << ": " << e.message << "\n";
  std::cout << "run " << outcome.run_id << "  (" << outcome.dir.string() << ")\n";
  std::cout << "experiment " << cotprobe::to_string(plan.experiment) << ", " << outcome.problems << " problems, "
            << outcome.model_calls << " model calls\n";
  for (auto t : outcome.tables) std::cout << "\n" << cotprobe::render_table(outcome.artifacts, t).text;
  return kOk;
}

int cmd_report(const Globals& g, const std::string& run_id, const std::string& table_name, bool as_json) {
  const auto store = cotprobe::RunStore::open_existing(g.out, run_id);
  std::vector<cotprobe::TableName> tables;
  if (table_name == "all") {
    tables = cotprobe::all_tables();
  } else if (const auto t = cotprobe::table_from_string(table_name)) {
    tables.push_back(*t);
  } else {
    std::cerr << "unknown table '" << table_name << "'\n";
    return kUsage;
  }
  std::vector<cotprobe::RenderedTable> rendered;
  for (auto t : tables) rendered.push_back(cotprobe::render_table(store, t));
  // "all" lists what the run produced; with nothing produced, show every table absent.
  const bool any = std::any_of(rendered.begin(), rendered.end(), [](const auto& r) { return r.complete; });
  bool complete = true;
  for (const auto& r : rendered) {
    if (table_name == "all" && any && !r.complete) continue;
    complete = complete && r.complete;
    std::cout << (as_json ? r.value.dump(2) + "\n" : r.text);
  }
  return complete ? kOk : kIncomplete;
}

int cmd_stats(const std::string& records_path, const std::string& spec, const std::string& intervention,
              int resamples, std::uint64_t seed) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == spec.size()) {
    std::cerr << "--contrast expects <condition_a>:<condition_b>\n";
    return kUsage;
  }
  const auto records = cotprobe::load_records_file(records_path);
  const auto out = cotprobe::contrast(records, spec.substr(0, colon), spec.substr(colon + 1), intervention, resamples, seed);
  std::cout << out.dump(2) << "\n";
  return kOk;
}

std::atomic<cotprobe::BackendServer*> g_server{nullptr};

int cmd_serve_sim(const std::string& policy, const std::string& host, int port, const std::string& dataset,
                  const std::string& format_name) {
  std::vector<cotprobe::Problem> problems;
  if (!dataset.empty()) {
    const auto format = cotprobe::dataset_format_from_string(format_name);
    if (!format) {
      std::cerr << "unknown dataset format '" << format_name << "'\n";
      return kUsage;
    }
    problems = cotprobe::load_dataset(dataset, *format).problems;
  }
  auto backend = cotprobe::make_backend("sim:" + policy, problems);
  cotprobe::BackendServer server(*backend, host, port);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (auto* s = g_server.load()) s->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (auto* s = g_server.load()) s->stop();
  });
  std::cout << "serving sim:" << policy << " on " << host << ":" << server.port() << std::endl;
  server.wait();
  g_server = nullptr;
  return kOk;
}

int cmd_fixture(const std::string& kind, std::size_t count, std::uint64_t seed, const std::string& out) {
  std::vector<cotprobe::Problem> problems;
  if (kind == "arithmetic") {
    cotprobe::FixtureOptions opts;
    opts.count = count;
    opts.seed = seed;
    problems = cotprobe::problems_of(cotprobe::make_arithmetic_fixture(opts));
  } else if (kind == "tokens") {
    problems = cotprobe::make_token_fixture(count, seed);
  } else if (kind == "letters") {
    problems = cotprobe::make_letter_fixture(count, seed);
  } else {
    std::cerr << "unknown fixture kind '" << kind << "' (arithmetic, tokens, letters)\n";
    return kUsage;
  }
  if (out == "-")
    cotprobe::write_dataset(std::cout, problems);
  else
    cotprobe::write_dataset(fs::path(out), problems);
  return kOk;
}

int cmd_verify(const Globals& g, const std::string& run_id) {
  const auto store = cotprobe::RunStore::open_existing(g.out, run_id);
  const auto rep = cotprobe::verify_run(store);
  std::cout << "records " << rep.records << ", artifacts checked " << rep.artifacts_checked << ", tables checked "
            << rep.tables_checked << "\n";
  for (const auto& p : rep.problems) std::cout << "FAIL " << p << "\n";
  std::cout << (rep.ok() ? "verify: ok" : "verify: integrity failure") << "\n";
  return rep.ok() ? kOk : kIntegrity;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probe how models use injected chains of thought"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--out", g.out, "Run directory root")->capture_default_str();
  app.add_option("--backend", g.backend, "Backend: sim:<policy> or an http:// URL (overrides the plan)");
  app.add_option("--seed-list", g.seeds, "Comma-separated seed indices (overrides the plan)")->delimiter(',');
  app.add_option("--parallelism", g.parallelism, "In-flight plain generate requests")->check(CLI::PositiveNumber);

  std::string ingest_path, ingest_format = "generic_jsonl";
  auto* ingest = app.add_subcommand("ingest", "Parse a dataset and summarise it");
  ingest->add_option("dataset", ingest_path)->required();
  ingest->add_option("--format", ingest_format)->capture_default_str();

  std::string plan_path;
  auto* run = app.add_subcommand("run", "Run an experiment plan (cached calls are skipped)");
  run->add_option("plan", plan_path)->required();

  std::string run_id, table = "all";
  bool as_json = false;
  auto* report = app.add_subcommand("report", "Render a stored table");
  report->add_option("run_id", run_id)->required();
  report->add_option("--table", table, "Table name or 'all'")->capture_default_str();
  report->add_flag("--json", as_json, "Print the JSON sibling instead of text");

  std::string records_path, contrast_spec, intervention = "none";
  int resamples = 10000;
  std::uint64_t stats_seed = 0;
  auto* stats = app.add_subcommand("stats", "Paired contrast over a records file");
  stats->add_option("records", records_path)->required();
  stats->add_option("--contrast", contrast_spec, "<condition_a>:<condition_b>")->required();
  stats->add_option("--intervention", intervention)->capture_default_str();
  stats->add_option("--resamples", resamples)->capture_default_str();
  stats->add_option("--bootstrap-seed", stats_seed)->capture_default_str();

  std::string policy, host = "127.0.0.1", serve_dataset, serve_format = "generic_jsonl";
  int port = 8080;
  auto* serve = app.add_subcommand("serve-sim", "Serve a simbot over the wire protocol");
  serve->add_option("policy", policy)->required();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--dataset", serve_dataset, "Fixture the simbot is fitted to");
  serve->add_option("--format", serve_format)->capture_default_str();

  std::string fixture_kind = "arithmetic", fixture_out = "-";
  std::size_t fixture_count = 100;
  std::uint64_t fixture_seed = 0;
  auto* fixture = app.add_subcommand("fixture", "Write a synthetic fixture dataset");
  fixture->add_option("kind", fixture_kind, "arithmetic, tokens or letters")->capture_default_str();
  fixture->add_option("--count", fixture_count)->capture_default_str();
  fixture->add_option("--seed", fixture_seed)->capture_default_str();
  fixture->add_option("-o,--output", fixture_out, "Output path, '-' for stdout")->capture_default_str();

  std::string verify_id;
  auto* verify = app.add_subcommand("verify", "Re-check a stored run");
  verify->add_option("run_id", verify_id)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*ingest) return cmd_ingest(ingest_path, ingest_format);
    if (*run) return cmd_run(g, plan_path);
    if (*report) return cmd_report(g, run_id, table, as_json);
    if (*stats) return cmd_stats(records_path, contrast_spec, intervention, resamples, stats_seed);
    if (*serve) return cmd_serve_sim(policy, host, port, serve_dataset, serve_format);
    if (*verify) return cmd_verify(g, verify_id);
    if (*fixture) return cmd_fixture(fixture_kind, fixture_count, fixture_seed, fixture_out);
  } catch (const cotprobe::IntegrityError& e) {
    std::cerr << "integrity failure: " << e.what() << "\n";
    return kIntegrity;
  } catch (const cotprobe::PlanError& e) {
    for (const auto& issue : e.issues()) std::cerr << issue.pointer << ": " << issue.message << "\n";
    return kPlanInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  std::cerr << app.help();
  return kUsage;
}
