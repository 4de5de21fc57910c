// Python extension: statistics, perturbation generators, simbot policies,
// and the run/verify/report pipeline. Structured results cross the
// boundary as JSON text and are decoded on the Python side.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cotprobe/corpus.hpp"
#include "cotprobe/fixtures.hpp"
#include "cotprobe/harness.hpp"
#include "cotprobe/perturb.hpp"
#include "cotprobe/report.hpp"
#include "cotprobe/simbots.hpp"
#include "cotprobe/stats.hpp"
#include "cotprobe/store.hpp"

namespace py = pybind11;
using namespace cotprobe;
using nlohmann::json;

namespace {

template <class T>
T required(const std::optional<T>& v, const std::string& what) {
  if (!v) throw std::invalid_argument("unknown " + what);
  return *v;
}

Decimal parse_gold(const std::string& gold) {
  const auto d = Decimal::parse(gold);
  if (!d) throw std::invalid_argument("gold is not a number: " + gold);
  return *d;
}

std::string prefix_json(const PerturbedPrefix& p) {
  const auto& m = p.meta;
  json j{{"item_id", p.item_id}, {"condition", p.condition}, {"text", p.text},
         {"delimiter", p.delimiter}, {"seed_used", m.seed_used}};
  j["excluded"] = m.excluded ? json(*m.excluded) : json(nullptr);
  j["distractor_value"] = m.distractor_value ? json(*m.distractor_value) : json(nullptr);
  j["distractor_novel"] = m.distractor_novel ? json(*m.distractor_novel) : json(nullptr);
  j["answer_position"] = m.answer_position ? json(*m.answer_position) : json(nullptr);
  j["truncation_fraction"] = m.truncation_fraction ? json(*m.truncation_fraction) : json(nullptr);
  return j.dump();
}

std::string problems_json(const std::vector<Problem>& problems) {
  json out = json::array();
  for (const auto& p : problems)
    out.push_back({{"id", p.id},
                   {"question", p.question},
                   {"gold", answer_to_string(p.gold)},
                   {"cot", p.reference_cot}});
  return out.dump();
}

std::string corruption(const std::string& cot, const std::string& gold, const std::string& condition,
                       std::int64_t index, const std::string& delimiter) {
  const auto g = parse_gold(gold);
  const auto trace = parse_trace(cot, g);
  const auto id = "item-" + std::to_string(index);
  if (const auto c = corruption_from_string(condition))
    return prefix_json(gen_corruption(id, trace, g, *c, derive_seed(index, condition_tag(*c)), delimiter));
  const auto t = required(truncation_from_string(condition), "condition '" + condition + "'");
  return prefix_json(gen_truncation(id, trace, g, t, delimiter));
}

std::string shuffle(const std::string& cot, const std::string& gold, const std::string& kind_name, std::int64_t index,
                    int seed, const std::string& delimiter) {
  const auto kind = required(shuffle_kind_from_string(kind_name), "shuffle kind '" + kind_name + "'");
  const auto trace = parse_trace(cot, parse_gold(gold));
  const Tokenizer tok = [](std::string_view t) { return SimBackend::whitespace_tokenize(t); };
  return prefix_json(gen_shuffle("item-" + std::to_string(index), trace, kind,
                                 derive_seed(index, shuffle_tag(kind, seed)), seed, tok, delimiter));
}

std::string distractor(const std::string& cot, const std::string& gold, const std::string& kind_name,
                       const std::string& framing_name, std::int64_t index, const std::string& delimiter) {
  const auto kind = required(distractor_kind_from_string(kind_name), "distractor kind '" + kind_name + "'");
  const auto framing = required(framing_from_string(framing_name), "framing '" + framing_name + "'");
  const auto g = parse_gold(gold);
  return prefix_json(gen_distractor("item-" + std::to_string(index), parse_trace(cot, g), g, kind, framing, delimiter,
                                    derive_seed(index, distractor_value_tag(kind))));
}

std::string run(const std::string& plan_path, const std::string& out_dir) {
  const auto outcome = run_plan(load_plan(plan_path), out_dir);
  json artifacts = json::object();
  for (const auto& [k, v] : outcome.artifacts) artifacts[k] = v;
  json tables = json::array();
  for (auto t : outcome.tables) tables.push_back(std::string(to_string(t)));
  return json{{"run_id", outcome.run_id},
              {"dir", outcome.dir.string()},
              {"model_calls", outcome.model_calls},
              {"problems", outcome.problems},
              {"tables", tables},
              {"artifacts", artifacts}}
      .dump();
}

std::string verify(const std::string& out_dir, const std::string& run_id) {
  const auto rep = verify_run(RunStore::open_existing(out_dir, run_id));
  return json{{"ok", rep.ok()},
              {"records", rep.records},
              {"artifacts_checked", rep.artifacts_checked},
              {"tables_checked", rep.tables_checked},
              {"problems", rep.problems}}
      .dump();
}

std::string report(const std::string& out_dir, const std::string& run_id, const std::string& table) {
  const auto name = required(table_from_string(table), "table '" + table + "'");
  return render_table(RunStore::open_existing(out_dir, run_id), name).text;
}

std::string fixture(const std::string& kind, std::size_t count, std::uint64_t seed) {
  if (kind == "arithmetic") {
    FixtureOptions o;
    o.count = count;
    o.seed = seed;
    return problems_json(problems_of(make_arithmetic_fixture(o)));
  }
  if (kind == "tokens") return problems_json(make_token_fixture(count, seed));
  if (kind == "letters") return problems_json(make_letter_fixture(count, seed));
  throw std::invalid_argument("unknown fixture kind '" + kind + "'");
}

py::dict stat(const stats::StatResult& r) {
  py::dict d;
  d["estimate"] = r.estimate;
  d["ci"] = r.ci ? py::object(py::make_tuple(r.ci->low, r.ci->high)) : py::object(py::none());
  d["p"] = r.p_value ? py::object(py::float_(*r.p_value)) : py::object(py::none());
  d["method"] = r.method;
  d["n"] = r.n;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of cotprobe";

  m.def("wilson_ci", [](std::int64_t k, std::int64_t n, double level) { return stat(stats::wilson_ci(k, n, level)); },
        py::arg("k"), py::arg("n"), py::arg("level") = 0.95);
  m.def("mcnemar_exact", [](std::int64_t b, std::int64_t c) { return stat(stats::mcnemar_exact(b, c)); },
        py::arg("b"), py::arg("c"));
  m.def("holm_bonferroni", [](const std::vector<double>& p) { return stats::holm_bonferroni(p); }, py::arg("p"));
  m.def("binom_one_sided",
        [](std::int64_t k, std::int64_t n, double p0) { return stat(stats::binom_one_sided(k, n, p0)); },
        py::arg("k"), py::arg("n"), py::arg("p0") = 0.70);
  m.def("hypergeom_tail", &stats::hypergeom_tail, py::arg("N"), py::arg("K"), py::arg("n"), py::arg("k"));
  m.def("gini", [](const std::vector<double>& v) { return stats::gini(v); }, py::arg("values"));
  m.def("spearman_exact",
        [](const std::vector<double>& x, const std::vector<double>& y) { return stat(stats::spearman_exact(x, y)); },
        py::arg("x"), py::arg("y"));

  m.def("_corruption", &corruption);
  m.def("_shuffle", &shuffle);
  m.def("_distractor", &distractor);
  m.def("copybot", [](const std::string& prefix) { return copybot(prefix); }, py::arg("prefix"));
  m.def("computebot",
        [](const std::string& prefix, const std::optional<std::string>& gold, int depth) {
          std::optional<Decimal> g;
          if (gold) g = parse_gold(*gold);
          return computebot(prefix, g, depth);
        },
        py::arg("prefix"), py::arg("gold") = py::none(), py::arg("depth_limit") = 1);
  m.def("_fixture", &fixture);
  m.def("_run", &run, py::call_guard<py::gil_scoped_release>());
  m.def("_verify", &verify, py::call_guard<py::gil_scoped_release>());
  m.def("report", &report, py::arg("out_dir"), py::arg("run_id"), py::arg("table"));

  py::register_exception<PlanError>(m, "PlanError", PyExc_ValueError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);
}
