#include "cotprobe/store.hpp"

#include <algorithm>
#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "cotprobe/format.hpp"
#include "cotprobe/seeding.hpp"

namespace cotprobe {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void fsync_path(const fs::path& p) {
  const int fd = ::open(p.c_str(), O_RDONLY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

json opt_bool(const std::optional<bool>& v) { return v ? json(*v) : json(nullptr); }
json opt_str(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }

std::optional<bool> read_opt_bool(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<bool>();
}

std::optional<std::string> read_opt_str(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

void check_name(const std::string& name) {
  if (name.empty() || name.find('/') != std::string::npos || name.find("..") != std::string::npos)
    throw std::invalid_argument("invalid store entry name '" + name + "'");
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fsync_path(tmp);
  fs::rename(tmp, path);
}

json record_to_json(const GenerationRecord& r) {
  json j;
  j["item_id"] = r.item_id;
  j["condition"] = r.condition;
  j["intervention"] = r.intervention;
  j["answer_kind"] = std::string(to_string(r.answer_kind));
  j["gold"] = r.gold;
  j["delimiter"] = r.delimiter;
  j["prefix"] = r.prefix;
  j["output_text"] = r.output_text;
  j["extracted_answer"] = r.extracted_answer ? json(answer_to_string(*r.extracted_answer)) : json(nullptr);
  j["is_correct"] = r.is_correct;
  j["matches_last_cot_number"] = opt_bool(r.matches_last_cot_number);
  j["distractor_value"] = opt_str(r.distractor_value);
  j["matches_distractor"] = opt_bool(r.matches_distractor);
  j["excluded"] = opt_str(r.excluded);
  j["meta"] = r.meta;
  j["config_hash"] = r.config_hash;
  return j;
}

GenerationRecord record_from_json(const json& j) {
  GenerationRecord r;
  r.item_id = j.at("item_id").get<std::string>();
  r.condition = j.at("condition").get<std::string>();
  r.intervention = j.value("intervention", std::string("none"));
  const auto kind = answer_kind_from_string(j.at("answer_kind").get<std::string>());
  if (!kind) throw IntegrityError("record has unknown answer_kind");
  r.answer_kind = *kind;
  r.gold = j.at("gold").get<std::string>();
  r.delimiter = j.at("delimiter").get<std::string>();
  r.prefix = j.at("prefix").get<std::string>();
  r.output_text = j.at("output_text").get<std::string>();
  if (auto a = read_opt_str(j, "extracted_answer")) {
    auto parsed = parse_answer(*a, r.answer_kind);
    if (!parsed) throw IntegrityError("record extracted_answer does not parse: " + *a);
    r.extracted_answer = parsed;
  }
  r.is_correct = j.at("is_correct").get<bool>();
  r.matches_last_cot_number = read_opt_bool(j, "matches_last_cot_number");
  r.distractor_value = read_opt_str(j, "distractor_value");
  r.matches_distractor = read_opt_bool(j, "matches_distractor");
  r.excluded = read_opt_str(j, "excluded");
  if (auto it = j.find("meta"); it != j.end() && !it->is_null())
    r.meta = it->get<std::map<std::string, std::string>>();
  r.config_hash = j.value("config_hash", std::string{});
  return r;
}

json stat_to_json(const stats::StatResult& r) {
  json j;
  j["estimate"] = real_to_string(r.estimate);
  j["ci"] = r.ci ? json::array({real_to_string(r.ci->low), real_to_string(r.ci->high)}) : json(nullptr);
  j["p"] = r.p_value ? json(real_to_string(*r.p_value)) : json(nullptr);
  j["method"] = r.method;
  j["n"] = r.n;
  return j;
}

stats::StatResult stat_from_json(const json& j) {
  stats::StatResult r;
  r.estimate = real_from_string(j.at("estimate").get<std::string>());
  if (const auto& ci = j.at("ci"); !ci.is_null())
    r.ci = stats::Interval{real_from_string(ci.at(0).get<std::string>()), real_from_string(ci.at(1).get<std::string>())};
  if (const auto& p = j.at("p"); !p.is_null()) r.p_value = real_from_string(p.get<std::string>());
  r.method = j.at("method").get<std::string>();
  r.n = j.at("n").get<std::int64_t>();
  return r;
}

std::string RunStore::canonical(const json& value) { return value.dump(2) + "\n"; }

std::string RunStore::hash_config(const json& config) { return sha256_hex(config.dump()); }

RunStore RunStore::open_or_create(const fs::path& out_dir, const std::string& run_id, const json& config) {
  check_name(run_id);
  RunStore s;
  s.run_id_ = run_id;
  s.dir_ = out_dir / run_id;
  s.config_ = config;
  s.config_hash_ = hash_config(config);
  const fs::path cfg = s.dir_ / "config.json";
  if (fs::exists(cfg)) {
    json existing;
    try {
      existing = json::parse(read_file(cfg));
    } catch (const json::exception& e) {
      throw IntegrityError("config.json of run " + run_id + " is malformed: " + e.what());
    }
    if (existing != config) throw IntegrityError("run " + run_id + " exists with a different config");
  } else {
    fs::create_directories(s.dir_);
    write_file_atomic(cfg, canonical(config));
  }
  s.load_records();
  return s;
}

RunStore RunStore::open_existing(const fs::path& out_dir, const std::string& run_id) {
  check_name(run_id);
  RunStore s;
  s.run_id_ = run_id;
  s.dir_ = out_dir / run_id;
  const fs::path cfg = s.dir_ / "config.json";
  if (!fs::exists(cfg)) throw std::runtime_error("no run '" + run_id + "' under " + out_dir.string());
  try {
    s.config_ = json::parse(read_file(cfg));
  } catch (const json::exception& e) {
    throw IntegrityError("config.json of run " + run_id + " is malformed: " + e.what());
  }
  s.config_hash_ = hash_config(s.config_);
  s.load_records();
  return s;
}

void RunStore::load_records() {
  const fs::path path = dir_ / "records.jsonl";
  if (!fs::exists(path)) return;
  std::ifstream in(path, std::ios::binary);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    GenerationRecord rec;
    try {
      rec = record_from_json(json::parse(line));
    } catch (const std::exception& e) {
      throw IntegrityError("records.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto key = rec.key();
    if (index_.count(key) != 0)
      throw IntegrityError("records.jsonl line " + std::to_string(line_no) + ": duplicate key for item " +
                           rec.item_id + " / " + rec.condition + " / " + rec.intervention);
    index_[key] = records_.size();
    records_.push_back(std::move(rec));
  }
}

std::size_t RunStore::write_records(const std::vector<GenerationRecord>& records) {
  std::string payload;
  std::vector<const GenerationRecord*> fresh;
  std::map<std::string, const GenerationRecord*> batch;
  for (const auto& rec : records) {
    const auto key = rec.key();
    const std::string line = record_to_json(rec).dump();
    auto check_same = [&](const GenerationRecord& other) {
      if (record_to_json(other).dump() != line)
        throw IntegrityError("conflicting record for item " + rec.item_id + " / " + rec.condition + " / " +
                             rec.intervention);
    };
    if (auto it = index_.find(key); it != index_.end()) {
      check_same(records_[it->second]);
      continue;
    }
    if (auto it = batch.find(key); it != batch.end()) {
      check_same(*it->second);
      continue;
    }
    batch[key] = &rec;
    fresh.push_back(&rec);
    payload += line;
    payload.push_back('\n');
  }
  if (fresh.empty()) return 0;

  const fs::path path = dir_ / "records.jsonl";
  std::FILE* f = std::fopen(path.c_str(), "ab");
  if (f == nullptr) throw std::runtime_error("cannot append to " + path.string());
  const bool ok = std::fwrite(payload.data(), 1, payload.size(), f) == payload.size() && std::fflush(f) == 0;
  ::fsync(::fileno(f));
  std::fclose(f);
  if (!ok) throw std::runtime_error("write failed for " + path.string());

  for (const auto* rec : fresh) {
    index_[rec->key()] = records_.size();
    records_.push_back(*rec);
  }
  return fresh.size();
}

const GenerationRecord* RunStore::find(const std::string& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? nullptr : &records_[it->second];
}

void RunStore::put_measurement(const std::string& name, const json& value) {
  check_name(name);
  const fs::path path = dir_ / "measurements" / (name + ".json");
  const std::string text = canonical(value);
  if (fs::exists(path)) {
    if (read_file(path) != text) throw IntegrityError("conflicting measurement '" + name + "'");
    return;
  }
  write_file_atomic(path, text);
}

std::optional<json> RunStore::measurement(const std::string& name) const {
  check_name(name);
  const fs::path path = dir_ / "measurements" / (name + ".json");
  if (!fs::exists(path)) return std::nullopt;
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IntegrityError("measurement '" + name + "' is malformed: " + e.what());
  }
}

std::map<std::string, json> RunStore::measurements() const {
  std::map<std::string, json> out;
  const fs::path dir = dir_ / "measurements";
  if (!fs::exists(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    const auto name = entry.path().stem().string();
    out[name] = *measurement(name);
  }
  return out;
}

void RunStore::put_artifact(const std::string& name, const json& value) {
  check_name(name);
  write_file_atomic(dir_ / "artifacts" / (name + ".json"), canonical(value));
}

std::optional<json> RunStore::artifact(const std::string& name) const {
  check_name(name);
  const fs::path path = dir_ / "artifacts" / (name + ".json");
  if (!fs::exists(path)) return std::nullopt;
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw IntegrityError("artifact '" + name + "' is malformed: " + e.what());
  }
}

std::vector<std::string> RunStore::artifact_names() const {
  std::vector<std::string> out;
  const fs::path dir = dir_ / "artifacts";
  if (!fs::exists(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".json") out.push_back(entry.path().stem().string());
  std::sort(out.begin(), out.end());
  return out;
}

void RunStore::put_table(const std::string& name, const std::string& text, const json& value) {
  check_name(name);
  write_file_atomic(dir_ / "tables" / (name + ".txt"), text);
  write_file_atomic(dir_ / "tables" / (name + ".json"), canonical(value));
}

std::optional<std::string> RunStore::table_text(const std::string& name) const {
  check_name(name);
  const fs::path path = dir_ / "tables" / (name + ".txt");
  if (!fs::exists(path)) return std::nullopt;
  return read_file(path);
}

}  // namespace cotprobe
