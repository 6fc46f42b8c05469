#include "augmult/harness.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "augmult/errors.hpp"
#include "augmult/rng.hpp"

namespace augmult {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_csv_value(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9.0e15) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
    return buf;
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// key = value lines; '#' starts a comment; preserves first-seen order.
std::vector<std::pair<std::string, std::string>> parse_kv(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + " has no '=': " + line);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has empty key");
    out.emplace_back(key, value);
  }
  return out;
}

int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected unsigned integer, got '" + v + "'");
  }
}

double parse_f64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

Scheme scheme_from_string(const std::string& s) {
  std::vector<std::string> parts = split(s, '-');
  if (parts.size() != 2)
    throw ConfigError("scheme must look like FIXED-WITHIN, got '" + s + "'");
  Scheme sc{size_mode_from_name(parts[0]), placement_from_name(parts[1])};
  if (!scheme_valid(sc)) throw ConfigError("invalid scheme '" + s + "'");
  return sc;
}

void derive_b_u(const Scheme& scheme, int n, int64_t b_or_u, int64_t* batch, int64_t* unique) {
  if (scheme.size_mode == SizeMode::kGrowing) {
    *unique = b_or_u;
    *batch = b_or_u * n;
  } else if (scheme.placement == Placement::kWithin) {
    *batch = b_or_u;
    *unique = b_or_u / n;
  } else {
    *batch = b_or_u;
    *unique = b_or_u;
  }
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------- DataSpec

std::string DataSpec::to_string() const {
  std::ostringstream os;
  if (kind == Kind::kSynth) {
    os << "synth:classes=" << classes << ",per_class=" << per_class << ",h=" << height
       << ",w=" << width << ",c=" << channels << ",seed=" << seed;
  } else {
    os << "cifar:classes=" << classes << ",train=";
    for (size_t i = 0; i < train_paths.size(); ++i) os << (i ? ";" : "") << train_paths[i];
    os << ",test=" << test_path;
  }
  return os.str();
}

DataSpec DataSpec::parse(const std::string& text) {
  size_t colon = text.find(':');
  if (colon == std::string::npos)
    throw ConfigError("dataset must look like synth:... or cifar:..., got '" + text + "'");
  std::string kind_str = text.substr(0, colon);
  DataSpec ds;
  if (kind_str == "synth")
    ds.kind = Kind::kSynth;
  else if (kind_str == "cifar")
    ds.kind = Kind::kCifar;
  else
    throw ConfigError("unknown dataset kind '" + kind_str + "'");

  for (const std::string& item : split(text.substr(colon + 1), ',')) {
    if (trim(item).empty()) continue;
    size_t eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("bad dataset field '" + item + "'");
    std::string k = trim(item.substr(0, eq));
    std::string v = trim(item.substr(eq + 1));
    if (k == "classes") ds.classes = static_cast<int>(parse_i64(k, v));
    else if (k == "per_class" && ds.kind == Kind::kSynth) ds.per_class = static_cast<int>(parse_i64(k, v));
    else if (k == "h" && ds.kind == Kind::kSynth) ds.height = static_cast<int>(parse_i64(k, v));
    else if (k == "w" && ds.kind == Kind::kSynth) ds.width = static_cast<int>(parse_i64(k, v));
    else if (k == "c" && ds.kind == Kind::kSynth) ds.channels = static_cast<int>(parse_i64(k, v));
    else if (k == "seed" && ds.kind == Kind::kSynth) ds.seed = parse_u64(k, v);
    else if (k == "train" && ds.kind == Kind::kCifar) ds.train_paths = split(v, ';');
    else if (k == "test" && ds.kind == Kind::kCifar) ds.test_path = v;
    else throw ConfigError("unknown dataset field '" + k + "' for kind " + kind_str);
  }
  return ds;
}

std::pair<Dataset, Dataset> DataSpec::load() const {
  if (kind == Kind::kSynth)
    return synth_dataset(classes, per_class, height, width, channels, seed);
  CifarLayout layout;
  layout.classes = classes;
  return load_cifar(train_paths, test_path, layout);
}

// ----------------------------------------------------------------- RunSpec

std::string RunSpec::canonical() const {
  std::ostringstream os;
  os << "size_mode=" << size_mode_name(train.scheme.size_mode) << "\n"
     << "placement=" << placement_name(train.scheme.placement) << "\n"
     << "n=" << train.n << "\n"
     << "b_or_u=" << train.b_or_u << "\n"
     << "base_lr=" << fmt_double(train.base_lr) << "\n"
     << "momentum=" << fmt_double(train.momentum) << "\n"
     << "weight_decay=" << fmt_double(train.weight_decay) << "\n"
     << "schedule=" << schedule_name(train.schedule) << "\n"
     << "epoch_budget=" << train.epoch_budget << "\n"
     << "label_smoothing=" << fmt_double(train.label_smoothing) << "\n"
     << "dropout_p=" << fmt_double(train.dropout_p) << "\n"
     << "run_seed=" << train.run_seed << "\n"
     << "blocks_per_stage=" << model.blocks_per_stage << "\n"
     << "base_width=" << model.base_width << "\n"
     << "pad=" << policy.pad << "\n"
     << "flip_prob=" << fmt_double(policy.flip_prob) << "\n"
     << "augment_enabled=" << (policy.enabled ? "true" : "false") << "\n"
     << "dataset=" << data.to_string() << "\n";
  return os.str();
}

std::string RunSpec::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical())));
  return buf;
}

namespace {

// Applies one key to a RunSpec; returns false when the key is unknown.
bool apply_run_key(RunSpec& rs, const std::string& k, const std::string& v) {
  if (k == "size_mode") rs.train.scheme.size_mode = size_mode_from_name(v);
  else if (k == "placement") rs.train.scheme.placement = placement_from_name(v);
  else if (k == "n") rs.train.n = static_cast<int>(parse_i64(k, v));
  else if (k == "b_or_u") rs.train.b_or_u = parse_i64(k, v);
  else if (k == "base_lr") rs.train.base_lr = parse_f64(k, v);
  else if (k == "momentum") rs.train.momentum = parse_f64(k, v);
  else if (k == "weight_decay") rs.train.weight_decay = parse_f64(k, v);
  else if (k == "schedule") rs.train.schedule = schedule_from_name(v);
  else if (k == "epoch_budget") rs.train.epoch_budget = parse_i64(k, v);
  else if (k == "label_smoothing") rs.train.label_smoothing = parse_f64(k, v);
  else if (k == "dropout_p") rs.train.dropout_p = parse_f64(k, v);
  else if (k == "run_seed") rs.train.run_seed = parse_u64(k, v);
  else if (k == "blocks_per_stage") rs.model.blocks_per_stage = static_cast<int>(parse_i64(k, v));
  else if (k == "base_width") rs.model.base_width = static_cast<int>(parse_i64(k, v));
  else if (k == "pad") rs.policy.pad = static_cast<int>(parse_i64(k, v));
  else if (k == "flip_prob") rs.policy.flip_prob = parse_f64(k, v);
  else if (k == "augment_enabled") rs.policy.enabled = parse_bool(k, v);
  else if (k == "dataset") rs.data = DataSpec::parse(v);
  else if (k == "record_wall_ms") rs.record_wall_ms = parse_bool(k, v);
  else return false;
  return true;
}

}  // namespace

RunSpec parse_run_spec(const std::string& text) {
  RunSpec rs;
  for (const auto& [k, v] : parse_kv(text))
    if (!apply_run_key(rs, k, v)) throw ConfigError("unknown config key '" + k + "'");
  validate_config(rs.train);
  return rs;
}

RunSpec parse_run_spec_file(const std::string& path) { return parse_run_spec(read_file(path)); }

// --------------------------------------------------------------- RunRecord

std::string RunRecord::to_json() const {
  nlohmann::json j;
  j["kind"] = "run";
  j["fingerprint"] = fingerprint;
  j["size_mode"] = size_mode;
  j["placement"] = placement;
  j["n"] = n;
  j["B"] = batch_size;
  j["U"] = unique_per_batch;
  j["lr"] = lr;
  j["temperature"] = temperature;
  j["epoch_budget"] = epoch_budget;
  j["seed"] = seed;
  j["step"] = step;
  j["epoch"] = epoch;
  j["dataset_passes"] = dataset_passes;
  if (std::isfinite(train_loss_raw)) j["train_loss_raw"] = train_loss_raw;
  else j["train_loss_raw"] = nullptr;
  j["test_acc"] = test_acc;
  j["wall_ms"] = wall_ms;
  j["status"] = status;
  return j.dump();
}

RunRecord RunRecord::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  RunRecord r;
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.size_mode = j.at("size_mode").get<std::string>();
  r.placement = j.at("placement").get<std::string>();
  r.n = j.at("n").get<int>();
  r.batch_size = j.at("B").get<int64_t>();
  r.unique_per_batch = j.at("U").get<int64_t>();
  r.lr = j.at("lr").get<double>();
  r.temperature = j.at("temperature").get<double>();
  r.epoch_budget = j.at("epoch_budget").get<int64_t>();
  r.seed = j.at("seed").get<uint64_t>();
  r.step = j.at("step").get<int64_t>();
  r.epoch = j.at("epoch").get<int64_t>();
  r.dataset_passes = j.at("dataset_passes").get<int64_t>();
  r.train_loss_raw = j.at("train_loss_raw").is_null()
                         ? std::nan("")
                         : j.at("train_loss_raw").get<double>();
  r.test_acc = j.at("test_acc").get<double>();
  r.wall_ms = j.at("wall_ms").get<int64_t>();
  r.status = j.at("status").get<std::string>();
  return r;
}

std::string VarianceEntry::to_json() const {
  nlohmann::json j = nlohmann::json::parse(report.to_json());
  j["kind"] = "variance";
  j["seed"] = seed;
  return j.dump();
}

VarianceEntry VarianceEntry::from_json(const std::string& text) {
  VarianceEntry e;
  e.report = VarianceReport::from_json(text);
  nlohmann::json j = nlohmann::json::parse(text);
  e.seed = j.value("seed", uint64_t{0});
  return e;
}

// ------------------------------------------------------------------ ledger

uint32_t crc32(const std::string& payload) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = 0xFFFFFFFFu;
  for (unsigned char ch : payload) c = table[(c ^ ch) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::string frame_line(const std::string& payload) {
  char buf[10];
  std::snprintf(buf, sizeof buf, "%08x", crc32(payload));
  return payload + " " + buf;
}

bool unframe_line(const std::string& line, std::string* payload) {
  size_t sp = line.find_last_of(' ');
  if (sp == std::string::npos || line.size() - sp - 1 != 8) return false;
  std::string body = line.substr(0, sp);
  uint32_t stored = 0;
  for (size_t i = sp + 1; i < line.size(); ++i) {
    char c = line[i];
    uint32_t d;
    if (c >= '0' && c <= '9') d = static_cast<uint32_t>(c - '0');
    else if (c >= 'a' && c <= 'f') d = static_cast<uint32_t>(c - 'a' + 10);
    else return false;
    stored = (stored << 4) | d;
  }
  if (crc32(body) != stored) return false;
  *payload = body;
  return true;
}

std::vector<std::string> read_framed_lines(const std::string& path, bool* had_corruption) {
  std::vector<std::string> out;
  if (had_corruption) *had_corruption = false;
  std::ifstream f(path);
  if (!f) return out;
  std::string line;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    std::string payload;
    if (unframe_line(line, &payload)) out.push_back(std::move(payload));
    else if (had_corruption) *had_corruption = true;
  }
  return out;
}

void append_framed_line(const std::string& path, const std::string& payload) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("cannot open ledger for append: " + path);
  f << frame_line(payload) << "\n";
  f.flush();
  if (!f) throw IoError("ledger write failed: " + path);
}

Ledger read_ledger(const std::string& path) {
  Ledger ledger;
  for (const std::string& payload : read_framed_lines(path, &ledger.had_corruption)) {
    try {
      nlohmann::json j = nlohmann::json::parse(payload);
      std::string kind = j.value("kind", "run");
      if (kind == "run") ledger.runs.push_back(RunRecord::from_json(payload));
      else if (kind == "variance") ledger.variances.push_back(VarianceEntry::from_json(payload));
      else ledger.had_corruption = true;
    } catch (const nlohmann::json::exception&) {
      ledger.had_corruption = true;
    }
  }
  return ledger;
}

// ---------------------------------------------------------------- training

RunStatus run_to_ledger(const RunSpec& spec, const Dataset& train_data,
                        const Dataset& test_data, const std::string& ledger_path,
                        bool parallel) {
  ModelConfig mc = spec.model;
  mc.classes = train_data.classes;
  mc.in_channels = train_data.channels();
  SmallResNet model(mc);

  int64_t batch = 0, unique = 0;
  derive_b_u(spec.train.scheme, spec.train.n, spec.train.b_or_u, &batch, &unique);
  std::string fp = spec.fingerprint();

  auto emit = [&](const EvalPoint& pt) {
    RunRecord r;
    r.fingerprint = fp;
    r.size_mode = size_mode_name(spec.train.scheme.size_mode);
    r.placement = placement_name(spec.train.scheme.placement);
    r.n = spec.train.n;
    r.batch_size = batch;
    r.unique_per_batch = unique;
    r.lr = spec.train.base_lr;
    r.temperature = temperature(spec.train);
    r.epoch_budget = spec.train.epoch_budget;
    r.seed = spec.train.run_seed;
    r.step = pt.step;
    r.epoch = pt.epoch;
    r.dataset_passes = pt.dataset_passes;
    r.train_loss_raw = pt.train_loss_raw;
    r.test_acc = pt.test_acc;
    r.wall_ms = pt.wall_ms;
    r.status = status_name(pt.status);
    append_framed_line(ledger_path, r.to_json());
  };

  TrainOutcome outcome = train(model, spec.train, spec.policy, train_data, test_data, emit,
                               parallel, spec.record_wall_ms);
  return outcome.final_status;
}

// ------------------------------------------------------------------- sweep

void SweepSpec::validate() const {
  if (schemes.empty() || n_values.empty() || lr_grid.empty() || epoch_budgets.empty())
    throw ConfigError("sweep axes must all be non-empty");
  for (const Scheme& s : schemes)
    if (!scheme_valid(s)) throw ConfigError("invalid scheme in sweep");
  for (int n : n_values)
    if (n < 1) throw ConfigError("n values must be >= 1");
  for (size_t i = 1; i < lr_grid.size(); ++i) {
    double expect = 2.0 * lr_grid[i - 1];
    if (std::abs(lr_grid[i] - expect) > 1e-9 * expect)
      throw ConfigError("learning-rate grid must increase by factors of 2; got " +
                        fmt_double(lr_grid[i - 1]) + " then " + fmt_double(lr_grid[i]));
  }
  if (lr_grid[0] <= 0.0) throw ConfigError("learning rates must be positive");
  for (int64_t m : epoch_budgets)
    if (m < 1) throw ConfigError("epoch budgets must be >= 1");
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (agg_top_k < 1 || agg_top_k > repeats)
    throw ConfigError("agg_top_k must be in [1, repeats]");
}

SweepSpec parse_sweep_spec(const std::string& text) {
  SweepSpec sp;
  bool have_scheme = false, have_n = false, have_lr = false, have_budget = false;
  for (const auto& [k, v] : parse_kv(text)) {
    if (k == "schemes") {
      for (const std::string& s : split(v, ','))
        sp.schemes.push_back(scheme_from_string(trim(s)));
      have_scheme = true;
    } else if (k == "n_values") {
      for (const std::string& s : split(v, ','))
        sp.n_values.push_back(static_cast<int>(parse_i64(k, trim(s))));
      have_n = true;
    } else if (k == "lr_grid") {
      for (const std::string& s : split(v, ',')) sp.lr_grid.push_back(parse_f64(k, trim(s)));
      have_lr = true;
    } else if (k == "epoch_budgets") {
      for (const std::string& s : split(v, ',')) sp.epoch_budgets.push_back(parse_i64(k, trim(s)));
      have_budget = true;
    } else if (k == "repeats") {
      sp.repeats = static_cast<int>(parse_i64(k, v));
    } else if (k == "agg_top_k") {
      sp.agg_top_k = static_cast<int>(parse_i64(k, v));
    } else if (k == "base_seed") {
      sp.base_seed = parse_u64(k, v);
    } else if (k == "n" || k == "base_lr" || k == "epoch_budget" || k == "run_seed" ||
               k == "size_mode" || k == "placement") {
      throw ConfigError("key '" + k + "' is a sweep axis; set it via the axis lists");
    } else if (!apply_run_key(sp.base, k, v)) {
      throw ConfigError("unknown sweep key '" + k + "'");
    }
  }
  if (!have_scheme || !have_n || !have_lr || !have_budget)
    throw ConfigError("sweep spec needs schemes, n_values, lr_grid and epoch_budgets");
  sp.validate();
  return sp;
}

SweepSpec parse_sweep_spec_file(const std::string& path) {
  return parse_sweep_spec(read_file(path));
}

namespace {

// Drops rows belonging to cells that never finished, so a resumed sweep
// reruns them from scratch and the final ledger matches an uninterrupted
// one. Kept lines are rewritten byte-identically.
void compact_ledger(const std::string& path, const std::set<std::string>& completed) {
  bool corrupt = false;
  std::vector<std::string> payloads = read_framed_lines(path, &corrupt);
  if (payloads.empty() && !corrupt && !std::filesystem::exists(path)) return;
  std::vector<std::string> keep;
  for (const std::string& p : payloads) {
    try {
      nlohmann::json j = nlohmann::json::parse(p);
      if (j.value("kind", "run") == "run" && !completed.count(j.value("fingerprint", "")))
        continue;
      keep.push_back(p);
    } catch (const nlohmann::json::exception&) {
      // unparseable rows are dropped with the incomplete ones
    }
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot rewrite ledger: " + path);
  for (const std::string& p : keep) f << frame_line(p) << "\n";
}

}  // namespace

SweepOutcome run_sweep(const SweepSpec& spec, const std::string& ledger_path, bool parallel) {
  spec.validate();

  Ledger existing = read_ledger(ledger_path);
  std::set<std::string> completed;
  for (const RunRecord& r : existing.runs)
    if (r.status == "FINAL" || r.status == "DIVERGED") completed.insert(r.fingerprint);
  if (std::filesystem::exists(ledger_path)) compact_ledger(ledger_path, completed);

  // Datasets are shared across cells; load once per distinct spec.
  std::map<std::string, std::pair<Dataset, Dataset>> data_cache;
  auto data_for = [&](const DataSpec& ds) -> std::pair<Dataset, Dataset>& {
    std::string key = ds.to_string();
    auto it = data_cache.find(key);
    if (it == data_cache.end()) it = data_cache.emplace(key, ds.load()).first;
    return it->second;
  };

  SweepOutcome outcome;
  for (size_t si = 0; si < spec.schemes.size(); ++si) {
    for (int n : spec.n_values) {
      for (int64_t budget : spec.epoch_budgets) {
        for (double lr : spec.lr_grid) {
          for (int rep = 0; rep < spec.repeats; ++rep) {
            RunSpec rs = spec.base;
            rs.train.scheme = spec.schemes[si];
            rs.train.n = n;
            rs.train.base_lr = lr;
            rs.train.epoch_budget = budget;
            rs.train.run_seed =
                hash_combine(spec.base_seed, static_cast<uint64_t>(si), static_cast<uint64_t>(n),
                             std::bit_cast<uint64_t>(lr), static_cast<uint64_t>(budget),
                             static_cast<uint64_t>(rep));
            validate_config(rs.train);
            if (completed.count(rs.fingerprint())) {
              ++outcome.skipped;
              continue;
            }
            auto& [train_data, test_data] = data_for(rs.data);
            RunStatus status = run_to_ledger(rs, train_data, test_data, ledger_path, parallel);
            ++outcome.executed;
            if (status == RunStatus::kDiverged) ++outcome.diverged;
          }
        }
      }
    }
  }
  return outcome;
}

// ------------------------------------------------------------- aggregation

CellAggregate aggregate_best_k(const CellKey& key, const std::vector<RunRecord>& cell_finals,
                               int top_k, int expected) {
  CellAggregate agg;
  agg.key = key;
  agg.count = static_cast<int>(cell_finals.size());
  agg.complete = agg.count == expected;
  if (!agg.complete) return agg;

  std::vector<double> accs;
  accs.reserve(cell_finals.size());
  for (const RunRecord& r : cell_finals) {
    accs.push_back(r.status == "DIVERGED" ? 0.0 : r.test_acc);
    agg.final_step = std::max(agg.final_step, r.step);
  }
  std::sort(accs.rbegin(), accs.rend());
  accs.resize(static_cast<size_t>(top_k));
  double mean = 0.0;
  for (double a : accs) mean += a;
  mean /= top_k;
  double var = 0.0;
  for (double a : accs) var += (a - mean) * (a - mean);
  agg.mean_acc = mean;
  agg.stderr_acc = top_k > 1 ? std::sqrt(var / (top_k - 1)) / std::sqrt(static_cast<double>(top_k))
                             : 0.0;
  return agg;
}

std::vector<CellAggregate> aggregate_ledger(const Ledger& ledger, int top_k, int expected,
                                            std::vector<CellKey>* incomplete) {
  std::map<CellKey, std::vector<RunRecord>> cells;
  for (const RunRecord& r : ledger.runs) {
    if (r.status != "FINAL" && r.status != "DIVERGED") continue;
    CellKey key{r.size_mode, r.placement, r.n, r.lr, r.epoch_budget};
    cells[key].push_back(r);
  }
  std::vector<CellAggregate> out;
  for (const auto& [key, records] : cells) {
    CellAggregate agg = aggregate_best_k(key, records, top_k, expected);
    if (agg.complete) out.push_back(agg);
    else if (incomplete) incomplete->push_back(key);
  }
  return out;
}

const CellAggregate* best_over_lr(const std::vector<const CellAggregate*>& cells) {
  const CellAggregate* best = nullptr;
  for (const CellAggregate* c : cells) {
    if (!best || c->mean_acc > best->mean_acc ||
        (c->mean_acc == best->mean_acc && c->key.lr < best->key.lr))
      best = c;
  }
  return best;
}

// ------------------------------------------------------------------ report

ReportView view_from_name(const std::string& name) {
  if (name == "acc_vs_epochs") return ReportView::kAccVsEpochs;
  if (name == "acc_vs_updates") return ReportView::kAccVsUpdates;
  if (name == "acc_vs_lr") return ReportView::kAccVsLr;
  if (name == "acc_vs_temperature") return ReportView::kAccVsTemperature;
  if (name == "loss_vs_updates") return ReportView::kLossVsUpdates;
  if (name == "variance_vs_n") return ReportView::kVarianceVsN;
  throw ConfigError("unknown report view '" + name + "'");
}

namespace {

struct Row {
  std::string series;
  double x, y, yerr;
};

std::string series_for(const CellKey& k, bool with_lr, bool with_budget) {
  std::ostringstream os;
  os << k.size_mode << "-" << k.placement << " n=" << k.n;
  if (with_budget) os << " m=" << k.epoch_budget;
  if (with_lr) os << " lr=" << fmt_csv_value(k.lr);
  return os.str();
}

}  // namespace

bool report_view(const Ledger& ledger, ReportView view, int top_k, int expected,
                 std::string* csv) {
  std::vector<Row> rows;

  if (view == ReportView::kVarianceVsN) {
    // series per (scheme, b_or_u); mean and stderr across repeated entries
    std::map<std::pair<std::string, int>, std::vector<double>> groups;
    std::map<std::pair<std::string, int>, std::string> series_names;
    for (const VarianceEntry& e : ledger.variances) {
      std::ostringstream os;
      os << e.report.size_mode << "-" << e.report.placement << " B_or_U=" << e.report.b_or_u;
      groups[{os.str(), e.report.n}].push_back(e.report.overall);
      series_names[{os.str(), e.report.n}] = os.str();
    }
    for (const auto& [key, vals] : groups) {
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      double se = vals.size() > 1
                      ? std::sqrt(var / static_cast<double>(vals.size() - 1)) /
                            std::sqrt(static_cast<double>(vals.size()))
                      : 0.0;
      rows.push_back({key.first, static_cast<double>(key.second), mean, se});
    }
  } else if (view == ReportView::kLossVsUpdates) {
    for (const RunRecord& r : ledger.runs) {
      if (!std::isfinite(r.train_loss_raw)) continue;
      std::ostringstream os;
      os << r.size_mode << "-" << r.placement << " n=" << r.n << " m=" << r.epoch_budget
         << " lr=" << fmt_csv_value(r.lr) << " seed=" << r.seed;
      rows.push_back({os.str(), static_cast<double>(r.step), r.train_loss_raw, 0.0});
    }
  } else {
    std::vector<CellAggregate> aggs = aggregate_ledger(ledger, top_k, expected, nullptr);
    if (view == ReportView::kAccVsLr) {
      for (const CellAggregate& a : aggs)
        rows.push_back({series_for(a.key, false, true), a.key.lr, a.mean_acc, a.stderr_acc});
    } else if (view == ReportView::kAccVsTemperature) {
      for (const CellAggregate& a : aggs)
        rows.push_back({series_for(a.key, false, true), a.key.lr * a.key.n, a.mean_acc,
                        a.stderr_acc});
    } else {
      // best-over-lr per (scheme, n, budget) family
      std::map<std::tuple<std::string, std::string, int, int64_t>,
               std::vector<const CellAggregate*>>
          families;
      for (const CellAggregate& a : aggs)
        families[{a.key.size_mode, a.key.placement, a.key.n, a.key.epoch_budget}].push_back(&a);
      for (const auto& [fam, cells] : families) {
        const CellAggregate* best = best_over_lr(cells);
        if (!best) continue;
        CellKey k = best->key;
        double x = view == ReportView::kAccVsEpochs ? static_cast<double>(k.epoch_budget)
                                                    : static_cast<double>(best->final_step);
        rows.push_back({series_for(k, false, false), x, best->mean_acc, best->stderr_acc});
      }
    }
  }

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.series != b.series) return a.series < b.series;
    return a.x < b.x;
  });

  std::ostringstream os;
  os << "series_key,x,y,yerr\n";
  for (const Row& r : rows)
    os << "\"" << r.series << "\"," << fmt_csv_value(r.x) << "," << fmt_csv_value(r.y) << ","
       << fmt_csv_value(r.yerr) << "\n";
  *csv = os.str();
  return !rows.empty();
}

bool temperature_audit(const Ledger& ledger, std::string* first_violation) {
  for (const RunRecord& r : ledger.runs) {
    double expect = r.lr * r.n;
    if (std::abs(r.temperature - expect) > 1e-12 * std::max(1.0, std::abs(expect))) {
      if (first_violation) {
        std::ostringstream os;
        os << "fingerprint " << r.fingerprint << " step " << r.step << ": temperature "
           << fmt_double(r.temperature) << " != lr*n " << fmt_double(expect);
        *first_violation = os.str();
      }
      return false;
    }
  }
  return true;
}

}  // namespace augmult
