#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnroute/errors.hpp"
#include "attnroute/model.hpp"
#include "attnroute/oracle.hpp"
#include "attnroute/problems.hpp"
#include "attnroute/trainer.hpp"

namespace attnroute::io {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error reading " + path.string());
  return ss.str();
}

/// Writes to a temporary sibling and renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("error writing " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " to " + path.string());
  }
}

// ---------------------------------------------------------------------------
// Instances

inline json to_json(const Instance& inst) {
  auto points = [](const std::vector<Point>& ps) {
    json a = json::array();
    for (const auto& p : ps) a.push_back({p.x, p.y});
    return a;
  };
  json j;
  j["problem"] = to_string(inst.problem);
  j["n"] = inst.n;
  j["seed"] = inst.seed;
  j["coords"] = points(inst.coords);
  j["depot"] = inst.depot ? json{inst.depot->x, inst.depot->y} : json(nullptr);
  j["demands"] = inst.demands;
  j["capacity"] = inst.capacity;
  j["prizes"] = inst.prizes;
  j["prize_mode"] = inst.prize_mode ? json(to_string(*inst.prize_mode)) : json(nullptr);
  j["penalties"] = inst.penalties;
  j["max_length"] = inst.max_length;
  j["min_prize"] = inst.min_prize;
  j["real_prizes"] = json{{"hidden", true}, {"values", inst.real_prizes}};
  return j;
}

inline Instance instance_from_json(const json& j) {
  try {
    Instance inst;
    inst.problem = parse_problem(j.at("problem").get<std::string>());
    inst.n = j.at("n").get<std::size_t>();
    inst.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& p : j.at("coords")) inst.coords.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    if (!j.at("depot").is_null()) inst.depot = Point{j["depot"].at(0).get<double>(), j["depot"].at(1).get<double>()};
    inst.demands = j.at("demands").get<std::vector<int>>();
    inst.capacity = j.at("capacity").get<double>();
    inst.prizes = j.at("prizes").get<std::vector<double>>();
    if (!j.at("prize_mode").is_null()) inst.prize_mode = parse_prize_mode(j["prize_mode"].get<std::string>());
    inst.penalties = j.at("penalties").get<std::vector<double>>();
    inst.max_length = j.at("max_length").get<double>();
    inst.min_prize = j.at("min_prize").get<double>();
    inst.real_prizes = j.at("real_prizes").at("values").get<std::vector<double>>();
    if (inst.coords.size() != inst.n || has_depot(inst.problem) != inst.depot.has_value()) {
      throw ConfigError("instance fields inconsistent with n = " + std::to_string(inst.n));
    }
    return inst;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed instance record: ") + e.what());
  }
}

inline std::string encode_instance(const Instance& inst) { return to_json(inst).dump(); }

inline std::string encode_dataset(const std::vector<Instance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    out += encode_instance(inst);
    out += '\n';
  }
  return out;
}

inline std::vector<Instance> decode_dataset(const std::string& text) {
  std::vector<Instance> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(instance_from_json(j));
  }
  return out;
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<Instance>& instances) {
  write_file_atomic(path, encode_dataset(instances));
}

inline std::vector<Instance> read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

/// FNV-1a of the canonical record.
inline std::uint64_t instance_hash(const Instance& inst) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : encode_instance(inst)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Configuration

inline json to_json(const ModelConfig& c) {
  return {{"problem", to_string(c.problem)}, {"embed_dim", c.embed_dim}, {"layers", c.layers},
          {"heads", c.heads}, {"ff_dim", c.ff_dim}, {"clip", c.clip}};
}

inline json to_json(const TrainConfig& c) {
  return {{"model", to_json(c.model)},     {"n", c.n},
          {"prize_mode", to_string(c.prize_mode)}, {"baseline", to_string(c.baseline)},
          {"epochs", c.epochs},            {"steps", c.steps},
          {"batch", c.batch},              {"lr", c.lr},
          {"lr_decay", c.lr_decay},        {"alpha", c.alpha},
          {"beta", c.beta},                {"warmup", c.warmup},
          {"eval_size", c.eval_size},      {"val_size", c.val_size},
          {"critic_layers", c.critic_layers}, {"critic_hidden", c.critic_hidden},
          {"seed", c.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline ModelConfig model_config_from_json(const json& j, ModelConfig c = {}) {
  for (const auto& [key, v] : j.items()) {
    if (key == "problem") c.problem = parse_problem(v.get<std::string>());
    else if (key == "embed_dim") c.embed_dim = v.get<std::size_t>();
    else if (key == "layers") c.layers = v.get<std::size_t>();
    else if (key == "heads") c.heads = v.get<std::size_t>();
    else if (key == "ff_dim") c.ff_dim = v.get<std::size_t>();
    else if (key == "clip") c.clip = v.get<double>();
    else throw ConfigError("unknown model setting: " + key);
  }
  return c;
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "model") c.model = model_config_from_json(v, c.model);
      else if (key == "problem") c.model.problem = parse_problem(v.get<std::string>());
      else if (key == "n") c.n = v.get<std::size_t>();
      else if (key == "prize_mode") c.prize_mode = parse_prize_mode(v.get<std::string>());
      else if (key == "baseline") c.baseline = parse_baseline(v.get<std::string>());
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "steps") c.steps = v.get<std::size_t>();
      else if (key == "batch") c.batch = v.get<std::size_t>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "lr_decay") c.lr_decay = v.get<double>();
      else if (key == "alpha") c.alpha = v.get<double>();
      else if (key == "beta") c.beta = v.get<double>();
      else if (key == "warmup") c.warmup = v.get<bool>();
      else if (key == "eval_size") c.eval_size = v.get<std::size_t>();
      else if (key == "val_size") c.val_size = v.get<std::size_t>();
      else if (key == "critic_layers") c.critic_layers = v.get<std::size_t>();
      else if (key == "critic_hidden") c.critic_hidden = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown training setting: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad training configuration: ") + e.what());
  }
  c.validate();
  return c;
}

inline TrainConfig read_train_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return train_config_from_json(j);
}

// ---------------------------------------------------------------------------
// History

namespace detail {
inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
inline double number_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}
}  // namespace detail

inline json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_cost", detail::number_or_null(r.train_cost)},
          {"val_cost", r.val_cost},
          {"val_gap", detail::number_or_null(r.val_gap)},
          {"baseline_replaced", r.baseline_replaced},
          {"p_value", detail::number_or_null(r.p_value)},
          {"lr", r.lr},
          {"seconds", r.seconds}};
}

inline EpochRecord epoch_record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.train_cost = detail::number_or_nan(j.at("train_cost"));
  r.val_cost = j.at("val_cost").get<double>();
  r.val_gap = detail::number_or_nan(j.at("val_gap"));
  r.baseline_replaced = j.at("baseline_replaced").get<bool>();
  r.p_value = detail::number_or_nan(j.at("p_value"));
  r.lr = j.at("lr").get<double>();
  r.seconds = j.at("seconds").get<double>();
  return r;
}

inline std::string encode_history(const std::vector<EpochRecord>& history) {
  std::string out;
  for (const auto& r : history) out += to_json(r).dump() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian binary, fixed field order.

inline constexpr char kCheckpointMagic[8] = {'A', 'T', 'N', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  std::uint64_t rows = 0, cols = 0;
  std::vector<double> value, m, v;
  std::uint64_t step = 0;
  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct BufferRecord {
  std::string name;
  std::vector<double> mean, var;
  double momentum = 0.1, eps = 1e-5;
  friend bool operator==(const BufferRecord&, const BufferRecord&) = default;
};

struct ModuleRecord {
  std::string name;  // policy, baseline, critic
  std::vector<TensorRecord> params;
  std::vector<BufferRecord> buffers;
  friend bool operator==(const ModuleRecord&, const ModuleRecord&) = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config;  // TrainConfig as JSON
  std::vector<ModuleRecord> modules;
  std::uint64_t epoch = 0;
  std::uint64_t eval_generation = 0;
  double exp_beta = 0.8, exp_value = 0.0;
  bool exp_initialized = false;
  std::uint64_t seed = 0;          // root of the counter-based streams
  std::uint64_t steps_taken = 0;   // stream position
  std::vector<EpochRecord> history;

  TrainConfig train_config() const { return train_config_from_json(json::parse(config)); }
  const ModuleRecord& module(const std::string& name) const {
    for (const auto& m : modules) {
      if (m.name == name) return m;
    }
    throw ConfigError("checkpoint has no module " + name);
  }
  bool has_module(const std::string& name) const {
    for (const auto& m : modules) {
      if (m.name == name) return true;
    }
    return false;
  }
};

inline ModuleRecord capture_module(const std::string& name, const ParamStore& store, const BnBuffers& buffers) {
  ModuleRecord rec;
  rec.name = name;
  for (const auto& [pname, e] : store.entries()) {
    TensorRecord t;
    t.name = pname;
    t.rows = e.param.value().rows();
    t.cols = e.param.value().cols();
    t.value = e.param.value().storage();
    t.m = e.m.storage();
    t.v = e.v.storage();
    t.step = e.step;
    rec.params.push_back(std::move(t));
  }
  for (const auto& [bname, s] : buffers) {
    rec.buffers.push_back({bname, s.running_mean.storage(), s.running_var.storage(), s.momentum, s.eps});
  }
  return rec;
}

/// Loads values, moments and statistics; names and shapes must match exactly.
inline void apply_module(const ModuleRecord& rec, ParamStore& store, BnBuffers& buffers) {
  if (rec.params.size() != store.size()) {
    throw ConfigError("checkpoint module " + rec.name + " has " + std::to_string(rec.params.size()) +
                      " parameters, model has " + std::to_string(store.size()));
  }
  for (const auto& t : rec.params) {
    if (!store.contains(t.name)) throw ConfigError("checkpoint parameter " + t.name + " not in model");
    auto& e = store.entry(t.name);
    if (e.param.value().rows() != t.rows || e.param.value().cols() != t.cols) {
      throw ConfigError("checkpoint parameter " + t.name + " has shape " + std::to_string(t.rows) + "x" +
                        std::to_string(t.cols) + ", model expects " + shape_string(e.param.value().shape()));
    }
    e.param.mutable_value().storage() = t.value;
    e.m.storage() = t.m;
    e.v.storage() = t.v;
    e.step = t.step;
  }
  if (rec.buffers.size() != buffers.size()) throw ConfigError("checkpoint module " + rec.name + ": buffer count differs");
  for (const auto& b : rec.buffers) {
    auto it = buffers.find(b.name);
    if (it == buffers.end()) throw ConfigError("checkpoint buffer " + b.name + " not in model");
    if (it->second.running_mean.size() != b.mean.size()) throw ConfigError("checkpoint buffer " + b.name + " has wrong width");
    it->second.running_mean.storage() = b.mean;
    it->second.running_var.storage() = b.var;
    it->second.momentum = b.momentum;
    it->second.eps = b.eps;
  }
}

inline Checkpoint capture(Trainer& t) {
  Checkpoint ck;
  ck.config = to_json(t.config()).dump();
  ck.modules.push_back(capture_module("policy", t.model().params, t.model().buffers));
  if (auto* b = t.baseline_model()) ck.modules.push_back(capture_module("baseline", b->params, b->buffers));
  if (auto* c = t.critic()) ck.modules.push_back(capture_module("critic", c->params, c->buffers));
  ck.epoch = t.epoch();
  ck.eval_generation = t.eval_generation();
  ck.exp_beta = t.exponential().beta;
  ck.exp_value = t.exponential().value;
  ck.exp_initialized = t.exponential().initialized;
  ck.seed = t.config().seed;
  ck.steps_taken = static_cast<std::uint64_t>(t.epoch()) * t.config().steps;
  ck.history = t.history();
  return ck;
}

/// Restores a trainer built from the checkpoint's own configuration (the
/// epoch budget may differ).
inline void restore(const Checkpoint& ck, Trainer& t) {
  TrainConfig saved = ck.train_config();
  saved.epochs = t.config().epochs;
  if (!(saved == t.config())) throw ConfigError("checkpoint configuration does not match the trainer");
  apply_module(ck.module("policy"), t.model().params, t.model().buffers);
  if (auto* b = t.baseline_model()) apply_module(ck.module("baseline"), b->params, b->buffers);
  if (auto* c = t.critic()) apply_module(ck.module("critic"), c->params, c->buffers);
  ExponentialBaseline e;
  e.beta = ck.exp_beta;
  e.value = ck.exp_value;
  e.initialized = ck.exp_initialized;
  t.restore(static_cast<std::size_t>(ck.epoch), ck.eval_generation, e, ck.history);
}

/// The policy stored in a checkpoint.
inline AttentionModel load_policy(const Checkpoint& ck) {
  AttentionModel model(ck.train_config().model, 0);
  apply_module(ck.module("policy"), model.params, model.buffers);
  return model;
}

namespace detail {

class Writer {
 public:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t x) { raw(&x, 1); }
  void u32(std::uint32_t x) { raw(&x, 4); }
  void u64(std::uint64_t x) { raw(&x, 8); }
  void f64(double x) { raw(&x, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void vec(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  void raw(void* p, std::size_t n) {
    if (pos_ + n > s_.size()) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
    std::memcpy(p, s_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() { std::uint8_t x; raw(&x, 1); return x; }
  std::uint32_t u32() { std::uint32_t x; raw(&x, 4); return x; }
  std::uint64_t u64() { std::uint64_t x; raw(&x, 8); return x; }
  double f64() { double x; raw(&x, 8); return x; }
  std::size_t length() {
    const std::uint64_t n = u64();
    if (n > s_.size() - pos_) throw IoError("checkpoint length field exceeds file size");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    std::string s(length(), '\0');
    raw(s.data(), s.size());
    return s;
  }
  std::vector<double> vec() {
    const std::uint64_t n = u64();
    if (n > (s_.size() - pos_) / sizeof(double)) throw IoError("checkpoint array exceeds file size");
    std::vector<double> v(static_cast<std::size_t>(n));
    raw(v.data(), v.size() * sizeof(double));
    return v;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  detail::Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(ck.version);
  w.str(ck.config);
  w.u64(ck.modules.size());
  for (const auto& m : ck.modules) {
    w.str(m.name);
    w.u64(m.params.size());
    for (const auto& t : m.params) {
      w.str(t.name);
      w.u64(t.rows);
      w.u64(t.cols);
      w.vec(t.value);
      w.vec(t.m);
      w.vec(t.v);
      w.u64(t.step);
    }
    w.u64(m.buffers.size());
    for (const auto& b : m.buffers) {
      w.str(b.name);
      w.vec(b.mean);
      w.vec(b.var);
      w.f64(b.momentum);
      w.f64(b.eps);
    }
  }
  w.u64(ck.epoch);
  w.u64(ck.eval_generation);
  w.f64(ck.exp_beta);
  w.f64(ck.exp_value);
  w.u8(ck.exp_initialized ? 1 : 0);
  w.u64(ck.seed);
  w.u64(ck.steps_taken);
  w.u64(ck.history.size());
  for (const auto& r : ck.history) {
    w.u64(r.epoch);
    w.f64(r.train_cost);
    w.f64(r.val_cost);
    w.f64(r.val_gap);
    w.u8(r.baseline_replaced ? 1 : 0);
    w.f64(r.p_value);
    w.f64(r.lr);
    w.f64(r.seconds);
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  detail::Reader r(bytes);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw IoError("not a checkpoint file");
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(ck.version));
  }
  ck.config = r.str();
  const std::uint64_t modules = r.u64();
  for (std::uint64_t i = 0; i < modules; ++i) {
    ModuleRecord m;
    m.name = r.str();
    const std::uint64_t params = r.u64();
    for (std::uint64_t k = 0; k < params; ++k) {
      TensorRecord t;
      t.name = r.str();
      t.rows = r.u64();
      t.cols = r.u64();
      t.value = r.vec();
      t.m = r.vec();
      t.v = r.vec();
      t.step = r.u64();
      const std::uint64_t expected = t.rows * t.cols;
      if (t.value.size() != expected || t.m.size() != expected || t.v.size() != expected) {
        throw IoError("checkpoint parameter " + t.name + " has inconsistent sizes");
      }
      m.params.push_back(std::move(t));
    }
    const std::uint64_t buffers = r.u64();
    for (std::uint64_t k = 0; k < buffers; ++k) {
      BufferRecord b;
      b.name = r.str();
      b.mean = r.vec();
      b.var = r.vec();
      b.momentum = r.f64();
      b.eps = r.f64();
      m.buffers.push_back(std::move(b));
    }
    ck.modules.push_back(std::move(m));
  }
  ck.epoch = r.u64();
  ck.eval_generation = r.u64();
  ck.exp_beta = r.f64();
  ck.exp_value = r.f64();
  ck.exp_initialized = r.u8() != 0;
  ck.seed = r.u64();
  ck.steps_taken = r.u64();
  const std::uint64_t records = r.u64();
  for (std::uint64_t i = 0; i < records; ++i) {
    EpochRecord e;
    e.epoch = r.u64();
    e.train_cost = r.f64();
    e.val_cost = r.f64();
    e.val_gap = r.f64();
    e.baseline_replaced = r.u8() != 0;
    e.p_value = r.f64();
    e.lr = r.f64();
    e.seconds = r.f64();
    ck.history.push_back(e);
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// Evaluation reports

struct EvalRow {
  std::size_t index = 0;
  double cost = 0.0;
  std::optional<double> optimal;
  std::optional<double> gap;
};

struct EvalReport {
  std::string method;
  Problem problem = Problem::tsp;
  std::string decoding;  // greedy / sample / deterministic
  std::size_t samples = 1;
  double seconds = 0.0;
  std::vector<EvalRow> rows;
  double mean_cost = 0.0;
  std::optional<double> mean_gap;

  /// Recomputes the aggregate fields from the rows.
  void finalize() {
    double sum = 0.0, gap_sum = 0.0;
    std::size_t gaps = 0;
    for (const auto& r : rows) {
      sum += r.cost;
      if (r.gap) {
        gap_sum += *r.gap;
        ++gaps;
      }
    }
    mean_cost = rows.empty() ? 0.0 : sum / static_cast<double>(rows.size());
    mean_gap = gaps == rows.size() && gaps > 0 ? std::optional<double>(gap_sum / static_cast<double>(gaps)) : std::nullopt;
  }
};

inline json to_json(const EvalReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json j{{"index", row.index}, {"cost", row.cost}};
    if (row.optimal) j["optimal"] = *row.optimal;
    if (row.gap) j["gap"] = *row.gap;
    rows.push_back(std::move(j));
  }
  json j{{"method", r.method},     {"problem", to_string(r.problem)}, {"decoding", r.decoding},
         {"samples", r.samples},   {"seconds", r.seconds},            {"mean_cost", r.mean_cost},
         {"rows", std::move(rows)}};
  j["mean_gap"] = r.mean_gap ? json(*r.mean_gap) : json(nullptr);
  return j;
}

inline EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  r.method = j.at("method").get<std::string>();
  r.problem = parse_problem(j.at("problem").get<std::string>());
  r.decoding = j.at("decoding").get<std::string>();
  r.samples = j.at("samples").get<std::size_t>();
  r.seconds = j.at("seconds").get<double>();
  r.mean_cost = j.at("mean_cost").get<double>();
  if (!j.at("mean_gap").is_null()) r.mean_gap = j["mean_gap"].get<double>();
  for (const auto& row : j.at("rows")) {
    EvalRow e;
    e.index = row.at("index").get<std::size_t>();
    e.cost = row.at("cost").get<double>();
    if (row.contains("optimal")) e.optimal = row["optimal"].get<double>();
    if (row.contains("gap")) e.gap = row["gap"].get<double>();
    r.rows.push_back(e);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Oracle cache, keyed by instance hash

using OracleCache = std::map<std::uint64_t, OracleResult>;

inline json to_json(const OracleCache& cache) {
  json j = json::object();
  for (const auto& [h, r] : cache) {
    j[std::to_string(h)] = {{"cost", r.cost}, {"actions", r.actions}, {"explored", r.explored}};
  }
  return j;
}

inline OracleCache oracle_cache_from_json(const json& j) {
  OracleCache cache;
  for (const auto& [key, v] : j.items()) {
    OracleResult r;
    r.cost = v.at("cost").get<double>();
    r.actions = v.at("actions").get<std::vector<int>>();
    r.explored = v.at("explored").get<std::uint64_t>();
    cache.emplace(std::stoull(key), std::move(r));
  }
  return cache;
}

inline std::filesystem::path oracle_cache_path(const std::filesystem::path& dataset) {
  std::filesystem::path p = dataset;
  p += ".oracle.json";
  return p;
}

inline OracleCache read_oracle_cache(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  try {
    return oracle_cache_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw IoError("malformed oracle cache " + path.string() + ": " + e.what());
  }
}

inline void write_oracle_cache(const std::filesystem::path& path, const OracleCache& cache) {
  write_file_atomic(path, to_json(cache).dump() + "\n");
}

/// Optimal results for every instance, computing and storing missing ones.
/// Returns how many were computed.
inline std::size_t fill_oracle_cache(OracleCache& cache, const std::vector<Instance>& instances) {
  std::size_t computed = 0;
  for (const auto& inst : instances) {
    const std::uint64_t h = instance_hash(inst);
    if (cache.contains(h)) continue;
    cache.emplace(h, solve_exact(inst));
    ++computed;
  }
  return computed;
}

}  // namespace attnroute::io
