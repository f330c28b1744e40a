#include "optlab/config.hpp"

#include <cstdio>
#include <set>

#include <json.hpp>

#include "optlab/error.hpp"

namespace optlab {

using nlohmann::json;

std::string_view to_string(ProblemKind kind) {
  switch (kind) {
    case ProblemKind::char_lm: return "char_lm";
    case ProblemKind::synthetic: return "synthetic";
    case ProblemKind::idx: return "idx";
    case ProblemKind::quadratic: return "quadratic";
  }
  return "?";
}

std::string_view to_string(EvalMetric metric) {
  switch (metric) {
    case EvalMetric::automatic: return "auto";
    case EvalMetric::loss: return "loss";
    case EvalMetric::perplexity: return "perplexity";
    case EvalMetric::accuracy: return "accuracy";
  }
  return "?";
}

namespace {

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::SchemaError, path + ": " + what);
}

// Reads fields of one JSON object, remembering which keys were used so that
// anything left over can be reported as unknown.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) schema_error(path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string path(const std::string& key) const { return path_ + "." + key; }

  const json* get(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (const json* v = get(key)) out = convert<T>(*v, path(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) schema_error(path(it.key()), "unknown key");
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) schema_error(where, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) schema_error(where, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) schema_error(where, "expected a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) schema_error(where, "expected an integer");
      return v.get<int>();
    } else {
      static_assert(std::is_unsigned_v<T>);
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        schema_error(where, "expected a nonnegative integer");
      return v.get<T>();
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <class T>
std::vector<T> read_array(Fields& f, const std::string& key, std::vector<T> fallback) {
  const json* v = f.get(key);
  if (!v) return fallback;
  if (!v->is_array()) schema_error(f.path(key), "expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v->size(); ++i)
    out.push_back(Fields::convert<T>((*v)[i], f.path(key) + "[" + std::to_string(i) + "]"));
  return out;
}

ModelSpec parse_model(const json& j, const std::string& where) {
  Fields f(j, where);
  std::string kind = "transformer";
  f.read("kind", kind);
  ModelSpec out;
  if (kind == "transformer") {
    TransformerLmSpec s{0, 64, 2, 2, 64, 32, 0.1};
    f.read("vocab_size", s.vocab_size);
    f.read("embed_dim", s.embed_dim);
    f.read("num_layers", s.num_layers);
    f.read("num_heads", s.num_heads);
    f.read("ff_dim", s.ff_dim);
    f.read("seq_len", s.seq_len);
    f.read("dropout", s.dropout_p);
    out = s;
  } else if (kind == "mlp") {
    MlpSpec s{0, {64}, 0, Activation::tanh};
    f.read("input_dim", s.input_dim);
    s.hidden_dims = read_array<std::size_t>(f, "hidden", s.hidden_dims);
    f.read("num_classes", s.num_classes);
    std::string act = "tanh";
    f.read("activation", act);
    if (act == "relu") s.activation = Activation::relu;
    else if (act != "tanh") schema_error(f.path("activation"), "expected \"tanh\" or \"relu\"");
    out = s;
  } else {
    schema_error(f.path("kind"), "expected \"transformer\" or \"mlp\"");
  }
  f.finish();
  return out;
}

json model_json(const ModelSpec& spec) {
  if (const auto* s = std::get_if<TransformerLmSpec>(&spec))
    return {{"kind", "transformer"}, {"vocab_size", s->vocab_size}, {"embed_dim", s->embed_dim},
            {"num_layers", s->num_layers}, {"num_heads", s->num_heads}, {"ff_dim", s->ff_dim},
            {"seq_len", s->seq_len}, {"dropout", s->dropout_p}};
  const auto& m = std::get<MlpSpec>(spec);
  return {{"kind", "mlp"}, {"input_dim", m.input_dim}, {"hidden", m.hidden_dims},
          {"num_classes", m.num_classes},
          {"activation", m.activation == Activation::relu ? "relu" : "tanh"}};
}

ProblemConfig parse_problem(const json& j, const std::string& where) {
  Fields f(j, where);
  ProblemConfig p;
  f.read("id", p.id);
  std::string kind = "char_lm";
  f.read("kind", kind);
  if (kind == "char_lm") p.kind = ProblemKind::char_lm;
  else if (kind == "synthetic") p.kind = ProblemKind::synthetic;
  else if (kind == "idx") p.kind = ProblemKind::idx;
  else if (kind == "quadratic") p.kind = ProblemKind::quadratic;
  else schema_error(f.path("kind"), "expected char_lm, synthetic, idx or quadratic");
  f.read("corpus", p.corpus);
  f.read("max_bytes", p.max_bytes);
  f.read("n", p.n);
  f.read("dim", p.dim);
  f.read("classes", p.classes);
  f.read("separation", p.separation);
  f.read("images", p.images);
  f.read("labels", p.labels);
  f.read("noise", p.noise);
  f.read("holdout_fraction", p.holdout_fraction);
  f.read("data_seed", p.data_seed);
  f.finish();
  if (p.kind == ProblemKind::synthetic || p.kind == ProblemKind::idx)
    p.model = MlpSpec{0, {64}, 0, Activation::tanh};
  return p;
}

json problem_json(const ProblemConfig& p) {
  return {{"id", p.id},
          {"kind", to_string(p.kind)},
          {"corpus", p.corpus},
          {"max_bytes", p.max_bytes},
          {"n", p.n},
          {"dim", p.dim},
          {"classes", p.classes},
          {"separation", p.separation},
          {"images", p.images},
          {"labels", p.labels},
          {"noise", p.noise},
          {"holdout_fraction", p.holdout_fraction},
          {"data_seed", p.data_seed}};
}

EvalMetric parse_metric(const std::string& text, const std::string& where) {
  for (auto m : {EvalMetric::automatic, EvalMetric::loss, EvalMetric::perplexity, EvalMetric::accuracy})
    if (to_string(m) == text) return m;
  schema_error(where, "expected auto, loss, perplexity or accuracy");
}

// Keys shared by runs and sweeps.
void read_common(Fields& f, RunConfig& c) {
  if (const json* p = f.get("problem")) c.problem = parse_problem(*p, f.path("problem"));
  if (const json* m = f.get("model")) c.problem.model = parse_model(*m, f.path("model"));
  f.read("beta2", c.hyper.beta2);
  f.read("epsilon", c.hyper.epsilon);
  f.read("bias_correction", c.hyper.bias_correction);
  f.read("epsilon_inside_sqrt", c.hyper.epsilon_inside_sqrt);
  f.read("dropout", c.dropout_enabled);
  f.read("micro_batch", c.micro_batch);
  f.read("eval_every", c.eval_every);
  if (const json* m = f.get("eval_metric"))
    c.eval_metric = parse_metric(Fields::convert<std::string>(*m, f.path("eval_metric")), f.path("eval_metric"));
}

void write_common(json& j, const RunConfig& c) {
  j["problem"] = problem_json(c.problem);
  j["model"] = model_json(c.problem.model);
  j["beta2"] = c.hyper.beta2;
  j["epsilon"] = c.hyper.epsilon;
  j["bias_correction"] = c.hyper.bias_correction;
  j["epsilon_inside_sqrt"] = c.hyper.epsilon_inside_sqrt;
  j["dropout"] = c.dropout_enabled;
  j["micro_batch"] = c.micro_batch;
  j["eval_every"] = c.eval_every;
  j["eval_metric"] = to_string(c.eval_metric);
}

std::string read_optimizer(const std::string& key, const json& v) {
  auto name = Fields::convert<std::string>(v, key);
  if (!is_optimizer_name(name)) schema_error(key, "unknown optimizer \"" + name + "\"");
  return name;
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, std::string("$: malformed JSON: ") + e.what());
  }
}

RunConfig run_from(const json& j) {
  Fields f(j, "$");
  RunConfig c;
  if (const json* t = f.get("type"); t && Fields::convert<std::string>(*t, "$.type") != "run")
    schema_error("$.type", "expected \"run\"");
  read_common(f, c);
  if (const json* o = f.get("optimizer")) c.optimizer = read_optimizer("$.optimizer", *o);
  if (const json* m = f.get("momentum")) c.hyper.momentum = Fields::convert<double>(*m, "$.momentum");
  else c.hyper.momentum = momentum_of(c.optimizer);
  f.read("step_size", c.step_size);
  if (const json* l = f.get("batch_label")) {
    try {
      c.batch_label = parse_batch_label(Fields::convert<std::string>(*l, "$.batch_label"));
    } catch (const Error&) {
      schema_error("$.batch_label", "expected S, M, L, XL or Full");
    }
  }
  f.read("batch_size", c.batch_size);
  f.read("epochs", c.epochs);
  f.read("max_iterations", c.max_iterations);
  f.read("seed", c.seed);
  f.finish();
  return c;
}

SweepConfig sweep_from(const json& j) {
  Fields f(j, "$");
  SweepConfig s;
  if (const json* t = f.get("type"); t && Fields::convert<std::string>(*t, "$.type") != "sweep")
    schema_error("$.type", "expected \"sweep\"");
  read_common(f, s.base);
  s.optimizers = read_array<std::string>(f, "optimizers", {});
  for (std::size_t i = 0; i < s.optimizers.size(); ++i)
    if (!is_optimizer_name(s.optimizers[i]))
      schema_error("$.optimizers[" + std::to_string(i) + "]", "unknown optimizer \"" + s.optimizers[i] + "\"");
  if (s.optimizers.empty()) schema_error("$.optimizers", "at least one optimizer is required");
  f.read("ladder_base", s.ladder_base);
  const auto labels = read_array<std::string>(f, "labels", {});
  if (!labels.empty()) {
    s.labels.clear();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      try {
        s.labels.push_back(parse_batch_label(labels[i]));
      } catch (const Error&) {
        schema_error("$.labels[" + std::to_string(i) + "]", "expected S, M, L, XL or Full");
      }
    }
  }
  s.seeds = read_array<std::uint64_t>(f, "seeds", s.seeds);
  if (s.seeds.empty()) schema_error("$.seeds", "at least one seed is required");
  f.read("reference_iters", s.reference_iters);
  if (const json* g = f.get("grid")) {
    Fields gf(*g, "$.grid");
    gf.read("min_exponent", s.grid.min_exponent);
    gf.read("max_exponent", s.grid.max_exponent);
    gf.read("max_extensions", s.grid.max_extensions);
    gf.finish();
    if (s.grid.min_exponent > s.grid.max_exponent) schema_error("$.grid", "min_exponent exceeds max_exponent");
  }
  f.finish();
  return s;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

AnyConfig parse_config(std::string_view text) {
  const json j = parse_json(text);
  if (!j.is_object()) schema_error("$", "expected an object");
  const bool sweep = j.contains("optimizers") || (j.contains("type") && j["type"] == "sweep");
  if (sweep) return sweep_from(j);
  return run_from(j);
}

RunConfig parse_run_config(std::string_view text) { return run_from(parse_json(text)); }
SweepConfig parse_sweep_config(std::string_view text) { return sweep_from(parse_json(text)); }

std::string serialize(const RunConfig& c) {
  json j;
  j["type"] = "run";
  write_common(j, c);
  j["optimizer"] = c.optimizer;
  j["momentum"] = c.hyper.momentum.value_or(momentum_of(c.optimizer));
  j["step_size"] = c.step_size;
  j["batch_label"] = to_string(c.batch_label);
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["max_iterations"] = c.max_iterations;
  j["seed"] = c.seed;
  return j.dump();
}

std::string serialize(const SweepConfig& s) {
  json j;
  j["type"] = "sweep";
  write_common(j, s.base);
  j["optimizers"] = s.optimizers;
  j["ladder_base"] = s.ladder_base;
  std::vector<std::string> labels;
  for (auto l : s.labels) labels.emplace_back(to_string(l));
  j["labels"] = labels;
  j["seeds"] = s.seeds;
  j["reference_iters"] = s.reference_iters;
  j["grid"] = {{"min_exponent", s.grid.min_exponent},
               {"max_exponent", s.grid.max_exponent},
               {"max_extensions", s.grid.max_extensions}};
  return j.dump();
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : serialize(config)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

}  // namespace optlab
