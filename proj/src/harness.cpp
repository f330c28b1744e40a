#include "optlab/harness.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "optlab/error.hpp"
#include "optlab/optimizers.hpp"

namespace optlab {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kDefaultMicro = 64;

bool all_finite(std::span<const double> v) {
  double probe = 0.0;
  for (double x : v) probe += x * 0.0;
  return probe == 0.0;
}

struct Diverged {
  std::string why;
};

}  // namespace

std::vector<LadderRung> batch_size_ladder(std::size_t base, std::size_t dataset_kept) {
  if (base == 0) throw Error(ErrorCode::InvalidArgument, "ladder base must be positive");
  if (base * 64 >= dataset_kept)
    throw Error(ErrorCode::LadderTooTall, "XL batch of " + std::to_string(base * 64) +
                                              " does not fit below " + std::to_string(dataset_kept) +
                                              " samples");
  return {{BatchLabel::S, base},
          {BatchLabel::M, 4 * base},
          {BatchLabel::L, 16 * base},
          {BatchLabel::XL, 64 * base},
          {BatchLabel::Full, dataset_kept}};
}

std::vector<StoppingBudget> stopping_iterations(const std::vector<LadderRung>& ladder,
                                                std::size_t train_size, std::size_t reference_iters) {
  if (reference_iters == 0) throw Error(ErrorCode::InvalidArgument, "reference iterations must be positive");
  std::vector<StoppingBudget> out;
  for (const auto& rung : ladder) {
    StoppingBudget b;
    b.label = rung.label;
    b.batch_size = rung.batch_size;
    b.iters_per_epoch = rung.label == BatchLabel::Full ? 1 : train_size / rung.batch_size;
    if (b.iters_per_epoch == 0)
      throw Error(ErrorCode::BatchTooLarge, "batch of " + std::to_string(rung.batch_size) +
                                                " exceeds the training set");
    b.epochs = std::max<std::size_t>(1, (reference_iters + b.iters_per_epoch - 1) / b.iters_per_epoch);
    b.iterations = b.epochs * b.iters_per_epoch;
    b.flagged = b.iterations > 2 * reference_iters;
    out.push_back(b);
  }
  return out;
}

std::size_t full_micro_batch(std::size_t n, std::size_t cap) {
  for (std::size_t m = std::min(cap, n); m > 1; --m)
    if (static_cast<double>(n % m) <= kMaxFullTrim * static_cast<double>(n)) return m;
  return 1;
}

RunRecord run_training(const RunConfig& config) {
  const auto problem = make_problem(config.problem);
  return run_training(config, *problem);
}

RunRecord run_training(const RunConfig& c, const Problem& problem) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto elapsed_ms = [&] { return std::chrono::duration<double, std::milli>(clock::now() - start).count(); };

  RunRecord rec;
  rec.config = c;
  rec.config.hyper.momentum = c.hyper.momentum.value_or(momentum_of(c.optimizer));
  rec.run_id = config_hash(c);
  rec.metric = c.eval_metric == EvalMetric::automatic ? problem.default_metric() : c.eval_metric;

  std::vector<double> x = problem.initial_params(c.seed);
  OptimizerState state = make_optimizer(c.optimizer, c.step_size, c.hyper);
  const RngStream order(c.seed, StreamId::data_order);
  const RngStream dropout(c.seed, StreamId::dropout);
  const Mode mode = c.dropout_enabled ? Mode::train : Mode::eval;
  const bool full = c.batch_label == BatchLabel::Full;
  const std::size_t n = problem.train_size();
  const std::size_t micro = c.micro_batch ? c.micro_batch
                            : full        ? full_micro_batch(n)
                                          : std::gcd(c.batch_size, kDefaultMicro);

  std::size_t it = 0;
  auto evaluate = [&](std::size_t epoch) {
    EpochLog log{epoch, it, problem.train_loss(x), problem.evaluate(x, rec.metric)};
    if (!std::isfinite(log.train_loss)) throw Diverged{"non-finite training loss after " + std::to_string(it) + " iterations"};
    rec.epochs.push_back(log);
  };

  try {
    std::vector<double> grad(x.size());
    bool stopped = false;
    for (std::size_t epoch = 0; epoch < c.epochs && !stopped; ++epoch) {
      const BatchPlan plan = make_batches(n, c.batch_size, epoch, order, full, micro);
      rec.batch_size = plan.batch_size;
      const std::size_t chunks = plan.batch_size / plan.micro_batch;
      for (std::size_t b = 0; b < plan.num_batches(); ++b) {
        if (c.max_iterations && it >= c.max_iterations) {
          stopped = true;
          break;
        }
        const auto samples = plan.batch(b);
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        const RngStream step_rng = dropout.derive(it);
        for (std::size_t k = 0; k < chunks; ++k) {
          RngStream chunk_rng = step_rng.derive(k);
          const auto part = problem.gradient(x, samples.subspan(k * plan.micro_batch, plan.micro_batch), mode,
                                             chunk_rng);
          loss += part.loss;
          for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += part.gradient[i];
        }
        if (chunks > 1) {
          const double inv = 1.0 / static_cast<double>(chunks);
          loss *= inv;
          for (double& g : grad) g *= inv;
        }
        if (!std::isfinite(loss) || !all_finite(grad))
          throw Diverged{"non-finite loss or gradient at iteration " + std::to_string(it + 1)};
        step(state, x, grad);
        if (!all_finite(x)) throw Diverged{"non-finite parameters after iteration " + std::to_string(it + 1)};
        ++it;
        rec.iterations.push_back({it, epoch, loss, elapsed_ms()});
      }
      if (!stopped && c.eval_every && (epoch + 1) % c.eval_every == 0) evaluate(epoch);
    }
    if (rec.epochs.empty() || rec.epochs.back().iteration != it)
      evaluate(rec.iterations.empty() ? 0 : rec.iterations.back().epoch);
    rec.final_train_loss = rec.epochs.back().train_loss;
    rec.final_metric = rec.epochs.back().metric;
  } catch (const Diverged& d) {
    rec.diverged = true;
    rec.divergence = d.why;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFinite) throw;
    rec.diverged = true;
    rec.divergence = e.what();
  }
  if (rec.diverged) {
    rec.final_train_loss = kInf;
    rec.final_metric = std::numeric_limits<double>::quiet_NaN();
  }
  if (rec.batch_size == 0) rec.batch_size = full ? n : c.batch_size;
  rec.zero_gradient_skips = zero_gradient_skips(state);
  rec.final_params = std::move(x);
  rec.wall_ms = elapsed_ms();
  return rec;
}

namespace {

// JSON has no infinities; non-finite values travel as strings.
json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double num(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

std::string record_to_json(const RunRecord& r) {
  json j;
  j["config"] = json::parse(serialize(r.config));
  j["run_id"] = r.run_id;
  j["batch_size"] = r.batch_size;
  j["metric"] = to_string(r.metric);
  json its = json::array();
  for (const auto& i : r.iterations) its.push_back({i.iteration, i.epoch, num(i.train_loss), num(i.wall_ms)});
  j["iterations"] = its;
  json eps = json::array();
  for (const auto& e : r.epochs) eps.push_back({e.epoch, e.iteration, num(e.train_loss), num(e.metric)});
  j["epochs"] = eps;
  j["final_train_loss"] = num(r.final_train_loss);
  j["final_metric"] = num(r.final_metric);
  j["diverged"] = r.diverged;
  j["divergence"] = r.divergence;
  j["wall_ms"] = num(r.wall_ms);
  j["zero_gradient_skips"] = r.zero_gradient_skips;
  return j.dump();
}

RunRecord record_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RunRecord r;
    r.config = parse_run_config(j.at("config").dump());
    r.run_id = j.at("run_id").get<std::string>();
    r.batch_size = j.at("batch_size").get<std::size_t>();
    const auto metric = j.at("metric").get<std::string>();
    for (auto m : {EvalMetric::loss, EvalMetric::perplexity, EvalMetric::accuracy})
      if (to_string(m) == metric) r.metric = m;
    for (const auto& i : j.at("iterations"))
      r.iterations.push_back({i[0].get<std::size_t>(), i[1].get<std::size_t>(), num(i[2]), num(i[3])});
    for (const auto& e : j.at("epochs"))
      r.epochs.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>(), num(e[2]), num(e[3])});
    r.final_train_loss = num(j.at("final_train_loss"));
    r.final_metric = num(j.at("final_metric"));
    r.diverged = j.at("diverged").get<bool>();
    r.divergence = j.at("divergence").get<std::string>();
    r.wall_ms = num(j.at("wall_ms"));
    r.zero_gradient_skips = j.at("zero_gradient_skips").get<std::size_t>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("malformed run record: ") + e.what());
  }
}

RunCache::RunCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(*dir_, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create cache directory " + dir_->string());
}

RunCache RunCache::from_environment() {
  if (const char* dir = std::getenv("OPTLAB_CACHE_DIR"); dir && *dir) return RunCache(dir);
  return RunCache();
}

std::optional<RunRecord> RunCache::get(const std::string& run_id) {
  std::lock_guard lock(mu_);
  if (auto it = records_.find(run_id); it != records_.end()) return it->second;
  if (!dir_) return std::nullopt;
  std::ifstream in(*dir_ / (run_id + ".json"));
  if (!in) return std::nullopt;
  std::stringstream text;
  text << in.rdbuf();
  try {
    RunRecord r = record_from_json(text.str());
    records_.emplace(run_id, r);
    return r;
  } catch (const Error&) {
    return std::nullopt;  // a damaged entry is simply recomputed
  }
}

void RunCache::put(const RunRecord& record) {
  std::lock_guard lock(mu_);
  records_[record.run_id] = record;
  if (!dir_) return;
  const auto final_path = *dir_ / (record.run_id + ".json");
  const auto tmp = *dir_ / (record.run_id + ".json.tmp");
  {
    std::ofstream out(tmp);
    out << record_to_json(record);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, final_path);
}

RunRecord RunCache::run(const RunConfig& config, const Problem& problem) {
  if (auto hit = get(config_hash(config))) {
    std::lock_guard lock(mu_);
    ++hits_;
    return *hit;
  }
  RunRecord r = run_training(config, problem);
  {
    std::lock_guard lock(mu_);
    ++trainings_;
  }
  put(r);
  return r;
}

std::size_t RunCache::trainings() const {
  std::lock_guard lock(mu_);
  return trainings_;
}

std::size_t RunCache::hits() const {
  std::lock_guard lock(mu_);
  return hits_;
}

double step_from_exponent(double exponent) { return std::pow(10.0, exponent); }

GridResult grid_search(const GridEvaluator& evaluate, const std::vector<std::uint64_t>& seeds,
                       const GridSettings& settings) {
  if (seeds.empty()) throw Error(ErrorCode::InvalidArgument, "grid search needs at least one seed");
  std::map<double, GridCandidate> seen;
  auto add = [&](double exponent) {
    if (seen.count(exponent)) return;
    GridCandidate cand;
    cand.exponent = exponent;
    cand.step_size = step_from_exponent(exponent);
    cand.score = -kInf;
    for (auto seed : seeds) {
      double v = evaluate(cand.step_size, seed);
      if (!std::isfinite(v)) v = kInf;
      cand.finals.push_back(v);
      cand.score = std::max(cand.score, v);
    }
    seen.emplace(exponent, std::move(cand));
  };
  // Ascending exponent order with a strict comparison gives ties to the smaller step.
  auto winner = [&] {
    const GridCandidate* best = nullptr;
    for (const auto& [e, cand] : seen)
      if (!best || cand.score < best->score) best = &cand;
    if (best->score == kInf) throw Error(ErrorCode::AllDiverged, "every step size diverged");
    return best->exponent;
  };

  GridResult result;
  int lo = settings.min_exponent, hi = settings.max_exponent;
  for (int e = lo; e <= hi; ++e) add(e);
  int ext_lo = 0, ext_hi = 0;
  for (;;) {
    const double w = winner();
    if (w == lo && ext_lo < settings.max_extensions) {
      ++ext_lo;
      add(--lo);
    } else if (w == hi && ext_hi < settings.max_extensions) {
      ++ext_hi;
      add(++hi);
    } else {
      break;
    }
  }
  result.extensions = ext_lo + ext_hi;
  const double w = winner();
  add(w - 0.5);
  add(w + 0.5);
  result.refinement_rounds = 1;
  result.selected_exponent = winner();
  result.selected = step_from_exponent(result.selected_exponent);
  for (auto& [e, cand] : seen) result.candidates.push_back(std::move(cand));
  return result;
}

GridResult grid_search(const RunConfig& base, const Problem& problem, const std::vector<std::uint64_t>& seeds,
                       const GridSettings& settings, RunCache& cache) {
  return grid_search(
      [&](double step_size, std::uint64_t seed) {
        RunConfig c = base;
        c.step_size = step_size;
        c.seed = seed;
        const RunRecord r = cache.run(c, problem);
        return r.diverged ? kInf : r.final_train_loss;
      },
      seeds, settings);
}

RunConfig cell_config(const SweepConfig& sweep, const StoppingBudget& budget, const std::string& optimizer) {
  RunConfig c = sweep.base;
  c.optimizer = optimizer;
  c.hyper.momentum = momentum_of(optimizer);
  c.batch_label = budget.label;
  c.batch_size = budget.batch_size;
  c.epochs = budget.epochs;
  c.max_iterations = budget.iterations;
  return c;
}

SweepResult sweep(const SweepConfig& config, const Problem& problem, RunCache& cache, const SweepOptions& options) {
  const std::size_t n = problem.train_size();
  const std::size_t full_micro = config.base.micro_batch ? config.base.micro_batch : full_micro_batch(n);
  const std::size_t kept = trim_for_even_division(n, full_micro, true);
  const auto all = stopping_iterations(batch_size_ladder(config.ladder_base, kept), n, config.reference_iters);

  SweepResult result;
  for (const auto& b : all)
    if (std::find(config.labels.begin(), config.labels.end(), b.label) != config.labels.end())
      result.budgets.push_back(b);

  struct Cell {
    std::string optimizer;
    StoppingBudget budget;
    std::optional<GridResult> grid;
    std::vector<RunRecord> finals;
    std::string failure;
  };
  std::vector<Cell> cells;
  for (const auto& opt : config.optimizers)
    for (const auto& b : result.budgets) cells.push_back({opt, b, std::nullopt, {}, {}});

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      Cell& cell = cells[i];
      try {
        const RunConfig base = cell_config(config, cell.budget, cell.optimizer);
        cell.grid = grid_search(base, problem, config.seeds, config.grid, cache);
        for (auto seed : config.seeds) {
          RunConfig c = base;
          c.step_size = cell.grid->selected;
          c.seed = seed;
          cell.finals.push_back(cache.run(c, problem));
        }
      } catch (const std::exception& e) {
        cell.failure = e.what();
      }
      if (options.on_cell_done) options.on_cell_done({cell.optimizer, cell.budget.label});
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(1, cells.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (auto& cell : cells) {
    const CellKey key{cell.optimizer, cell.budget.label};
    if (cell.grid) result.grids.emplace(key, std::move(*cell.grid));
    if (!cell.failure.empty()) result.failures.emplace(key, cell.failure);
    for (auto& r : cell.finals) result.finals.emplace(RunKey{cell.optimizer, cell.budget.label, r.config.seed}, std::move(r));
  }
  return result;
}

void retain_heap_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace optlab
