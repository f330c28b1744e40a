// optlab: train, sweep, grid-search, noise analysis and plotting from the
// command line. Exit codes: 0 ok, 2 config error, 3 only divergent results,
// 4 I/O error.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "optlab/error.hpp"
#include "optlab/harness.hpp"
#include "optlab/noise.hpp"
#include "optlab/plot.hpp"
#include "optlab/report.hpp"

namespace fs = std::filesystem;
using namespace optlab;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kDiverged = 3, kIo = 4 };

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  bool no_timing = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("--config", c.config, "JSON configuration file");
  if (config_required) opt->required();
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "override the seed (sweeps: first of consecutive seeds)");
  cmd->add_option("--threads", c.threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_flag("--no-timing", c.no_timing, "write wall_ms as 0 for reproducible files");
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig load_run(const Common& c) {
  auto any = parse_config(slurp(c.config));
  if (!std::holds_alternative<RunConfig>(any))
    throw Error(ErrorCode::SchemaError, "$: expected a run configuration, got a sweep");
  RunConfig run = std::get<RunConfig>(any);
  if (c.seed) run.seed = *c.seed;
  return run;
}

void apply_seed(SweepConfig& s, const Common& c) {
  if (!c.seed) return;
  for (std::size_t i = 0; i < s.seeds.size(); ++i) s.seeds[i] = *c.seed + i;
}

void write_grid_csv(const fs::path& path, const std::map<CellKey, GridResult>& grids) {
  std::string body = "optimizer,batch_label,exponent,step_size,seed_index,final_train_loss,score,selected\n";
  for (const auto& [key, g] : grids)
    for (const auto& cand : g.candidates)
      for (std::size_t s = 0; s < cand.finals.size(); ++s)
        body += key.first + "," + std::string(to_string(key.second)) + "," + format_double(cand.exponent) + "," +
                format_double(cand.step_size) + "," + std::to_string(s) + "," + format_double(cand.finals[s]) + "," +
                format_double(cand.score) + "," + (cand.exponent == g.selected_exponent ? "1" : "0") + "\n";
  write_text_file(path, body);
}

void try_plot(const fs::path& csv, const PlotSpec& spec, const fs::path& svg) {
  try {
    emit_plot(csv, spec, svg);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptySelection) throw;
    std::cerr << "skipped " << svg.string() << ": " << e.what() << "\n";
  }
}

int cmd_train(const Common& c) {
  const RunConfig config = load_run(c);
  const RunRecord r = run_training(config);
  const fs::path out = c.out;
  const CsvOptions opts{!c.no_timing};
  if (!r.iterations.empty()) write_results(iteration_rows(r, opts), out / "records.csv");
  write_results({final_row(r, opts)}, out / "finals.csv");
  write_text_file(out / "config.json", serialize(config) + "\n");
  if (!r.iterations.empty()) try_plot(out / "records.csv", PlotSpec{}, out / "loss_vs_iteration.svg");
  std::printf("%s %s step=%s iterations=%zu final_train_loss=%s %s=%s%s\n", r.run_id.c_str(),
              config.optimizer.c_str(), format_double(config.step_size).c_str(), r.iterations.size(),
              format_double(r.final_train_loss).c_str(), std::string(to_string(r.metric)).c_str(),
              format_double(r.final_metric).c_str(), r.diverged ? " DIVERGED" : "");
  return r.diverged ? kDiverged : kOk;
}

int cmd_sweep(const Common& c) {
  SweepConfig s = parse_sweep_config(slurp(c.config));
  apply_seed(s, c);
  const auto problem = make_problem(s.base.problem);
  RunCache cache = RunCache::from_environment();
  std::mutex io;
  std::atomic<std::size_t> done{0};
  const std::size_t total = s.optimizers.size() * s.labels.size();
  SweepOptions options;
  options.threads = c.threads;
  options.on_cell_done = [&](const CellKey& key) {
    std::lock_guard lock(io);
    std::fprintf(stderr, "[%zu/%zu] %s %s\n", ++done, total, key.first.c_str(),
                 std::string(to_string(key.second)).c_str());
  };
  const SweepResult result = sweep(s, *problem, cache, options);

  const fs::path out = c.out;
  const CsvOptions opts{!c.no_timing};
  std::vector<CsvRow> records, finals;
  std::size_t finite = 0;
  for (const auto& [key, r] : result.finals) {
    const auto rows = iteration_rows(r, opts);
    records.insert(records.end(), rows.begin(), rows.end());
    finals.push_back(final_row(r, opts));
    if (!r.diverged && std::isfinite(r.final_train_loss)) ++finite;
  }
  std::string budgets = "batch_label,batch_size,iters_per_epoch,epochs,iterations,flagged\n";
  for (const auto& b : result.budgets)
    budgets += std::string(to_string(b.label)) + "," + std::to_string(b.batch_size) + "," +
               std::to_string(b.iters_per_epoch) + "," + std::to_string(b.epochs) + "," +
               std::to_string(b.iterations) + "," + (b.flagged ? "1" : "0") + "\n";
  write_text_file(out / "budgets.csv", budgets);
  write_grid_csv(out / "grids.csv", result.grids);
  write_text_file(out / "config.json", serialize(s) + "\n");
  if (!records.empty()) {
    write_results(records, out / "records.csv");
    write_results(finals, out / "finals.csv");
    PlotSpec batch;
    batch.kind = PlotKind::final_loss_vs_batch_size;
    try_plot(out / "finals.csv", batch, out / "final_loss_vs_batch_size.svg");
    for (auto label : s.labels) {
      PlotSpec loss;
      loss.filters = {{"batch_label", std::string(to_string(label))}};
      loss.title = "batch " + std::string(to_string(label));
      try_plot(out / "records.csv", loss, out / ("loss_vs_iteration_" + std::string(to_string(label)) + ".svg"));
    }
  }
  std::string failures;
  for (const auto& [key, why] : result.failures) {
    failures += key.first + " " + std::string(to_string(key.second)) + ": " + why + "\n";
    std::fprintf(stderr, "cell %s %s failed: %s\n", key.first.c_str(), std::string(to_string(key.second)).c_str(),
                 why.c_str());
  }
  if (!failures.empty()) write_text_file(out / "failures.txt", failures);
  std::printf("%zu final runs (%zu finite), %zu failed cells, %zu trainings, %zu cache hits\n", result.finals.size(),
              finite, result.failures.size(), cache.trainings(), cache.hits());
  return finite == 0 ? kDiverged : kOk;
}

int cmd_grid(const Common& c, const std::vector<std::uint64_t>& seeds_opt) {
  auto any = parse_config(slurp(c.config));
  RunCache cache = RunCache::from_environment();
  std::map<CellKey, GridResult> grids;
  std::map<CellKey, std::string> failures;
  if (auto* run = std::get_if<RunConfig>(&any)) {
    if (c.seed) run->seed = *c.seed;
    std::vector<std::uint64_t> seeds = seeds_opt;
    if (seeds.empty()) seeds = {run->seed, run->seed + 1, run->seed + 2};
    const auto problem = make_problem(run->problem);
    const CellKey key{run->optimizer, run->batch_label};
    try {
      grids.emplace(key, grid_search(*run, *problem, seeds, GridSettings{}, cache));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AllDiverged) throw;
      failures.emplace(key, e.what());
    }
  } else {
    SweepConfig s = std::get<SweepConfig>(any);
    apply_seed(s, c);
    if (!seeds_opt.empty()) s.seeds = seeds_opt;
    const auto problem = make_problem(s.base.problem);
    const std::size_t n = problem->train_size();
    const std::size_t micro = s.base.micro_batch ? s.base.micro_batch : full_micro_batch(n);
    const auto all = stopping_iterations(batch_size_ladder(s.ladder_base, trim_for_even_division(n, micro, true)), n,
                                         s.reference_iters);
    std::vector<std::pair<std::string, StoppingBudget>> cells;
    for (const auto& opt : s.optimizers)
      for (const auto& b : all)
        if (std::find(s.labels.begin(), s.labels.end(), b.label) != s.labels.end()) cells.emplace_back(opt, b);
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) {
        const CellKey key{cells[i].first, cells[i].second.label};
        try {
          auto g = grid_search(cell_config(s, cells[i].second, cells[i].first), *problem, s.seeds, s.grid, cache);
          std::lock_guard lock(mu);
          grids.emplace(key, std::move(g));
        } catch (const std::exception& e) {
          std::lock_guard lock(mu);
          failures.emplace(key, e.what());
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::min(c.threads, cells.size()); ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
  }
  write_grid_csv(fs::path(c.out) / "grids.csv", grids);
  for (const auto& [key, g] : grids)
    std::printf("%s %s selected step %s (10^%s), max-over-seeds loss %s\n", key.first.c_str(),
                std::string(to_string(key.second)).c_str(), format_double(g.selected).c_str(),
                format_double(g.selected_exponent).c_str(),
                format_double(std::find_if(g.candidates.begin(), g.candidates.end(), [&](const auto& cand) {
                                return cand.exponent == g.selected_exponent;
                              })->score).c_str());
  for (const auto& [key, why] : failures)
    std::fprintf(stderr, "%s %s: %s\n", key.first.c_str(), std::string(to_string(key.second)).c_str(), why.c_str());
  return grids.empty() ? kDiverged : kOk;
}

int cmd_noise(const Common& c, std::size_t batch, std::size_t draws, bool after_training) {
  const RunConfig config = load_run(c);
  const auto problem = make_problem(config.problem);
  const auto* model = dynamic_cast<const ModelProblem*>(problem.get());
  if (!model) throw Error(ErrorCode::InvalidSpec, "noise analysis needs a model problem");
  ParamVector params = init_model(model->spec(), RngStream(config.seed, StreamId::init));
  if (after_training) {
    const RunRecord r = run_training(config, *problem);
    if (r.diverged) {
      std::fprintf(stderr, "training diverged: %s\n", r.divergence.c_str());
      return kDiverged;
    }
    params.assign(r.final_params);
  }
  NoiseOptions options;
  options.batch_size = batch;
  options.n_draws = draws;
  options.micro_batch = full_micro_batch(model->train().n_samples);
  options.threads = c.threads;
  const NoiseSample sample =
      grad_error_samples(model->spec(), params, model->train(), options, RngStream(config.seed, StreamId::noise));
  const fs::path out = c.out;
  write_noise(sample, out / "noise.csv", out / "noise.json");
  PlotSpec qq;
  qq.kind = PlotKind::qq;
  qq.title = "gradient error norm, batch " + std::to_string(batch);
  emit_plot(out / "noise.csv", qq, out / "qq.svg");
  PlotSpec hist = qq;
  hist.kind = PlotKind::histogram;
  emit_plot(out / "noise.csv", hist, out / "histogram.svg");
  std::fputs(noise_summary_json(sample).c_str(), stdout);
  return kOk;
}

PlotSpec plot_spec_from_json(const std::string& text, std::string& csv) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, std::string("$: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::SchemaError, "$: expected an object");
  PlotSpec spec;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      if (k == "csv") csv = it->get<std::string>();
      else if (k == "kind") spec.kind = parse_plot_kind(it->get<std::string>());
      else if (k == "group_by") spec.group_by = it->get<std::vector<std::string>>();
      else if (k == "filter")
        for (auto f = it->begin(); f != it->end(); ++f) spec.filters.emplace_back(f.key(), f->get<std::string>());
      else if (k == "x_log") spec.x_log = it->get<bool>();
      else if (k == "y_log") spec.y_log = it->get<bool>();
      else if (k == "value_column") spec.value_column = it->get<std::string>();
      else if (k == "bins") spec.bins = it->get<std::size_t>();
      else if (k == "title") spec.title = it->get<std::string>();
      else throw Error(ErrorCode::SchemaError, "$." + k + ": unknown key");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("$: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidArgument) throw Error(ErrorCode::SchemaError, std::string("$.kind: ") + e.what());
    throw;
  }
  return spec;
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError:
    case ErrorCode::BadMagic:
    case ErrorCode::TruncatedFile:
    case ErrorCode::CountMismatch: return kIo;
    case ErrorCode::AllDiverged: return kDiverged;
    default: return kConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  optlab::retain_heap_memory();
  CLI::App app{"optlab: optimizer comparisons across batch sizes"};
  app.require_subcommand(1);

  Common train_c, sweep_c, grid_c, noise_c, plot_c;
  auto* train = app.add_subcommand("train", "train one run configuration");
  add_common(train, train_c);
  auto* sweep_cmd = app.add_subcommand("sweep", "grid-tune every optimizer and batch size, then run all seeds");
  add_common(sweep_cmd, sweep_c);
  auto* grid = app.add_subcommand("grid", "step-size grid search only");
  add_common(grid, grid_c);
  std::vector<std::uint64_t> grid_seeds;
  grid->add_option("--seeds", grid_seeds, "seeds for the max-over-seeds score")->delimiter(',');
  auto* noise = app.add_subcommand("noise", "gradient-error distribution of a model problem");
  add_common(noise, noise_c);
  std::size_t noise_batch = 16, noise_draws = 1000;
  bool noise_trained = false;
  noise->add_option("--batch-size", noise_batch, "minibatch size")->capture_default_str();
  noise->add_option("--draws", noise_draws, "number of minibatches")->capture_default_str();
  noise->add_flag("--after-training", noise_trained, "measure at the trained parameters instead of the initial ones");
  auto* plot = app.add_subcommand("plot", "render an SVG figure from a CSV file");
  add_common(plot, plot_c, false);
  std::string plot_csv, plot_kind, plot_title, plot_file;
  std::vector<std::string> plot_group, plot_filter;
  plot->add_option("--csv", plot_csv, "input CSV");
  plot->add_option("--kind", plot_kind, "loss_vs_iteration | final_loss_vs_batch_size | qq | histogram");
  plot->add_option("--group-by", plot_group, "series grouping columns");
  plot->add_option("--filter", plot_filter, "column=value row filters");
  plot->add_option("--title", plot_title, "figure title");
  plot->add_option("--file", plot_file, "output SVG name inside --out (default <kind>.svg)");

  auto* corpus = app.add_subcommand("corpus", "write the synthetic training text");
  std::size_t corpus_bytes = 200000;
  std::uint64_t corpus_seed = 0;
  std::string corpus_path = "data/corpus.txt";
  corpus->add_option("--bytes", corpus_bytes, "length in bytes")->capture_default_str();
  corpus->add_option("--seed", corpus_seed, "generator seed")->capture_default_str();
  corpus->add_option("--file", corpus_path, "output path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(train_c);
    if (*sweep_cmd) return cmd_sweep(sweep_c);
    if (*grid) return cmd_grid(grid_c, grid_seeds);
    if (*noise) return cmd_noise(noise_c, noise_batch, noise_draws, noise_trained);
    if (*corpus) {
      write_text_file(corpus_path, synthetic_text(corpus_bytes, RngStream(corpus_seed, StreamId::synthetic)));
      return kOk;
    }
    if (*plot) {
      PlotSpec spec;
      std::string csv = plot_csv;
      if (!plot_c.config.empty()) spec = plot_spec_from_json(slurp(plot_c.config), csv);
      if (!plot_csv.empty()) csv = plot_csv;
      if (csv.empty()) throw Error(ErrorCode::SchemaError, "--csv: an input CSV is required");
      if (!plot_kind.empty()) spec.kind = parse_plot_kind(plot_kind);
      if (!plot_group.empty()) spec.group_by = plot_group;
      for (const auto& f : plot_filter) {
        const auto eq = f.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::SchemaError, "--filter: expected column=value");
        spec.filters.emplace_back(f.substr(0, eq), f.substr(eq + 1));
      }
      if (!plot_title.empty()) spec.title = plot_title;
      const fs::path svg = fs::path(plot_c.out) / (plot_file.empty() ? std::string(to_string(spec.kind)) + ".svg" : plot_file);
      emit_plot(csv, spec, svg);
      std::printf("%s\n", svg.string().c_str());
      return kOk;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kOk;
}
