#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "optlab/config.hpp"
#include "optlab/problem.hpp"

namespace optlab {

struct LadderRung {
  BatchLabel label = BatchLabel::S;
  std::size_t batch_size = 0;

  bool operator==(const LadderRung&) const = default;
};

/// S = base, M = 4 base, L = 16 base, XL = 64 base, Full = dataset_kept.
/// Throws LadderTooTall unless 64 base < dataset_kept.
std::vector<LadderRung> batch_size_ladder(std::size_t base, std::size_t dataset_kept);

struct StoppingBudget {
  BatchLabel label = BatchLabel::S;
  std::size_t batch_size = 0;
  std::size_t iters_per_epoch = 0;
  std::size_t epochs = 0;
  std::size_t iterations = 0;
  /// The budget is more than twice the reference.
  bool flagged = false;
};

/// Whole-epoch budgets: epochs = max(1, ceil(reference / iters_per_epoch)),
/// so every level runs at least the reference number of iterations when an
/// epoch allows it, and never less than one epoch. Full has one iteration
/// per epoch. Non-Full levels drop the last partial batch.
std::vector<StoppingBudget> stopping_iterations(const std::vector<LadderRung>& ladder,
                                                std::size_t train_size, std::size_t reference_iters);

/// Accumulation chunk for a Full batch over n samples: the largest size up
/// to `cap` whose remainder stays within the 0.5% trim allowance.
std::size_t full_micro_batch(std::size_t n, std::size_t cap = 64);

struct IterationLog {
  std::size_t iteration = 0;  // 1-based optimizer step
  std::size_t epoch = 0;
  double train_loss = 0.0;  // minibatch loss at the parameters the step started from
  double wall_ms = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  double train_loss = 0.0;  // eval mode, whole training set
  double metric = 0.0;
};

struct RunRecord {
  RunConfig config;
  std::string run_id;
  /// Samples per optimizer step (the trimmed training set for Full).
  std::size_t batch_size = 0;
  EvalMetric metric = EvalMetric::loss;
  std::vector<IterationLog> iterations;
  std::vector<EpochLog> epochs;
  double final_train_loss = 0.0;
  double final_metric = 0.0;
  bool diverged = false;
  std::string divergence;
  double wall_ms = 0.0;
  std::size_t zero_gradient_skips = 0;
  /// Parameters at the stopping iteration; not kept in the on-disk cache.
  std::vector<double> final_params;
};

/// Trains one configuration. Divergence (a non-finite loss, gradient or
/// parameter) ends the run early and is recorded, never thrown.
RunRecord run_training(const RunConfig& config);
RunRecord run_training(const RunConfig& config, const Problem& problem);

/// Run records by config hash, in memory and optionally mirrored to a
/// directory (one JSON file per run). Safe for concurrent use.
class RunCache {
 public:
  RunCache() = default;
  explicit RunCache(std::filesystem::path dir);
  /// Uses $OPTLAB_CACHE_DIR when set, memory only otherwise.
  static RunCache from_environment();

  std::optional<RunRecord> get(const std::string& run_id);
  void put(const RunRecord& record);
  /// Trains unless the record is cached.
  RunRecord run(const RunConfig& config, const Problem& problem);

  std::size_t trainings() const;
  std::size_t hits() const;

 private:
  mutable std::mutex mu_;
  std::optional<std::filesystem::path> dir_;
  std::map<std::string, RunRecord> records_;
  std::size_t trainings_ = 0;
  std::size_t hits_ = 0;
};

std::string record_to_json(const RunRecord& record);
RunRecord record_from_json(const std::string& text);

struct GridCandidate {
  double exponent = 0.0;
  double step_size = 0.0;
  std::vector<double> finals;  // per seed; +inf when diverged
  double score = 0.0;          // max over seeds
};

struct GridResult {
  std::vector<GridCandidate> candidates;  // ascending step size
  double selected = 0.0;
  double selected_exponent = 0.0;
  int refinement_rounds = 0;
  int extensions = 0;
};

/// Final training loss of one (step size, seed); non-finite means diverged.
using GridEvaluator = std::function<double(double step_size, std::uint64_t seed)>;

/// Integer powers of ten in [min_exponent, max_exponent]; while the winner
/// sits on an edge the grid grows by a decade on that side (up to
/// max_extensions per side); then the two half-powers next to the winner
/// are added. The winner minimizes the max-over-seeds loss, ties going to
/// the smaller step. Throws AllDiverged.
GridResult grid_search(const GridEvaluator& evaluate, const std::vector<std::uint64_t>& seeds,
                       const GridSettings& settings = {});
GridResult grid_search(const RunConfig& base, const Problem& problem, const std::vector<std::uint64_t>& seeds,
                       const GridSettings& settings, RunCache& cache);

double step_from_exponent(double exponent);

using CellKey = std::pair<std::string, BatchLabel>;
using RunKey = std::tuple<std::string, BatchLabel, std::uint64_t>;

struct SweepResult {
  std::vector<StoppingBudget> budgets;
  std::map<CellKey, GridResult> grids;
  std::map<RunKey, RunRecord> finals;
  std::map<CellKey, std::string> failures;
};

struct SweepOptions {
  std::size_t threads = 1;
  /// Called from worker threads as cells finish.
  std::function<void(const CellKey&)> on_cell_done;
};

/// The cell configuration a sweep trains for one optimizer and ladder level.
RunConfig cell_config(const SweepConfig& sweep, const StoppingBudget& budget, const std::string& optimizer);

/// Grid-tunes every (optimizer, label) cell and keeps the final runs of all
/// seeds at the selected step size. Cells run on `threads` workers; the
/// result does not depend on the thread count.
SweepResult sweep(const SweepConfig& config, const Problem& problem, RunCache& cache,
                  const SweepOptions& options = {});

/// Stops glibc from handing large freed blocks back to the kernel after
/// every step; tensor buffers are reallocated immediately. No-op elsewhere.
void retain_heap_memory();

}  // namespace optlab
