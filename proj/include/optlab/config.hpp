#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "optlab/data.hpp"
#include "optlab/models.hpp"
#include "optlab/optimizers.hpp"

namespace optlab {

enum class ProblemKind { char_lm, synthetic, idx, quadratic };

std::string_view to_string(ProblemKind kind);

/// Where the data comes from and which model trains on it.
struct ProblemConfig {
  std::string id = "problem";
  ProblemKind kind = ProblemKind::char_lm;

  // char_lm: plain-text corpus, byte vocabulary, windows of model seq_len.
  std::string corpus;
  std::size_t max_bytes = 0;  // 0 reads the whole file

  // synthetic: Gaussian blobs.
  std::size_t n = 0;
  std::size_t dim = 0;
  std::size_t classes = 0;
  double separation = 6.0;

  // idx: MNIST-format image and label files.
  std::string images;
  std::string labels;

  // quadratic: f_i(x) = 0.5 * ||x - c_i||^2 with c_i ~ N(0, noise^2 I);
  // uses n and dim.
  double noise = 0.0;

  double holdout_fraction = 0.1;
  std::uint64_t data_seed = 0;

  /// Ignored for quadratic. A transformer vocab_size of 0 is taken from
  /// the corpus; an MLP input_dim / num_classes of 0 from the dataset.
  ModelSpec model = TransformerLmSpec{0, 64, 2, 2, 64, 32, 0.1};

  bool operator==(const ProblemConfig&) const = default;
};

enum class EvalMetric { automatic, loss, perplexity, accuracy };

std::string_view to_string(EvalMetric metric);

struct RunConfig {
  ProblemConfig problem;
  std::string optimizer = "sgd+m";
  OptimizerHyper hyper;
  double step_size = 1e-2;
  BatchLabel batch_label = BatchLabel::S;
  /// Ignored for Full, which always uses the whole trimmed training set.
  std::size_t batch_size = 16;
  std::size_t epochs = 1;
  /// Stopping time; 0 means run every epoch to completion.
  std::size_t max_iterations = 0;
  std::uint64_t seed = 0;
  bool dropout_enabled = true;
  /// Gradient-accumulation chunk. 0 means the batch itself (or, for Full,
  /// the largest chunk that keeps the trim within 0.5%; see full_micro_batch).
  std::size_t micro_batch = 0;
  EvalMetric eval_metric = EvalMetric::automatic;
  /// Epoch interval for full-dataset evaluation; 0 evaluates only at the end.
  std::size_t eval_every = 1;

  bool operator==(const RunConfig&) const = default;
};

struct GridSettings {
  int min_exponent = -5;
  int max_exponent = 0;
  /// Extra decades allowed beyond each edge when the winner sits on it.
  int max_extensions = 3;

  bool operator==(const GridSettings&) const = default;
};

/// The experiment matrix: every optimizer on every ladder level, each grid
/// tuned over `seeds`, then final runs at the selected step sizes.
struct SweepConfig {
  RunConfig base;
  std::vector<std::string> optimizers;
  std::size_t ladder_base = 16;
  std::vector<BatchLabel> labels{kBatchLabels.begin(), kBatchLabels.end()};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t reference_iters = 100;
  GridSettings grid;

  bool operator==(const SweepConfig&) const = default;
};

using AnyConfig = std::variant<RunConfig, SweepConfig>;

/// Parses a JSON run or sweep description; a document with an
/// "optimizers" array (or "type": "sweep") is a sweep. Unknown keys and
/// ill-typed values raise SchemaError naming the field path. Defaults fill
/// only absent fields; momentum follows the optimizer name.
AnyConfig parse_config(std::string_view text);
RunConfig parse_run_config(std::string_view text);
SweepConfig parse_sweep_config(std::string_view text);

/// Canonical JSON (sorted keys, every field explicit).
std::string serialize(const RunConfig& config);
std::string serialize(const SweepConfig& config);

/// FNV-1a 64 of the canonical JSON, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace optlab
