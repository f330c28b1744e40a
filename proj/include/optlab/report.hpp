#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "optlab/harness.hpp"
#include "optlab/noise.hpp"

namespace optlab {

inline constexpr std::array<std::string_view, 14> kCsvColumns{
    "run_id",     "problem",   "optimizer",        "momentum_flag",     "step_size", "batch_label", "batch_size",
    "seed",       "epoch",     "iteration",        "train_loss",        "eval_metric_name", "eval_metric_value",
    "wall_ms"};

/// One line of a results CSV. Per-iteration files carry the minibatch loss
/// and, on epoch-end rows only, the evaluation metric. Finals files carry
/// one row per run with the full-dataset training loss.
struct CsvRow {
  std::string run_id;
  std::string problem;
  std::string optimizer;
  std::string momentum_flag;  // "+m", "-m" or empty
  double step_size = 0.0;
  std::string batch_label;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::size_t iteration = 0;
  double train_loss = 0.0;
  std::string eval_metric_name;
  std::optional<double> eval_metric_value;
  double wall_ms = 0.0;

  bool operator==(const CsvRow&) const = default;
};

struct CsvOptions {
  /// Off writes wall_ms as 0 so repeated runs produce identical files.
  bool timing = true;
};

std::vector<CsvRow> iteration_rows(const RunRecord& record, const CsvOptions& options = {});
CsvRow final_row(const RunRecord& record, const CsvOptions& options = {});

/// Shortest decimal that parses back to the same double ("inf", "nan" for
/// non-finite values).
std::string format_double(double v);
/// Throws SchemaError.
double parse_double(std::string_view text);

std::string csv_header();
std::string to_csv_line(const CsvRow& row);

enum class WriteMode { overwrite, append };

/// Writes header plus rows (LF endings). Rows repeating an earlier
/// (run_id, iteration), in the file or in `rows`, are skipped; append mode
/// keeps the existing content and adds only new keys. Throws IoError, and
/// InvalidArgument for empty `rows`.
void write_results(const std::vector<CsvRow>& rows, const std::filesystem::path& path,
                   WriteMode mode = WriteMode::overwrite);

/// Throws IoError, SchemaError (header mismatch, bad field).
std::vector<CsvRow> read_results(const std::filesystem::path& path);
std::vector<CsvRow> parse_results(std::string_view text);

/// Splits one CSV line, honouring double-quoted fields.
std::vector<std::string> split_csv_line(std::string_view line);

/// A generic table: header plus string cells, for the plotting front end.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  /// Index of a column; throws SchemaError when absent.
  std::size_t column(std::string_view name) const;
};

CsvTable read_table(const std::filesystem::path& path);
CsvTable parse_table(std::string_view text);

/// draw_index,error_norm rows plus a JSON sidecar with the fit, tail
/// statistics and QQ deviation.
void write_noise(const NoiseSample& sample, const std::filesystem::path& csv_path,
                 const std::filesystem::path& json_path);
std::string noise_summary_json(const NoiseSample& sample);

/// Writes text to a file atomically enough for our purposes; throws IoError.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace optlab
