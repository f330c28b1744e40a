#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "optlab/report.hpp"

namespace optlab {

enum class PlotKind { loss_vs_iteration, final_loss_vs_batch_size, qq, histogram };

std::string_view to_string(PlotKind kind);
/// Throws InvalidArgument.
PlotKind parse_plot_kind(std::string_view text);

struct PlotSpec {
  PlotKind kind = PlotKind::loss_vs_iteration;
  /// Columns whose values split rows into series. Empty picks the kind's
  /// default: run_id for loss curves, optimizer for batch-size plots.
  std::vector<std::string> group_by;
  /// Keep rows whose column equals the value; all filters must match.
  std::vector<std::pair<std::string, std::string>> filters;
  /// Unset picks the default: log loss axes, log batch-size axis, linear
  /// otherwise.
  std::optional<bool> x_log;
  std::optional<bool> y_log;
  /// Sample column for qq and histogram plots.
  std::string value_column = "error_norm";
  std::size_t bins = 0;  // histogram; 0 chooses ceil(sqrt(n)) up to 100
  std::string title;
  double width = 640.0;
  double height = 420.0;
};

/// Standalone SVG text. Throws EmptySelection when the filters keep no
/// usable rows and SchemaError when a referenced column is missing.
std::string render_plot(const CsvTable& table, const PlotSpec& spec);
void emit_plot(const std::filesystem::path& csv_path, const PlotSpec& spec, const std::filesystem::path& svg_path);

/// Plot area geometry shared by every kind, exposed for tests that map data
/// coordinates back to pixels.
struct PlotFrame {
  double left = 70.0;
  double right = 160.0;
  double top = 36.0;
  double bottom = 48.0;
};

}  // namespace optlab
