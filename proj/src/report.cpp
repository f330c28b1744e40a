#include "optlab/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "optlab/error.hpp"

namespace optlab {

namespace {

std::string momentum_flag(const std::string& optimizer) {
  if (optimizer.ends_with("+m") || optimizer.ends_with("-m")) return optimizer.substr(optimizer.size() - 2);
  return {};
}

CsvRow base_row(const RunRecord& r) {
  CsvRow row;
  row.run_id = r.run_id;
  row.problem = r.config.problem.id;
  row.optimizer = r.config.optimizer;
  row.momentum_flag = momentum_flag(r.config.optimizer);
  row.step_size = r.config.step_size;
  row.batch_label = std::string(to_string(r.config.batch_label));
  row.batch_size = r.batch_size;
  row.seed = r.config.seed;
  row.eval_metric_name = std::string(to_string(r.metric));
  return row;
}

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

template <class T>
T parse_unsigned(std::string_view text, std::string_view column) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw Error(ErrorCode::SchemaError, std::string(column) + ": not an integer: '" + std::string(text) + "'");
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '"') quoted = !quoted;
    if (text[i] == '\n' && !quoted) {
      std::string_view line = text.substr(start, i - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      out.push_back(line);
      start = i + 1;
    }
  }
  if (start < text.size()) out.push_back(text.substr(start));
  return out;
}

}  // namespace

std::vector<CsvRow> iteration_rows(const RunRecord& r, const CsvOptions& options) {
  std::vector<CsvRow> rows;
  rows.reserve(r.iterations.size());
  std::size_t next_eval = 0;
  for (const auto& it : r.iterations) {
    CsvRow row = base_row(r);
    row.epoch = it.epoch;
    row.iteration = it.iteration;
    row.train_loss = it.train_loss;
    row.wall_ms = options.timing ? it.wall_ms : 0.0;
    while (next_eval < r.epochs.size() && r.epochs[next_eval].iteration < it.iteration) ++next_eval;
    if (next_eval < r.epochs.size() && r.epochs[next_eval].iteration == it.iteration)
      row.eval_metric_value = r.epochs[next_eval].metric;
    rows.push_back(std::move(row));
  }
  return rows;
}

CsvRow final_row(const RunRecord& r, const CsvOptions& options) {
  CsvRow row = base_row(r);
  if (!r.iterations.empty()) {
    row.epoch = r.iterations.back().epoch;
    row.iteration = r.iterations.back().iteration;
  }
  row.train_loss = r.final_train_loss;
  row.eval_metric_value = r.final_metric;
  row.wall_ms = options.timing ? r.wall_ms : 0.0;
  return row;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw Error(ErrorCode::SchemaError, "not a number: '" + std::string(text) + "'");
  return v;
}

std::string csv_header() {
  std::string out;
  for (std::size_t i = 0; i < kCsvColumns.size(); ++i) {
    if (i) out += ',';
    out += kCsvColumns[i];
  }
  return out;
}

std::string to_csv_line(const CsvRow& r) {
  std::string out;
  auto add = [&](const std::string& field) {
    if (!out.empty()) out += ',';
    out += field;
  };
  out = quote(r.run_id);
  add(quote(r.problem));
  add(quote(r.optimizer));
  add(r.momentum_flag);
  add(format_double(r.step_size));
  add(r.batch_label);
  add(std::to_string(r.batch_size));
  add(std::to_string(r.seed));
  add(std::to_string(r.epoch));
  add(std::to_string(r.iteration));
  add(format_double(r.train_loss));
  add(r.eval_metric_name);
  add(r.eval_metric_value ? format_double(*r.eval_metric_value) : std::string());
  add(format_double(r.wall_ms));
  return out;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

std::vector<CsvRow> parse_results(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty() || lines[0] != csv_header())
    throw Error(ErrorCode::SchemaError, "results header does not match the expected columns");
  std::vector<CsvRow> rows;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    const auto f = split_csv_line(lines[li]);
    if (f.size() != kCsvColumns.size())
      throw Error(ErrorCode::SchemaError, "line " + std::to_string(li + 1) + ": expected " +
                                              std::to_string(kCsvColumns.size()) + " fields");
    CsvRow r;
    r.run_id = f[0];
    r.problem = f[1];
    r.optimizer = f[2];
    r.momentum_flag = f[3];
    r.step_size = parse_double(f[4]);
    r.batch_label = f[5];
    r.batch_size = parse_unsigned<std::size_t>(f[6], "batch_size");
    r.seed = parse_unsigned<std::uint64_t>(f[7], "seed");
    r.epoch = parse_unsigned<std::size_t>(f[8], "epoch");
    r.iteration = parse_unsigned<std::size_t>(f[9], "iteration");
    r.train_loss = parse_double(f[10]);
    r.eval_metric_name = f[11];
    if (!f[12].empty()) r.eval_metric_value = parse_double(f[12]);
    r.wall_ms = parse_double(f[13]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<CsvRow> read_results(const std::filesystem::path& path) { return parse_results(read_file(path)); }

void write_results(const std::vector<CsvRow>& rows, const std::filesystem::path& path, WriteMode mode) {
  if (rows.empty()) throw Error(ErrorCode::InvalidArgument, "no rows to write");
  std::set<std::pair<std::string, std::size_t>> seen;
  std::string body;
  const bool existing = mode == WriteMode::append && std::filesystem::exists(path);
  if (existing) {
    body = read_file(path);
    for (const auto& r : parse_results(body)) seen.emplace(r.run_id, r.iteration);
    if (!body.empty() && body.back() != '\n') body += '\n';
  } else {
    body = csv_header() + "\n";
  }
  for (const auto& r : rows)
    if (seen.emplace(r.run_id, r.iteration).second) body += to_csv_line(r) + "\n";
  write_text_file(path, body);
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  throw Error(ErrorCode::SchemaError, "column '" + std::string(name) + "' not in the CSV");
}

CsvTable parse_table(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw Error(ErrorCode::SchemaError, "empty CSV");
  CsvTable t;
  t.columns = split_csv_line(lines[0]);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_csv_line(lines[i]);
    if (f.size() != t.columns.size())
      throw Error(ErrorCode::SchemaError, "line " + std::to_string(i + 1) + ": expected " +
                                              std::to_string(t.columns.size()) + " fields");
    t.rows.push_back(std::move(f));
  }
  return t;
}

CsvTable read_table(const std::filesystem::path& path) { return parse_table(read_file(path)); }

std::string noise_summary_json(const NoiseSample& s) {
  nlohmann::json j;
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  j["batch_size"] = s.batch_size();
  j["n_draws"] = s.values().size();
  j["fitted_mu"] = num(s.fitted_mu());
  j["fitted_sigma"] = num(s.fitted_sigma());
  j["excess_kurtosis"] = num(s.excess_kurtosis());
  j["tail_ratio_99_90"] = num(s.tail_ratio_99_90());
  if (s.values().size() >= 2 && s.fitted_sigma() > 0) {
    const auto pts = qq_points(s.values(), {s.fitted_mu(), s.fitted_sigma()});
    j["qq_max_deviation_sigma"] = num(qq_max_deviation(pts) / s.fitted_sigma());
    j["qq_central_max_deviation_sigma"] = num(qq_max_deviation(pts, 0.05, 0.95) / s.fitted_sigma());
  }
  return j.dump(2) + "\n";
}

void write_noise(const NoiseSample& s, const std::filesystem::path& csv_path,
                 const std::filesystem::path& json_path) {
  std::string body = "draw_index,error_norm\n";
  for (std::size_t i = 0; i < s.values().size(); ++i)
    body += std::to_string(i) + "," + format_double(s.values()[i]) + "\n";
  write_text_file(csv_path, body);
  write_text_file(json_path, noise_summary_json(s));
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace optlab
