#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <future>
#include <limits>
#include <string>
#include <vector>

#include "fedbev/common.hpp"
#include "fedbev/dataset.hpp"
#include "fedbev/evaluate.hpp"
#include "fedbev/fed.hpp"
#include "fedbev/io.hpp"
#include "fedbev/nn.hpp"

namespace fedbev::eval {

// ---------------------------------------------------------------------------
// Loss matrix

/// values[i][j]: model trained on client i, evaluated on client j (Wh).
struct LossMatrix {
  std::vector<std::vector<double>> values;

  std::size_t size() const { return values.size(); }
  double mean_diagonal() const {
    double acc = 0.0;
    for (std::size_t i = 0; i < size(); ++i) acc += values[i][i];
    return acc / static_cast<double>(size());
  }
  double mean_off_diagonal() const {
    require(size() >= 2, "loss matrix: off-diagonal mean needs at least two clients");
    double acc = 0.0;
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < size(); ++j)
        if (i != j) acc += values[i][j];
    return acc / static_cast<double>(size() * (size() - 1));
  }
  bool operator==(const LossMatrix&) const = default;
};

inline LossMatrix loss_matrix(const std::vector<nn::ModelParameters>& models,
                              const std::vector<std::vector<dataset::WindowedSample>>& validation,
                              const dataset::ScalingSpec& scaling, std::size_t threads = 1) {
  require(!models.empty(), "loss_matrix: no models");
  require(models.size() == validation.size(), "loss_matrix: model and validation-set counts differ");
  const std::size_t n = models.size();
  LossMatrix m;
  m.values.assign(n, std::vector<double>(n, 0.0));
  auto column = [&](std::size_t j) {
    for (std::size_t i = 0; i < n; ++i) m.values[i][j] = evaluate(models[i], validation[j], scaling);
  };
  if (threads <= 1) {
    for (std::size_t j = 0; j < n; ++j) column(j);
  } else {
    for (std::size_t start = 0; start < n; start += threads) {
      std::vector<std::future<void>> tasks;
      for (std::size_t j = start; j < std::min(n, start + threads); ++j) {
        tasks.push_back(std::async(std::launch::async, column, j));
      }
      for (auto& f : tasks) f.get();
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Convergence

struct ConvergenceTrace {
  std::string tag;                                 // optimizer / config label
  std::vector<double> global_train_loss_wh;        // per round
  std::vector<std::vector<double>> validation_wh;  // [round][client]

  std::size_t rounds() const { return validation_wh.size(); }
  std::size_t clients() const { return validation_wh.empty() ? 0 : validation_wh.front().size(); }
  double mean_validation(std::size_t round_index) const {
    const auto& row = validation_wh.at(round_index);
    double acc = 0.0;
    for (double v : row) acc += v;
    return acc / static_cast<double>(row.size());
  }
  bool operator==(const ConvergenceTrace&) const = default;
};

inline ConvergenceTrace convergence_trace(const std::vector<fed::RoundReport>& reports, std::string tag) {
  ConvergenceTrace tr;
  tr.tag = std::move(tag);
  for (const auto& r : reports) {
    if (!tr.validation_wh.empty()) {
      require(r.validation_loss_wh.size() == tr.clients(), "convergence: client count changes between rounds");
    }
    tr.global_train_loss_wh.push_back(r.global_train_loss_wh);
    tr.validation_wh.push_back(r.validation_loss_wh);
  }
  return tr;
}

struct NormalizedTrace {
  std::vector<std::vector<double>> values;  // [client][round]
  std::vector<bool> normalized;             // false: round-1 loss was 0, raw values kept
  bool operator==(const NormalizedTrace&) const = default;
};

/// Each client's validation loss divided by its round-1 value.
inline NormalizedTrace normalized_validation_trace(const ConvergenceTrace& trace) {
  require(trace.rounds() >= 1, "normalized trace: need at least one round");
  NormalizedTrace out;
  const std::size_t n = trace.clients();
  out.values.assign(n, std::vector<double>(trace.rounds()));
  out.normalized.assign(n, true);
  for (std::size_t c = 0; c < n; ++c) {
    const double base = trace.validation_wh[0][c];
    out.normalized[c] = base != 0.0;
    for (std::size_t t = 0; t < trace.rounds(); ++t) {
      const double v = trace.validation_wh[t][c];
      out.values[c][t] = out.normalized[c] ? v / base : v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction trace

struct PredictionTrace {
  std::vector<std::size_t> k;  // 0-based index of the window's last step
  std::vector<double> truth_wh;
  std::vector<double> fed_wh;
  std::vector<double> local_wh;

  std::size_t size() const { return k.size(); }
  bool operator==(const PredictionTrace&) const = default;
};

inline PredictionTrace prediction_trace(const nn::ModelParameters& fed_model, const nn::ModelParameters& local_model,
                                        const dataset::TripRecord& trip, std::size_t m,
                                        const dataset::ScalingSpec& scaling) {
  require(trip.size() >= m, "prediction_trace: trip '" + trip.trip_id + "' is shorter than the window");
  dataset::LocalDataset one;
  one.vehicle_id = trip.vehicle_id;
  one.trips = {trip};
  one.scaling = scaling;
  const auto raw = dataset::build_windows(one, m);
  const auto scaled = dataset::scale_all(raw, scaling);
  const auto yf = nn::predict(fed_model, scaled);
  const auto yl = nn::predict(local_model, scaled);
  PredictionTrace tr;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    tr.k.push_back(raw[i].origin.end);
    tr.truth_wh.push_back(raw[i].label);
    tr.fed_wh.push_back(dataset::unscale_label(yf[i], scaling));
    tr.local_wh.push_back(dataset::unscale_label(yl[i], scaling));
  }
  return tr;
}

inline double trace_mae(const std::vector<double>& truth, const std::vector<double>& pred) {
  require(!truth.empty() && truth.size() == pred.size(), "trace_mae: lengths differ or are empty");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) acc += std::abs(pred[i] - truth[i]);
  return acc / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> csv_rows(const std::string& text, const std::string& header,
                                         const std::string& source) {
  auto rows = io::lines(text);
  if (rows.empty() || rows[0] != header) throw FormatError(source, "expected header '" + header + "'");
  rows.erase(rows.begin());
  return rows;
}

inline double field_double(std::string_view f, const std::string& source, std::size_t row) {
  double v = 0.0;
  if (!parse_double(trim(f), v)) throw FormatError(source, "row " + std::to_string(row) + ": bad number");
  return v;
}

inline std::size_t field_index(std::string_view f, const std::string& source, std::size_t row) {
  const double v = field_double(f, source, row);
  if (v < 0.0 || v != std::floor(v)) {
    throw FormatError(source, "row " + std::to_string(row) + ": expected a non-negative integer");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline std::string matrix_csv(const LossMatrix& m) {
  require(m.size() > 0, "matrix_csv: empty matrix");
  std::string out = "model";
  for (std::size_t j = 0; j < m.size(); ++j) out += ",client_" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += "client_" + std::to_string(i);
    for (double v : m.values[i]) out += "," + format_double(v);
    out += '\n';
  }
  return out;
}

inline LossMatrix parse_matrix_csv(const std::string& text, const std::string& source = "matrix.csv") {
  const auto rows = io::lines(text);
  if (rows.empty()) throw FormatError(source, "empty file");
  const std::size_t n = split_fields(rows[0]).size() - 1;
  if (n == 0 || rows.size() != n + 1) throw FormatError(source, "expected a square matrix with a header row");
  LossMatrix m;
  for (std::size_t i = 1; i <= n; ++i) {
    const auto f = split_fields(rows[i]);
    if (f.size() != n + 1) throw FormatError(source, "row " + std::to_string(i + 1) + ": wrong field count");
    std::vector<double> row;
    for (std::size_t j = 1; j <= n; ++j) row.push_back(detail::field_double(f[j], source, i + 1));
    m.values.push_back(std::move(row));
  }
  return m;
}

inline constexpr const char* kConvergenceHeader = "round,client,val_loss_wh";
inline constexpr const char* kTrainLossHeader = "round,train_loss_wh";
inline constexpr const char* kNormalizedHeader = "round,client,normalized_loss,normalized";
inline constexpr const char* kTraceHeader = "k,truth_wh,fed_wh,local_wh";

inline std::string convergence_csv(const ConvergenceTrace& tr) {
  std::string out = std::string(kConvergenceHeader) + "\n";
  for (std::size_t t = 0; t < tr.rounds(); ++t)
    for (std::size_t c = 0; c < tr.clients(); ++c)
      out += std::to_string(t + 1) + "," + std::to_string(c) + "," + format_double(tr.validation_wh[t][c]) + "\n";
  return out;
}

inline std::string train_loss_csv(const ConvergenceTrace& tr) {
  std::string out = std::string(kTrainLossHeader) + "\n";
  for (std::size_t t = 0; t < tr.rounds(); ++t)
    out += std::to_string(t + 1) + "," + format_double(tr.global_train_loss_wh[t]) + "\n";
  return out;
}

/// Rebuilds the validation part of a trace from convergence.csv and,
/// optionally, the training-loss column from its companion file.
inline ConvergenceTrace parse_convergence_csv(const std::string& text, const std::string& train_text = {},
                                              const std::string& source = "convergence.csv") {
  ConvergenceTrace tr;
  const auto rows = detail::csv_rows(text, kConvergenceHeader, source);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto f = split_fields(rows[r]);
    if (f.size() != 3) throw FormatError(source, "row " + std::to_string(r + 2) + ": wrong field count");
    const std::size_t round = detail::field_index(f[0], source, r + 2);
    const std::size_t client = detail::field_index(f[1], source, r + 2);
    const double v = detail::field_double(f[2], source, r + 2);
    if (round == tr.validation_wh.size() + 1 && client == 0) {
      tr.validation_wh.emplace_back();
    } else if (round != tr.validation_wh.size() || client != tr.validation_wh.back().size()) {
      throw FormatError(source, "row " + std::to_string(r + 2) + ": rows out of order");
    }
    tr.validation_wh.back().push_back(v);
  }
  for (const auto& row : tr.validation_wh) {
    if (row.size() != tr.clients()) throw FormatError(source, "rounds have differing client counts");
  }
  if (!train_text.empty()) {
    const auto trows = detail::csv_rows(train_text, kTrainLossHeader, "train_loss.csv");
    for (std::size_t r = 0; r < trows.size(); ++r) {
      const auto f = split_fields(trows[r]);
      if (f.size() != 2 || detail::field_index(f[0], "train_loss.csv", r + 2) != r + 1) {
        throw FormatError("train_loss.csv", "row " + std::to_string(r + 2) + ": malformed");
      }
      tr.global_train_loss_wh.push_back(detail::field_double(f[1], "train_loss.csv", r + 2));
    }
  }
  return tr;
}

inline std::string normalized_csv(const NormalizedTrace& nt) {
  require(!nt.values.empty() && !nt.values[0].empty(), "normalized_csv: empty trace");
  std::string out = std::string(kNormalizedHeader) + "\n";
  for (std::size_t t = 0; t < nt.values[0].size(); ++t)
    for (std::size_t c = 0; c < nt.values.size(); ++c)
      out += std::to_string(t + 1) + "," + std::to_string(c) + "," + format_double(nt.values[c][t]) + "," +
             (nt.normalized[c] ? "1" : "0") + "\n";
  return out;
}

inline std::string trace_csv(const PredictionTrace& tr) {
  require(tr.size() > 0, "trace_csv: empty trace");
  std::string out = std::string(kTraceHeader) + "\n";
  for (std::size_t i = 0; i < tr.size(); ++i) {
    out += std::to_string(tr.k[i]) + "," + format_double(tr.truth_wh[i]) + "," + format_double(tr.fed_wh[i]) + "," +
           format_double(tr.local_wh[i]) + "\n";
  }
  return out;
}

inline PredictionTrace parse_trace_csv(const std::string& text, const std::string& source = "trace.csv") {
  PredictionTrace tr;
  const auto rows = detail::csv_rows(text, kTraceHeader, source);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto f = split_fields(rows[r]);
    if (f.size() != 4) throw FormatError(source, "row " + std::to_string(r + 2) + ": wrong field count");
    tr.k.push_back(detail::field_index(f[0], source, r + 2));
    tr.truth_wh.push_back(detail::field_double(f[1], source, r + 2));
    tr.fed_wh.push_back(detail::field_double(f[2], source, r + 2));
    tr.local_wh.push_back(detail::field_double(f[3], source, r + 2));
  }
  return tr;
}

// ---------------------------------------------------------------------------
// SVG rendering (cosmetic; the CSV files carry the data)

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

}  // namespace detail

inline std::string line_chart_svg(const std::vector<Series>& series, const std::string& title,
                                  const std::string& x_label, const std::string& y_label) {
  require(!series.empty(), "line chart: no series");
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    require(!s.x.empty() && s.x.size() == s.y.size(), "line chart: series '" + s.name + "' is empty or ragged");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 == y0) y1 = y0 + 1.0;
  const double w = 720, h = 420, left = 70, right = 150, top = 40, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  using detail::num;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
                    "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         detail::xml_escape(title) + "</text>\n";
  svg += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
    svg += "<text x=\"" + num(left - 6) + "\" y=\"" + num(py(yv) + 4) + "\" text-anchor=\"end\">" + num(yv) +
           "</text>\n";
    svg += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(top + ph + 16) + "\" text-anchor=\"middle\">" + num(xv) +
           "</text>\n";
  }
  svg += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(h - 10) + "\" text-anchor=\"middle\">" +
         detail::xml_escape(x_label) + "</text>\n";
  svg += "<text x=\"16\" y=\"" + num(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num(top + ph / 2) + ")\">" + detail::xml_escape(y_label) + "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) pts += num(px(s.x[i])) + "," + num(py(s.y[i])) + " ";
    svg += "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" + std::string(detail::palette(k)) +
           "\" points=\"" + pts + "\"/>\n";
    const double ly = top + 10 + 16.0 * static_cast<double>(k);
    svg += "<line x1=\"" + num(left + pw + 10) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(left + pw + 30) +
           "\" y2=\"" + num(ly) + "\" stroke=\"" + detail::palette(k) + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(left + pw + 35) + "\" y=\"" + num(ly + 4) + "\">" + detail::xml_escape(s.name) +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

/// Linear min-max colour scale from white to dark blue.
inline std::string heatmap_svg(const LossMatrix& m, const std::string& title) {
  require(m.size() > 0, "heatmap: empty matrix");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& row : m.values)
    for (double v : row) lo = std::min(lo, v), hi = std::max(hi, v);
  const double span = hi > lo ? hi - lo : 1.0;
  const double cell = 48, left = 90, top = 50;
  const double n = static_cast<double>(m.size());
  using detail::num;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(left + cell * n + 20) +
                    "\" height=\"" + num(top + cell * n + 40) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"10\" y=\"22\" font-size=\"15\">" + detail::xml_escape(title) + "</text>\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    svg += "<text x=\"" + num(left - 6) + "\" y=\"" + num(top + cell * (static_cast<double>(i) + 0.5) + 4) +
           "\" text-anchor=\"end\">model " + std::to_string(i) + "</text>\n";
    svg += "<text x=\"" + num(left + cell * (static_cast<double>(i) + 0.5)) + "\" y=\"" +
           num(top + cell * n + 16) + "\" text-anchor=\"middle\">val " + std::to_string(i) + "</text>\n";
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double a = (m.values[i][j] - lo) / span;
      const int r = static_cast<int>(std::lround(255 - a * (255 - 8)));
      const int g = static_cast<int>(std::lround(255 - a * (255 - 48)));
      const int b = static_cast<int>(std::lround(255 - a * (255 - 107)));
      char color[8];
      std::snprintf(color, sizeof color, "#%02x%02x%02x", r, g, b);
      svg += "<rect x=\"" + num(left + cell * static_cast<double>(j)) + "\" y=\"" +
             num(top + cell * static_cast<double>(i)) + "\" width=\"" + num(cell) + "\" height=\"" + num(cell) +
             "\" fill=\"" + color + "\" stroke=\"#ccc\"/>\n";
      svg += "<text x=\"" + num(left + cell * (static_cast<double>(j) + 0.5)) + "\" y=\"" +
             num(top + cell * (static_cast<double>(i) + 0.5) + 4) + "\" text-anchor=\"middle\" fill=\"" +
             (a > 0.55 ? "white" : "black") + "\">" + num(m.values[i][j]) + "</text>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// Export: one CSV (source of truth) plus an SVG per artifact family.

inline void export_matrix(const LossMatrix& m, const std::filesystem::path& dir) {
  io::write_text(dir / "matrix.csv", matrix_csv(m));
  io::write_text(dir / "matrix.svg", heatmap_svg(m, "Local-model validation loss (Wh)"));
}

inline void export_convergence(const ConvergenceTrace& tr, const std::filesystem::path& dir) {
  io::write_text(dir / "convergence.csv", convergence_csv(tr));
  io::write_text(dir / "train_loss.csv", train_loss_csv(tr));
  std::vector<Series> series;
  Series global{"train (" + tr.tag + ")", {}, tr.global_train_loss_wh};
  Series mean{"mean validation", {}, {}};
  for (std::size_t t = 0; t < tr.rounds(); ++t) {
    global.x.push_back(static_cast<double>(t + 1));
    mean.x.push_back(static_cast<double>(t + 1));
    mean.y.push_back(tr.mean_validation(t));
  }
  series.push_back(std::move(global));
  series.push_back(std::move(mean));
  io::write_text(dir / "convergence.svg", line_chart_svg(series, "Federated training loss", "round", "MAE (Wh)"));
}

inline void export_normalized(const NormalizedTrace& nt, const std::filesystem::path& dir) {
  io::write_text(dir / "normalized.csv", normalized_csv(nt));
  std::vector<Series> series;
  for (std::size_t c = 0; c < nt.values.size(); ++c) {
    Series s{"client " + std::to_string(c), {}, nt.values[c]};
    for (std::size_t t = 0; t < nt.values[c].size(); ++t) s.x.push_back(static_cast<double>(t + 1));
    series.push_back(std::move(s));
  }
  io::write_text(dir / "normalized.svg",
                 line_chart_svg(series, "Normalized validation loss", "round", "loss / round-1 loss"));
}

inline void export_trace(const PredictionTrace& tr, const std::filesystem::path& dir) {
  io::write_text(dir / "trace.csv", trace_csv(tr));
  Series truth{"ground truth", {}, tr.truth_wh}, fed{"federated", {}, tr.fed_wh}, local{"local", {}, tr.local_wh};
  for (auto k : tr.k) {
    truth.x.push_back(static_cast<double>(k));
    fed.x.push_back(static_cast<double>(k));
    local.x.push_back(static_cast<double>(k));
  }
  io::write_text(dir / "trace.svg",
                 line_chart_svg({truth, fed, local}, "Window energy prediction", "k (s)", "energy (Wh)"));
}

}  // namespace fedbev::eval
