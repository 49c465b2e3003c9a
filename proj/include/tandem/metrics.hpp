#pragma once

// Diagnostics for a tandem run and their CSV persistence.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tandem/agent.hpp"
#include "tandem/error.hpp"
#include "tandem/neural.hpp"

namespace tandem {

struct MetricsRow {
  int iteration = 0;
  double active_return = 0.0;
  double passive_return = 0.0;
  double relative_perf = 1.0;
  double disagreement = 0.0;
  double overestimation = 0.0;
  double active_loss = 0.0;
  double passive_loss = 0.0;
  std::optional<double> mc_error;
  double wall_seconds = 0.0;
};

inline constexpr std::string_view kMetricsHeader =
    "iteration,active_return,passive_return,relative_perf,disagreement,overestimation,"
    "active_loss,passive_loss,mc_error,wall_seconds";

/// Passive return as a fraction of active return, against the floor
/// m = min over t of min(R_a(t), R_p(t)). Clipped to [0, 1]; 1 wherever
/// R_a(t) == m.
inline std::vector<double> relative_performance(std::span<const double> active,
                                                std::span<const double> passive) {
  if (active.size() != passive.size() || active.empty()) {
    throw UsageError("relative_performance: series must be non-empty and of equal length");
  }
  double m = std::min(active.front(), passive.front());
  for (std::size_t t = 0; t < active.size(); ++t) m = std::min({m, active[t], passive[t]});
  std::vector<double> out(active.size());
  for (std::size_t t = 0; t < active.size(); ++t) {
    if (active[t] == m) {
      out[t] = 1.0;
      continue;
    }
    out[t] = std::clamp((passive[t] - m) / (active[t] - m), 0.0, 1.0);
  }
  return out;
}

/// A fixed set of probe states, one per row.
struct ProbeSet {
  Matrix states;

  std::size_t size() const { return static_cast<std::size_t>(states.rows()); }

  static ProbeSet sample(const ReplayBuffer& replay, std::size_t n, Rng& rng) {
    if (n == 0) throw UsageError("probe set must be non-empty");
    const auto idx = replay.sample_indices(n, rng);
    const auto dim = static_cast<Eigen::Index>(replay.slot(idx.front()).state.size());
    ProbeSet p{Matrix(static_cast<Eigen::Index>(n), dim)};
    for (std::size_t r = 0; r < n; ++r) {
      const auto& s = replay.slot(idx[r]).state;
      for (Eigen::Index c = 0; c < dim; ++c) p.states(static_cast<Eigen::Index>(r), c) = s[static_cast<std::size_t>(c)];
    }
    return p;
  }
};

inline double policy_disagreement(const NetworkParams& active, const NetworkParams& passive,
                                  const ProbeSet& probes) {
  if (probes.size() == 0) throw UsageError("policy_disagreement: empty probe set");
  const Matrix qa = forward(active, probes.states);
  const Matrix qp = forward(passive, probes.states);
  std::size_t differ = 0;
  for (Eigen::Index r = 0; r < qa.rows(); ++r) {
    if (greedy_action(qa.row(r)) != greedy_action(qp.row(r))) ++differ;
  }
  return static_cast<double>(differ) / static_cast<double>(probes.size());
}

enum class OverestimationKind {
  /// mean of max_a Q_P(s,a) - max_a Q_A(s,a)
  max_vs_max,
  /// mean of Q_P(s, a*) - Q_A(s, a*) with a* the active greedy action
  active_argmax
};

inline std::string_view to_string(OverestimationKind k) {
  return k == OverestimationKind::max_vs_max ? "max_vs_max" : "active_argmax";
}

inline double value_overestimation(const NetworkParams& active, const NetworkParams& passive,
                                   const ProbeSet& probes,
                                   OverestimationKind kind = OverestimationKind::max_vs_max) {
  if (probes.size() == 0) throw UsageError("value_overestimation: empty probe set");
  const Matrix qa = forward(active, probes.states);
  const Matrix qp = forward(passive, probes.states);
  double sum = 0.0;
  for (Eigen::Index r = 0; r < qa.rows(); ++r) {
    if (kind == OverestimationKind::max_vs_max) {
      sum += qp.row(r).maxCoeff() - qa.row(r).maxCoeff();
    } else {
      const int a = greedy_action(qa.row(r));
      sum += qp(r, a) - qa(r, a);
    }
  }
  return sum / static_cast<double>(qa.rows());
}

/// Mean |Q(s,a) - G| over transitions carrying a Monte-Carlo return.
template <typename Range>
double mc_error(const NetworkParams& q, const Range& transitions) {
  const Batch batch = make_batch(transitions);
  const Matrix values = forward(q, batch.states);
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& g = batch.mc_returns[i];
    if (!g) throw UsageError("mc_error: transition without Monte-Carlo return");
    sum += std::abs(values(static_cast<Eigen::Index>(i), batch.actions[i]) - *g);
  }
  return sum / static_cast<double>(batch.size());
}

namespace detail {

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline double parse_real(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("metrics: cannot parse " + what + " value '" + s + "'");
  }
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace detail

/// CSV rendering with 9 significant digits; an absent mc_error is an empty
/// field.
inline void write_metrics_csv(std::span<const MetricsRow> rows, std::ostream& os) {
  os << kMetricsHeader << '\n';
  using detail::format_real;
  for (const auto& r : rows) {
    os << r.iteration << ',' << format_real(r.active_return) << ',' << format_real(r.passive_return)
       << ',' << format_real(r.relative_perf) << ',' << format_real(r.disagreement) << ','
       << format_real(r.overestimation) << ',' << format_real(r.active_loss) << ','
       << format_real(r.passive_loss) << ',' << (r.mc_error ? format_real(*r.mc_error) : "") << ','
       << format_real(r.wall_seconds) << '\n';
  }
}

inline std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) throw IoError("metrics: unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = detail::split(line, ',');
    if (cells.size() != 10) throw IoError("metrics: expected 10 columns, got " + std::to_string(cells.size()));
    using detail::parse_real;
    MetricsRow r;
    r.iteration = static_cast<int>(parse_real(cells[0], "iteration"));
    r.active_return = parse_real(cells[1], "active_return");
    r.passive_return = parse_real(cells[2], "passive_return");
    r.relative_perf = parse_real(cells[3], "relative_perf");
    r.disagreement = parse_real(cells[4], "disagreement");
    r.overestimation = parse_real(cells[5], "overestimation");
    r.active_loss = parse_real(cells[6], "active_loss");
    r.passive_loss = parse_real(cells[7], "passive_loss");
    if (!cells[8].empty()) r.mc_error = parse_real(cells[8], "mc_error");
    r.wall_seconds = parse_real(cells[9], "wall_seconds");
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  return read_metrics_csv(is);
}

inline constexpr std::string_view kMetricsFile = "metrics.csv";
inline constexpr std::string_view kManifestFile = "manifest.txt";

/// Writes <dir>/metrics.csv and then <dir>/manifest.txt. The manifest is
/// written last and doubles as the run-completed marker.
inline void write_metrics(std::span<const MetricsRow> rows, const std::string& manifest,
                          const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream os(dir / kMetricsFile, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + (dir / kMetricsFile).string());
    write_metrics_csv(rows, os);
    if (!os.flush()) throw IoError("write failed: " + (dir / kMetricsFile).string());
  }
  std::ofstream os(dir / kManifestFile, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + (dir / kManifestFile).string());
  os << manifest;
  if (!os.flush()) throw IoError("write failed: " + (dir / kManifestFile).string());
}

}  // namespace tandem
