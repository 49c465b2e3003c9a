#pragma once

// The run / sweep / report commands behind tools/tandem_cli. Each returns a
// process exit status and writes diagnostics to the given streams.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tandem/config.hpp"
#include "tandem/error.hpp"
#include "tandem/metrics.hpp"
#include "tandem/tandem.hpp"

namespace tandem {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;

inline int report_config_error(const ConfigError& e, std::ostream& err) {
  err << "config error";
  if (!e.key().empty()) err << " [" << e.key() << "]";
  err << ": " << e.what() << '\n';
  return kExitConfig;
}

/// Loads, overrides and validates a config without touching the filesystem
/// beyond reading `path`.
inline ExperimentConfig prepare_config(const std::string& path, std::optional<std::uint64_t> seed,
                                       const std::vector<std::string>& overrides) {
  ExperimentConfig config = load_config(path);
  for (const auto& o : overrides) apply_override(config, o);
  if (seed) config.seed = *seed;
  validate_config(config);
  return config;
}

inline int run_command(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& out,
                       const std::vector<std::string>& overrides, std::ostream& log = std::cout,
                       std::ostream& err = std::cerr) {
  ExperimentConfig config;
  try {
    config = prepare_config(config_path, seed, overrides);
  } catch (const ConfigError& e) {
    return report_config_error(e, err);
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
  std::vector<MetricsRow> rows;
  try {
    rows = run_experiment(config);
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << '\n';
    return kExitFailure;
  }
  try {
    write_metrics(rows, config_manifest(config), out);
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
  log << "wrote " << rows.size() << " rows to " << (fs::path(out) / kMetricsFile).string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

/// A sweep file:
///
///   base = vanilla.ini        # relative to the sweep file
///   out = results
///   [axes]
///   mode.type = vanilla, self_data_mix
///   run.seed = 0, 1, 2, 3, 4
///
/// Every axis key is a config key. `run.seed` selects the seed directory;
/// the other axes name the cell.
struct SweepSpec {
  fs::path base;
  fs::path out;
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
};

struct SweepCell {
  std::string name;
  std::uint64_t seed = 0;
  ExperimentConfig config;

  fs::path dir(const fs::path& root) const { return root / name / std::to_string(seed); }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

inline SweepSpec parse_sweep(std::istream& is, const fs::path& relative_to = {}) {
  SweepSpec spec;
  std::string line;
  std::string section;
  while (std::getline(is, line)) {
    const auto comment = line.find('#');
    if (comment != std::string::npos) line.erase(comment);
    const std::string text = detail::trim(line);
    if (text.empty()) continue;
    if (text.front() == '[') {
      section = detail::trim(std::string_view(text).substr(1, text.size() - 2));
      if (section != "axes") throw ConfigError("sweep: unknown section [" + section + "]", section);
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("sweep: expected key = value, got '" + text + "'");
    const std::string key = detail::trim(std::string_view(text).substr(0, eq));
    const std::string value = detail::trim(std::string_view(text).substr(eq + 1));
    if (section == "axes") {
      auto values = detail::split_list(value);
      if (values.empty()) throw ConfigError("sweep: axis '" + key + "' has no values", key);
      spec.axes.emplace_back(key, std::move(values));
    } else if (key == "base") {
      spec.base = relative_to / value;
    } else if (key == "out") {
      spec.out = relative_to / value;
    } else {
      throw ConfigError("sweep: unknown key '" + key + "'", key);
    }
  }
  if (spec.base.empty()) throw ConfigError("sweep: missing 'base'", "base");
  if (spec.out.empty()) throw ConfigError("sweep: missing 'out'", "out");
  return spec;
}

inline SweepSpec load_sweep(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read sweep " + path.string());
  return parse_sweep(is, path.parent_path());
}

/// Cartesian product of the axes over the base config, each cell validated.
inline std::vector<SweepCell> expand_sweep(const SweepSpec& spec) {
  const ExperimentConfig base = load_config(spec.base.string());
  std::vector<SweepCell> cells{SweepCell{"", base.seed, base}};
  bool named = false;
  for (const auto& [key, values] : spec.axes) {
    std::vector<SweepCell> next;
    for (const auto& cell : cells) {
      for (const auto& v : values) {
        SweepCell c = cell;
        set_config_value(c.config, key, v);
        if (key == "run.seed") {
          c.seed = c.config.seed;
        } else {
          c.name += (c.name.empty() ? "" : ",") + key + "=" + v;
          named = true;
        }
        next.push_back(std::move(c));
      }
    }
    cells = std::move(next);
  }
  for (auto& c : cells) {
    if (!named) c.name = "base";
    validate_config(c.config);
  }
  return cells;
}

inline bool run_complete(const fs::path& dir) { return fs::exists(dir / kManifestFile); }

inline int sweep_command(const std::string& sweep_path, int parallel, bool resume, std::ostream& log = std::cout,
                         std::ostream& err = std::cerr) {
  if (parallel < 1) {
    err << "--parallel must be >= 1\n";
    return kExitConfig;
  }
  SweepSpec spec;
  std::vector<SweepCell> cells;
  try {
    spec = load_sweep(sweep_path);
    cells = expand_sweep(spec);
  } catch (const ConfigError& e) {
    return report_config_error(e, err);
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (resume && run_complete(cells[i].dir(spec.out))) continue;
    todo.push_back(i);
  }
  log << "sweep: " << cells.size() << " runs, " << cells.size() - todo.size() << " already complete, "
      << todo.size() << " to run\n";

  std::vector<std::string> failures(cells.size());
  std::vector<char> done(cells.size(), 0);
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= todo.size()) return;
      const SweepCell& cell = cells[todo[k]];
      const fs::path dir = cell.dir(spec.out);
      try {
        const auto rows = run_experiment(cell.config);
        write_metrics(rows, config_manifest(cell.config), dir);
        done[todo[k]] = 1;
      } catch (const std::exception& e) {
        failures[todo[k]] = e.what();
      }
      std::lock_guard lock(log_mutex);
      log << (done[todo[k]] ? "  ok    " : "  FAIL  ") << cell.name << '/' << cell.seed << '\n';
    }
  };
  const int threads = std::min<int>(parallel, std::max<int>(1, static_cast<int>(todo.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::size_t failed = 0;
  for (std::size_t i : todo) {
    if (!done[i]) {
      ++failed;
      err << "failed: " << cells[i].name << '/' << cells[i].seed << ": " << failures[i] << '\n';
    }
  }
  log << "sweep summary: " << todo.size() - failed << " passed, " << failed << " failed\n";
  if (!todo.empty() && failed == todo.size()) return kExitFailure;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report

struct SeriesStats {
  double mean = 0.0;
  /// Half the population standard deviation across seeds.
  double half_std = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline SeriesStats summarize(const std::vector<double>& xs) {
  if (xs.empty()) throw UsageError("summarize: no values");
  SeriesStats s;
  s.min = *std::min_element(xs.begin(), xs.end());
  s.max = *std::max_element(xs.begin(), xs.end());
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  var /= static_cast<double>(xs.size());
  s.half_std = 0.5 * std::sqrt(var);
  return s;
}

struct ReportRow {
  std::string cell;
  int iteration = 0;
  int seeds = 0;
  SeriesStats active;
  SeriesStats passive;
  SeriesStats relative;
};

struct Report {
  std::vector<ReportRow> rows;
  /// "<cell>/<seed>" run directories without a completion marker, or
  /// whose metrics could not be read.
  std::vector<std::string> skipped;
};

/// Aggregates every completed <root>/<cell>/<seed>/ run. Relative
/// performance is computed per seed from that seed's returns, then
/// aggregated. Seeds of a cell are truncated to the shortest run.
inline Report build_report(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("results root " + root.string() + " is not a directory");
  Report report;
  std::vector<fs::path> cell_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) cell_dirs.push_back(e.path());
  }
  std::sort(cell_dirs.begin(), cell_dirs.end());
  for (const auto& cell_dir : cell_dirs) {
    const std::string cell = cell_dir.filename().string();
    std::vector<fs::path> seed_dirs;
    for (const auto& e : fs::directory_iterator(cell_dir)) {
      if (e.is_directory()) seed_dirs.push_back(e.path());
    }
    std::sort(seed_dirs.begin(), seed_dirs.end());
    std::vector<std::vector<MetricsRow>> runs;
    for (const auto& sd : seed_dirs) {
      const std::string label = cell + "/" + sd.filename().string();
      if (!run_complete(sd)) {
        report.skipped.push_back(label);
        continue;
      }
      try {
        auto rows = read_metrics_csv(sd / kMetricsFile);
        if (rows.empty()) throw IoError("no rows");
        runs.push_back(std::move(rows));
      } catch (const IoError&) {
        report.skipped.push_back(label);
      }
    }
    if (runs.empty()) continue;

    std::size_t length = runs.front().size();
    std::vector<std::vector<double>> relative;
    for (const auto& run : runs) {
      length = std::min(length, run.size());
      std::vector<double> a, p;
      for (const auto& r : run) {
        a.push_back(r.active_return);
        p.push_back(r.passive_return);
      }
      relative.push_back(relative_performance(a, p));
    }
    for (std::size_t t = 0; t < length; ++t) {
      std::vector<double> a, p, rel;
      for (std::size_t k = 0; k < runs.size(); ++k) {
        a.push_back(runs[k][t].active_return);
        p.push_back(runs[k][t].passive_return);
        rel.push_back(relative[k][t]);
      }
      report.rows.push_back({cell, runs.front()[t].iteration, static_cast<int>(runs.size()), summarize(a),
                             summarize(p), summarize(rel)});
    }
  }
  return report;
}

inline void write_report_csv(const Report& report, bool relative, std::ostream& os) {
  auto cols = [&](std::string_view name) {
    os << ',' << name << "_mean," << name << "_half_std," << name << "_min," << name << "_max";
  };
  os << "cell,iteration,seeds";
  cols("active_return");
  cols("passive_return");
  if (relative) cols("relative_perf");
  os << '\n';
  auto vals = [&](const SeriesStats& s) {
    os << ',' << detail::format_real(s.mean) << ',' << detail::format_real(s.half_std) << ','
       << detail::format_real(s.min) << ',' << detail::format_real(s.max);
  };
  for (const auto& r : report.rows) {
    // Cell names contain commas when several axes are swept.
    os << '"' << r.cell << '"' << ',' << r.iteration << ',' << r.seeds;
    vals(r.active);
    vals(r.passive);
    if (relative) vals(r.relative);
    os << '\n';
  }
}

inline int report_command(const std::string& root, bool relative, const std::optional<std::string>& csv_out,
                          std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  Report report;
  try {
    report = build_report(root);
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
  if (report.rows.empty()) {
    err << "no completed runs under " << root << '\n';
    return kExitFailure;
  }
  if (csv_out) {
    std::ofstream os(*csv_out, std::ios::binary | std::ios::trunc);
    if (!os) {
      err << "i/o error: cannot write " << *csv_out << '\n';
      return kExitIo;
    }
    write_report_csv(report, relative, os);
    log << "wrote " << report.rows.size() << " rows to " << *csv_out << '\n';
  } else {
    write_report_csv(report, relative, log);
  }
  if (!report.skipped.empty()) {
    log << "skipped (incomplete):\n";
    for (const auto& s : report.skipped) log << "  " << s << '\n';
  }
  return kExitOk;
}

}  // namespace tandem
