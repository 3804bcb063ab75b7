// Command-line front end: synthetic data generation, offline fitting, strategy
// execution, report aggregation and the no-lookahead audit.

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "anl/config.hpp"
#include "anl/dataset.hpp"
#include "anl/evaluation.hpp"
#include "anl/gam.hpp"
#include "anl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace anl;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_output(const fs::path& path, const std::string& content, bool force) {
  if (fs::exists(path) && !force)
    throw ConfigError("output file '" + path.string() + "' already exists (pass --force)");
  atomic_write_file(path, content);
  log(LogLevel::kInfo, "wrote " + path.string());
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (c == '+')
      out += '_';
    else if (c == '(')
      out += '-';
    else if (c != ')')
      out += c;
  }
  return out;
}

// Strict HH:MM[:SS] on the 24-hour clock, returned as seconds since midnight.
std::int64_t parse_time_of_day(const std::string& text) {
  const auto bad = [&] {
    return ConfigError("invalid time of day '" + text + "' (expected HH:MM or HH:MM:SS)");
  };
  if (text.size() != 5 && text.size() != 8) throw bad();
  for (std::size_t i = 0; i < text.size(); ++i) {
    const bool colon = i == 2 || i == 5;
    if (colon ? text[i] != ':' : !std::isdigit(static_cast<unsigned char>(text[i]))) throw bad();
  }
  const int h = std::stoi(text.substr(0, 2));
  const int m = std::stoi(text.substr(3, 2));
  const int s = text.size() == 8 ? std::stoi(text.substr(6, 2)) : 0;
  if (h > 23 || m > 59 || s > 59) throw bad();
  return h * 3600 + m * 60 + s;
}

std::string format_time_of_day(std::int64_t seconds) {
  std::ostringstream out;
  out << std::setfill('0') << std::setw(2) << seconds / 3600 << ':' << std::setw(2)
      << (seconds % 3600) / 60 << ':' << std::setw(2) << seconds % 60;
  return out.str();
}

Dataset load_raw(const JobConfig& cfg, std::uint64_t seed, std::string* hash_out) {
  Dataset raw;
  if (cfg.csv_path) {
    const std::string bytes = read_file(*cfg.csv_path);
    if (hash_out) *hash_out = fnv1a64_hex(bytes);
    raw = load_csv(*cfg.csv_path, cfg.schema);
  } else {
    raw = synthesize(*cfg.synthetic, seed).data;
    if (hash_out) *hash_out = fnv1a64_hex(dataset_to_csv(raw));
  }
  raw.series_id = cfg.series_id;
  return raw;
}

int cmd_synth(const JobConfig& cfg, std::uint64_t seed, bool force) {
  if (!cfg.synthetic) throw ConfigError("missing config field 'data.synthetic'");
  Dataset d = synthesize(*cfg.synthetic, seed).data;
  d.series_id = cfg.series_id;
  fs::create_directories(cfg.output_dir);
  write_output(fs::path(cfg.output_dir) / "synthetic.csv", dataset_to_csv(d), force);
  return 0;
}

int cmd_fit_gam(const JobConfig& cfg, std::uint64_t seed, bool force) {
  Dataset feat = build_features(load_raw(cfg, seed, nullptr), cfg.features);
  Dataset train = feat;
  if (cfg.split.train_end != 0) {
    const auto it = std::upper_bound(feat.timestamps.begin(), feat.timestamps.end(),
                                     cfg.split.train_end);
    train = detail::slice(feat, 0, static_cast<std::size_t>(it - feat.timestamps.begin()),
                          "train");
  }
  if (train.size() == 0) throw DataError("empty training window");
  if (cfg.formula.empty()) throw ConfigError("missing config field 'formula'");
  const GamModel model = fit_gam(train, cfg.formula, cfg.fixed_lambda);
  fs::create_directories(cfg.output_dir);
  write_output(fs::path(cfg.output_dir) / ("gam_" + sanitize(cfg.series_id) + ".json"),
               nlohmann::json(model).dump(2) + "\n", force);
  return 0;
}

struct WindowSlice {
  std::string label;
  std::vector<ForecastRecord> records;
  std::vector<double> y;
};

std::vector<WindowSlice> slice_by_window(const std::vector<ForecastRecord>& records,
                                         const std::vector<double>& y, const SplitSpec& split) {
  std::vector<WindowSlice> out;
  for (const auto& w : split.test_windows) {
    WindowSlice ws;
    ws.label = w.label;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].timestamp >= w.start && records[i].timestamp < w.end) {
        ws.records.push_back(records[i]);
        ws.y.push_back(y[i]);
      }
    if (ws.records.empty()) throw DataError("test window '" + w.label + "' contains no rows");
    out.push_back(std::move(ws));
  }
  return out;
}

int cmd_run(const JobConfig& cfg, std::uint64_t seed, int jobs, bool force) {
  if (cfg.strategies.empty()) throw ConfigError("missing config field 'strategies'");
  if (cfg.split.test_windows.empty()) throw ConfigError("missing config field 'split.windows'");
  cfg.split.validate();

  std::string hash;
  const Dataset feat = build_features(load_raw(cfg, seed, &hash), cfg.features);
  const auto& tss = feat.timestamps;
  const std::size_t n_train = static_cast<std::size_t>(
      std::upper_bound(tss.begin(), tss.end(), cfg.split.train_end) - tss.begin());
  if (n_train == 0) throw DataError("empty training window");
  std::int64_t last_end = cfg.split.test_windows.front().end;
  for (const auto& w : cfg.split.test_windows) last_end = std::max(last_end, w.end);
  const std::size_t stream_end = static_cast<std::size_t>(
      std::lower_bound(tss.begin(), tss.end(), last_end) - tss.begin());
  if (stream_end <= n_train) throw DataError("test windows contain no rows");
  const Dataset train = detail::slice(feat, 0, n_train, "train");
  const Dataset stream = detail::slice(feat, n_train, stream_end, "stream");

  const fs::path out_dir(cfg.output_dir);
  fs::create_directories(out_dir);

  auto do_run = [&](const std::string& name) {
    const auto t0 = std::chrono::steady_clock::now();
    const StrategySpec s = cfg.make_strategy(name);
    log(LogLevel::kInfo, "running " + strategy_name(s));
    StrategyRunner runner(s, train, stream);
    const double fit_secs = seconds_since(t0);
    runner.run();
    const double total_secs = seconds_since(t0);

    const AuditResult audit = audit_no_lookahead(runner.update_log(), s.delay);
    if (!audit.ok) throw NumericalError(audit.message);

    const fs::path dir = out_dir / sanitize(strategy_name(s));
    fs::create_directories(dir);

    RunManifest manifest;
    manifest.strategy = strategy_name(s);
    manifest.series_id = cfg.series_id;
    manifest.dataset_hash = hash;
    manifest.seed = seed;
    manifest.wall_clock_seconds["fit"] = fit_secs;
    manifest.wall_clock_seconds["stream"] = total_secs - fit_secs;
    manifest.wall_clock_seconds["total"] = total_secs;

    auto emit = [&](const std::string& fname, const std::string& content) {
      write_output(dir / fname, content, force);
      manifest.outputs[fname] = (dir / fname).string();
    };

    emit("trace.csv", trace_to_csv(runner.records(), s.levels));
    emit("updates.csv", update_log_to_csv(runner.update_log()));
    if (s.quantile == QuantileMode::kOgdBoa)
      emit("weights.csv", weights_to_csv(runner.records(), s.levels, s.step_grid,
                                         runner.weight_trace()));
    if (runner.can_checkpoint()) emit("checkpoint.json", runner.checkpoint().dump(2) + "\n");
    emit("report.json", nlohmann::json(runner.report()).dump(2) + "\n");

    std::vector<double> stream_y(stream.target.begin(),
                                 stream.target.begin() + static_cast<std::ptrdiff_t>(
                                                             runner.records().size()));
    for (const auto& ws : slice_by_window(runner.records(), stream_y, cfg.split)) {
      SeriesForecasts sf{cfg.series_id, ws.y, ws.records};
      const EvaluationReport rep = evaluate({sf}, s.levels);
      emit("report_" + sanitize(ws.label) + ".json", nlohmann::json(rep).dump(2) + "\n");
    }
    write_output(dir / "manifest.json", nlohmann::json(manifest).dump(2) + "\n", force);
  };

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(cfg.strategies.size());
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < cfg.strategies.size(); i = next.fetch_add(1)) {
      try {
        do_run(cfg.strategies[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(cfg.strategies.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return 0;
}

std::vector<fs::path> find_run_dirs(const fs::path& root) {
  std::vector<fs::path> dirs;
  if (!fs::exists(root)) throw DataError("output directory '" + root.string() + "' does not exist");
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file() && entry.path().filename() == "manifest.json")
      dirs.push_back(entry.path().parent_path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("no run manifests under '" + root.string() + "'");
  return dirs;
}

int cmd_report(const JobConfig& cfg, std::uint64_t seed, bool force,
               const std::vector<std::int64_t>& at_times) {
  const Dataset feat = build_features(load_raw(cfg, seed, nullptr), cfg.features);
  std::ostringstream table;
  table << "strategy,window,series,nrmse,nmae,nrps\n";

  for (const auto& dir : find_run_dirs(cfg.output_dir)) {
    const RunManifest manifest =
        nlohmann::json::parse(read_file(dir / "manifest.json")).get<RunManifest>();
    const ParsedTrace trace = trace_from_csv(read_file(dir / "trace.csv"));

    std::vector<double> y(trace.records.size());
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
      const auto it = std::lower_bound(feat.timestamps.begin(), feat.timestamps.end(),
                                       trace.records[i].timestamp);
      if (it == feat.timestamps.end() || *it != trace.records[i].timestamp)
        throw DataError("trace timestamp " + format_rfc3339(trace.records[i].timestamp) +
                        " not present in the dataset");
      y[i] = feat.target[static_cast<std::size_t>(it - feat.timestamps.begin())];
    }

    auto add_row = [&](const std::string& label, const EvaluationReport& rep) {
      EvaluationReport check = rep;
      check.recompute_aggregates();
      if (check.nrmse != rep.nrmse || check.nmae != rep.nmae || check.nrps != rep.nrps)
        throw DataError("report aggregates for '" + manifest.strategy + "/" + label +
                        "' do not reproduce from the stored per-series sums");
      table << manifest.strategy << "," << label << "," << manifest.series_id << ","
            << format_double(rep.nrmse) << "," << format_double(rep.nmae) << ","
            << format_double(rep.nrps) << "\n";
    };

    add_row("full",
            nlohmann::json::parse(read_file(dir / "report.json")).get<EvaluationReport>());

    for (const auto& ws : slice_by_window(trace.records, y, cfg.split)) {
      const fs::path rp = dir / ("report_" + sanitize(ws.label) + ".json");
      if (fs::exists(rp))
        add_row(ws.label, nlohmann::json::parse(read_file(rp)).get<EvaluationReport>());

      // One block of rows per filter: pooled first, then each requested time of day.
      std::vector<std::optional<std::int64_t>> filters{std::nullopt};
      filters.insert(filters.end(), at_times.begin(), at_times.end());
      std::vector<ReliabilityRow> rows;
      for (const auto& filt : filters) {
        for (double q : trace.levels) {
          try {
            rows.push_back(reliability(ws.records, ws.y, trace.levels, q, filt));
          } catch (const DataError& e) {
            log(LogLevel::kWarn,
                "reliability for level " + format_double(q) +
                    (filt ? " at " + format_time_of_day(*filt) : std::string()) + " in '" +
                    ws.label + "': " + e.what());
          }
        }
      }
      if (!rows.empty())
        write_output(dir / ("reliability_" + sanitize(ws.label) + ".csv"),
                     reliability_to_csv(rows), force);
    }
  }

  const std::string csv = table.str();
  write_output(fs::path(cfg.output_dir) / "comparison.csv", csv, force);
  std::cout << csv;
  return 0;
}

int cmd_audit(const JobConfig& cfg, const std::string& run_dir) {
  std::vector<fs::path> dirs;
  if (!run_dir.empty())
    dirs.push_back(run_dir);
  else
    dirs = find_run_dirs(cfg.output_dir);

  bool all_ok = true;
  std::string first_failure;
  for (const auto& dir : dirs) {
    const auto events = update_log_from_csv(read_file(dir / "updates.csv"));
    const AuditResult res = audit_no_lookahead(events, cfg.delay);
    std::cout << "audit " << dir.string() << ": " << (res.ok ? "ok" : "FAIL ")
              << (res.ok ? "" : res.message) << "\n";
    if (!res.ok && all_ok) {
      all_ok = false;
      first_failure = res.message;
    }
  }
  if (!all_ok) throw NumericalError(first_failure);
  std::cout << "audit passed (" << dirs.size() << " run" << (dirs.size() == 1 ? "" : "s")
            << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive probabilistic net-load forecasting toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_val = 0;
  int jobs = 1;
  bool force = false;
  app.add_option("--config", config_path, "JSON configuration file")->required();
  auto* seed_opt = app.add_option("--seed", seed_val, "override the configured RNG seed");
  app.add_option("--jobs", jobs, "worker threads for independent runs")
      ->check(CLI::PositiveNumber);
  app.add_flag("--force", force, "overwrite existing output files");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  auto* fit_gam_cmd = app.add_subcommand("fit-gam", "fit and serialize the offline mean model");
  auto* run = app.add_subcommand("run", "execute the configured strategies over the split");
  auto* report = app.add_subcommand("report", "aggregate run outputs into comparison tables");
  auto* audit = app.add_subcommand("audit", "verify update logs against the delay contract");
  std::string audit_dir;
  audit->add_option("--run", audit_dir, "audit a single run directory");
  std::string strategies_arg;
  run->add_option("--strategies", strategies_arg,
                  "comma-separated override of the configured strategy list");
  std::vector<std::string> report_at;
  report->add_option("--at", report_at,
                     "also tabulate reliability at these times of day (HH:MM or HH:MM:SS)");
  for (auto* sub : {synth, fit_gam_cmd, run, report, audit}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    JobConfig cfg = load_config(config_path);
    if (!strategies_arg.empty()) {
      cfg.strategies.clear();
      std::istringstream in(strategies_arg);
      std::string item;
      while (std::getline(in, item, ','))
        if (!item.empty()) cfg.strategies.push_back(item);
    }
    const std::uint64_t seed = *seed_opt ? seed_val : cfg.seed;
    if (synth->parsed()) return cmd_synth(cfg, seed, force);
    if (fit_gam_cmd->parsed()) return cmd_fit_gam(cfg, seed, force);
    if (run->parsed()) return cmd_run(cfg, seed, jobs, force);
    if (report->parsed()) {
      std::vector<std::int64_t> at;
      for (const auto& t : report_at) at.push_back(parse_time_of_day(t));
      return cmd_report(cfg, seed, force, at);
    }
    if (audit->parsed()) return cmd_audit(cfg, audit_dir);
    throw ConfigError("no subcommand given");
  } catch (const ConfigError& e) {
    log(LogLevel::kError, e.what());
    return 2;
  } catch (const DataError& e) {
    log(LogLevel::kError, e.what());
    return 3;
  } catch (const NumericalError& e) {
    log(LogLevel::kError, e.what());
    return 4;
  } catch (const std::exception& e) {
    log(LogLevel::kError, std::string("unexpected error: ") + e.what());
    return 1;
  }
}
