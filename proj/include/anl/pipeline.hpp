#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "anl/aggregation.hpp"
#include "anl/common.hpp"
#include "anl/dataset.hpp"
#include "anl/evaluation.hpp"
#include "anl/gam.hpp"
#include "anl/kalman.hpp"
#include "anl/quantile.hpp"
#include "anl/timeutil.hpp"

namespace anl {

enum class MeanMode {
  kOffline,
  kIncremental,
  kKalmanStatic,
  kKalmanDynamic,
  kPersistence,   // baseline: lagged observation
  kWindowMean     // baseline: mean of the evaluation window (the metric anchor)
};

enum class QuantileMode { kGaussian, kOfflineQr, kOgd, kOgdBoa, kIncrementalQr, kNone };

struct StrategySpec {
  MeanMode mean = MeanMode::kOffline;
  RefitCadence cadence = RefitCadence::kDaily;  // incremental mean mode
  int persistence_lag = 1;                      // persistence mean mode, in steps
  QuantileMode quantile = QuantileMode::kOfflineQr;
  double ogd_alpha = 0.01;                      // single-learner online mode
  std::vector<double> levels = default_levels();
  std::vector<double> step_grid = default_step_grid();
  std::optional<double> boa_eta;                // fixed learning rate; self-tuned when absent
  std::vector<FormulaTerm> formula;
  QuantileFeatureSpec z_spec;
  int delay = 0;                                // availability delay, in steps
  bool normalize = false;                       // per-series affine target normalization
  std::optional<SsmParams> params_override;     // skip noise calibration (known-truth runs)
  std::optional<double> fixed_lambda;

  void validate() const {
    if (delay < 0) throw ConfigError("negative availability delay");
    if (levels.empty()) throw ConfigError("empty quantile level set");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (!(levels[i] > 0.0 && levels[i] < 1.0))
        throw ConfigError("quantile level must lie in (0,1)");
      if (i > 0 && levels[i] <= levels[i - 1])
        throw ConfigError("quantile levels must be strictly increasing");
    }
    const bool kalman_mean = mean == MeanMode::kKalmanStatic || mean == MeanMode::kKalmanDynamic;
    if (quantile == QuantileMode::kGaussian && !kalman_mean)
      throw ConfigError("gaussian quantile mode requires an adaptive-filter mean mode");
    const bool baseline = mean == MeanMode::kPersistence || mean == MeanMode::kWindowMean;
    if (baseline && quantile != QuantileMode::kNone)
      throw ConfigError("baseline mean modes support only quantile mode 'none'");
    if (!baseline && formula.empty()) throw ConfigError("empty model formula");
    if (mean == MeanMode::kPersistence) {
      if (persistence_lag < 1) throw ConfigError("persistence lag must be >= 1");
      if (persistence_lag < delay)
        throw ConfigError("persistence lag " + std::to_string(persistence_lag) +
                          " below the availability delay " + std::to_string(delay));
    }
    if (quantile == QuantileMode::kOgd && !(ogd_alpha > 0.0))
      throw ConfigError("step size must be positive");
    if (quantile == QuantileMode::kOgdBoa) {
      if (step_grid.empty()) throw ConfigError("empty step-size grid");
      for (double a : step_grid)
        if (!(a > 0.0)) throw ConfigError("step sizes must be positive");
    }
    if (params_override && mean != MeanMode::kKalmanDynamic)
      throw ConfigError("noise parameters can only be overridden in the calibrated filter mode");
  }
};

inline std::string mean_mode_name(const StrategySpec& s) {
  switch (s.mean) {
    case MeanMode::kOffline: return "offline";
    case MeanMode::kIncremental:
      return s.cadence == RefitCadence::kDaily ? "incremental(daily)" : "incremental(yearly)";
    case MeanMode::kKalmanStatic: return "kalman-static";
    case MeanMode::kKalmanDynamic: return "kalman-dynamic";
    case MeanMode::kPersistence: return "persistence(" + std::to_string(s.persistence_lag) + ")";
    case MeanMode::kWindowMean: return "window-mean";
  }
  throw ConfigError("unknown mean mode");
}

inline std::string quantile_mode_name(const StrategySpec& s) {
  switch (s.quantile) {
    case QuantileMode::kGaussian: return "gaussian";
    case QuantileMode::kOfflineQr: return "offline-qr";
    case QuantileMode::kOgd: return "ogd(" + format_double(s.ogd_alpha) + ")";
    case QuantileMode::kOgdBoa: return "ogd-boa";
    case QuantileMode::kIncrementalQr: return "incremental-qr";
    case QuantileMode::kNone: return "none";
  }
  throw ConfigError("unknown quantile mode");
}

inline std::string strategy_name(const StrategySpec& s) {
  return mean_mode_name(s) + "+" + quantile_mode_name(s);
}

// Parses "mean+quantile" (e.g. "kalman-dynamic+ogd-boa", "persistence(7)+none",
// "offline+ogd(0.01)") into the mode fields of `spec`, leaving the rest alone.
inline void parse_strategy(const std::string& text, StrategySpec& spec) {
  const auto plus = text.find('+');
  if (plus == std::string::npos)
    throw ConfigError("strategy must be written as mean+quantile: '" + text + "'");
  const std::string m = text.substr(0, plus);
  const std::string q = text.substr(plus + 1);

  auto paren_arg = [](const std::string& s, const std::string& head) -> std::optional<std::string> {
    if (s.size() > head.size() + 2 && s.compare(0, head.size() + 1, head + "(") == 0 && s.back() == ')')
      return s.substr(head.size() + 1, s.size() - head.size() - 2);
    return std::nullopt;
  };

  if (m == "offline") {
    spec.mean = MeanMode::kOffline;
  } else if (auto arg = paren_arg(m, "incremental")) {
    spec.mean = MeanMode::kIncremental;
    spec.cadence = refit_cadence_from_name(*arg);
  } else if (m == "kalman-static") {
    spec.mean = MeanMode::kKalmanStatic;
  } else if (m == "kalman-dynamic") {
    spec.mean = MeanMode::kKalmanDynamic;
  } else if (auto arg = paren_arg(m, "persistence")) {
    spec.mean = MeanMode::kPersistence;
    char* end = nullptr;
    const long lag = std::strtol(arg->c_str(), &end, 10);
    if (end != arg->c_str() + arg->size() || lag < 1)
      throw ConfigError("bad persistence lag: '" + *arg + "'");
    spec.persistence_lag = static_cast<int>(lag);
  } else if (m == "window-mean") {
    spec.mean = MeanMode::kWindowMean;
  } else {
    throw ConfigError("unknown mean mode: '" + m + "'");
  }

  if (q == "gaussian") {
    spec.quantile = QuantileMode::kGaussian;
  } else if (q == "offline-qr") {
    spec.quantile = QuantileMode::kOfflineQr;
  } else if (auto arg = paren_arg(q, "ogd")) {
    spec.quantile = QuantileMode::kOgd;
    char* end = nullptr;
    const double a = std::strtod(arg->c_str(), &end);
    if (end != arg->c_str() + arg->size() || !(a > 0.0))
      throw ConfigError("bad step size: '" + *arg + "'");
    spec.ogd_alpha = a;
  } else if (q == "ogd-boa") {
    spec.quantile = QuantileMode::kOgdBoa;
  } else if (q == "incremental-qr") {
    spec.quantile = QuantileMode::kIncrementalQr;
  } else if (q == "none") {
    spec.quantile = QuantileMode::kNone;
  } else {
    throw ConfigError("unknown quantile mode: '" + q + "'");
  }
}

// One row per (update, consumed observation) pair, in test-stream step
// coordinates. Refit-style updates log one row for the newest observation
// they touched.
struct UpdateEvent {
  std::int64_t update_step = 0;
  std::int64_t consumed_step = 0;
  std::int64_t update_ts = 0;
  std::int64_t consumed_ts = 0;
};

struct AuditResult {
  bool ok = true;
  std::string message = "no lookahead detected";
};

inline AuditResult audit_no_lookahead(const std::vector<UpdateEvent>& events, int delay) {
  for (const auto& e : events) {
    if (e.consumed_step + delay > e.update_step)
      return AuditResult{false, "lookahead: update at " + format_rfc3339(e.update_ts) +
                                    " consumed observation at " + format_rfc3339(e.consumed_ts) +
                                    " under delay " + std::to_string(delay)};
  }
  return AuditResult{};
}

inline std::string update_log_to_csv(const std::vector<UpdateEvent>& events) {
  std::ostringstream out;
  out << "update_step,consumed_step,update_timestamp,consumed_timestamp\n";
  for (const auto& e : events)
    out << e.update_step << "," << e.consumed_step << "," << format_rfc3339(e.update_ts) << ","
        << format_rfc3339(e.consumed_ts) << "\n";
  return out.str();
}

inline std::vector<UpdateEvent> update_log_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty update log");
  std::vector<UpdateEvent> events;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = detail::split_line(line, ',');
    if (cells.size() != 4)
      throw DataError("update log row " + std::to_string(line_no) + " is malformed");
    UpdateEvent e;
    e.update_step = std::strtoll(cells[0].c_str(), nullptr, 10);
    e.consumed_step = std::strtoll(cells[1].c_str(), nullptr, 10);
    e.update_ts = parse_timestamp(cells[2]);
    e.consumed_ts = parse_timestamp(cells[3]);
    events.push_back(e);
  }
  return events;
}

// Long-format weight trace, one row per (step, level, expert).
inline std::string weights_to_csv(const std::vector<ForecastRecord>& records,
                                  const std::vector<double>& levels,
                                  const std::vector<double>& alphas,
                                  const std::vector<std::vector<Eigen::VectorXd>>& trace) {
  std::ostringstream out;
  out << "timestamp,level,alpha,weight\n";
  for (std::size_t t = 0; t < trace.size(); ++t)
    for (std::size_t i = 0; i < trace[t].size(); ++i)
      for (Eigen::Index k = 0; k < trace[t][i].size(); ++k)
        out << format_rfc3339(records[t].timestamp) << "," << format_double(levels[i]) << ","
            << format_double(alphas[static_cast<std::size_t>(k)]) << ","
            << format_double(trace[t][i][k]) << "\n";
  return out.str();
}

struct RunManifest {
  std::string strategy;
  std::string series_id;
  std::string dataset_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> outputs;             // kind -> path
  std::map<std::string, double> wall_clock_seconds;       // stage -> seconds
};

inline void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"format", "anl-manifest"},     {"version", 1},
                     {"strategy", m.strategy},       {"series", m.series_id},
                     {"dataset_hash", m.dataset_hash}, {"seed", m.seed},
                     {"outputs", m.outputs},         {"wall_clock_seconds", m.wall_clock_seconds}};
}

inline void from_json(const nlohmann::json& j, RunManifest& m) {
  if (j.value("format", "") != "anl-manifest" || j.value("version", 0) != 1)
    throw DataError("unsupported manifest file format");
  m.strategy = j.at("strategy").get<std::string>();
  m.series_id = j.at("series").get<std::string>();
  m.dataset_hash = j.at("dataset_hash").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  m.wall_clock_seconds = j.at("wall_clock_seconds").get<std::map<std::string, double>>();
}

namespace detail {

inline Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.step_seconds != b.step_seconds) throw DataError("datasets disagree on time step");
  if (b.timestamps.front() != a.timestamps.back() + a.step_seconds)
    throw DataError("datasets are not contiguous");
  if (a.column_names != b.column_names) throw DataError("datasets disagree on covariate columns");
  Dataset out = a;
  out.timestamps.insert(out.timestamps.end(), b.timestamps.begin(), b.timestamps.end());
  out.target.insert(out.target.end(), b.target.begin(), b.target.end());
  out.usable.insert(out.usable.end(), b.usable.begin(), b.usable.end());
  for (std::size_t c = 0; c < out.columns.size(); ++c)
    out.columns[c].values.insert(out.columns[c].values.end(), b.columns[c].values.begin(),
                                 b.columns[c].values.end());
  out.check_invariants();
  return out;
}

}  // namespace detail

/**
 * Executes one forecasting strategy over a test stream. Per step, strictly:
 * features, mean forecast, quantile forecast, record; then, with y revealed,
 * every observation that has aged past the availability delay is consumed by
 * the adaptive components, and each consumption is logged for the audit.
 * The mutable state between steps can be checkpointed to JSON and restored,
 * except in the incremental-refit modes whose state is the data itself.
 */
class StrategyRunner {
 public:
  StrategyRunner(StrategySpec spec, Dataset train, Dataset test)
      : spec_(std::move(spec)), train_(std::move(train)), test_(std::move(test)) {
    spec_.validate();
    prepare();
  }

  bool done() const { return next_step_ >= test_.size(); }

  void run(std::size_t max_steps = std::numeric_limits<std::size_t>::max()) {
    std::size_t steps = 0;
    while (!done() && steps < max_steps) {
      step_once();
      ++steps;
    }
  }

  const std::vector<ForecastRecord>& records() const { return records_; }
  const std::vector<UpdateEvent>& update_log() const { return events_; }
  const std::vector<std::vector<Eigen::VectorXd>>& weight_trace() const { return weight_trace_; }
  const GamModel& gam() const { return gam_; }
  const SsmParams& params() const { return params_; }
  const SsmState& state() const { return state_; }
  const StrategySpec& spec() const { return spec_; }

  EvaluationReport report() const {
    SeriesForecasts sf;
    sf.series_id = test_.series_id;
    sf.records = records_;
    sf.y.assign(orig_y_.begin() + static_cast<std::ptrdiff_t>(first_record_step_),
                orig_y_.begin() + static_cast<std::ptrdiff_t>(first_record_step_ + records_.size()));
    return evaluate({sf}, spec_.levels);
  }

  bool can_checkpoint() const {
    return spec_.mean != MeanMode::kIncremental && spec_.quantile != QuantileMode::kIncrementalQr;
  }

  nlohmann::json checkpoint() const {
    if (!can_checkpoint())
      throw ConfigError("checkpointing is not supported for incremental-refit modes");
    nlohmann::json j{{"format", "anl-checkpoint"},
                     {"version", 1},
                     {"strategy", strategy_name(spec_)},
                     {"next_step", next_step_},
                     {"next_consume", next_consume_}};
    if (uses_kalman()) j["state"] = state_;
    if (spec_.quantile == QuantileMode::kOgd || spec_.quantile == QuantileMode::kOfflineQr)
      j["learners"] = learners_;
    if (spec_.quantile == QuantileMode::kOgdBoa) j["pools"] = pools_;
    nlohmann::json pend = nlohmann::json::array();
    for (std::size_t u = next_consume_; u < next_step_; ++u) {
      const PendingStep& p = pending_[u];
      nlohmann::json e{{"f", detail::eigen_to_json(p.f)},
                       {"z", detail::eigen_to_json(p.z)},
                       {"mean", p.mean_n},
                       {"expert_forecasts", p.expert_forecasts},
                       {"agg_forecast", p.agg_forecast}};
      pend.push_back(std::move(e));
    }
    j["pending"] = std::move(pend);
    return j;
  }

  void restore(const nlohmann::json& j) {
    if (j.value("format", "") != "anl-checkpoint" || j.value("version", 0) != 1)
      throw DataError("unsupported checkpoint file format");
    if (j.at("strategy").get<std::string>() != strategy_name(spec_))
      throw ConfigError("checkpoint belongs to strategy '" + j.at("strategy").get<std::string>() +
                        "', expected '" + strategy_name(spec_) + "'");
    next_step_ = j.at("next_step").get<std::size_t>();
    next_consume_ = j.at("next_consume").get<std::size_t>();
    if (next_consume_ > next_step_ || next_step_ > test_.size())
      throw DataError("checkpoint step counters out of range");
    if (uses_kalman()) state_ = j.at("state").get<SsmState>();
    if (spec_.quantile == QuantileMode::kOgd || spec_.quantile == QuantileMode::kOfflineQr)
      learners_ = j.at("learners").get<std::vector<QrModel>>();
    if (spec_.quantile == QuantileMode::kOgdBoa)
      pools_ = j.at("pools").get<std::vector<ExpertPool>>();
    pending_.assign(test_.size(), PendingStep{});
    const auto& pend = j.at("pending");
    if (pend.size() != next_step_ - next_consume_)
      throw DataError("checkpoint pending buffer has wrong length");
    for (std::size_t k = 0; k < pend.size(); ++k) {
      PendingStep p;
      p.f = detail::json_to_eigen(pend[k].at("f"));
      p.z = detail::json_to_eigen(pend[k].at("z"));
      p.mean_n = pend[k].at("mean").get<double>();
      p.expert_forecasts = pend[k].at("expert_forecasts").get<std::vector<std::vector<double>>>();
      p.agg_forecast = pend[k].at("agg_forecast").get<std::vector<double>>();
      pending_[next_consume_ + k] = std::move(p);
    }
    records_.clear();
    events_.clear();
    weight_trace_.clear();
    first_record_step_ = next_step_;
  }

 private:
  struct PendingStep {
    Eigen::VectorXd f;
    Eigen::VectorXd z;
    double mean_n = 0.0;
    std::vector<std::vector<double>> expert_forecasts;  // per level, per expert
    std::vector<double> agg_forecast;                   // per level
  };

  bool uses_kalman() const {
    return spec_.mean == MeanMode::kKalmanStatic || spec_.mean == MeanMode::kKalmanDynamic;
  }

  bool model_based() const {
    return spec_.mean != MeanMode::kPersistence && spec_.mean != MeanMode::kWindowMean;
  }

  bool needs_z() const {
    return spec_.quantile == QuantileMode::kOfflineQr || spec_.quantile == QuantileMode::kOgd ||
           spec_.quantile == QuantileMode::kOgdBoa || spec_.quantile == QuantileMode::kIncrementalQr;
  }

  bool per_obs_updates() const {
    return uses_kalman() || spec_.quantile == QuantileMode::kOgd ||
           spec_.quantile == QuantileMode::kOgdBoa;
  }

  bool needs_consume_pointer() const {
    return per_obs_updates() || spec_.quantile == QuantileMode::kIncrementalQr;
  }

  double to_orig(double v) const { return norm_m_ + norm_s_ * v; }

  void prepare() {
    train_.check_invariants();
    test_.check_invariants();
    if (train_.size() == 0 || test_.size() == 0) throw DataError("empty train or test window");
    if (train_.step_seconds != test_.step_seconds || train_.step_seconds <= 0)
      throw DataError("train and test disagree on time step");
    if (test_.timestamps.front() != train_.timestamps.back() + train_.step_seconds)
      throw DataError("test window must start one step after the training window");
    for (std::size_t t = 0; t < test_.size(); ++t)
      if (!test_.usable[t])
        throw DataError("test row " + format_rfc3339(test_.timestamps[t]) +
                        " is unusable after feature construction");
    orig_y_ = test_.target;

    if (model_based()) {
      if (spec_.normalize) {
        double m = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < train_.size(); ++i)
          if (train_.usable[i]) {
            m += train_.target[i];
            ++n;
          }
        if (n < 2) throw DataError("too few usable training rows");
        m /= static_cast<double>(n);
        double v = 0.0;
        for (std::size_t i = 0; i < train_.size(); ++i)
          if (train_.usable[i]) v += (train_.target[i] - m) * (train_.target[i] - m);
        const double s = std::sqrt(v / static_cast<double>(n - 1));
        if (s <= 0.0) throw DataError("constant training target: cannot normalize");
        norm_m_ = m;
        norm_s_ = s;
        for (auto& y : train_.target) y = (y - norm_m_) / norm_s_;
        for (auto& y : test_.target) y = (y - norm_m_) / norm_s_;
      }

      gam_ = fit_gam(train_, spec_.formula, spec_.fixed_lambda);
      train_means_.resize(train_.size(), 0.0);
      for (std::size_t i = 0; i < train_.size(); ++i)
        if (train_.usable[i]) train_means_[i] = predict_mean(gam_, train_, i);
    }

    switch (spec_.mean) {
      case MeanMode::kOffline:
      case MeanMode::kPersistence:
        break;
      case MeanMode::kWindowMean: {
        double m = 0.0;
        for (double y : orig_y_) m += y;
        window_mean_ = m / static_cast<double>(orig_y_.size());
        break;
      }
      case MeanMode::kIncremental: {
        Dataset combined = detail::concat(train_, test_);
        models_ = incremental_refit(combined, train_.size(), spec_.formula, spec_.cadence,
                                    spec_.delay, spec_.fixed_lambda);
        break;
      }
      case MeanMode::kKalmanStatic:
      case MeanMode::kKalmanDynamic: {
        theta1_ = warm_start_theta(gam_);
        state_ = initial_state(theta1_);
        if (spec_.mean == MeanMode::kKalmanStatic) {
          params_ = static_params(gam_.n_effects());
        } else if (spec_.params_override) {
          params_ = *spec_.params_override;
          params_.validate();
          if (params_.q_diag.size() != theta1_.size())
            throw ConfigError("overridden noise parameters have the wrong dimension");
        } else {
          std::vector<Eigen::VectorXd> fs;
          std::vector<double> ys;
          for (std::size_t i = 0; i < train_.size(); ++i)
            if (train_.usable[i]) {
              fs.push_back(effect_vector(gam_, train_, i));
              ys.push_back(train_.target[i]);
            }
          params_ = fit_dynamic(fs, ys, theta1_);
        }
        break;
      }
    }

    if (model_based() && needs_z()) {
      zmap_ = QuantileFeatureMap::fit(spec_.z_spec, gam_, train_, train_means_);
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < train_.size(); ++i)
        if (train_.usable[i]) rows.push_back(i);
      base_res_.resize(static_cast<Eigen::Index>(rows.size()));
      base_Z_.resize(static_cast<Eigen::Index>(rows.size()), zmap_.dim());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::size_t i = rows[r];
        base_res_[static_cast<Eigen::Index>(r)] = train_.target[i] - train_means_[i];
        base_Z_.row(static_cast<Eigen::Index>(r)) =
            zmap_.build(train_means_[i], effect_vector(gam_, train_, i), train_, i).transpose();
      }
      for (double q : spec_.levels) {
        QrModel warm = fit_offline_qr(base_res_, base_Z_, q);
        if (spec_.quantile == QuantileMode::kOgdBoa)
          pools_.push_back(make_expert_pool(q, spec_.step_grid, warm, spec_.boa_eta));
        else
          learners_.push_back(std::move(warm));
      }
    }
    pending_.assign(test_.size(), PendingStep{});
  }

  void refit_quantiles(std::size_t t) {
    const Eigen::Index extra = static_cast<Eigen::Index>(next_consume_);
    Eigen::VectorXd res(base_res_.size() + extra);
    Eigen::MatrixXd Z(base_Z_.rows() + extra, base_Z_.cols());
    res.head(base_res_.size()) = base_res_;
    Z.topRows(base_Z_.rows()) = base_Z_;
    for (Eigen::Index k = 0; k < extra; ++k) {
      const auto u = static_cast<std::size_t>(k);
      res[base_res_.size() + k] = test_.target[u] - pending_[u].mean_n;
      Z.row(base_Z_.rows() + k) = pending_[u].z.transpose();
    }
    for (std::size_t i = 0; i < spec_.levels.size(); ++i)
      learners_[i] = fit_offline_qr(res, Z, spec_.levels[i]);
    if (next_consume_ > 0) {
      const std::size_t u = next_consume_ - 1;
      events_.push_back(UpdateEvent{static_cast<std::int64_t>(t), static_cast<std::int64_t>(u),
                                    test_.timestamps[t], test_.timestamps[u]});
    }
  }

  void step_once() {
    const std::size_t t = next_step_;
    const std::int64_t ts = test_.timestamps[t];
    ForecastRecord rec;
    rec.timestamp = ts;
    rec.series_id = test_.series_id;

    if (!model_based()) {
      double v = 0.0;
      if (spec_.mean == MeanMode::kWindowMean) {
        v = window_mean_;
      } else {
        const std::size_t lag = static_cast<std::size_t>(spec_.persistence_lag);
        const std::size_t g = train_.size() + t;
        if (g < lag) throw DataError("persistence lag exceeds available history");
        const std::size_t src = g - lag;
        v = src < train_.size() ? train_.target[src] : orig_y_[src - train_.size()];
      }
      rec.mean = v;
      rec.quantiles.assign(spec_.levels.size(), v);
      records_.push_back(std::move(rec));
      ++next_step_;
      return;
    }

    if (spec_.quantile == QuantileMode::kIncrementalQr &&
        (t == 0 || epoch_day(ts) != epoch_day(test_.timestamps[t - 1])))
      refit_quantiles(t);

    PendingStep& p = pending_[t];
    p.f = effect_vector(gam_, test_, t);

    double mean_n = 0.0;
    switch (spec_.mean) {
      case MeanMode::kOffline:
        mean_n = predict_mean(gam_, test_, t);
        break;
      case MeanMode::kIncremental: {
        const std::size_t g = train_.size() + t;
        while (model_idx_ + 1 < models_.size() && models_[model_idx_ + 1].from_row <= g) {
          ++model_idx_;
          const std::int64_t consumed = static_cast<std::int64_t>(t) - spec_.delay - 1;
          if (consumed >= 0)
            events_.push_back(UpdateEvent{static_cast<std::int64_t>(t), consumed, ts,
                                          test_.timestamps[static_cast<std::size_t>(consumed)]});
        }
        mean_n = predict_mean(models_[model_idx_].model, test_, t);
        break;
      }
      case MeanMode::kKalmanStatic:
      case MeanMode::kKalmanDynamic:
        mean_n = predictive_distribution(state_, p.f, params_).mean;
        break;
      default:
        throw ConfigError("unreachable mean mode");
    }
    p.mean_n = mean_n;

    std::vector<double> vals(spec_.levels.size(), mean_n);
    switch (spec_.quantile) {
      case QuantileMode::kNone:
        break;
      case QuantileMode::kGaussian: {
        const Normal pd = predictive_distribution(state_, p.f, params_);
        for (std::size_t i = 0; i < spec_.levels.size(); ++i)
          vals[i] = gaussian_quantile(pd, spec_.levels[i]);
        break;
      }
      case QuantileMode::kOfflineQr:
      case QuantileMode::kIncrementalQr:
      case QuantileMode::kOgd: {
        p.z = zmap_.build(mean_n, p.f, test_, t);
        for (std::size_t i = 0; i < spec_.levels.size(); ++i)
          vals[i] = predict_quantile(learners_[i], p.z, mean_n);
        break;
      }
      case QuantileMode::kOgdBoa: {
        p.z = zmap_.build(mean_n, p.f, test_, t);
        p.expert_forecasts.resize(spec_.levels.size());
        p.agg_forecast.resize(spec_.levels.size());
        std::vector<Eigen::VectorXd> step_weights;
        step_weights.reserve(spec_.levels.size());
        for (std::size_t i = 0; i < spec_.levels.size(); ++i) {
          const ExpertPool& pool = pools_[i];
          std::vector<double> fc(static_cast<std::size_t>(pool.size()));
          for (int k = 0; k < pool.size(); ++k)
            fc[static_cast<std::size_t>(k)] =
                predict_quantile(pool.experts[static_cast<std::size_t>(k)], p.z, mean_n);
          step_weights.push_back(pool.weights);
          p.expert_forecasts[i] = fc;
          p.agg_forecast[i] = aggregate(pool, fc);
          vals[i] = p.agg_forecast[i];
        }
        weight_trace_.push_back(std::move(step_weights));
        break;
      }
    }

    rec.mean = to_orig(mean_n);
    const std::vector<double> sorted = sort_quantiles(spec_.levels, vals);
    rec.quantiles.resize(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) rec.quantiles[i] = to_orig(sorted[i]);
    records_.push_back(std::move(rec));

    if (needs_consume_pointer()) {
      while (next_consume_ + static_cast<std::size_t>(spec_.delay) <= t) {
        consume(next_consume_, t);
        ++next_consume_;
      }
    }
    ++next_step_;
  }

  void consume(std::size_t u, std::size_t t) {
    if (!per_obs_updates()) return;  // pointer only marks availability
    events_.push_back(UpdateEvent{static_cast<std::int64_t>(t), static_cast<std::int64_t>(u),
                                  test_.timestamps[t], test_.timestamps[u]});
    const PendingStep& p = pending_[u];
    const double y_u = test_.target[u];
    if (uses_kalman()) state_ = kalman_step(state_, p.f, y_u, params_);
    if (spec_.quantile == QuantileMode::kOgd) {
      const double r = y_u - p.mean_n;
      for (std::size_t i = 0; i < spec_.levels.size(); ++i)
        learners_[i] = ogd_step(learners_[i], p.z, r, spec_.ogd_alpha);
    } else if (spec_.quantile == QuantileMode::kOgdBoa) {
      const double r = y_u - p.mean_n;
      for (std::size_t i = 0; i < spec_.levels.size(); ++i) {
        ExpertPool& pool = pools_[i];
        std::vector<double> losses(static_cast<std::size_t>(pool.size()));
        for (int k = 0; k < pool.size(); ++k)
          losses[static_cast<std::size_t>(k)] =
              pinball(y_u, p.expert_forecasts[i][static_cast<std::size_t>(k)], pool.q);
        const double agg_loss = pinball(y_u, p.agg_forecast[i], pool.q);
        for (int k = 0; k < pool.size(); ++k)
          pool.experts[static_cast<std::size_t>(k)] =
              ogd_step(pool.experts[static_cast<std::size_t>(k)], p.z, r,
                       pool.alphas[static_cast<std::size_t>(k)]);
        pool = boa_update(pool, losses, agg_loss);
      }
    }
  }

  StrategySpec spec_;
  Dataset train_;
  Dataset test_;
  std::vector<double> orig_y_;
  double norm_m_ = 0.0;
  double norm_s_ = 1.0;

  GamModel gam_;
  std::vector<double> train_means_;
  std::vector<ScheduledModel> models_;
  std::size_t model_idx_ = 0;
  Eigen::VectorXd theta1_;
  SsmParams params_;
  SsmState state_;
  double window_mean_ = 0.0;

  QuantileFeatureMap zmap_;
  Eigen::VectorXd base_res_;
  Eigen::MatrixXd base_Z_;
  std::vector<QrModel> learners_;
  std::vector<ExpertPool> pools_;

  std::vector<PendingStep> pending_;
  std::size_t next_step_ = 0;
  std::size_t next_consume_ = 0;
  std::size_t first_record_step_ = 0;
  std::vector<ForecastRecord> records_;
  std::vector<UpdateEvent> events_;
  std::vector<std::vector<Eigen::VectorXd>> weight_trace_;
};

struct RunResult {
  std::vector<ForecastRecord> records;
  EvaluationReport report;
  std::vector<UpdateEvent> update_log;
  std::vector<std::vector<Eigen::VectorXd>> weight_trace;
  nlohmann::json checkpoint;
};

inline RunResult run_strategy(const StrategySpec& spec, const Dataset& train, const Dataset& test) {
  StrategyRunner runner(spec, train, test);
  runner.run();
  RunResult res;
  res.records = runner.records();
  res.report = runner.report();
  res.update_log = runner.update_log();
  res.weight_trace = runner.weight_trace();
  if (runner.can_checkpoint()) res.checkpoint = runner.checkpoint();
  const AuditResult audit = audit_no_lookahead(res.update_log, spec.delay);
  if (!audit.ok) throw NumericalError(audit.message);
  return res;
}

}  // namespace anl
