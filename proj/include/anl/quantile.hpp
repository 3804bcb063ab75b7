#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "anl/common.hpp"
#include "anl/dataset.hpp"
#include "anl/gam.hpp"

namespace anl {

// Pinball loss of forecasting the q-quantile as yq when y realizes.
inline double pinball(double y, double yq, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("quantile level must lie in (0,1)");
  return ((y < yq ? 1.0 : 0.0) - q) * (yq - y);
}

// 21 levels: 2.5%, 5%, every 5% up to 95%, 97.5%.
inline std::vector<double> default_levels() {
  std::vector<double> s{0.025};
  for (int i = 1; i <= 19; ++i) s.push_back(static_cast<double>(i) / 20.0);
  s.push_back(0.975);
  return s;
}

struct QrModel {
  double q = 0.5;
  Eigen::VectorXd beta;
};

inline double qr_objective(const Eigen::VectorXd& residuals, const Eigen::MatrixXd& Z,
                           const Eigen::VectorXd& beta, double q) {
  double o = 0.0;
  for (Eigen::Index t = 0; t < residuals.size(); ++t)
    o += pinball(residuals[t], Z.row(t).dot(beta), q);
  return o;
}

// Linear quantile regression of residuals on the rows of Z. Iteratively
// reweighted least squares on a smoothed pinball with a geometrically
// shrinking smoothing width, a short deterministic subgradient descent on
// the exact objective, then exact cyclic coordinate descent: each
// one-dimensional restriction is piecewise linear, so its minimizer is found
// by a breakpoint walk. On a constant-only design the final phase lands
// exactly in the optimal interval of the sample quantile.
inline QrModel fit_offline_qr(const Eigen::VectorXd& residuals, const Eigen::MatrixXd& Z,
                              double q) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("quantile level must lie in (0,1)");
  const Eigen::Index n = Z.rows();
  const Eigen::Index p = Z.cols();
  if (residuals.size() != n) throw NumericalError("residuals and covariate rows disagree in length");
  if (n < 10 * p)
    throw DataError("too few rows for quantile regression: " + std::to_string(n) + " for " +
                    std::to_string(p) + " covariates");
  for (Eigen::Index c = 0; c < p; ++c) {
    const double mean = Z.col(c).mean();
    const double var = (Z.col(c).array() - mean).square().sum() / static_cast<double>(n - 1);
    if (var <= 0.0 && mean != 1.0)
      throw DataError("degenerate quantile covariate column " + std::to_string(c));
  }

  const double rmean = residuals.mean();
  double scale = std::sqrt((residuals.array() - rmean).square().sum() / std::max<double>(1.0, static_cast<double>(n - 1)));
  scale = std::max(scale, 1e-8 * (1.0 + std::abs(rmean)));

  const Eigen::VectorXd col_sum = Z.colwise().sum().transpose();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  for (double h = scale; h > 1e-9 * scale; h *= 0.5) {
    for (int inner = 0; inner < 3; ++inner) {
      Eigen::VectorXd e = residuals - Z * beta;
      Eigen::VectorXd w = 0.5 * (e.array().square() + h * h).rsqrt();
      Eigen::MatrixXd A = Z.transpose() * w.asDiagonal() * Z;
      A.diagonal().array() += 1e-10 * std::max(A.trace() / static_cast<double>(p), 1e-30);
      Eigen::VectorXd b = Z.transpose() * (w.cwiseProduct(residuals)) + (q - 0.5) * col_sum;
      Eigen::VectorXd next = A.ldlt().solve(b);
      const double delta = (next - beta).norm();
      beta = next;
      if (delta < 1e-10 * (1.0 + beta.norm())) break;
    }
  }

  double best_obj = qr_objective(residuals, Z, beta, q);
  Eigen::VectorXd best = beta;
  Eigen::VectorXd cur = beta;
  for (int k = 0; k < 200; ++k) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
    for (Eigen::Index t = 0; t < n; ++t) {
      const double v = Z.row(t).dot(cur);
      if (residuals[t] < v)
        g += (1.0 - q) * Z.row(t).transpose();
      else if (residuals[t] > v)
        g -= q * Z.row(t).transpose();
    }
    g /= static_cast<double>(n);
    cur -= (scale / static_cast<double>(k + 2)) * g;
    const double o = qr_objective(residuals, Z, cur, q);
    if (o < best_obj) {
      best_obj = o;
      best = cur;
    }
  }

  Eigen::VectorXd e = residuals - Z * best;
  for (int sweep = 0; sweep < 8; ++sweep) {
    bool moved = false;
    for (Eigen::Index j = 0; j < p; ++j) {
      struct Breakpoint {
        double x, w;
      };
      std::vector<Breakpoint> bps;
      bps.reserve(static_cast<std::size_t>(n));
      double slope = 0.0;  // objective slope left of every breakpoint
      for (Eigen::Index t = 0; t < n; ++t) {
        const double v = Z(t, j);
        if (v == 0.0) continue;
        const double w = std::abs(v);
        const double ql = v > 0.0 ? q : 1.0 - q;
        bps.push_back({best[j] + e[t] / v, w});
        slope -= ql * w;
      }
      if (bps.empty()) continue;
      std::sort(bps.begin(), bps.end(),
                [](const Breakpoint& a, const Breakpoint& b) { return a.x < b.x; });
      double candidate = bps.front().x;
      for (const auto& bp : bps) {
        slope += bp.w;  // crossing a kink turns its slope from -q'w into (1-q')w
        candidate = bp.x;
        if (slope >= 0.0) break;
      }
      const double delta = candidate - best[j];
      if (delta == 0.0) continue;
      best[j] = candidate;
      e -= delta * Z.col(j);
      moved = true;
    }
    if (!moved) break;
  }

  return QrModel{q, best};
}

// One online subgradient step on the pinball of the residual r against the
// correction beta.z; the subgradient at the kink is taken as zero, so an
// exact hit leaves the coefficients alone.
inline QrModel ogd_step(const QrModel& m, const Eigen::VectorXd& z, double r, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("step size must be positive");
  if (z.size() != m.beta.size()) throw NumericalError("covariate dimension disagrees");
  const double v = m.beta.dot(z);
  QrModel out = m;
  if (r < v)
    out.beta -= alpha * (1.0 - m.q) * z;
  else if (r > v)
    out.beta += alpha * m.q * z;
  return out;
}

inline double predict_quantile(const QrModel& m, const Eigen::VectorXd& z, double mean) {
  if (z.size() != m.beta.size()) throw NumericalError("covariate dimension disagrees");
  return mean + m.beta.dot(z);
}

// Crossing repair: the ascending rearrangement never worsens any pinball
// loss. Applied at output time only.
inline std::vector<double> sort_quantiles(const std::vector<double>& levels,
                                          std::vector<double> values) {
  if (levels.size() != values.size()) throw ConfigError("levels and values disagree in length");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.0 && levels[i] < 1.0)) throw ConfigError("quantile level must lie in (0,1)");
    if (i > 0 && levels[i] <= levels[i - 1]) throw ConfigError("quantile levels must be strictly increasing");
  }
  std::sort(values.begin(), values.end());
  return values;
}

struct QuantileFeatureSpec {
  bool use_mean = true;
  bool use_mean_squared = true;
  std::vector<std::string> effects;      // standardized model effects to include
  std::vector<std::string> categorical;  // dataset columns turned into offset indicators
};

inline void to_json(nlohmann::json& j, const QuantileFeatureSpec& s) {
  j = nlohmann::json{{"use_mean", s.use_mean}, {"use_mean_squared", s.use_mean_squared},
                     {"effects", s.effects}, {"categorical", s.categorical}};
}

inline void from_json(const nlohmann::json& j, QuantileFeatureSpec& s) {
  s.use_mean = j.at("use_mean").get<bool>();
  s.use_mean_squared = j.at("use_mean_squared").get<bool>();
  s.effects = j.at("effects").get<std::vector<std::string>>();
  s.categorical = j.at("categorical").get<std::vector<std::string>>();
}

/**
 * Builds the covariate vector z for the quantile layer: standardized mean
 * forecast and its square, selected standardized effects, dropped-first
 * indicator blocks for categorical columns, and a trailing constant 1.
 * Standardization moments are frozen on the training window.
 */
class QuantileFeatureMap {
 public:
  QuantileFeatureMap() = default;

  static QuantileFeatureMap fit(const QuantileFeatureSpec& spec, const GamModel& gam,
                                const Dataset& train, const std::vector<double>& train_means) {
    if (train_means.size() != train.size())
      throw NumericalError("mean forecasts and training rows disagree in length");
    QuantileFeatureMap map;
    map.spec_ = spec;

    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < train.size(); ++i)
      if (train.usable[i]) rows.push_back(i);
    if (rows.size() < 2) throw DataError("too few usable training rows for quantile covariates");

    auto moments = [&](auto&& value) {
      double m = 0.0;
      for (auto i : rows) m += value(i);
      m /= static_cast<double>(rows.size());
      double v = 0.0;
      for (auto i : rows) {
        const double d = value(i) - m;
        v += d * d;
      }
      const double sd = std::sqrt(v / static_cast<double>(rows.size() - 1));
      if (sd <= 0.0) throw DataError("degenerate quantile covariate: constant over training rows");
      return std::pair<double, double>{m, sd};
    };
    if (spec.use_mean)
      std::tie(map.mean_mu_, map.mean_sd_) = moments([&](std::size_t i) { return train_means[i]; });
    if (spec.use_mean_squared)
      std::tie(map.mean2_mu_, map.mean2_sd_) =
          moments([&](std::size_t i) { return train_means[i] * train_means[i]; });

    for (const auto& name : spec.effects) {
      int idx = -1;
      for (int j = 0; j < gam.n_effects(); ++j)
        if (gam.effects[static_cast<std::size_t>(j)].covariate == name) idx = j;
      if (idx < 0) throw ConfigError("unknown effect '" + name + "' in quantile covariates");
      map.effect_idx_.push_back(idx);
    }

    for (const auto& name : spec.categorical) {
      if (!train.has_column(name)) throw DataError("missing covariate: " + name);
      std::vector<double> lv;
      for (auto i : rows) lv.push_back(train.column(name).values[i]);
      std::sort(lv.begin(), lv.end());
      lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
      if (lv.size() < 2) throw DataError("degenerate quantile covariate: single category in '" + name + "'");
      map.cat_levels_.push_back(std::move(lv));
    }
    return map;
  }

  int dim() const {
    int d = (spec_.use_mean ? 1 : 0) + (spec_.use_mean_squared ? 1 : 0) +
            static_cast<int>(effect_idx_.size()) + 1;
    for (const auto& lv : cat_levels_) d += static_cast<int>(lv.size()) - 1;
    return d;
  }

  Eigen::VectorXd build(double mean, const Eigen::VectorXd& effect_vec, const Dataset& d,
                        std::size_t i) const {
    Eigen::VectorXd z(dim());
    int k = 0;
    if (spec_.use_mean) z[k++] = (mean - mean_mu_) / mean_sd_;
    if (spec_.use_mean_squared) z[k++] = (mean * mean - mean2_mu_) / mean2_sd_;
    for (int idx : effect_idx_) {
      if (idx >= effect_vec.size() - 1) throw NumericalError("effect vector too short for quantile covariates");
      z[k++] = effect_vec[idx];
    }
    for (std::size_t c = 0; c < cat_levels_.size(); ++c) {
      const double x = d.column(spec_.categorical[c]).values[i];
      const auto& lv = cat_levels_[c];
      for (std::size_t l = 1; l < lv.size(); ++l) z[k++] = (x == lv[l]) ? 1.0 : 0.0;
    }
    z[k] = 1.0;
    return z;
  }

  const QuantileFeatureSpec& spec() const { return spec_; }

  friend void to_json(nlohmann::json& j, const QuantileFeatureMap& m) {
    j = nlohmann::json{{"spec", m.spec_},
                       {"mean_mu", m.mean_mu_},   {"mean_sd", m.mean_sd_},
                       {"mean2_mu", m.mean2_mu_}, {"mean2_sd", m.mean2_sd_},
                       {"effect_idx", m.effect_idx_},
                       {"cat_levels", m.cat_levels_}};
  }

  friend void from_json(const nlohmann::json& j, QuantileFeatureMap& m) {
    m.spec_ = j.at("spec").get<QuantileFeatureSpec>();
    m.mean_mu_ = j.at("mean_mu").get<double>();
    m.mean_sd_ = j.at("mean_sd").get<double>();
    m.mean2_mu_ = j.at("mean2_mu").get<double>();
    m.mean2_sd_ = j.at("mean2_sd").get<double>();
    m.effect_idx_ = j.at("effect_idx").get<std::vector<int>>();
    m.cat_levels_ = j.at("cat_levels").get<std::vector<std::vector<double>>>();
  }

 private:
  QuantileFeatureSpec spec_;
  double mean_mu_ = 0.0, mean_sd_ = 1.0;
  double mean2_mu_ = 0.0, mean2_sd_ = 1.0;
  std::vector<int> effect_idx_;
  std::vector<std::vector<double>> cat_levels_;
};

inline void to_json(nlohmann::json& j, const QrModel& m) {
  j = nlohmann::json{{"q", m.q}, {"beta", detail::eigen_to_json(m.beta)}};
}

inline void from_json(const nlohmann::json& j, QrModel& m) {
  m.q = j.at("q").get<double>();
  m.beta = detail::json_to_eigen(j.at("beta"));
}

}  // namespace anl
