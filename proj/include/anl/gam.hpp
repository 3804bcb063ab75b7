#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anl/common.hpp"
#include "anl/dataset.hpp"
#include "anl/spline.hpp"
#include "anl/timeutil.hpp"

namespace anl {

struct FormulaTerm {
  std::string covariate;
  BasisKind kind = BasisKind::kCubic;
  int n_knots = 10;
  std::optional<std::pair<double, double>> range;  // periodic effects get the full period
};

struct EffectStats {
  double mean = 0.0;
  double sd = 1.0;
};

struct GamEffect {
  std::string covariate;
  SplineBasis basis;
  Eigen::VectorXd coef;
  double lambda = 0.0;
  EffectStats stats;
};

/**
 * Additive mean model: intercept plus a sum of univariate effects. Nonlinear
 * and categorical effects are centered over the training rows, so the
 * intercept carries the level and the decomposition is unique.
 */
struct GamModel {
  std::vector<GamEffect> effects;
  double intercept = 0.0;
  double sigma2 = 0.0;

  int n_effects() const { return static_cast<int>(effects.size()); }
};

namespace detail {

template <class Getter>
double predict_mean_impl(const GamModel& m, Getter&& get) {
  double y = m.intercept;
  for (const auto& ef : m.effects) y += ef.basis.value(ef.coef, get(ef.covariate));
  return y;
}

template <class Getter>
Eigen::VectorXd effect_vector_impl(const GamModel& m, Getter&& get) {
  Eigen::VectorXd f(m.n_effects() + 1);
  for (int j = 0; j < m.n_effects(); ++j) {
    const auto& ef = m.effects[static_cast<std::size_t>(j)];
    f[j] = (ef.basis.value(ef.coef, get(ef.covariate)) - ef.stats.mean) / ef.stats.sd;
  }
  f[m.n_effects()] = 1.0;
  return f;
}

struct EffectBlock {
  std::string covariate;
  SplineBasis basis;
  Eigen::MatrixXd design;    // n x p_c, constrained coordinates
  Eigen::MatrixXd reparam;   // p x p_c, maps constrained coefs back to basis coefs
  Eigen::MatrixXd penalty;   // p_c x p_c
  bool penalized = false;
  int offset = 0;
};

struct GamDesign {
  std::vector<std::size_t> rows;  // usable training rows
  std::vector<EffectBlock> blocks;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::MatrixXd XtX;
  Eigen::VectorXd Xty;
  double yty = 0.0;
};

inline GamDesign build_design(const Dataset& train, const std::vector<FormulaTerm>& formula) {
  if (formula.empty()) throw ConfigError("empty model formula");
  GamDesign g;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train.usable[i]) g.rows.push_back(i);
  const auto n = static_cast<Eigen::Index>(g.rows.size());

  int raw_dim = 1;
  for (const auto& term : formula) {
    if (!train.has_column(term.covariate)) throw DataError("missing covariate: " + term.covariate);
    const auto& col = train.column(term.covariate).values;
    std::vector<double> x;
    x.reserve(g.rows.size());
    for (auto i : g.rows) x.push_back(col[i]);

    EffectBlock b;
    b.covariate = term.covariate;
    b.basis = SplineBasis::make_basis(term.kind, x, term.n_knots, term.range);
    const int p = b.basis.dim();
    raw_dim += p;

    Eigen::MatrixXd Xj(n, p);
    for (Eigen::Index r = 0; r < n; ++r)
      Xj.row(r) = b.basis.design_row(x[static_cast<std::size_t>(r)]);

    if (term.kind == BasisKind::kLinear) {
      b.design = std::move(Xj);
      b.reparam = Eigen::MatrixXd::Identity(p, p);
      b.penalty = Eigen::MatrixXd::Zero(p, p);
    } else {
      // sum-to-zero constraint over the training rows, absorbed by
      // reparametrizing onto an orthonormal basis of the constraint's
      // null space
      Eigen::VectorXd c = Xj.colwise().sum().transpose();
      if (c.norm() > 1e-8 * std::sqrt(static_cast<double>(n))) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(c);
        Eigen::MatrixXd Q = qr.householderQ();
        b.reparam = Q.rightCols(p - 1);
      } else {
        b.reparam = Eigen::MatrixXd::Identity(p, p);
      }
      b.design = Xj * b.reparam;
      b.penalty = b.reparam.transpose() * b.basis.penalty() * b.reparam;
      b.penalized = term.kind == BasisKind::kCubic || term.kind == BasisKind::kCyclic;
    }
    g.blocks.push_back(std::move(b));
  }

  if (g.rows.size() < 10u * static_cast<std::size_t>(raw_dim))
    throw DataError("too few usable training rows: " + std::to_string(g.rows.size()) +
                    " for basis dimension " + std::to_string(raw_dim));

  int p_total = 1;
  for (auto& b : g.blocks) {
    b.offset = p_total;
    p_total += static_cast<int>(b.design.cols());
  }
  g.X.resize(n, p_total);
  g.X.col(0).setOnes();
  for (const auto& b : g.blocks)
    g.X.middleCols(b.offset, b.design.cols()) = b.design;
  g.y.resize(n);
  for (Eigen::Index r = 0; r < n; ++r)
    g.y[r] = train.target[g.rows[static_cast<std::size_t>(r)]];

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(g.X);
  if (qr.rank() < p_total) {
    const auto& perm = qr.colsPermutation().indices();
    int bad = p_total;
    for (Eigen::Index i = qr.rank(); i < perm.size(); ++i)
      bad = std::min(bad, static_cast<int>(perm[i]));
    std::string who = "intercept";
    for (const auto& b : g.blocks)
      if (bad >= b.offset && bad < b.offset + b.design.cols()) who = b.covariate;
    throw NumericalError("rank-deficient design for effect '" + who + "'");
  }

  g.XtX = g.X.transpose() * g.X;
  g.Xty = g.X.transpose() * g.y;
  g.yty = g.y.squaredNorm();
  return g;
}

// Generalized cross-validation score n*RSS/(n-edf)^2 for one smoothing
// vector; optionally returns the solution and its components.
inline double gcv_score(const GamDesign& g, const std::vector<double>& lambdas,
                        Eigen::VectorXd* coef_out = nullptr, double* edf_out = nullptr,
                        double* rss_out = nullptr) {
  if (lambdas.size() != g.blocks.size()) throw ConfigError("one smoothing weight per effect required");
  const double n = static_cast<double>(g.rows.size());
  Eigen::MatrixXd A = g.XtX;
  for (std::size_t j = 0; j < g.blocks.size(); ++j) {
    const auto& b = g.blocks[j];
    if (b.penalized)
      A.block(b.offset, b.offset, b.design.cols(), b.design.cols()) += lambdas[j] * b.penalty;
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  Eigen::VectorXd beta = ldlt.solve(g.Xty);
  double rss = g.yty - 2.0 * beta.dot(g.Xty) + beta.dot(g.XtX * beta);
  rss = std::max(rss, 0.0);
  const double edf = ldlt.solve(g.XtX).trace();
  if (coef_out) *coef_out = beta;
  if (edf_out) *edf_out = edf;
  if (rss_out) *rss_out = rss;
  if (n - edf < 1e-9) return std::numeric_limits<double>::infinity();
  return n * rss / ((n - edf) * (n - edf));
}

}  // namespace detail

// GCV value for an explicit smoothing vector (entries for unpenalized
// effects are ignored). Exposed for diagnostics.
inline double gam_gcv(const Dataset& train, const std::vector<FormulaTerm>& formula,
                      const std::vector<double>& lambdas) {
  auto g = detail::build_design(train, formula);
  return detail::gcv_score(g, lambdas);
}

// Penalized least-squares fit of the additive model. Smoothing weights are
// chosen per effect by coordinate-wise GCV search on a log grid, two sweeps,
// unless a fixed weight is forced.
inline GamModel fit_gam(const Dataset& train, const std::vector<FormulaTerm>& formula,
                        std::optional<double> fixed_lambda = std::nullopt) {
  auto g = detail::build_design(train, formula);
  const double n = static_cast<double>(g.rows.size());

  std::vector<double> lambdas(g.blocks.size(), 1.0);
  if (fixed_lambda) {
    for (auto& l : lambdas) l = *fixed_lambda;
  } else {
    std::vector<double> grid;
    for (int i = -4; i <= 6; ++i) grid.push_back(std::pow(10.0, i));
    double best = detail::gcv_score(g, lambdas);
    for (int sweep = 0; sweep < 2; ++sweep) {
      for (std::size_t j = 0; j < g.blocks.size(); ++j) {
        if (!g.blocks[j].penalized) continue;
        for (double lam : grid) {
          std::vector<double> trial = lambdas;
          trial[j] = lam;
          const double score = detail::gcv_score(g, trial);
          if (score < best) {
            best = score;
            lambdas[j] = lam;
          }
        }
      }
    }
  }

  Eigen::VectorXd coef;
  double edf = 0.0, rss = 0.0;
  detail::gcv_score(g, lambdas, &coef, &edf, &rss);

  GamModel m;
  m.intercept = coef[0];
  m.sigma2 = rss / std::max(n - edf, 1.0);

  for (std::size_t j = 0; j < g.blocks.size(); ++j) {
    const auto& b = g.blocks[j];
    Eigen::VectorXd gamma = coef.segment(b.offset, b.design.cols());
    Eigen::VectorXd fitted = b.design * gamma;
    const double mean = fitted.mean();
    const double sd = std::sqrt((fitted.array() - mean).square().sum() /
                                std::max(n - 1.0, 1.0));
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
      log(LogLevel::kWarn, "dropping constant effect '" + b.covariate + "'");
      m.intercept += mean;
      continue;
    }
    GamEffect ef;
    ef.covariate = b.covariate;
    ef.basis = b.basis;
    ef.coef = b.reparam * gamma;
    ef.lambda = b.penalized ? lambdas[j] : 0.0;
    ef.stats = EffectStats{mean, sd};
    m.effects.push_back(std::move(ef));
  }
  return m;
}

inline double predict_mean(const GamModel& m, const std::map<std::string, double>& row) {
  return detail::predict_mean_impl(m, [&](const std::string& name) {
    auto it = row.find(name);
    if (it == row.end()) throw DataError("missing covariate: " + name);
    return it->second;
  });
}

inline double predict_mean(const GamModel& m, const Dataset& d, std::size_t i) {
  return detail::predict_mean_impl(m, [&](const std::string& name) {
    if (!d.has_column(name)) throw DataError("missing covariate: " + name);
    return d.column(name).values[i];
  });
}

// Standardized effect vector (f1..fd, 1) used by the adaptive layer: each
// effect is shifted and scaled by its training moments.
inline Eigen::VectorXd effect_vector(const GamModel& m, const std::map<std::string, double>& row) {
  return detail::effect_vector_impl(m, [&](const std::string& name) {
    auto it = row.find(name);
    if (it == row.end()) throw DataError("missing covariate: " + name);
    return it->second;
  });
}

inline Eigen::VectorXd effect_vector(const GamModel& m, const Dataset& d, std::size_t i) {
  return detail::effect_vector_impl(m, [&](const std::string& name) {
    if (!d.has_column(name)) throw DataError("missing covariate: " + name);
    return d.column(name).values[i];
  });
}

// State vector that makes theta . effect_vector(row) equal predict_mean(row)
// for every row: the adaptive layer starts exactly at the offline model.
inline Eigen::VectorXd warm_start_theta(const GamModel& m) {
  Eigen::VectorXd theta(m.n_effects() + 1);
  double c = m.intercept;
  for (int j = 0; j < m.n_effects(); ++j) {
    theta[j] = m.effects[static_cast<std::size_t>(j)].stats.sd;
    c += m.effects[static_cast<std::size_t>(j)].stats.mean;
  }
  theta[m.n_effects()] = c;
  return theta;
}

enum class RefitCadence { kDaily, kYearly };

inline RefitCadence refit_cadence_from_name(const std::string& s) {
  if (s == "daily") return RefitCadence::kDaily;
  if (s == "yearly") return RefitCadence::kYearly;
  throw ConfigError("unknown refit cadence: " + s);
}

struct ScheduledModel {
  std::size_t from_row = 0;  // first row of `full` the model forecasts
  GamModel model;
};

// Repeated full refits over an extending window: at the first stream row and
// at every day/year boundary, refit on everything available under the delay.
// Rows between boundaries are forecast by the latest model.
inline std::vector<ScheduledModel> incremental_refit(const Dataset& full, std::size_t stream_begin,
                                                     const std::vector<FormulaTerm>& formula,
                                                     RefitCadence cadence, int delay_steps,
                                                     std::optional<double> fixed_lambda = std::nullopt) {
  if (stream_begin == 0 || stream_begin >= full.size())
    throw ConfigError("incremental refit needs a nonempty training prefix and a nonempty stream");
  if (delay_steps < 0) throw ConfigError("negative delay");
  auto period_id = [&](std::int64_t ts) {
    return cadence == RefitCadence::kDaily ? epoch_day(ts)
                                           : static_cast<std::int64_t>(civil_year(ts));
  };
  std::vector<ScheduledModel> out;
  for (std::size_t t = stream_begin; t < full.size(); ++t) {
    const bool boundary =
        t == stream_begin || period_id(full.timestamps[t]) != period_id(full.timestamps[t - 1]);
    if (!boundary) continue;
    if (t <= static_cast<std::size_t>(delay_steps))
      throw DataError("incremental refit: no data available under the delay");
    Dataset window = detail::slice(full, 0, t - static_cast<std::size_t>(delay_steps), "refit");
    out.push_back(ScheduledModel{t, fit_gam(window, formula, fixed_lambda)});
  }
  return out;
}

namespace detail {

inline nlohmann::json eigen_to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd json_to_eigen(const nlohmann::json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const SplineBasis& b) {
  j = nlohmann::json{{"kind", basis_kind_name(b.kind())},
                     {"knots", b.knots()},
                     {"levels", b.levels()},
                     {"range", {b.range_lo(), b.range_hi()}}};
}

inline void from_json(const nlohmann::json& j, SplineBasis& b) {
  b = SplineBasis::from_parts(basis_kind_from_name(j.at("kind").get<std::string>()),
                              j.at("knots").get<std::vector<double>>(),
                              j.at("levels").get<std::vector<double>>(),
                              j.at("range").at(0).get<double>(), j.at("range").at(1).get<double>());
}

inline void to_json(nlohmann::json& j, const GamEffect& e) {
  j = nlohmann::json{{"covariate", e.covariate}, {"basis", e.basis},
                     {"coef", detail::eigen_to_json(e.coef)}, {"lambda", e.lambda},
                     {"mean", e.stats.mean}, {"sd", e.stats.sd}};
}

inline void from_json(const nlohmann::json& j, GamEffect& e) {
  e.covariate = j.at("covariate").get<std::string>();
  e.basis = j.at("basis").get<SplineBasis>();
  e.coef = detail::json_to_eigen(j.at("coef"));
  e.lambda = j.at("lambda").get<double>();
  e.stats.mean = j.at("mean").get<double>();
  e.stats.sd = j.at("sd").get<double>();
}

inline void to_json(nlohmann::json& j, const GamModel& m) {
  j = nlohmann::json{{"format", "anl-gam"}, {"version", 1}, {"intercept", m.intercept},
                     {"sigma2", m.sigma2}, {"effects", m.effects}};
}

inline void from_json(const nlohmann::json& j, GamModel& m) {
  if (j.value("format", "") != "anl-gam" || j.value("version", 0) != 1)
    throw DataError("unsupported mean-model file format");
  m.intercept = j.at("intercept").get<double>();
  m.sigma2 = j.at("sigma2").get<double>();
  m.effects = j.at("effects").get<std::vector<GamEffect>>();
}

}  // namespace anl
