#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "anl/common.hpp"
#include "anl/mathutil.hpp"

namespace anl {

struct Normal {
  double mean = 0.0;
  double var = 1.0;
};

struct SsmParams {
  Eigen::VectorXd q_diag;  // diagonal of the state noise covariance
  double sigma2 = 1.0;     // observation noise variance

  void validate() const {
    if (!std::isfinite(sigma2) || sigma2 <= 0.0)
      throw ConfigError("observation noise variance must be positive");
    for (Eigen::Index i = 0; i < q_diag.size(); ++i)
      if (!std::isfinite(q_diag[i]) || q_diag[i] < 0.0)
        throw ConfigError("state noise variances must be nonnegative");
  }
};

// Constant-state setting: no state noise, unit observation noise.
inline SsmParams static_params(int d) {
  if (d < 1) throw ConfigError("state dimension must be >= 1");
  return SsmParams{Eigen::VectorXd::Zero(d + 1), 1.0};
}

struct SsmState {
  Eigen::VectorXd theta_hat;
  Eigen::MatrixXd P;
  std::int64_t t = 1;

  void check() const {
    if (!theta_hat.allFinite() || !P.allFinite()) throw NumericalError("non-finite filter state");
    if (P.rows() != P.cols() || P.rows() != theta_hat.size())
      throw NumericalError("filter state dimensions disagree");
    const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
    if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw NumericalError("filter covariance lost symmetry");
  }

  double min_eigenvalue() const {
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(P).eigenvalues().minCoeff();
  }
};

inline SsmState initial_state(const Eigen::VectorXd& theta1) {
  SsmState s;
  s.theta_hat = theta1;
  s.P = Eigen::MatrixXd::Identity(theta1.size(), theta1.size());
  s.t = 1;
  return s;
}

// One filtering update: condition on (f, y), then propagate by adding the
// state noise. The covariance is re-symmetrized to stay PSD over long
// streams.
inline SsmState kalman_step(const SsmState& s, const Eigen::VectorXd& f, double y,
                            const SsmParams& p) {
  if (f.size() != s.theta_hat.size() || p.q_diag.size() != s.theta_hat.size())
    throw NumericalError("filter update dimensions disagree");
  if (!f.allFinite() || !std::isfinite(y)) throw NumericalError("non-finite filter input");

  const Eigen::VectorXd Pf = s.P * f;
  const double denom = f.dot(Pf) + p.sigma2;
  if (!(denom > 0.0)) throw NumericalError("degenerate innovation variance");

  Eigen::MatrixXd Ptt = s.P - (Pf * Pf.transpose()) / denom;
  const double innovation = s.theta_hat.dot(f) - y;

  SsmState out;
  out.theta_hat = s.theta_hat - (Ptt * f) * (innovation / p.sigma2);
  out.P = Ptt;
  out.P.diagonal() += p.q_diag;
  out.P = (0.5 * (out.P + out.P.transpose())).eval();
  out.t = s.t + 1;
  return out;
}

inline Normal predictive_distribution(const SsmState& s, const Eigen::VectorXd& f,
                                      const SsmParams& p) {
  if (f.size() != s.theta_hat.size()) throw NumericalError("effect vector dimension disagrees");
  const double var = f.dot(s.P * f) + p.sigma2;
  if (!(var > 0.0)) throw NumericalError("nonpositive predictive variance");
  return Normal{s.theta_hat.dot(f), var};
}

inline double gaussian_quantile(const Normal& n, double q) {
  return n.mean + normal_quantile(q) * std::sqrt(n.var);
}

// Sum over the stream of one-step-ahead predictive log-densities, filtering
// from theta1 with identity prior covariance.
inline double filter_loglik(const std::vector<Eigen::VectorXd>& effects,
                            const std::vector<double>& y, const Eigen::VectorXd& theta1,
                            const SsmParams& p) {
  if (effects.size() != y.size()) throw NumericalError("effects and targets disagree in length");
  p.validate();
  SsmState s = initial_state(theta1);
  double ll = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const Normal pd = predictive_distribution(s, effects[t], p);
    const double r = y[t] - pd.mean;
    ll += -0.5 * (std::log(2.0 * kPi * pd.var) + r * r / pd.var);
    s = kalman_step(s, effects[t], y[t], p);
  }
  return ll;
}

// Greedy likelihood calibration of the noise variances: sigma2 over a log
// grid scaled by the residual variance, each Q entry over a log grid of
// ratios to sigma2 (zero included), coordinates swept round-robin, a move
// kept only when the predictive log-likelihood improves, stopping after 3
// sweeps without improvement. The decade sweep runs from four deterministic
// starts and the winner is polished with shrinking multiplicative steps
// inside the grid hull (the decade grid alone quantizes sigma2 too coarsely
// to recover the likelihood of known noise parameters). Falls back to the
// constant-state setting on short or uninformative streams.
inline SsmParams fit_dynamic(const std::vector<Eigen::VectorXd>& effects,
                             const std::vector<double>& y, const Eigen::VectorXd& theta1) {
  const int d1 = static_cast<int>(theta1.size());
  const SsmParams fallback = static_params(d1 - 1);
  if (effects.size() != y.size()) throw NumericalError("effects and targets disagree in length");
  if (y.size() < 200) {
    log(LogLevel::kWarn, "noise calibration skipped: " + std::to_string(y.size()) +
                             " rows < 200, using the constant-state setting");
    return fallback;
  }

  double s2 = 0.0;
  {
    double mean = 0.0;
    std::vector<double> res(y.size());
    for (std::size_t t = 0; t < y.size(); ++t) {
      res[t] = y[t] - theta1.dot(effects[t]);
      mean += res[t];
    }
    mean /= static_cast<double>(y.size());
    for (double r : res) s2 += (r - mean) * (r - mean);
    s2 = std::max(s2 / static_cast<double>(y.size()), 1e-12);
  }

  std::vector<double> sigma_grid;
  for (int i = -6; i <= 2; ++i) sigma_grid.push_back(std::pow(10.0, i) * s2);
  std::vector<double> ratio_grid{0.0};
  for (int i = -10; i <= -2; ++i) ratio_grid.push_back(std::pow(10.0, i));
  const double ratio_lo = 1e-10, ratio_hi = 1e-2;
  const double sigma_lo = sigma_grid.front(), sigma_hi = sigma_grid.back();

  double best_ll = -std::numeric_limits<double>::infinity();
  double best_sigma2 = s2;
  Eigen::VectorXd best_ratios = Eigen::VectorXd::Zero(d1);

  for (const double sigma_start : {s2, 1e-2 * s2}) {
    for (const double ratio_start : {0.0, 1e-4}) {
      double sigma2 = sigma_start;
      Eigen::VectorXd ratios = Eigen::VectorXd::Constant(d1, ratio_start);
      auto assemble = [&]() { return SsmParams{ratios * sigma2, sigma2}; };

      double best = filter_loglik(effects, y, theta1, assemble());
      int stale = 0;
      while (stale < 3) {
        bool improved = false;
        for (double v : sigma_grid) {
          const double keep = sigma2;
          sigma2 = v;
          const double ll = filter_loglik(effects, y, theta1, assemble());
          if (ll > best) {
            best = ll;
            improved = true;
          } else {
            sigma2 = keep;
          }
        }
        for (int j = 0; j < d1; ++j) {
          for (double v : ratio_grid) {
            const double keep = ratios[j];
            ratios[j] = v;
            const double ll = filter_loglik(effects, y, theta1, assemble());
            if (ll > best) {
              best = ll;
              improved = true;
            } else {
              ratios[j] = keep;
            }
          }
        }
        stale = improved ? 0 : stale + 1;
      }

      for (const double step :
           {std::pow(10.0, 0.5), std::pow(10.0, 0.25), std::pow(10.0, 0.125), std::pow(10.0, 0.0625)}) {
        bool improved = true;
        while (improved) {
          improved = false;
          for (const double m : {step, 1.0 / step}) {
            const double keep = sigma2;
            sigma2 = std::clamp(sigma2 * m, sigma_lo, sigma_hi);
            const double ll =
                sigma2 == keep ? best : filter_loglik(effects, y, theta1, assemble());
            if (ll > best) {
              best = ll;
              improved = true;
            } else {
              sigma2 = keep;
            }
          }
          for (int j = 0; j < d1; ++j) {
            for (const double m : {step, 1.0 / step}) {
              const double keep = ratios[j];
              const double v =
                  keep == 0.0 ? (m > 1.0 ? ratio_lo : 0.0) : std::clamp(keep * m, ratio_lo, ratio_hi);
              if (v == keep) continue;
              ratios[j] = v;
              const double ll = filter_loglik(effects, y, theta1, assemble());
              if (ll > best) {
                best = ll;
                improved = true;
              } else {
                ratios[j] = keep;
              }
            }
          }
        }
      }

      if (best > best_ll) {
        best_ll = best;
        best_sigma2 = sigma2;
        best_ratios = ratios;
      }
    }
  }

  const double static_ll = filter_loglik(effects, y, theta1, fallback);
  if (best_ll < static_ll) {
    log(LogLevel::kWarn, "noise calibration did not beat the constant-state setting, keeping it");
    return fallback;
  }
  SsmParams out{best_ratios * best_sigma2, best_sigma2};
  out.validate();
  return out;
}

inline void to_json(nlohmann::json& j, const SsmParams& p) {
  std::vector<double> q(p.q_diag.data(), p.q_diag.data() + p.q_diag.size());
  j = nlohmann::json{{"q_diag", q}, {"sigma2", p.sigma2}};
}

inline void from_json(const nlohmann::json& j, SsmParams& p) {
  auto q = j.at("q_diag").get<std::vector<double>>();
  p.q_diag = Eigen::Map<Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size()));
  p.sigma2 = j.at("sigma2").get<double>();
  p.validate();
}

inline void to_json(nlohmann::json& j, const SsmState& s) {
  std::vector<double> theta(s.theta_hat.data(), s.theta_hat.data() + s.theta_hat.size());
  std::vector<std::vector<double>> P;
  for (Eigen::Index r = 0; r < s.P.rows(); ++r) {
    std::vector<double> row(s.P.cols());
    for (Eigen::Index c = 0; c < s.P.cols(); ++c) row[static_cast<std::size_t>(c)] = s.P(r, c);
    P.push_back(std::move(row));
  }
  j = nlohmann::json{{"theta_hat", theta}, {"P", P}, {"t", s.t}};
}

inline void from_json(const nlohmann::json& j, SsmState& s) {
  auto theta = j.at("theta_hat").get<std::vector<double>>();
  s.theta_hat = Eigen::Map<Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
  auto P = j.at("P").get<std::vector<std::vector<double>>>();
  s.P.resize(static_cast<Eigen::Index>(P.size()), static_cast<Eigen::Index>(P.size()));
  for (std::size_t r = 0; r < P.size(); ++r) {
    if (P[r].size() != P.size()) throw DataError("filter covariance checkpoint is not square");
    for (std::size_t c = 0; c < P[r].size(); ++c)
      s.P(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = P[r][c];
  }
  s.t = j.at("t").get<std::int64_t>();
  s.check();
}

}  // namespace anl
