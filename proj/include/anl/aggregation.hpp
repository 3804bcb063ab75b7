#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "anl/common.hpp"
#include "anl/quantile.hpp"

namespace anl {

// Default step-size grid 1e-8 .. 1.
inline std::vector<double> default_step_grid() {
  std::vector<double> g;
  for (int i = -8; i <= 0; ++i) g.push_back(std::pow(10.0, i));
  return g;
}

/**
 * One aggregation pool per quantile level: K online learners differing only
 * in their step size, combined by second-order exponential weighting on the
 * instantaneous regrets. The learning rate is either fixed or self-tuned
 * from running regret statistics, eta_k = min(1/(2 E_k), sqrt(log K / V_k)),
 * which keeps eta_k |r| <= 1/2 so the corrected regret stays monotone in r.
 */
struct ExpertPool {
  double q = 0.5;
  std::vector<double> alphas;
  std::vector<QrModel> experts;
  Eigen::VectorXd prior;          // initial weights, the mixture's anchor
  Eigen::VectorXd weights;
  std::optional<double> fixed_eta;
  Eigen::VectorXd regret_sum;     // R~_k: cumulative eta-corrected regret
  Eigen::VectorXd regret_sq_sum;  // V_k
  Eigen::VectorXd regret_max;     // E_k

  int size() const { return static_cast<int>(alphas.size()); }

  void validate() const {
    const int K = size();
    if (K < 1) throw ConfigError("expert pool must hold at least one expert");
    if (static_cast<int>(experts.size()) != K || weights.size() != K || prior.size() != K ||
        regret_sum.size() != K || regret_sq_sum.size() != K || regret_max.size() != K)
      throw NumericalError("expert pool fields disagree in length");
    for (double a : alphas)
      if (!(a > 0.0)) throw ConfigError("step sizes must be positive");
    double sum = 0.0;
    for (Eigen::Index k = 0; k < weights.size(); ++k) {
      if (weights[k] < 0.0) throw NumericalError("negative aggregation weight");
      sum += weights[k];
    }
    if (std::abs(sum - 1.0) > 1e-12) throw NumericalError("aggregation weights do not sum to 1");
    if (fixed_eta && !(*fixed_eta > 0.0)) throw ConfigError("aggregation learning rate must be positive");
  }
};

inline ExpertPool make_expert_pool(double q, const std::vector<double>& alphas,
                                   const QrModel& warm,
                                   std::optional<double> fixed_eta = std::nullopt,
                                   std::optional<Eigen::VectorXd> initial_weights = std::nullopt) {
  ExpertPool pool;
  pool.q = q;
  pool.alphas = alphas;
  const int K = pool.size();
  if (K < 1) throw ConfigError("expert pool must hold at least one expert");
  for (int k = 0; k < K; ++k) {
    QrModel m = warm;
    m.q = q;
    pool.experts.push_back(std::move(m));
  }
  if (initial_weights) {
    if (initial_weights->size() != K) throw ConfigError("initial weights length disagrees with step grid");
    pool.weights = *initial_weights / initial_weights->sum();
  } else {
    pool.weights = Eigen::VectorXd::Constant(K, 1.0 / K);
  }
  pool.prior = pool.weights;
  pool.fixed_eta = fixed_eta;
  pool.regret_sum = Eigen::VectorXd::Zero(K);
  pool.regret_sq_sum = Eigen::VectorXd::Zero(K);
  pool.regret_max = Eigen::VectorXd::Zero(K);
  pool.validate();
  return pool;
}

// Weighted average of the expert forecasts, clamped into their hull.
inline double aggregate(const ExpertPool& pool, const std::vector<double>& forecasts) {
  pool.validate();
  if (static_cast<int>(forecasts.size()) != pool.size())
    throw NumericalError("one forecast per expert required");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  double out = 0.0;
  for (int k = 0; k < pool.size(); ++k) {
    if (!std::isfinite(forecasts[static_cast<std::size_t>(k)]))
      throw NumericalError("non-finite forecast from expert " + std::to_string(k) +
                           " (alpha=" + format_double(pool.alphas[static_cast<std::size_t>(k)]) + ")");
    lo = std::min(lo, forecasts[static_cast<std::size_t>(k)]);
    hi = std::max(hi, forecasts[static_cast<std::size_t>(k)]);
    out += pool.weights[k] * forecasts[static_cast<std::size_t>(k)];
  }
  return std::clamp(out, lo, hi);
}

// Second-order update on the regrets r_k = aggregated loss minus expert
// loss. Weights are recomputed from the prior and the eta-corrected
// cumulative regrets R~_k = sum(r - eta r^2) with the current rate,
// w_k ∝ prior_k eta_k exp(eta_k R~_k), in log space so no renormalization
// mass is lost. At a fixed rate this telescopes to the one-step
// multiplicative update w'_k ∝ w_k exp(eta r_k - eta^2 r_k^2); with the
// self-tuned rate the recomputed form discounts stale early swings as the
// rate decays, which an incremental product would lock in for good.
inline ExpertPool boa_update(const ExpertPool& pool, const std::vector<double>& expert_losses,
                             double aggregated_loss) {
  if (static_cast<int>(expert_losses.size()) != pool.size())
    throw NumericalError("one loss per expert required");
  if (!std::isfinite(aggregated_loss) || aggregated_loss < 0.0)
    throw NumericalError("invalid aggregated loss");
  for (double l : expert_losses)
    if (!std::isfinite(l) || l < 0.0) throw NumericalError("invalid expert loss");

  ExpertPool out = pool;
  const int K = pool.size();
  const double logK = std::log(static_cast<double>(K));
  Eigen::VectorXd logw(K);
  for (int k = 0; k < K; ++k) {
    const double r = aggregated_loss - expert_losses[static_cast<std::size_t>(k)];
    out.regret_max[k] = std::max(out.regret_max[k], std::abs(r));
    out.regret_sq_sum[k] += r * r;
    double eta;
    if (pool.fixed_eta) {
      eta = *pool.fixed_eta;
    } else if (out.regret_sq_sum[k] > 0.0 && out.regret_max[k] > 0.0) {
      eta = std::min(1.0 / (2.0 * out.regret_max[k]), std::sqrt(logK / out.regret_sq_sum[k]));
    } else {
      eta = 0.0;  // expert indistinguishable from the pool so far
    }
    out.regret_sum[k] += r - eta * r * r;
    const double base = pool.prior[k] > 0.0 ? std::log(pool.prior[k])
                                            : -std::numeric_limits<double>::infinity();
    logw[k] = base + eta * out.regret_sum[k];
    if (!pool.fixed_eta && eta > 0.0) logw[k] += std::log(eta);
  }
  const double shift = logw.maxCoeff();
  if (!std::isfinite(shift)) throw NumericalError("aggregation weights lost all mass");
  Eigen::VectorXd w = (logw.array() - shift).exp();
  out.weights = w / w.sum();
  return out;
}

struct PoolStep {
  Eigen::VectorXd z;
  double mean = 0.0;
  double y = 0.0;
};

struct PoolTrace {
  std::vector<double> forecasts;           // aggregated quantile forecast per step
  std::vector<Eigen::VectorXd> weights;    // weights used at forecast time
  ExpertPool final_pool;
};

// Streams through (z, mean, y) triples with immediate feedback: experts
// predict, the pool aggregates, then y arrives and every learner plus the
// weights update. Delayed-feedback schedules live in the pipeline layer.
inline PoolTrace run_pool(ExpertPool pool, const std::vector<PoolStep>& stream) {
  PoolTrace trace;
  trace.forecasts.reserve(stream.size());
  trace.weights.reserve(stream.size());
  for (const auto& step : stream) {
    std::vector<double> forecasts(static_cast<std::size_t>(pool.size()));
    for (int k = 0; k < pool.size(); ++k)
      forecasts[static_cast<std::size_t>(k)] =
          predict_quantile(pool.experts[static_cast<std::size_t>(k)], step.z, step.mean);
    trace.weights.push_back(pool.weights);
    const double agg = aggregate(pool, forecasts);
    trace.forecasts.push_back(agg);

    const double r = step.y - step.mean;
    std::vector<double> losses(static_cast<std::size_t>(pool.size()));
    for (int k = 0; k < pool.size(); ++k)
      losses[static_cast<std::size_t>(k)] = pinball(step.y, forecasts[static_cast<std::size_t>(k)], pool.q);
    const double agg_loss = pinball(step.y, agg, pool.q);
    for (int k = 0; k < pool.size(); ++k)
      pool.experts[static_cast<std::size_t>(k)] =
          ogd_step(pool.experts[static_cast<std::size_t>(k)], step.z, r,
                   pool.alphas[static_cast<std::size_t>(k)]);
    pool = boa_update(pool, losses, agg_loss);
  }
  trace.final_pool = std::move(pool);
  return trace;
}

namespace detail {

inline std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd to_eigen(std::vector<double> v) {
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const ExpertPool& p) {
  j = nlohmann::json{{"q", p.q},
                     {"alphas", p.alphas},
                     {"experts", p.experts},
                     {"prior", detail::to_std(p.prior)},
                     {"weights", detail::to_std(p.weights)},
                     {"regret_sum", detail::to_std(p.regret_sum)},
                     {"regret_sq_sum", detail::to_std(p.regret_sq_sum)},
                     {"regret_max", detail::to_std(p.regret_max)}};
  if (p.fixed_eta)
    j["fixed_eta"] = *p.fixed_eta;
  else
    j["fixed_eta"] = nullptr;
}

inline void from_json(const nlohmann::json& j, ExpertPool& p) {
  p.q = j.at("q").get<double>();
  p.alphas = j.at("alphas").get<std::vector<double>>();
  p.experts = j.at("experts").get<std::vector<QrModel>>();
  p.prior = detail::to_eigen(j.at("prior").get<std::vector<double>>());
  p.weights = detail::to_eigen(j.at("weights").get<std::vector<double>>());
  p.regret_sum = detail::to_eigen(j.at("regret_sum").get<std::vector<double>>());
  p.regret_sq_sum = detail::to_eigen(j.at("regret_sq_sum").get<std::vector<double>>());
  p.regret_max = detail::to_eigen(j.at("regret_max").get<std::vector<double>>());
  if (j.at("fixed_eta").is_null())
    p.fixed_eta = std::nullopt;
  else
    p.fixed_eta = j.at("fixed_eta").get<double>();
  p.validate();
}

}  // namespace anl
