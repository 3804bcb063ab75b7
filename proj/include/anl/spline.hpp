#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "anl/common.hpp"

namespace anl {

enum class BasisKind { kCubic, kCyclic, kLinear, kCategorical };

inline std::string basis_kind_name(BasisKind k) {
  switch (k) {
    case BasisKind::kCubic: return "cubic-regression";
    case BasisKind::kCyclic: return "cyclic-cubic";
    case BasisKind::kLinear: return "linear";
    case BasisKind::kCategorical: return "categorical";
  }
  throw ConfigError("unknown basis kind");
}

inline BasisKind basis_kind_from_name(const std::string& s) {
  if (s == "cubic-regression") return BasisKind::kCubic;
  if (s == "cyclic-cubic") return BasisKind::kCyclic;
  if (s == "linear") return BasisKind::kLinear;
  if (s == "categorical") return BasisKind::kCategorical;
  throw ConfigError("unknown basis kind: " + s);
}

// p-th sample quantile with linear interpolation between order statistics
// (the continuous definition used by most statistics packages).
inline double sample_quantile(std::vector<double> x, double p) {
  if (x.empty()) throw DataError("quantile of empty sample");
  std::sort(x.begin(), x.end());
  const double h = (static_cast<double>(x.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= x.size()) return x.back();
  return x[lo] + (h - static_cast<double>(lo)) * (x[lo + 1] - x[lo]);
}

/**
 * One univariate smoother basis. Cubic splines are parametrized by their
 * values at the knots; the natural boundary conditions make the map from
 * values to knot curvatures linear, which yields both the evaluation rule
 * and the curvature penalty in closed form. The cyclic variant identifies
 * the two boundary knots and wraps its argument by the period.
 */
class SplineBasis {
 public:
  SplineBasis() = default;

  static SplineBasis make_basis(BasisKind kind, const std::vector<double>& x_train, int n_knots,
                                std::optional<std::pair<double, double>> range = std::nullopt) {
    if (x_train.empty()) throw DataError("empty covariate");
    SplineBasis b;
    b.kind_ = kind;
    auto [mn, mx] = std::minmax_element(x_train.begin(), x_train.end());
    b.range_lo_ = range ? range->first : *mn;
    b.range_hi_ = range ? range->second : *mx;

    switch (kind) {
      case BasisKind::kLinear:
        if (*mx - *mn <= 0.0) throw DataError("degenerate covariate: constant values");
        break;
      case BasisKind::kCategorical: {
        std::vector<double> lv(x_train);
        std::sort(lv.begin(), lv.end());
        lv.erase(std::unique(lv.begin(), lv.end()), lv.end());
        if (lv.size() < 2) throw DataError("degenerate covariate: single category");
        b.levels_ = std::move(lv);
        break;
      }
      case BasisKind::kCubic:
      case BasisKind::kCyclic: {
        if (n_knots < 3) throw ConfigError("spline basis needs at least 3 knots");
        if (*mx - *mn <= 0.0) throw DataError("degenerate covariate: constant values");
        std::vector<double> knots;
        if (range) {
          // explicit range (periodic covariates): uniform knots over the period
          for (int j = 0; j < n_knots; ++j)
            knots.push_back(b.range_lo_ +
                            (b.range_hi_ - b.range_lo_) * j / (n_knots - 1));
        } else {
          for (int j = 0; j < n_knots; ++j)
            knots.push_back(sample_quantile(x_train, static_cast<double>(j) / (n_knots - 1)));
          knots.erase(std::unique(knots.begin(), knots.end(),
                                  [](double a, double c) { return c - a <= 0.0; }),
                      knots.end());
        }
        if (knots.size() < 3) throw DataError("degenerate covariate: too few distinct knots");
        b.knots_ = std::move(knots);
        b.build_curvature_map();
        break;
      }
    }
    return b;
  }

  static SplineBasis cubic_from_knots(std::vector<double> knots) {
    if (knots.size() < 3) throw ConfigError("spline basis needs at least 3 knots");
    for (std::size_t j = 1; j < knots.size(); ++j)
      if (knots[j] <= knots[j - 1]) throw ConfigError("knots must be strictly increasing");
    SplineBasis b;
    b.kind_ = BasisKind::kCubic;
    b.knots_ = std::move(knots);
    b.range_lo_ = b.knots_.front();
    b.range_hi_ = b.knots_.back();
    b.build_curvature_map();
    return b;
  }

  static SplineBasis categorical_from_levels(std::vector<double> levels) {
    if (levels.size() < 2) throw DataError("degenerate covariate: single category");
    SplineBasis b;
    b.kind_ = BasisKind::kCategorical;
    b.levels_ = std::move(levels);
    b.range_lo_ = b.levels_.front();
    b.range_hi_ = b.levels_.back();
    return b;
  }

  // Reassembles a basis from its serialized fields.
  static SplineBasis from_parts(BasisKind kind, std::vector<double> knots,
                                std::vector<double> levels, double lo, double hi) {
    SplineBasis b;
    b.kind_ = kind;
    b.range_lo_ = lo;
    b.range_hi_ = hi;
    if (kind == BasisKind::kCategorical) {
      if (levels.size() < 2) throw DataError("degenerate covariate: single category");
      b.levels_ = std::move(levels);
    } else if (kind == BasisKind::kCubic || kind == BasisKind::kCyclic) {
      if (knots.size() < 3) throw DataError("spline basis needs at least 3 knots");
      for (std::size_t j = 1; j < knots.size(); ++j)
        if (knots[j] <= knots[j - 1]) throw DataError("knots must be strictly increasing");
      b.knots_ = std::move(knots);
      b.build_curvature_map();
    }
    return b;
  }

  BasisKind kind() const { return kind_; }
  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& levels() const { return levels_; }
  double range_lo() const { return range_lo_; }
  double range_hi() const { return range_hi_; }

  int dim() const {
    switch (kind_) {
      case BasisKind::kLinear: return 1;
      case BasisKind::kCategorical: return static_cast<int>(levels_.size());
      case BasisKind::kCubic: return static_cast<int>(knots_.size());
      case BasisKind::kCyclic: return static_cast<int>(knots_.size()) - 1;
    }
    throw ConfigError("unknown basis kind");
  }

  Eigen::RowVectorXd design_row(double x) const {
    if (!std::isfinite(x)) throw NumericalError("non-finite covariate value");
    switch (kind_) {
      case BasisKind::kLinear: {
        Eigen::RowVectorXd r(1);
        r[0] = x;
        return r;
      }
      case BasisKind::kCategorical: {
        Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(dim());
        auto it = std::lower_bound(levels_.begin(), levels_.end(), x);
        if (it != levels_.end() && *it == x)
          r[static_cast<int>(it - levels_.begin())] = 1.0;
        return r;  // unseen level contributes nothing
      }
      case BasisKind::kCubic: {
        if (x < knots_.front())
          return interval_row(0, knots_.front()) +
                 (x - knots_.front()) * interval_slope_row(0, knots_.front());
        if (x > knots_.back()) {
          const int j = static_cast<int>(knots_.size()) - 2;
          return interval_row(j, knots_.back()) +
                 (x - knots_.back()) * interval_slope_row(j, knots_.back());
        }
        return interval_row(find_interval(x), x);
      }
      case BasisKind::kCyclic: {
        const double period = knots_.back() - knots_.front();
        double t = std::fmod(x - knots_.front(), period);
        if (t < 0.0) t += period;
        const double xw = knots_.front() + t;
        return interval_row(find_interval(xw), xw);
      }
    }
    throw ConfigError("unknown basis kind");
  }

  double value(const Eigen::VectorXd& coef, double x) const {
    if (coef.size() != dim()) throw NumericalError("coefficient length mismatch");
    return design_row(x).dot(coef);
  }

  // Integral of the squared second derivative, as a quadratic form in the
  // coefficients. Zero for the penalty-free kinds.
  Eigen::MatrixXd penalty() const {
    if (kind_ == BasisKind::kLinear || kind_ == BasisKind::kCategorical)
      return Eigen::MatrixXd::Zero(dim(), dim());
    return penalty_;
  }

 private:
  int find_interval(double x) const {
    // largest j with knots_[j] <= x, clamped to a valid interval index
    auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
    int j = static_cast<int>(it - knots_.begin()) - 1;
    return std::clamp(j, 0, static_cast<int>(knots_.size()) - 2);
  }

  // Row of basis values for x known to lie within interval j.
  Eigen::RowVectorXd interval_row(int j, double x) const {
    const int p = dim();
    const double h = knots_[static_cast<std::size_t>(j) + 1] - knots_[static_cast<std::size_t>(j)];
    const double dl = knots_[static_cast<std::size_t>(j) + 1] - x;
    const double dr = x - knots_[static_cast<std::size_t>(j)];
    const double am = dl / h;
    const double ap = dr / h;
    const double cm = (dl * dl * dl / h - h * dl) / 6.0;
    const double cp = (dr * dr * dr / h - h * dr) / 6.0;
    const int jl = j;
    const int jr = (kind_ == BasisKind::kCyclic) ? (j + 1) % p : j + 1;
    Eigen::RowVectorXd r = cm * curvature_.row(jl) + cp * curvature_.row(jr);
    r[jl] += am;
    r[jr] += ap;
    return r;
  }

  Eigen::RowVectorXd interval_slope_row(int j, double x) const {
    const int p = dim();
    const double h = knots_[static_cast<std::size_t>(j) + 1] - knots_[static_cast<std::size_t>(j)];
    const double dl = knots_[static_cast<std::size_t>(j) + 1] - x;
    const double dr = x - knots_[static_cast<std::size_t>(j)];
    const double dcm = (-3.0 * dl * dl / h + h) / 6.0;
    const double dcp = (3.0 * dr * dr / h - h) / 6.0;
    const int jl = j;
    const int jr = (kind_ == BasisKind::kCyclic) ? (j + 1) % p : j + 1;
    Eigen::RowVectorXd r = dcm * curvature_.row(jl) + dcp * curvature_.row(jr);
    r[jl] += -1.0 / h;
    r[jr] += 1.0 / h;
    return r;
  }

  // Builds the linear map from knot values to knot second derivatives and
  // the induced quadratic curvature penalty.
  void build_curvature_map() {
    const int k = static_cast<int>(knots_.size());
    std::vector<double> h(static_cast<std::size_t>(k) - 1);
    for (int j = 0; j + 1 < k; ++j)
      h[static_cast<std::size_t>(j)] = knots_[static_cast<std::size_t>(j) + 1] - knots_[static_cast<std::size_t>(j)];

    if (kind_ == BasisKind::kCubic) {
      const int m = k - 2;  // interior knots; boundary curvatures are zero
      Eigen::MatrixXd B = Eigen::MatrixXd::Zero(m, m);
      Eigen::MatrixXd D = Eigen::MatrixXd::Zero(m, k);
      for (int i = 0; i < m; ++i) {
        B(i, i) = (h[static_cast<std::size_t>(i)] + h[static_cast<std::size_t>(i) + 1]) / 3.0;
        if (i > 0) B(i, i - 1) = h[static_cast<std::size_t>(i)] / 6.0;
        if (i + 1 < m) B(i, i + 1) = h[static_cast<std::size_t>(i) + 1] / 6.0;
        D(i, i) = 1.0 / h[static_cast<std::size_t>(i)];
        D(i, i + 1) = -1.0 / h[static_cast<std::size_t>(i)] - 1.0 / h[static_cast<std::size_t>(i) + 1];
        D(i, i + 2) = 1.0 / h[static_cast<std::size_t>(i) + 1];
      }
      Eigen::MatrixXd BinvD = B.ldlt().solve(D);
      curvature_ = Eigen::MatrixXd::Zero(k, k);
      curvature_.middleRows(1, m) = BinvD;
      penalty_ = D.transpose() * BinvD;
      penalty_ = 0.5 * (penalty_ + penalty_.transpose()).eval();
    } else {
      const int p = k - 1;
      Eigen::MatrixXd B = Eigen::MatrixXd::Zero(p, p);
      Eigen::MatrixXd D = Eigen::MatrixXd::Zero(p, p);
      for (int i = 0; i < p; ++i) {
        const int prev = (i + p - 1) % p;
        const int next = (i + 1) % p;
        const double hp = h[static_cast<std::size_t>(prev)];
        const double hn = h[static_cast<std::size_t>(i)];
        B(i, prev) += hp / 6.0;
        B(i, i) += (hp + hn) / 3.0;
        B(i, next) += hn / 6.0;
        D(i, prev) += 1.0 / hp;
        D(i, i) += -1.0 / hp - 1.0 / hn;
        D(i, next) += 1.0 / hn;
      }
      curvature_ = B.partialPivLu().solve(D);
      penalty_ = D.transpose() * curvature_;
      penalty_ = 0.5 * (penalty_ + penalty_.transpose()).eval();
    }
  }

  BasisKind kind_ = BasisKind::kLinear;
  std::vector<double> knots_;
  std::vector<double> levels_;
  double range_lo_ = 0.0;
  double range_hi_ = 0.0;
  Eigen::MatrixXd curvature_;
  Eigen::MatrixXd penalty_;
};

}  // namespace anl
