// Copyright 2026 The ResDec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Numerical checks for the two properties that motivate residual fusion:
// the exponential tilt p_a ∝ p0 * exp(a r) lowers entropy when r is aligned
// with log p0, and geometric blending with an informative residual channel
// changes the conditional mutual information I(V; Y | H).

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "resdec/errors.hpp"
#include "resdec/math.hpp"

namespace resdec::theory {

struct TiltFamily {
  DenseDistribution base;
  std::vector<double> residual;

  TiltFamily(DenseDistribution p0, std::vector<double> r) : base(std::move(p0)), residual(std::move(r)) {
    if (residual.size() != base.size()) throw DimensionError("tilt residual and base differ in length");
    for (double x : residual) {
      if (!std::isfinite(x)) throw DimensionError("tilt residual must be finite");
    }
  }
  std::size_t size() const noexcept { return residual.size(); }
};

/// p_a(y) ∝ p0(y) exp(a r(y)). Defined for every finite a; the family of
/// interest is a in [0, 1].
inline DenseDistribution tilt(const TiltFamily& fam, double alpha) {
  if (!std::isfinite(alpha)) throw ConfigError("tilt needs a finite alpha");
  std::vector<double> logits(fam.size());
  for (std::size_t y = 0; y < fam.size(); ++y) {
    const double p = fam.base[y];
    logits[y] = p > 0.0 ? std::log(p) + alpha * fam.residual[y] : kNegInf;
  }
  return DenseDistribution(softmax(logits));
}

inline double tilt_entropy(const TiltFamily& fam, double alpha) { return entropy(tilt(fam, alpha)); }

struct TiltMoments {
  double cov_logp0_r = 0.0;
  double var_r = 0.0;
};

/// Cov and Var under p_a; tokens with p0 = 0 carry no mass and are skipped.
inline TiltMoments tilt_moments(const TiltFamily& fam, double alpha) {
  const DenseDistribution pa = tilt(fam, alpha);
  double el = 0.0, er = 0.0;
  for (std::size_t y = 0; y < fam.size(); ++y) {
    if (pa[y] == 0.0 || fam.base[y] == 0.0) continue;
    el += pa[y] * std::log(fam.base[y]);
    er += pa[y] * fam.residual[y];
  }
  TiltMoments m;
  for (std::size_t y = 0; y < fam.size(); ++y) {
    if (pa[y] == 0.0 || fam.base[y] == 0.0) continue;
    const double dl = std::log(fam.base[y]) - el;
    const double dr = fam.residual[y] - er;
    m.cov_logp0_r += pa[y] * dl * dr;
    m.var_r += pa[y] * dr * dr;
  }
  return m;
}

/// dH(p_a)/da = -Cov_{p_a}(log p0, r) - a Var_{p_a}(r).
inline double entropy_derivative(const TiltFamily& fam, double alpha) {
  const TiltMoments m = tilt_moments(fam, alpha);
  return -m.cov_logp0_r - alpha * m.var_r;
}

inline double central_difference(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Variances at or below this are treated as zero when checking hypotheses.
inline constexpr double kVarianceFloor = 1e-12;

struct MonotonicityReport {
  bool hypotheses_hold = true;
  /// First grid point where a hypothesis failed, and which one.
  std::optional<double> failing_alpha;
  std::string failure;
  /// Only meaningful when the hypotheses hold.
  bool entropy_decreases = false;
  std::vector<double> alphas;
  std::vector<double> entropies;
};

/// Checks Cov_{p_a}(r, log p0) >= 0 and Var_{p_a}(r) > 0 on a in {0, 0.1, ..., 1};
/// if both hold everywhere, checks H(p_a) < H(p0) for every a > 0 on the grid.
inline MonotonicityReport check_entropy_monotonicity(const TiltFamily& fam) {
  MonotonicityReport rep;
  for (int i = 0; i <= 10; ++i) {
    const double a = 0.1 * i;
    rep.alphas.push_back(a);
    rep.entropies.push_back(tilt_entropy(fam, a));
    if (!rep.hypotheses_hold) continue;
    const TiltMoments m = tilt_moments(fam, a);
    if (m.cov_logp0_r < 0.0) {
      rep.hypotheses_hold = false;
      rep.failing_alpha = a;
      rep.failure = "Cov(r, log p0) < 0";
    } else if (!(m.var_r > kVarianceFloor)) {
      rep.hypotheses_hold = false;
      rep.failing_alpha = a;
      rep.failure = "Var(r) == 0";
    }
  }
  if (rep.hypotheses_hold) {
    rep.entropy_decreases = true;
    for (std::size_t i = 1; i < rep.entropies.size(); ++i) {
      if (!(rep.entropies[i] < rep.entropies.front())) rep.entropy_decreases = false;
    }
  }
  return rep;
}

/// A channel y | (v, h): rows[h][v] is a distribution over y.
using Channel = std::vector<std::vector<std::vector<double>>>;

/// p(h) and p(v, y | h). Each h-cell sums to 1.
struct DiscreteJoint {
  std::vector<double> h_weights;
  std::vector<std::vector<std::vector<double>>> cells;  // [h][v][y]

  std::size_t num_h() const noexcept { return cells.size(); }
  std::size_t num_v() const noexcept { return cells.empty() ? 0 : cells.front().size(); }
  std::size_t num_y() const noexcept { return num_v() == 0 ? 0 : cells.front().front().size(); }

  void validate() const {
    if (cells.empty() || cells.size() != h_weights.size()) throw DimensionError("joint needs one weight per h-cell");
    double wsum = 0.0;
    for (double w : h_weights) {
      if (!(w >= 0.0)) throw DimensionError("negative h weight");
      wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-9) throw DimensionError("h weights do not sum to 1");
    for (const auto& cell : cells) {
      if (cell.size() != num_v() || num_v() == 0) throw DimensionError("ragged joint");
      double sum = 0.0;
      for (const auto& row : cell) {
        if (row.size() != num_y() || num_y() == 0) throw DimensionError("ragged joint");
        for (double x : row) {
          if (!(x >= 0.0) || !std::isfinite(x)) throw DimensionError("joint entries must be finite and >= 0");
          sum += x;
        }
      }
      if (std::abs(sum - 1.0) > 1e-9) throw DimensionError("joint h-cell does not sum to 1");
    }
  }

  double p_v(std::size_t h, std::size_t v) const {
    double s = 0.0;
    for (double x : cells[h][v]) s += x;
    return s;
  }

  /// p(y | v, h); rows with p(v | h) = 0 are left uniform (they carry no weight).
  Channel conditional() const {
    Channel out(num_h());
    for (std::size_t h = 0; h < num_h(); ++h) {
      for (std::size_t v = 0; v < num_v(); ++v) {
        const double pv = p_v(h, v);
        std::vector<double> row(num_y(), 1.0 / static_cast<double>(num_y()));
        if (pv > 0.0) {
          for (std::size_t y = 0; y < num_y(); ++y) row[y] = cells[h][v][y] / pv;
        }
        out[h].push_back(std::move(row));
      }
    }
    return out;
  }

  /// Builds p(v, y | h) = p(v | h) p(y | v, h).
  static DiscreteJoint from_channel(std::vector<double> h_weights, const std::vector<std::vector<double>>& v_given_h,
                                    const Channel& base) {
    DiscreteJoint j;
    j.h_weights = std::move(h_weights);
    j.cells.resize(base.size());
    for (std::size_t h = 0; h < base.size(); ++h) {
      for (std::size_t v = 0; v < base[h].size(); ++v) {
        std::vector<double> row = base[h][v];
        for (double& x : row) x *= v_given_h.at(h).at(v);
        j.cells[h].push_back(std::move(row));
      }
    }
    return j;
  }
};

namespace detail {

inline void check_channel(const DiscreteJoint& joint, const Channel& c, const char* name) {
  if (c.size() != joint.num_h()) throw DimensionError(std::string(name) + " channel has the wrong number of h-cells");
  for (const auto& cell : c) {
    if (cell.size() != joint.num_v()) throw DimensionError(std::string(name) + " channel has the wrong number of v rows");
    for (const auto& row : cell) {
      if (row.size() != joint.num_y()) throw DimensionError(std::string(name) + " channel row has the wrong length");
      double s = 0.0;
      for (double x : row) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw DimensionError(std::string(name) + " channel has an invalid entry");
        s += x;
      }
      if (std::abs(s - 1.0) > 1e-9) throw DimensionError(std::string(name) + " channel row does not sum to 1");
    }
  }
}

// p^(1-a) r^a in log space; a zero coefficient drops its factor so that
// 0 * log 0 never appears.
inline double blend_log(double p, double r, double a) {
  double out = 0.0;
  if (a != 1.0) out += (1.0 - a) * (p > 0.0 ? std::log(p) : kNegInf);
  if (a != 0.0) out += a * (r > 0.0 ? std::log(r) : kNegInf);
  return out;
}

}  // namespace detail

/// Geometric blend p^(1-a) r^a / Z_a for one (v, h) row.
inline std::vector<double> blend(const std::vector<double>& p, const std::vector<double>& r, double alpha) {
  std::vector<double> logits(p.size());
  for (std::size_t y = 0; y < p.size(); ++y) logits[y] = detail::blend_log(p[y], r[y], alpha);
  return softmax(logits);
}

/// I_a(V; Y | H) with p_a(y | v, h) the geometric blend of `base` and
/// `residual`, and p_a(y | h) = sum_v p_a(y | v, h) p(v | h).
inline double conditional_mi(const DiscreteJoint& joint, const Channel& base, const Channel& residual, double alpha) {
  double total = 0.0;
  for (std::size_t h = 0; h < joint.num_h(); ++h) {
    std::vector<std::vector<double>> rows;
    std::vector<double> marginal(joint.num_y(), 0.0);
    for (std::size_t v = 0; v < joint.num_v(); ++v) {
      rows.push_back(blend(base[h][v], residual[h][v], alpha));
      const double pv = joint.p_v(h, v);
      for (std::size_t y = 0; y < joint.num_y(); ++y) marginal[y] += pv * rows.back()[y];
    }
    for (std::size_t v = 0; v < joint.num_v(); ++v) {
      const double pv = joint.p_v(h, v);
      if (pv == 0.0) continue;
      double kl = 0.0;
      for (std::size_t y = 0; y < joint.num_y(); ++y) {
        const double q = rows[v][y];
        if (q > 0.0) kl += q * std::log(q / marginal[y]);
      }
      total += joint.h_weights[h] * pv * kl;
    }
  }
  return total;
}

/// E_h E_{v|h} E_{y~p(.|v,h)} [log r(y|v,h) - log r(y|h)], r(y|h) = sum_v r(y|v,h) p(v|h).
///
/// This is the closed form claimed for dI_a/da at a = 0. It is not the
/// derivative in general; see mi_derivative_exact.
inline double mi_derivative_at_zero(const DiscreteJoint& joint, const Channel& base, const Channel& residual) {
  joint.validate();
  detail::check_channel(joint, base, "base");
  detail::check_channel(joint, residual, "residual");
  double total = 0.0;
  for (std::size_t h = 0; h < joint.num_h(); ++h) {
    std::vector<double> r_marg(joint.num_y(), 0.0);
    for (std::size_t v = 0; v < joint.num_v(); ++v) {
      for (std::size_t y = 0; y < joint.num_y(); ++y) r_marg[y] += joint.p_v(h, v) * residual[h][v][y];
    }
    for (std::size_t v = 0; v < joint.num_v(); ++v) {
      const double pv = joint.p_v(h, v);
      if (pv == 0.0) continue;
      double e = 0.0;
      for (std::size_t y = 0; y < joint.num_y(); ++y) {
        const double p = base[h][v][y];
        if (p == 0.0) continue;
        if (residual[h][v][y] == 0.0) {
          throw SupportMismatch("residual is zero where the base channel has mass (h=" + std::to_string(h) +
                                ", v=" + std::to_string(v) + ", y=" + std::to_string(y) + ")");
        }
        e += p * (std::log(residual[h][v][y]) - std::log(r_marg[y]));
      }
      total += joint.h_weights[h] * pv * e;
    }
  }
  return total;
}

/// dI_a/da at a = 0, exactly: E_{h,v} Cov_{p(.|v,h)}(U_v, PMI_p(y; v | h)),
/// with U_v = log r - log p.
inline double mi_derivative_exact(const DiscreteJoint& joint, const Channel& base, const Channel& residual) {
  joint.validate();
  detail::check_channel(joint, base, "base");
  detail::check_channel(joint, residual, "residual");
  double total = 0.0;
  for (std::size_t h = 0; h < joint.num_h(); ++h) {
    std::vector<double> p_marg(joint.num_y(), 0.0);
    for (std::size_t v = 0; v < joint.num_v(); ++v) {
      for (std::size_t y = 0; y < joint.num_y(); ++y) p_marg[y] += joint.p_v(h, v) * base[h][v][y];
    }
    for (std::size_t v = 0; v < joint.num_v(); ++v) {
      const double pv = joint.p_v(h, v);
      if (pv == 0.0) continue;
      const auto& p = base[h][v];
      const auto& r = residual[h][v];
      double eu = 0.0;
      for (std::size_t y = 0; y < p.size(); ++y) {
        if (p[y] == 0.0) continue;
        if (r[y] == 0.0) throw SupportMismatch("residual is zero where the base channel has mass");
        eu += p[y] * (std::log(r[y]) - std::log(p[y]));
      }
      double cov = 0.0;
      for (std::size_t y = 0; y < p.size(); ++y) {
        if (p[y] == 0.0) continue;
        const double u = std::log(r[y]) - std::log(p[y]);
        cov += p[y] * (u - eu) * (std::log(p[y]) - std::log(p_marg[y]));
      }
      total += joint.h_weights[h] * pv * cov;
    }
  }
  return total;
}

/// Central finite difference of I_a at a = 0.
inline double mi_derivative_fd(const DiscreteJoint& joint, const Channel& base, const Channel& residual,
                               double h = 1e-5) {
  return central_difference([&](double a) { return conditional_mi(joint, base, residual, a); }, 0.0, h);
}

}  // namespace resdec::theory
