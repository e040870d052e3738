#include "feddrm/el.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "feddrm/rng.hpp"

namespace feddrm {

namespace {

constexpr double kResidualTol = 1e-10;
constexpr double kDenomFloor = 1e-12;
constexpr int kMaxSolverIters = 500;

Eigen::VectorXd denominators(const Eigen::MatrixXd& tm1, const Eigen::VectorXd& rho) {
  return (tm1 * rho).array() + 1.0;
}

double merit(const Eigen::VectorXd& d) {
  return d.array().log().sum();
}

Eigen::VectorXd proportions(const std::vector<int>& counts) {
  const double n_total = static_cast<double>(
      std::accumulate(counts.begin(), counts.end(), 0));
  Eigen::VectorXd w(counts.size());
  for (std::size_t l = 0; l < counts.size(); ++l) w[l] = counts[l] / n_total;
  return w;
}

// scalar root of F_l along coordinate l with the others fixed; F_l is strictly
// decreasing in rho_l wherever the denominators stay positive
bool coordinate_bisect(const Eigen::MatrixXd& tm1, Eigen::VectorXd& rho, int l) {
  const Eigen::VectorXd col = tm1.col(l);
  if (col.cwiseAbs().maxCoeff() < 1e-14) return false;  // vanishing column
  const Eigen::VectorXd base = denominators(tm1, rho) - col * rho[l];

  // feasible interval for rho_l keeping every denominator above the floor
  double lo = -1e12, hi = 1e12;
  for (Eigen::Index r = 0; r < col.size(); ++r) {
    if (col[r] > 1e-300) lo = std::max(lo, (kDenomFloor - base[r]) / col[r]);
    else if (col[r] < -1e-300) hi = std::min(hi, (kDenomFloor - base[r]) / col[r]);
  }
  if (!(lo < hi)) return false;

  auto f = [&](double x) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < col.size(); ++r)
      s += col[r] / (base[r] + col[r] * x);
    return s;
  };
  const double eps = 1e-9 * (hi - lo);
  double a = lo + eps, b = hi - eps;
  double fa = f(a), fb = f(b);
  if (fa < 0.0) {  // root is at or beyond the lower boundary
    rho[l] = a;
    return true;
  }
  if (fb > 0.0) {
    rho[l] = b;
    return true;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (a + b);
    const double fm = f(mid);
    if (fm > 0.0) a = mid;
    else b = mid;
    if (b - a < 1e-15 * std::max(1.0, std::abs(a))) break;
  }
  rho[l] = 0.5 * (a + b);
  return true;
}

}  // namespace

void TiltMatrix::validate() const {
  const int n = rows(), m = clients();
  if (n == 0 || m == 0) throw contract_error("tilts: empty system");
  if (static_cast<int>(client_of_row.size()) != n)
    throw contract_error("tilts: row-to-client map size mismatch");
  if (static_cast<int>(counts.size()) != m)
    throw contract_error("tilts: counts size mismatch");
  if (!t.allFinite() || t.minCoeff() <= 0.0)
    throw numeric_error("tilts: entries must be positive and finite");
  std::vector<int> seen(m, 0);
  for (int c : client_of_row) {
    if (c < 0 || c >= m) throw contract_error("tilts: client index out of range");
    ++seen[c];
  }
  for (int l = 0; l < m; ++l)
    if (seen[l] != counts[l]) throw contract_error("tilts: counts inconsistent");
}

TiltMatrix make_tilts(const Eigen::MatrixXd& h, const std::vector<int>& client_of_row,
                      int m, const Eigen::VectorXd& gamma,
                      const Eigen::MatrixXd& xi) {
  if (gamma.size() != m || xi.rows() != m || xi.cols() != h.cols())
    throw contract_error("make_tilts: parameter shape mismatch");
  TiltMatrix out;
  out.t.resize(h.rows(), m);
  for (Eigen::Index r = 0; r < h.rows(); ++r)
    for (int l = 0; l < m; ++l)
      out.t(r, l) = std::exp(gamma[l] + xi.row(l).dot(h.row(r)));
  out.client_of_row = client_of_row;
  out.counts.assign(m, 0);
  for (int c : client_of_row) ++out.counts[c];
  out.validate();
  return out;
}

MultiplierResult solve_multipliers(const TiltMatrix& t) {
  t.validate();
  const int m = t.clients();
  const Eigen::MatrixXd tm1 = t.t.array() - 1.0;

  MultiplierResult res;
  res.rho = proportions(t.counts);
  if (tm1.cwiseAbs().maxCoeff() < 1e-12) {
    // all tilts are 1: every equation vanishes identically and the multipliers
    // are unidentifiable; n/N is the value they take at any proper optimum
    res.degenerate = true;
    return res;
  }

  auto residual = [&](const Eigen::VectorXd& rho) {
    const Eigen::VectorXd d = denominators(tm1, rho);
    return Eigen::VectorXd(tm1.transpose() * d.cwiseInverse());
  };

  Eigen::VectorXd d = denominators(tm1, res.rho);
  double phi = merit(d);
  for (int it = 0; it < kMaxSolverIters; ++it) {
    const Eigen::VectorXd inv_d = d.cwiseInverse();
    const Eigen::VectorXd grad = tm1.transpose() * inv_d;
    res.residual = grad.cwiseAbs().maxCoeff();
    res.iterations = it;
    if (res.residual < kResidualTol) return res;

    Eigen::MatrixXd a = tm1.transpose() * inv_d.array().square().matrix().asDiagonal() * tm1;
    a.diagonal().array() += 1e-12 * (1.0 + a.diagonal().maxCoeff());
    Eigen::VectorXd dir = a.ldlt().solve(grad);

    double alpha = 1.0;
    bool stepped = false;
    while (alpha > 1e-14) {
      Eigen::VectorXd cand = res.rho + alpha * dir;
      Eigen::VectorXd dc = denominators(tm1, cand);
      if (dc.minCoeff() > kDenomFloor) {
        const double phi_c = merit(dc);
        if (phi_c > phi + 1e-4 * alpha * grad.dot(dir)) {
          res.rho = cand;
          d = dc;
          phi = phi_c;
          stepped = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!stepped) {
      // Newton stalled: one cyclic sweep of coordinate bisection
      for (int l = 0; l < m; ++l) coordinate_bisect(tm1, res.rho, l);
      d = denominators(tm1, res.rho);
      phi = merit(d);
    }
  }
  res.residual = residual(res.rho).cwiseAbs().maxCoeff();
  if (res.residual < kResidualTol) return res;
  throw solver_error("solve_multipliers: no convergence in 500 iterations",
                     res.residual);
}

Eigen::VectorXd atom_weights(const TiltMatrix& t, const Eigen::VectorXd& rho) {
  if (rho.size() != t.clients()) throw contract_error("atom_weights: rho size");
  const Eigen::MatrixXd tm1 = t.t.array() - 1.0;
  const Eigen::VectorXd d = denominators(tm1, rho);
  if (d.minCoeff() <= 0.0)
    throw domain_error("atom_weights: nonpositive profile denominator");
  const double n = static_cast<double>(t.rows());
  return (n * d.array()).inverse();
}

ELSolution solve_el(const TiltMatrix& t) {
  MultiplierResult mr = solve_multipliers(t);
  ELSolution sol;
  sol.rho = mr.rho;
  sol.degenerate = mr.degenerate;
  sol.iterations = mr.iterations;
  sol.residual = mr.residual;
  sol.weights = atom_weights(t, mr.rho);
  double v = 0.0;
  for (int r = 0; r < t.rows(); ++r)
    v += std::log(t.t(r, t.client_of_row[r])) + std::log(sol.weights[r]);
  sol.primal = v;
  return sol;
}

double profile_logel_primal(const TiltMatrix& t, double target_loglik) {
  return target_loglik + solve_el(t).primal;
}

double profile_logel_dual(const Eigen::MatrixXd& h,
                          const std::vector<int>& client_of_row,
                          const Eigen::VectorXd& gamma_dd,
                          const Eigen::MatrixXd& xi, double target_loglik) {
  if (!gamma_dd.allFinite() || !xi.allFinite())
    throw numeric_error("profile_logel_dual: non-finite parameters");
  const int m = static_cast<int>(gamma_dd.size());
  double v = target_loglik;
  for (Eigen::Index r = 0; r < h.rows(); ++r) {
    Eigen::VectorXd logits(m);
    for (int l = 0; l < m; ++l) logits[l] = gamma_dd[l] + xi.row(l).dot(h.row(r));
    const double mx = logits.maxCoeff();
    double s = 0.0;
    for (int l = 0; l < m; ++l) s += std::exp(logits[l] - mx);
    v += logits[client_of_row[r]] - mx - std::log(s);
  }
  return v;
}

double duality_constant(const std::vector<int>& counts) {
  double c = 0.0;
  for (int n : counts) c -= n * std::log(static_cast<double>(n));
  return c;
}

std::array<double, 3> normal_log_ratio_coeffs(double mu1, double sigma1, double mu2,
                                              double sigma2) {
  if (sigma1 <= 0.0 || sigma2 <= 0.0)
    throw domain_error("normal_log_ratio_coeffs: sigma must be positive");
  const double v1 = sigma1 * sigma1, v2 = sigma2 * sigma2;
  return {std::log(sigma2 / sigma1) - 0.5 * (mu1 * mu1 / v1 - mu2 * mu2 / v2),
          mu1 / v1 - mu2 / v2, 0.5 * (1.0 / v2 - 1.0 / v1)};
}

std::array<double, 3> gamma_log_ratio_coeffs(double shape1, double rate1,
                                             double shape2, double rate2) {
  if (shape1 <= 0.0 || rate1 <= 0.0 || shape2 <= 0.0 || rate2 <= 0.0)
    throw domain_error("gamma_log_ratio_coeffs: parameters must be positive");
  return {std::lgamma(shape2) - std::lgamma(shape1) + shape1 * std::log(rate1) -
              shape2 * std::log(rate2),
          rate2 - rate1, shape1 - shape2};
}

// ---- dual-form verification ----

namespace {

// class-major coordinate layout for the client head: per class an intercept
// followed by the d_h xi entries
struct DualProblem {
  const ElInstance& inst;
  int m;
  int d;
  int dim() const { return m * (1 + d); }

  void unpack(const Eigen::VectorXd& v, Eigen::VectorXd& gamma,
              Eigen::MatrixXd& xi) const {
    gamma.resize(m);
    xi.resize(m, d);
    for (int l = 0; l < m; ++l) {
      gamma[l] = v[l * (1 + d)];
      for (int k = 0; k < d; ++k) xi(l, k) = v[l * (1 + d) + 1 + k];
    }
  }

  double value_grad_hess(const Eigen::VectorXd& v, Eigen::VectorXd* grad,
                         Eigen::MatrixXd* hess) const {
    Eigen::VectorXd gamma;
    Eigen::MatrixXd xi;
    unpack(v, gamma, xi);
    const int n = static_cast<int>(inst.h.rows());
    double ll = 0.0;
    if (grad) grad->setZero(dim());
    if (hess) hess->setZero(dim(), dim());
    Eigen::VectorXd z(1 + d);
    for (int r = 0; r < n; ++r) {
      z[0] = 1.0;
      for (int k = 0; k < d; ++k) z[1 + k] = inst.h(r, k);
      Eigen::VectorXd logits(m);
      for (int l = 0; l < m; ++l) logits[l] = gamma[l] + xi.row(l).dot(inst.h.row(r));
      const double mx = logits.maxCoeff();
      Eigen::VectorXd q = (logits.array() - mx).exp();
      const double s = q.sum();
      q /= s;
      const int own = inst.client_of_row[r];
      ll += logits[own] - mx - std::log(s);
      if (grad) {
        for (int l = 0; l < m; ++l) {
          const double c = (l == own ? 1.0 : 0.0) - q[l];
          grad->segment(l * (1 + d), 1 + d) += c * z;
        }
      }
      if (hess) {
        const Eigen::MatrixXd zz = z * z.transpose();
        for (int l = 0; l < m; ++l)
          for (int l2 = 0; l2 < m; ++l2) {
            const double b = (l == l2 ? q[l] : 0.0) - q[l] * q[l2];
            hess->block(l * (1 + d), l2 * (1 + d), 1 + d, 1 + d) -= b * zz;
          }
      }
    }
    return ll;
  }
};

}  // namespace

ElInstance random_el_instance(int m, int n_lo, int n_hi, int d_h,
                              std::uint64_t seed) {
  if (m < 1 || n_lo < 1 || n_hi < n_lo || d_h < 1)
    throw config_error("random_el_instance: bad sizes");
  for (int attempt = 0; attempt < 50; ++attempt) {
    Rng rng = Rng(seed).fork(0xe1, attempt);
    ElInstance inst;
    inst.counts.resize(m);
    int n_total = 0;
    for (int l = 0; l < m; ++l) {
      inst.counts[l] = n_lo + static_cast<int>(rng.uniform_int(n_hi - n_lo + 1));
      n_total += inst.counts[l];
    }
    inst.h.resize(n_total, d_h);
    inst.client_of_row.reserve(n_total);
    int row = 0;
    for (int l = 0; l < m; ++l)
      for (int j = 0; j < inst.counts[l]; ++j, ++row) {
        inst.client_of_row.push_back(l);
        // mildly client-shifted clouds: informative but heavily overlapping
        for (int k = 0; k < d_h; ++k)
          inst.h(row, k) = rng.normal() + 0.5 * (l - 0.5 * (m - 1));
      }
    try {
      maximize_dual(inst);
      return inst;
    } catch (const solver_error&) {
      continue;  // separable draw, try the next substream
    }
  }
  throw solver_error("random_el_instance: no well-posed draw in 50 attempts", 0.0);
}

DualOptimum maximize_dual(const ElInstance& inst) {
  const int m = static_cast<int>(inst.counts.size());
  const int d = static_cast<int>(inst.h.cols());
  DualProblem prob{inst, m, d};
  const int dim = prob.dim();

  // coordinate 0 (first intercept) stays pinned at 0 to remove the softmax
  // shift direction
  std::vector<int> free_ix;
  for (int i = 1; i < dim; ++i) free_ix.push_back(i);

  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  double ll = prob.value_grad_hess(v, &grad, &hess);

  DualOptimum out;
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd g_free(free_ix.size());
    Eigen::MatrixXd h_free(free_ix.size(), free_ix.size());
    for (std::size_t a = 0; a < free_ix.size(); ++a) {
      g_free[a] = grad[free_ix[a]];
      for (std::size_t b = 0; b < free_ix.size(); ++b)
        h_free(a, b) = hess(free_ix[a], free_ix[b]);
    }
    out.iterations = it;
    if (g_free.cwiseAbs().maxCoeff() < 1e-10) break;

    Eigen::MatrixXd neg_h = -h_free;
    neg_h.diagonal().array() += 1e-10 * (1.0 + neg_h.diagonal().maxCoeff());
    Eigen::VectorXd dir = neg_h.ldlt().solve(g_free);

    double alpha = 1.0;
    bool stepped = false;
    while (alpha > 1e-14) {
      Eigen::VectorXd cand = v;
      for (std::size_t a = 0; a < free_ix.size(); ++a)
        cand[free_ix[a]] += alpha * dir[a];
      const double cand_ll = prob.value_grad_hess(cand, nullptr, nullptr);
      if (cand_ll > ll + 1e-4 * alpha * g_free.dot(dir)) {
        v = cand;
        ll = cand_ll;
        stepped = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!stepped) break;
    if (v.cwiseAbs().maxCoeff() > 30.0)
      throw solver_error("maximize_dual: maximizer diverges (separable labels)",
                         grad.cwiseAbs().maxCoeff());
    ll = prob.value_grad_hess(v, &grad, &hess);
  }

  Eigen::VectorXd gamma;
  Eigen::MatrixXd xi;
  prob.unpack(v, gamma, xi);
  out.gamma_dd = gamma;
  out.xi = xi;
  out.value = ll;
  return out;
}

PrimalOptimum maximize_primal(const ElInstance& inst, const DualOptimum& seed) {
  const int m = static_cast<int>(inst.counts.size());
  const int n = static_cast<int>(inst.h.rows());
  const Eigen::VectorXd w = proportions(inst.counts);  // n_l / N

  // gamma_dd_l = gamma_l + log(n_l / n_0)
  Eigen::VectorXd gamma(m);
  for (int l = 0; l < m; ++l)
    gamma[l] =
        seed.gamma_dd[l] - std::log(inst.counts[l] /
                                    static_cast<double>(inst.counts[0]));
  Eigen::MatrixXd xi = seed.xi;

  // Stationarity in the intercepts is equivalent to rho = n/N satisfying the
  // multiplier system, so instead of the bilevel solve we pin rho = n/N and
  // solve for gamma.  The denominators then read sum_l (n_l/N) t_l, which is
  // positive for every gamma: no feasibility boundary anywhere.
  Eigen::MatrixXd tilt(n, m);
  Eigen::VectorXd dbar(n);
  auto refresh = [&](const Eigen::VectorXd& g, const Eigen::MatrixXd& x) {
    for (int r = 0; r < n; ++r) {
      double d = 0.0;
      for (int l = 0; l < m; ++l) {
        tilt(r, l) = std::exp(g[l] + x.row(l).dot(inst.h.row(r)));
        d += w[l] * tilt(r, l);
      }
      dbar[r] = d;
    }
  };
  auto residual = [&]() {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(m);
    for (int r = 0; r < n; ++r)
      for (int l = 0; l < m; ++l) s[l] += (tilt(r, l) - 1.0) / dbar[r];
    return s;
  };

  auto pin_intercepts = [&]() {
    refresh(gamma, xi);
    for (int newton = 0; newton < 100; ++newton) {
      Eigen::VectorXd s = residual();
      if (s.cwiseAbs().maxCoeff() < 1e-11) return;
      Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(m, m);
      for (int r = 0; r < n; ++r)
        for (int l = 0; l < m; ++l) {
          jac(l, l) += tilt(r, l) / dbar[r];
          for (int k = 0; k < m; ++k)
            jac(l, k) -= (tilt(r, l) - 1.0) * w[k] * tilt(r, k) /
                         (dbar[r] * dbar[r]);
        }
      Eigen::VectorXd step = jac.fullPivLu().solve(-s);
      const double cap = step.cwiseAbs().maxCoeff();
      if (cap > 1.0) step *= 1.0 / cap;
      const double s0 = s.squaredNorm();
      double alpha = 1.0;
      while (alpha > 1e-12) {
        refresh(gamma + alpha * step, xi);
        if (residual().squaredNorm() < s0) {
          gamma += alpha * step;
          break;
        }
        alpha *= 0.5;
      }
      if (alpha <= 1e-12) {
        refresh(gamma, xi);
        return;
      }
    }
  };

  // primal value with rho = n/N: sum log t_own - sum log dbar - N log N
  auto value_at = [&]() {
    double v = -n * std::log(static_cast<double>(n));
    for (int r = 0; r < n; ++r)
      v += std::log(tilt(r, inst.client_of_row[r])) - std::log(dbar[r]);
    return v;
  };

  pin_intercepts();
  double val = value_at();

  PrimalOptimum out;
  double alpha = 1e-2;
  for (int it = 0; it < 500; ++it) {
    out.iterations = it;
    // ascent direction in xi at the pinned intercepts; atom weights are
    // p_r = 1/(N dbar_r)
    Eigen::MatrixXd gxi = Eigen::MatrixXd::Zero(m, xi.cols());
    for (int r = 0; r < n; ++r) {
      gxi.row(inst.client_of_row[r]) += inst.h.row(r);
      for (int l = 0; l < m; ++l)
        gxi.row(l) -= w[l] * tilt(r, l) / dbar[r] * inst.h.row(r);
    }
    if (gxi.cwiseAbs().maxCoeff() < 1e-9) break;

    bool stepped = false;
    const Eigen::VectorXd gamma_saved = gamma;
    const Eigen::MatrixXd xi_saved = xi;
    while (alpha > 1e-14) {
      xi = xi_saved + alpha * gxi;
      gamma = gamma_saved;
      pin_intercepts();
      const double cand = value_at();
      if (cand > val) {
        val = cand;
        stepped = true;
        alpha *= 2.0;
        break;
      }
      alpha *= 0.5;
    }
    if (!stepped) {
      gamma = gamma_saved;
      xi = xi_saved;
      refresh(gamma, xi);
      break;
    }
  }
  out.gamma = gamma;
  out.xi = xi;
  out.value = val;
  out.rho = w;  // pinned by construction; verified independently by callers
  return out;
}

DualityReport verify_duality(const ElInstance& inst) {
  const int m = static_cast<int>(inst.counts.size());

  DualOptimum dual_opt = maximize_dual(inst);
  PrimalOptimum primal_opt = maximize_primal(inst, dual_opt);

  TiltMatrix tilts =
      make_tilts(inst.h, inst.client_of_row, m, primal_opt.gamma, primal_opt.xi);
  ELSolution sol = solve_el(tilts);

  DualityReport rep;
  rep.degenerate = sol.degenerate;
  rep.primal = sol.primal;
  rep.constant = duality_constant(inst.counts);

  // dual evaluated at the primal maximizer, via gamma_dd = gamma + log(n_l/n_0)
  Eigen::VectorXd gamma_dd(m);
  for (int l = 0; l < m; ++l)
    gamma_dd[l] = primal_opt.gamma[l] +
                  std::log(inst.counts[l] / static_cast<double>(inst.counts[0]));
  rep.dual =
      profile_logel_dual(inst.h, inst.client_of_row, gamma_dd, primal_opt.xi);
  rep.gap = rep.primal - rep.dual - rep.constant;

  Eigen::VectorXd target = proportions(inst.counts);
  rep.rho_err = (sol.rho - target).cwiseAbs().maxCoeff();
  rep.sum_p_err = std::abs(sol.weights.sum() - 1.0);
  double cerr = 0.0;
  for (int l = 0; l < m; ++l)
    cerr = std::max(cerr, std::abs(sol.weights.dot(tilts.t.col(l)) - 1.0));
  rep.constraint_err = cerr;
  rep.xi_gap = (primal_opt.xi - dual_opt.xi).cwiseAbs().maxCoeff();
  return rep;
}

}  // namespace feddrm
