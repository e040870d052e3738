#pragma once

// Test-only reference implementations.  Everything here recomputes results
// through an independent route (finite differences, long-double arithmetic,
// brute-force enumeration) and must not call the code path it checks.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

namespace oracles {

// central finite differences, fixed absolute step
inline Eigen::VectorXd fd_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double step = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    g[i] = (f(xp) - f(xm)) / (2.0 * step);
  }
  return g;
}

inline Eigen::MatrixXd fd_hessian(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double step = 1e-5) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd h(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      Eigen::VectorXd xpp = x, xpm = x, xmp = x, xmm = x;
      xpp[i] += step; xpp[j] += step;
      xpm[i] += step; xpm[j] -= step;
      xmp[i] -= step; xmp[j] += step;
      xmm[i] -= step; xmm[j] -= step;
      h(i, j) = h(j, i) = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * step * step);
    }
  return h;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::abs(b));
}

// softmax recomputed in extended precision without max subtraction
inline Eigen::VectorXd softmax_long_double(const Eigen::VectorXd& logits) {
  std::vector<long double> e(logits.size());
  long double sum = 0.0L;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    e[i] = expl(static_cast<long double>(logits[i]));
    sum += e[i];
  }
  Eigen::VectorXd p(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    p[i] = static_cast<double>(e[i] / sum);
  return p;
}

// plain re-implementation of the two-branch MLP forward pass: straight loops,
// no shared code with the library
inline void mlp_forward_reference(
    const Eigen::VectorXd& x, const std::vector<Eigen::MatrixXd>& g_w,
    const std::vector<Eigen::VectorXd>& g_b, const std::vector<Eigen::MatrixXd>& h_w,
    const std::vector<Eigen::VectorXd>& h_b, int fork_layer, bool use_tanh,
    Eigen::VectorXd& g_out, Eigen::VectorXd& h_out) {
  auto act = [&](double v) { return use_tanh ? std::tanh(v) : (v > 0 ? v : 0.0); };
  std::vector<Eigen::VectorXd> taps;  // post-activation value after each layer
  Eigen::VectorXd cur = x;
  for (std::size_t k = 0; k < g_w.size(); ++k) {
    Eigen::VectorXd next(g_w[k].rows());
    for (Eigen::Index r = 0; r < g_w[k].rows(); ++r) {
      double s = g_b[k][r];
      for (Eigen::Index c = 0; c < g_w[k].cols(); ++c) s += g_w[k](r, c) * cur[c];
      next[r] = (k + 1 < g_w.size()) ? act(s) : s;
    }
    cur = next;
    taps.push_back(cur);
  }
  g_out = cur;
  Eigen::VectorXd hin = fork_layer == 0 ? x : taps[fork_layer - 1];
  for (std::size_t k = 0; k < h_w.size(); ++k) {
    Eigen::VectorXd next(h_w[k].rows());
    for (Eigen::Index r = 0; r < h_w[k].rows(); ++r) {
      double s = h_b[k][r];
      for (Eigen::Index c = 0; c < h_w[k].cols(); ++c) s += h_w[k](r, c) * hin[c];
      next[r] = (k + 1 < h_w.size()) ? act(s) : s;
    }
    hin = next;
  }
  h_out = hin;
}

// bisection root of a monotone decreasing scalar function
inline double bisect_decreasing(const std::function<double(double)>& f, double lo,
                                double hi, int iters = 200) {
  for (int i = 0; i < iters; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) > 0.0) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace oracles
