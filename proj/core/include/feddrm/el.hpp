#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <vector>

#include "feddrm/errors.hpp"

namespace feddrm {

// Empirical-likelihood machinery for the pooled multi-client sample.  This is
// a verification path, deliberately restricted to desk-scale N: training goes
// through the dual cross-entropy loss, never through here.
//
// Notation used throughout: rows (i,j) enumerate all N samples across clients,
// tilt(row, l) = exp(gamma_l + xi_l . h_row) is the density tilt of client l
// evaluated at the sample, D_row = 1 + sum_l rho_l (tilt - 1) the profile
// denominator, and p_row = 1 / (N D_row) the baseline atom weight.

struct TiltMatrix {
  Eigen::MatrixXd t;               // N x m, strictly positive finite entries
  std::vector<int> client_of_row;  // N, values in [0, m)
  std::vector<int> counts;         // m, sums to N

  int rows() const { return static_cast<int>(t.rows()); }
  int clients() const { return static_cast<int>(t.cols()); }
  void validate() const;
};

TiltMatrix make_tilts(const Eigen::MatrixXd& h, const std::vector<int>& client_of_row,
                      int m, const Eigen::VectorXd& gamma,
                      const Eigen::MatrixXd& xi);

struct MultiplierResult {
  Eigen::VectorXd rho;    // m
  bool degenerate = false;  // all tilts == 1: system vanishes, rho := n/N
  int iterations = 0;
  double residual = 0.0;  // final inf-norm of the constraint equations
};

// Solves sum_rows (t_l - 1)/D = 0 for all l.  Damped Newton on the concave
// merit sum_rows log D, initialized at rho = n/N (always feasible), with a
// cyclic coordinate-bisection fallback.  Throws solver_error after 500
// iterations, carrying the last residual.
MultiplierResult solve_multipliers(const TiltMatrix& t);

// p_row = 1/(N D_row); throws domain_error if any denominator is nonpositive
Eigen::VectorXd atom_weights(const TiltMatrix& t, const Eigen::VectorXd& rho);

struct ELSolution {
  Eigen::VectorXd rho;
  Eigen::VectorXd weights;  // N atom weights, sum to 1
  double primal = 0.0;      // sum_rows { log t(row, own client) + log p_row }
  bool degenerate = false;
  int iterations = 0;
  double residual = 0.0;
};

ELSolution solve_el(const TiltMatrix& t);

// profile log-EL, primal route: target_loglik + sum{gamma_i + xi_i.h + log p}.
// The tilt own-client column already carries gamma_i + xi_i.h as its log.
double profile_logel_primal(const TiltMatrix& t, double target_loglik = 0.0);

// dual route: sum over samples of the log client-softmax probability of the
// own client (logits gamma_dd_l + xi_l . h), plus target_loglik.  Plain sum
// over samples, no N scaling; invariant to a common shift of gamma_dd.
double profile_logel_dual(const Eigen::MatrixXd& h,
                          const std::vector<int>& client_of_row,
                          const Eigen::VectorXd& gamma_dd,
                          const Eigen::MatrixXd& xi, double target_loglik = 0.0);

// At the maximizing parameters the two routes differ by a data-only constant:
//   primal - dual = -sum_l n_l log n_l,
// and the multipliers equal the sample proportions n_l / N.
double duality_constant(const std::vector<int>& counts);

// log density-ratio coefficients for two distributions from the same family,
// used as a generator-correctness oracle.
//   normal: log{phi(x;m1,s1^2)/phi(x;m2,s2^2)} = c0 + c1 x + c2 x^2
//   gamma:  log{f(x;a1,b1)/f(x;a2,b2)}         = c0 + c1 x + c2 log x
std::array<double, 3> normal_log_ratio_coeffs(double mu1, double sigma1, double mu2,
                                              double sigma2);
std::array<double, 3> gamma_log_ratio_coeffs(double shape1, double rate1,
                                             double shape2, double rate2);

// ---- numeric verification of the dual form ----

struct ElInstance {
  Eigen::MatrixXd h;  // N x d_h sample embeddings
  std::vector<int> client_of_row;
  std::vector<int> counts;
};

// overlapping-cloud instance; redraws internally (bounded) when the client
// labels are linearly separable in h, which pushes both maximizers to infinity
ElInstance random_el_instance(int m, int n_lo, int n_hi, int d_h,
                              std::uint64_t seed);

struct DualOptimum {
  Eigen::VectorXd gamma_dd;  // first intercept pinned to 0
  Eigen::MatrixXd xi;
  double value = 0.0;
  int iterations = 0;
};

// Newton maximization of the dual client term (concave multinomial logistic
// log-likelihood).  Throws solver_error when the maximizer diverges.
DualOptimum maximize_dual(const ElInstance& inst);

struct PrimalOptimum {
  Eigen::VectorXd gamma;  // maximizing tilt intercepts
  Eigen::MatrixXd xi;
  Eigen::VectorXd rho;    // multipliers at the optimum
  double value = 0.0;
  int iterations = 0;
};

// Maximizes the primal profile log-EL over (gamma, xi): alternates an exact
// Newton solve of the intercept stationarity system n_l = N rho_l with line-
// search ascent steps in xi, seeded from the dual optimum.
PrimalOptimum maximize_primal(const ElInstance& inst, const DualOptimum& seed);

struct DualityReport {
  double primal = 0.0;
  double dual = 0.0;
  double constant = 0.0;      // -sum n_l log n_l
  double gap = 0.0;           // primal - dual - constant
  double rho_err = 0.0;       // ||rho_hat - n/N||_inf
  double sum_p_err = 0.0;     // |sum p - 1|
  double constraint_err = 0.0;  // max_l |sum p t_l - 1|
  double xi_gap = 0.0;        // ||xi_primal - xi_dual||_inf
  bool degenerate = false;
};

DualityReport verify_duality(const ElInstance& inst);

}  // namespace feddrm
