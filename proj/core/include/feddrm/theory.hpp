#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "feddrm/federation.hpp"
#include "feddrm/loss.hpp"
#include "feddrm/partition.hpp"

namespace feddrm {

// Fixed-embedding setting: the embedding is frozen, only the two softmax head
// blocks train, and the reweighted objective with weight decay is strongly
// convex with a unique minimizer.
//
// Softmax heads carry a gauge direction (a common shift of every class's
// parameters leaves all probabilities unchanged); the ridge term pins the
// minimizer to the class-centered representative, so ground truths generated
// here are class-centered as well.

// flat view of the trainable blocks; order: gamma, xi row-major, alpha, beta
// row-major
struct HeadStack {
  Eigen::VectorXd gamma;
  Eigen::MatrixXd xi;
  Head target;

  Eigen::Index dim() const {
    return gamma.size() + xi.size() + target.alpha.size() + target.beta.size();
  }
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& v);
  static HeadStack zeros(int m, int d_h, int num_classes, int d_g);
};

// subtract the across-class mean from every class row of both heads
HeadStack centered(const HeadStack& s);

// per-client embedded batches plus aggregation weights
struct CachedData {
  std::vector<EmbeddedBatch> batches;
  std::vector<double> weights;  // n_i / N
  int m = 0, num_classes = 0, d_g = 0, d_h = 0;
  Eigen::Index total = 0;
};

CachedData cache_embeddings(const NetConfig& net, const EmbeddingParams& emb,
                            const std::vector<ClientDataset>& clients,
                            int num_classes);

struct StackValue {
  double value = 0.0;
  HeadStack grad;
};

// weighted reweighted loss over all clients and its gradient
StackValue theory_loss(const CachedData& data, const HeadStack& at, double lambda,
                       double rho);

// Hessian-vector product of the same objective (exact for softmax heads)
Eigen::VectorXd theory_hvp(const CachedData& data, const HeadStack& at,
                           double lambda, double rho, const Eigen::VectorXd& v);

struct SpectralEstimate {
  double mu_hat = 0.0;  // smallest Hessian eigenvalue
  double l_hat = 0.0;   // largest
};

// power iteration on H and on (l_hat I - H)
SpectralEstimate hessian_extremes(const CachedData& data, const HeadStack& at,
                                  double lambda, double rho, std::uint64_t seed);

struct MleResult {
  HeadStack stack;
  double grad_norm = 0.0;
  long iterations = 0;
};

// full-batch gradient descent from zero initialization, step 1/L with a
// stall-guarded halving, until ||grad||_2 < tol; convergence_error past cap
MleResult centralized_mle(const CachedData& data, double lambda, double rho,
                          double tol = 1e-9, long cap = 1000000);

// loss values along fixed-step full-batch GD (monotone when eta <= 1/L)
std::vector<double> gd_loss_path(const CachedData& data, HeadStack start,
                                 double lambda, double rho, double eta, int steps);

// ---- benchmark construction ----

struct TheoryBenchmarkSpec {
  int m = 3;
  int num_classes = 3;
  int input_dim = 6;
  std::vector<int> g_layers{8, 2};
  std::vector<int> h_layers{2};
  double truth_scale = 1.0;
  int n_train = 600;
  int n_test = 0;
  std::uint64_t seed = 1;
  bool identical_clients = false;  // every client holds the same sample set
};

struct TheoryBenchmark {
  NetConfig net;  // fixed_embedding = true
  EmbeddingParams emb;
  std::vector<ClientDataset> train;
  std::vector<ClientDataset> test;
  HeadStack truth;  // class-centered
  CachedData cached;
};

TheoryBenchmark make_theory_benchmark(const TheoryBenchmarkSpec& spec);

// ---- experiments ----

struct ConvergenceResult {
  double eta = 0.0;
  int local_steps = 0;
  double lambda = 0.0;
  std::vector<double> dist2;  // ||stack^t - stack_hat||^2 per round
  double plateau = 0.0;       // mean of the last 20% of rounds
  double contraction = 0.0;   // fitted pre-plateau per-round factor
  SpectralEstimate spectrum;  // at the minimizer
};

ConvergenceResult convergence_run(const TheoryBenchmark& bench, double eta,
                                  int local_steps, double lambda, double rho,
                                  int rounds, std::uint64_t seed,
                                  bool with_spectrum = true);

struct StatisticalResult {
  std::vector<int> n_grid;
  std::vector<double> mean_err2;         // full-stack squared error vs truth
  std::vector<double> mean_client_err2;  // (gamma, xi) block only
  double slope = 0.0;      // log mean_err2 vs log N least-squares slope
  double intercept = 0.0;
};

StatisticalResult statistical_experiment(const TheoryBenchmarkSpec& base,
                                         const std::vector<int>& n_grid,
                                         double lambda, double rho, int seeds);

// client-block squared error vs truth at fixed N, averaged over seeds
double client_block_error(const TheoryBenchmarkSpec& base, int n, double lambda,
                          double rho, int seeds);

struct LambdaRow {
  double lambda = 0.0;
  double client_acc_mean = 0.0, client_acc_std = 0.0;
  double class_acc_mean = 0.0, class_acc_std = 0.0;
  double plateau_mean = 0.0;
};

// full fixed-embedding pipeline per lambda: train with the federation engine,
// score routing and class accuracy on held-out data, record the plateau
std::vector<LambdaRow> lambda_tradeoff(const TheoryBenchmarkSpec& base,
                                       const std::vector<double>& lambda_grid,
                                       double eta, int local_steps, int rounds,
                                       double rho, int seeds);

}  // namespace feddrm
