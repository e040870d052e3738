#pragma once

#include <Eigen/Dense>
#include <vector>

#include "feddrm/loss.hpp"
#include "feddrm/net.hpp"
#include "feddrm/partition.hpp"

namespace feddrm {

struct RoutingDecision {
  int query = 0;
  int chosen = 0;               // argmax, ties to the lowest index
  Eigen::VectorXd client_probs;
};

RoutingDecision route(int query, const Eigen::VectorXd& x, const NetConfig& net,
                      const EmbeddingParams& emb, const Eigen::VectorXd& gamma,
                      const Eigen::MatrixXd& xi);

// index of the strictly largest entry, first occurrence on ties
int argmax_lowest(const Eigen::VectorXd& v);

// pooled-test accuracy when every query is first routed by the client head and
// then classified by the chosen client's target head
double system_accuracy(const NetConfig& net, const EmbeddingParams& emb,
                       const HeadBank& bank,
                       const std::vector<ClientDataset>& tests);

// same, but routed by the ground-truth owner of each test sample
double oracle_system_accuracy(const NetConfig& net, const EmbeddingParams& emb,
                              const HeadBank& bank,
                              const std::vector<ClientDataset>& tests);

// fraction of pooled test samples routed to the client that generated them
double routing_accuracy(const NetConfig& net, const EmbeddingParams& emb,
                        const HeadBank& bank,
                        const std::vector<ClientDataset>& tests);

// train-size-weighted mean of each client's own-test accuracy
double average_accuracy(const NetConfig& net, const EmbeddingParams& emb,
                        const HeadBank& bank,
                        const std::vector<ClientDataset>& tests,
                        const std::vector<Eigen::Index>& train_sizes);

// every head predicts every pooled sample; plurality label wins, ties to the
// lowest label index
double majority_vote_accuracy(const NetConfig& net, const EmbeddingParams& emb,
                              const HeadBank& bank,
                              const std::vector<ClientDataset>& tests);

// posterior argmax under the known Gaussian tilts: log n_i + gamma_i + xi_i.x
int bayes_route(const Eigen::VectorXd& x, const Eigen::VectorXd& gamma,
                const Eigen::MatrixXd& xi, const std::vector<Eigen::Index>& sizes);

// Heterogeneity of the per-client full-batch CE gradients around their
// weighted mean, per head block.  Weight-decay gradients are identical across
// clients and cancel in the deviations, so only the CE parts enter.
//   g_total2 = (1-lambda)^2 g_client2 + lambda^2 g_class2   (disjoint blocks)
struct DriftReport {
  double g_client2 = 0.0;
  double g_class2 = 0.0;
  double g_total2 = 0.0;
  double lambda = 0.0;
};

DriftReport drift_report(const NetConfig& net, const EmbeddingParams& emb,
                         const HeadBank& bank,
                         const std::vector<ClientDataset>& train, double lambda);

// Empirical Fisher information of the two softmax heads at the given
// parameters, over the pooled samples.  Coordinates are class-major: per class
// the intercept followed by the weight row.  For a multinomial logistic model
// these equal the exact Hessian blocks of the mean negative log-likelihood.
struct FisherInfo {
  Eigen::MatrixXd client_block;  // (gamma, xi) coordinates
  Eigen::MatrixXd class_block;   // (alpha, beta) coordinates
  double client_min_eig = 0.0;
  double class_min_eig = 0.0;
  double rho_wd = 0.0;

  // block diag((1-lambda) I_client + rho I, lambda I_class + rho I)
  Eigen::MatrixXd assembled(double lambda) const;
};

FisherInfo fisher_info(const Eigen::MatrixXd& g_emb, const Eigen::MatrixXd& h_emb,
                       const Eigen::VectorXd& gamma, const Eigen::MatrixXd& xi,
                       const Head& head, double rho_wd);

}  // namespace feddrm
