#pragma once

#include <Eigen/Dense>
#include <vector>

#include "feddrm/net.hpp"

namespace feddrm {

// one softmax head: logits = alpha + beta * embedding
struct Head {
  Eigen::VectorXd alpha;  // K
  Eigen::MatrixXd beta;   // K x d

  double squared_norm() const { return alpha.squaredNorm() + beta.squaredNorm(); }
};

// all trainable heads.  target holds one head per client, or a single shared
// head when shared_target is set (covariate-shift-only variant).  The client
// head (gamma, xi) is always shared.
struct HeadBank {
  std::vector<Head> target;
  Eigen::VectorXd gamma;  // m
  Eigen::MatrixXd xi;     // m x d_h
  bool shared_target = false;

  const Head& target_for(int client) const {
    if (shared_target) return target.at(0);
    return target.at(static_cast<std::size_t>(client));
  }
  Head& target_for(int client) {
    if (shared_target) return target.at(0);
    return target.at(static_cast<std::size_t>(client));
  }
  int num_clients() const { return static_cast<int>(gamma.size()); }
};

struct Batch {
  Eigen::MatrixXd X;  // n x input_dim, rows are samples
  Eigen::VectorXi y;  // n, labels in [0, K)
  int client_id = 0;
};

// batch with embeddings precomputed (fixed-embedding paths cache these)
struct EmbeddedBatch {
  Eigen::MatrixXd g;  // n x d_g
  Eigen::MatrixXd h;  // n x d_h
  Eigen::VectorXi y;
  int client_id = 0;
};

struct LossBreakdown {
  double client_ce = 0.0;  // mean cross-entropy of the client head
  double target_ce = 0.0;  // mean cross-entropy of the active target head
  double l2 = 0.0;         // (rho_wd/2) * ||trainable params||^2
  double total = 0.0;      // (1-lambda)*client_ce + lambda*target_ce + l2
};

// gradient of the per-client reweighted loss w.r.t. everything the client trains
struct ModelGrads {
  EmbeddingParams emb;
  Eigen::VectorXd gamma;
  Eigen::MatrixXd xi;
  Head target;  // gradient of the head selected by the batch's client_id
};

struct LossResult {
  LossBreakdown loss;
  ModelGrads grads;
};

// numerically stable softmax (max subtraction)
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

// P(Y = k | g) under the target head
Eigen::VectorXd target_probs(const Eigen::VectorXd& g, const Head& head);

// P(client = l | h) under the client head
Eigen::VectorXd client_probs(const Eigen::VectorXd& h, const Eigen::VectorXd& gamma,
                             const Eigen::MatrixXd& xi);

EmbeddedBatch embed(const Batch& b, const NetConfig& cfg, const EmbeddingParams& p);

// Per-client reweighted objective
//   (1-lambda) * client_ce + lambda * target_ce + (rho_wd/2) * ||params||^2
// with mean reduction over the batch, plus exact gradients for the embedding,
// the client head, and the batch's target head.  The weight-decay term covers
// exactly the parameters a client updates; the embedding is excluded from both
// the value and the gradient when cfg.fixed_embedding is set.
// include_client_loss=false drops the client head entirely (FedAvg reference
// path); gamma/xi may then be empty.
LossResult reweighted_loss(const Batch& b, const NetConfig& cfg,
                           const EmbeddingParams& emb, const Head& target_head,
                           const Eigen::VectorXd& gamma, const Eigen::MatrixXd& xi,
                           double lambda, double rho_wd,
                           bool include_client_loss = true);

LossResult reweighted_loss(const Batch& b, const NetConfig& cfg,
                           const EmbeddingParams& emb, const HeadBank& bank,
                           double lambda, double rho_wd);

// head-only pieces over cached embeddings (used by the drift report, the EL
// oracles and the fixed-embedding theory path)
struct ClientBlockGrad {
  double ce = 0.0;
  Eigen::VectorXd dgamma;
  Eigen::MatrixXd dxi;
};
struct TargetBlockGrad {
  double ce = 0.0;
  Head dhead;
};

ClientBlockGrad client_ce_grad(const EmbeddedBatch& b, const Eigen::VectorXd& gamma,
                               const Eigen::MatrixXd& xi);
TargetBlockGrad target_ce_grad(const EmbeddedBatch& b, const Head& head);

// Mean score of the client-classification log-likelihood, i.e. the negation of
// the cross-entropy gradient: gamma component n^-1 sum_j {1(i=k) - q_k(h_j)},
// xi component carries the embedding factor h_j.
struct ClientHeadScore {
  Eigen::VectorXd gamma;  // m
  Eigen::MatrixXd xi;     // m x d_h
};
ClientHeadScore client_head_score(const EmbeddedBatch& b,
                                  const Eigen::VectorXd& gamma,
                                  const Eigen::MatrixXd& xi);

}  // namespace feddrm
