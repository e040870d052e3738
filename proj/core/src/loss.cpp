#include "feddrm/loss.hpp"

#include <cmath>

namespace feddrm {

namespace {

// log of the softmax normalizer after max subtraction
double log_norm(const Eigen::VectorXd& shifted) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < shifted.size(); ++i) s += std::exp(shifted[i]);
  return std::log(s);
}

void check_batch(const Batch& b, int input_dim, int num_classes, int num_clients,
                 bool check_client) {
  if (b.X.rows() == 0) throw data_error("loss: empty batch");
  if (b.X.cols() != input_dim) throw contract_error("loss: feature width mismatch");
  if (b.y.size() != b.X.rows()) throw contract_error("loss: label count mismatch");
  for (Eigen::Index j = 0; j < b.y.size(); ++j)
    if (b.y[j] < 0 || b.y[j] >= num_classes)
      throw data_error("loss: label out of range");
  if (check_client && (b.client_id < 0 || b.client_id >= num_clients))
    throw data_error("loss: client_id out of range");
}

}  // namespace

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  if (!logits.allFinite()) throw numeric_error("softmax: non-finite logit");
  const double mx = logits.maxCoeff();
  Eigen::VectorXd p(logits.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  p /= sum;
  return p;
}

Eigen::VectorXd target_probs(const Eigen::VectorXd& g, const Head& head) {
  return softmax(head.alpha + head.beta * g);
}

Eigen::VectorXd client_probs(const Eigen::VectorXd& h, const Eigen::VectorXd& gamma,
                             const Eigen::MatrixXd& xi) {
  return softmax(gamma + xi * h);
}

EmbeddedBatch embed(const Batch& b, const NetConfig& cfg, const EmbeddingParams& p) {
  EmbeddedBatch eb;
  eb.g.resize(b.X.rows(), cfg.d_g());
  eb.h.resize(b.X.rows(), cfg.d_h());
  eb.y = b.y;
  eb.client_id = b.client_id;
  for (Eigen::Index j = 0; j < b.X.rows(); ++j) {
    ForwardResult fr = forward(b.X.row(j).transpose(), p, cfg);
    eb.g.row(j) = fr.g.transpose();
    eb.h.row(j) = fr.h.transpose();
  }
  return eb;
}

LossResult reweighted_loss(const Batch& b, const NetConfig& cfg,
                           const EmbeddingParams& emb, const Head& target_head,
                           const Eigen::VectorXd& gamma, const Eigen::MatrixXd& xi,
                           double lambda, double rho_wd, bool include_client_loss) {
  if (lambda <= 0.0 || lambda > 1.0)
    throw config_error("loss: lambda must lie in (0, 1]");
  if (rho_wd < 0.0) throw config_error("loss: weight decay must be >= 0");
  const int K = static_cast<int>(target_head.alpha.size());
  const int m = static_cast<int>(gamma.size());
  check_batch(b, cfg.input_dim, K, m, include_client_loss);

  const Eigen::Index n = b.X.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double wt = lambda * inv_n;                           // target CE factor
  const double wc = include_client_loss ? (1.0 - lambda) * inv_n : 0.0;

  LossResult out;
  out.grads.emb = zeros_like(emb);
  out.grads.gamma = Eigen::VectorXd::Zero(m);
  out.grads.xi = Eigen::MatrixXd::Zero(xi.rows(), xi.cols());
  out.grads.target.alpha = Eigen::VectorXd::Zero(K);
  out.grads.target.beta = Eigen::MatrixXd::Zero(target_head.beta.rows(),
                                                target_head.beta.cols());

  double client_ce = 0.0;
  double target_ce = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    ForwardResult fr = forward(b.X.row(j).transpose(), emb, cfg);

    // target head
    Eigen::VectorXd t_logits = target_head.alpha + target_head.beta * fr.g;
    double mx = t_logits.maxCoeff();
    Eigen::VectorXd t_shift = t_logits.array() - mx;
    double t_ln = log_norm(t_shift);
    target_ce += -(t_shift[b.y[j]] - t_ln);
    Eigen::VectorXd p = t_shift.array().exp() / std::exp(t_ln);
    Eigen::VectorXd t_dlogits = p;
    t_dlogits[b.y[j]] -= 1.0;

    out.grads.target.alpha += wt * t_dlogits;
    out.grads.target.beta += wt * (t_dlogits * fr.g.transpose());
    Eigen::VectorXd grad_g = wt * (target_head.beta.transpose() * t_dlogits);

    // client head: the batch's entire label column is the owning client
    Eigen::VectorXd grad_h = Eigen::VectorXd::Zero(cfg.d_h());
    if (include_client_loss) {
      Eigen::VectorXd c_logits = gamma + xi * fr.h;
      double cmx = c_logits.maxCoeff();
      Eigen::VectorXd c_shift = c_logits.array() - cmx;
      double c_ln = log_norm(c_shift);
      client_ce += -(c_shift[b.client_id] - c_ln);
      Eigen::VectorXd q = c_shift.array().exp() / std::exp(c_ln);
      Eigen::VectorXd c_dlogits = q;
      c_dlogits[b.client_id] -= 1.0;

      out.grads.gamma += wc * c_dlogits;
      out.grads.xi += wc * (c_dlogits * fr.h.transpose());
      grad_h = wc * (xi.transpose() * c_dlogits);
    }

    EmbeddingParams eg = backward(cfg, emb, fr.cache, grad_g, grad_h);
    axpy(1.0, eg, out.grads.emb);
  }
  client_ce *= inv_n;
  target_ce *= inv_n;

  // weight decay over exactly the parameters this client trains
  double sq = target_head.squared_norm();
  if (include_client_loss) sq += gamma.squaredNorm() + xi.squaredNorm();
  if (!cfg.fixed_embedding) sq += emb.squared_norm();

  if (rho_wd > 0.0) {
    out.grads.target.alpha += rho_wd * target_head.alpha;
    out.grads.target.beta += rho_wd * target_head.beta;
    if (include_client_loss) {
      out.grads.gamma += rho_wd * gamma;
      out.grads.xi += rho_wd * xi;
    }
    if (!cfg.fixed_embedding) axpy(rho_wd, emb, out.grads.emb);
  }

  out.loss.client_ce = client_ce;
  out.loss.target_ce = target_ce;
  out.loss.l2 = 0.5 * rho_wd * sq;
  out.loss.total = (1.0 - lambda) * client_ce + lambda * target_ce + out.loss.l2;
  return out;
}

LossResult reweighted_loss(const Batch& b, const NetConfig& cfg,
                           const EmbeddingParams& emb, const HeadBank& bank,
                           double lambda, double rho_wd) {
  return reweighted_loss(b, cfg, emb, bank.target_for(b.client_id), bank.gamma,
                         bank.xi, lambda, rho_wd, true);
}

ClientBlockGrad client_ce_grad(const EmbeddedBatch& b, const Eigen::VectorXd& gamma,
                               const Eigen::MatrixXd& xi) {
  const Eigen::Index n = b.h.rows();
  if (n == 0) throw data_error("client_ce_grad: empty batch");
  const double inv_n = 1.0 / static_cast<double>(n);
  ClientBlockGrad out;
  out.dgamma = Eigen::VectorXd::Zero(gamma.size());
  out.dxi = Eigen::MatrixXd::Zero(xi.rows(), xi.cols());
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd h = b.h.row(j).transpose();
    Eigen::VectorXd logits = gamma + xi * h;
    double mx = logits.maxCoeff();
    Eigen::VectorXd shift = logits.array() - mx;
    double ln = log_norm(shift);
    out.ce += -(shift[b.client_id] - ln);
    Eigen::VectorXd q = shift.array().exp() / std::exp(ln);
    q[b.client_id] -= 1.0;
    out.dgamma += inv_n * q;
    out.dxi += inv_n * (q * h.transpose());
  }
  out.ce *= inv_n;
  return out;
}

TargetBlockGrad target_ce_grad(const EmbeddedBatch& b, const Head& head) {
  const Eigen::Index n = b.g.rows();
  if (n == 0) throw data_error("target_ce_grad: empty batch");
  const double inv_n = 1.0 / static_cast<double>(n);
  TargetBlockGrad out;
  out.dhead.alpha = Eigen::VectorXd::Zero(head.alpha.size());
  out.dhead.beta = Eigen::MatrixXd::Zero(head.beta.rows(), head.beta.cols());
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd g = b.g.row(j).transpose();
    Eigen::VectorXd logits = head.alpha + head.beta * g;
    double mx = logits.maxCoeff();
    Eigen::VectorXd shift = logits.array() - mx;
    double ln = log_norm(shift);
    out.ce += -(shift[b.y[j]] - ln);
    Eigen::VectorXd p = shift.array().exp() / std::exp(ln);
    p[b.y[j]] -= 1.0;
    out.dhead.alpha += inv_n * p;
    out.dhead.beta += inv_n * (p * g.transpose());
  }
  out.ce *= inv_n;
  return out;
}

ClientHeadScore client_head_score(const EmbeddedBatch& b,
                                  const Eigen::VectorXd& gamma,
                                  const Eigen::MatrixXd& xi) {
  ClientBlockGrad g = client_ce_grad(b, gamma, xi);
  return {-g.dgamma, -g.dxi};
}

}  // namespace feddrm
