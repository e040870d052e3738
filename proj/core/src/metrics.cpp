#include "feddrm/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace feddrm {

namespace {

double total_size(const std::vector<ClientDataset>& sets) {
  double n = 0.0;
  for (const ClientDataset& d : sets) n += static_cast<double>(d.size());
  return n;
}

int predict_label(const Eigen::VectorXd& g, const Head& head) {
  return argmax_lowest(head.alpha + head.beta * g);
}

}  // namespace

int argmax_lowest(const Eigen::VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

RoutingDecision route(int query, const Eigen::VectorXd& x, const NetConfig& net,
                      const EmbeddingParams& emb, const Eigen::VectorXd& gamma,
                      const Eigen::MatrixXd& xi) {
  ForwardResult fr = forward(x, emb, net);
  RoutingDecision d;
  d.query = query;
  d.client_probs = client_probs(fr.h, gamma, xi);
  d.chosen = argmax_lowest(d.client_probs);
  return d;
}

double system_accuracy(const NetConfig& net, const EmbeddingParams& emb,
                       const HeadBank& bank,
                       const std::vector<ClientDataset>& tests) {
  double hits = 0.0, n = 0.0;
  for (const ClientDataset& d : tests)
    for (Eigen::Index j = 0; j < d.size(); ++j) {
      ForwardResult fr = forward(d.X.row(j).transpose(), emb, net);
      const int chosen = argmax_lowest(bank.gamma + bank.xi * fr.h);
      if (predict_label(fr.g, bank.target_for(chosen)) == d.y[j]) hits += 1.0;
      n += 1.0;
    }
  return n == 0.0 ? 0.0 : hits / n;
}

double oracle_system_accuracy(const NetConfig& net, const EmbeddingParams& emb,
                              const HeadBank& bank,
                              const std::vector<ClientDataset>& tests) {
  double hits = 0.0, n = 0.0;
  for (const ClientDataset& d : tests)
    for (Eigen::Index j = 0; j < d.size(); ++j) {
      ForwardResult fr = forward(d.X.row(j).transpose(), emb, net);
      if (predict_label(fr.g, bank.target_for(d.client_id)) == d.y[j]) hits += 1.0;
      n += 1.0;
    }
  return n == 0.0 ? 0.0 : hits / n;
}

double routing_accuracy(const NetConfig& net, const EmbeddingParams& emb,
                        const HeadBank& bank,
                        const std::vector<ClientDataset>& tests) {
  double hits = 0.0, n = 0.0;
  for (const ClientDataset& d : tests)
    for (Eigen::Index j = 0; j < d.size(); ++j) {
      ForwardResult fr = forward(d.X.row(j).transpose(), emb, net);
      if (argmax_lowest(bank.gamma + bank.xi * fr.h) == d.client_id) hits += 1.0;
      n += 1.0;
    }
  return n == 0.0 ? 0.0 : hits / n;
}

double average_accuracy(const NetConfig& net, const EmbeddingParams& emb,
                        const HeadBank& bank,
                        const std::vector<ClientDataset>& tests,
                        const std::vector<Eigen::Index>& train_sizes) {
  if (tests.size() != train_sizes.size())
    throw contract_error("average_accuracy: size list mismatch");
  double weighted = 0.0, total_train = 0.0;
  for (Eigen::Index n : train_sizes) total_train += static_cast<double>(n);
  for (std::size_t c = 0; c < tests.size(); ++c) {
    const ClientDataset& d = tests[c];
    double hits = 0.0;
    for (Eigen::Index j = 0; j < d.size(); ++j) {
      ForwardResult fr = forward(d.X.row(j).transpose(), emb, net);
      if (predict_label(fr.g, bank.target_for(d.client_id)) == d.y[j]) hits += 1.0;
    }
    const double acc = d.size() == 0 ? 0.0 : hits / static_cast<double>(d.size());
    weighted += static_cast<double>(train_sizes[c]) / total_train * acc;
  }
  return weighted;
}

double majority_vote_accuracy(const NetConfig& net, const EmbeddingParams& emb,
                              const HeadBank& bank,
                              const std::vector<ClientDataset>& tests) {
  const int m = bank.shared_target ? 1 : static_cast<int>(bank.target.size());
  double hits = 0.0, n = 0.0;
  for (const ClientDataset& d : tests)
    for (Eigen::Index j = 0; j < d.size(); ++j) {
      ForwardResult fr = forward(d.X.row(j).transpose(), emb, net);
      const int num_classes = static_cast<int>(bank.target[0].alpha.size());
      Eigen::VectorXd tally = Eigen::VectorXd::Zero(num_classes);
      for (int c = 0; c < m; ++c) tally[predict_label(fr.g, bank.target[c])] += 1.0;
      if (argmax_lowest(tally) == d.y[j]) hits += 1.0;
      n += 1.0;
    }
  return n == 0.0 ? 0.0 : hits / n;
}

int bayes_route(const Eigen::VectorXd& x, const Eigen::VectorXd& gamma,
                const Eigen::MatrixXd& xi, const std::vector<Eigen::Index>& sizes) {
  Eigen::VectorXd score(gamma.size());
  for (int i = 0; i < gamma.size(); ++i)
    score[i] = std::log(static_cast<double>(sizes[i])) + gamma[i] + xi.row(i).dot(x);
  return argmax_lowest(score);
}

DriftReport drift_report(const NetConfig& net, const EmbeddingParams& emb,
                         const HeadBank& bank,
                         const std::vector<ClientDataset>& train, double lambda) {
  const int m = static_cast<int>(train.size());
  const double n_total = total_size(train);

  const int client_dim =
      static_cast<int>(bank.gamma.size() + bank.xi.rows() * bank.xi.cols());
  const int head_dim = bank.target.empty()
                           ? 0
                           : static_cast<int>(bank.target[0].alpha.size() +
                                              bank.target[0].beta.size());
  const int class_dim = bank.shared_target ? head_dim : m * head_dim;

  Eigen::MatrixXd cg(m, client_dim);   // per-client (gamma, xi) gradients
  Eigen::MatrixXd tg = Eigen::MatrixXd::Zero(m, class_dim);
  Eigen::VectorXd w(m);

  for (int c = 0; c < m; ++c) {
    const Batch b{train[c].X, train[c].y, train[c].client_id};
    const EmbeddedBatch eb = embed(b, net, emb);
    w[c] = static_cast<double>(train[c].size()) / n_total;

    ClientBlockGrad cb = client_ce_grad(eb, bank.gamma, bank.xi);
    int at = 0;
    for (Eigen::Index i = 0; i < cb.dgamma.size(); ++i) cg(c, at++) = cb.dgamma[i];
    for (Eigen::Index r = 0; r < cb.dxi.rows(); ++r)
      for (Eigen::Index k = 0; k < cb.dxi.cols(); ++k) cg(c, at++) = cb.dxi(r, k);

    TargetBlockGrad tb = target_ce_grad(eb, bank.target_for(c));
    const int off = bank.shared_target ? 0 : c * head_dim;
    at = off;
    for (Eigen::Index i = 0; i < tb.dhead.alpha.size(); ++i)
      tg(c, at++) = tb.dhead.alpha[i];
    for (Eigen::Index r = 0; r < tb.dhead.beta.rows(); ++r)
      for (Eigen::Index k = 0; k < tb.dhead.beta.cols(); ++k)
        tg(c, at++) = tb.dhead.beta(r, k);
  }

  const Eigen::RowVectorXd mean_c = w.transpose() * cg;
  const Eigen::RowVectorXd mean_t = w.transpose() * tg;

  DriftReport rep;
  rep.lambda = lambda;
  for (int c = 0; c < m; ++c) {
    rep.g_client2 += w[c] * (cg.row(c) - mean_c).squaredNorm();
    rep.g_class2 += w[c] * (tg.row(c) - mean_t).squaredNorm();
    // stacked reweighted deviation, client block first
    double s = 0.0;
    for (int i = 0; i < client_dim; ++i) {
      const double v = (1.0 - lambda) * (cg(c, i) - mean_c[i]);
      s += v * v;
    }
    for (int i = 0; i < class_dim; ++i) {
      const double v = lambda * (tg(c, i) - mean_t[i]);
      s += v * v;
    }
    rep.g_total2 += w[c] * s;
  }
  return rep;
}

Eigen::MatrixXd FisherInfo::assembled(double lambda) const {
  const Eigen::Index a = client_block.rows(), b = class_block.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a + b, a + b);
  out.topLeftCorner(a, a) = (1.0 - lambda) * client_block;
  out.bottomRightCorner(b, b) = lambda * class_block;
  out.diagonal().array() += rho_wd;
  return out;
}

FisherInfo fisher_info(const Eigen::MatrixXd& g_emb, const Eigen::MatrixXd& h_emb,
                       const Eigen::VectorXd& gamma, const Eigen::MatrixXd& xi,
                       const Head& head, double rho_wd) {
  if (g_emb.rows() != h_emb.rows())
    throw contract_error("fisher_info: embedding row mismatch");
  const int n = static_cast<int>(g_emb.rows());
  if (n == 0) throw data_error("fisher_info: no samples");
  const int m = static_cast<int>(gamma.size());
  const int num_classes = static_cast<int>(head.alpha.size());
  const int zc = 1 + static_cast<int>(h_emb.cols());
  const int zt = 1 + static_cast<int>(g_emb.cols());

  FisherInfo info;
  info.rho_wd = rho_wd;
  info.client_block = Eigen::MatrixXd::Zero(m * zc, m * zc);
  info.class_block = Eigen::MatrixXd::Zero(num_classes * zt, num_classes * zt);

  Eigen::VectorXd z;
  for (int j = 0; j < n; ++j) {
    // client head
    z.resize(zc);
    z[0] = 1.0;
    z.tail(zc - 1) = h_emb.row(j).transpose();
    Eigen::VectorXd q = client_probs(h_emb.row(j).transpose(), gamma, xi);
    Eigen::MatrixXd zz = z * z.transpose();
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) {
        const double coef = (a == b ? q[a] : 0.0) - q[a] * q[b];
        info.client_block.block(a * zc, b * zc, zc, zc) += coef * zz;
      }

    // target head
    z.resize(zt);
    z[0] = 1.0;
    z.tail(zt - 1) = g_emb.row(j).transpose();
    Eigen::VectorXd p = target_probs(g_emb.row(j).transpose(), head);
    zz = z * z.transpose();
    for (int a = 0; a < num_classes; ++a)
      for (int b = 0; b < num_classes; ++b) {
        const double coef = (a == b ? p[a] : 0.0) - p[a] * p[b];
        info.class_block.block(a * zt, b * zt, zt, zt) += coef * zz;
      }
  }
  info.client_block /= static_cast<double>(n);
  info.class_block /= static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.compute(info.client_block, Eigen::EigenvaluesOnly);
  info.client_min_eig = es.eigenvalues().minCoeff();
  es.compute(info.class_block, Eigen::EigenvaluesOnly);
  info.class_min_eig = es.eigenvalues().minCoeff();
  return info;
}

}  // namespace feddrm
