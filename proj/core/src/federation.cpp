#include "feddrm/federation.hpp"

#include <cmath>
#include <mutex>
#include <string>
#include <thread>

namespace feddrm {

namespace {

constexpr double kDivergenceCap = 1e6;

// p -= lr * g, through the momentum buffer when mu > 0
void sgd_block(Eigen::VectorXd& p, Eigen::VectorXd& v, const Eigen::VectorXd& g,
               double lr, double mu) {
  if (mu > 0.0) {
    v = mu * v + g;
    p -= lr * v;
  } else {
    p -= lr * g;
  }
}
void sgd_block(Eigen::MatrixXd& p, Eigen::MatrixXd& v, const Eigen::MatrixXd& g,
               double lr, double mu) {
  if (mu > 0.0) {
    v = mu * v + g;
    p -= lr * v;
  } else {
    p -= lr * g;
  }
}
void sgd_emb(EmbeddingParams& p, EmbeddingParams& v, const EmbeddingParams& g,
             double lr, double mu) {
  for (std::size_t k = 0; k < p.g.size(); ++k) {
    sgd_block(p.g[k].W, v.g[k].W, g.g[k].W, lr, mu);
    sgd_block(p.g[k].b, v.g[k].b, g.g[k].b, lr, mu);
  }
  for (std::size_t k = 0; k < p.h.size(); ++k) {
    sgd_block(p.h[k].W, v.h[k].W, g.h[k].W, lr, mu);
    sgd_block(p.h[k].b, v.h[k].b, g.h[k].b, lr, mu);
  }
}

Batch make_batch(const ClientDataset& data, int batch_size, Rng& stream) {
  if (batch_size <= 0 || batch_size >= data.size()) {
    return Batch{data.X, data.y, data.client_id};
  }
  Batch b;
  b.client_id = data.client_id;
  b.X.resize(batch_size, data.X.cols());
  b.y.resize(batch_size);
  for (int j = 0; j < batch_size; ++j) {
    const auto r = static_cast<Eigen::Index>(
        stream.uniform_int(static_cast<std::uint64_t>(data.size())));
    b.X.row(j) = data.X.row(r);
    b.y[j] = data.y[r];
  }
  return b;
}

// index-parallel loop with a fixed assignment of items to workers; results are
// written into per-item slots so scheduling cannot affect the outcome
void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int used = std::min(workers, n);
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mu;
  for (int w = 0; w < used; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += used) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

void FederationConfig::validate() const {
  if (clients < 1) throw config_error("federation: need at least one client");
  if (rounds < 1 || local_steps < 1)
    throw config_error("federation: rounds and local steps must be >= 1");
  if (!(lr > 0.0)) throw config_error("federation: learning rate must be > 0");
  if (lambda <= 0.0 || lambda > 1.0)
    throw config_error("federation: lambda must lie in (0, 1]");
  if (weight_decay < 0.0) throw config_error("federation: weight decay >= 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw config_error("federation: momentum must lie in [0, 1)");
  if (mode == RunMode::fedavg_ref && !shared_target)
    throw config_error("federation: fedavg_ref requires a shared target head");
}

double FederationConfig::lr_at(int round) const {
  if (schedule == LrSchedule::constant) return lr;
  constexpr double pi = 3.1415926535897932384626433832795;
  return lr * 0.5 * (1.0 + std::cos(pi * static_cast<double>(round) / rounds));
}

FederationState init_state(const FederationConfig& cfg, const NetConfig& net,
                           int num_classes, std::uint64_t param_seed) {
  cfg.validate();
  net.validate();
  FederationState st;
  st.shared_target = cfg.shared_target;
  st.global.emb = init_params(net, param_seed);

  // separate substreams so the reference mode (no client head) still draws
  // bit-identical target heads
  Rng client_rng = Rng(param_seed).fork(0x6ead);
  Rng target_rng = Rng(param_seed).fork(0x2ead);
  const bool client_head = cfg.mode == RunMode::feddrm;
  if (client_head) {
    st.global.gamma = Eigen::VectorXd::Zero(cfg.clients);
    st.global.xi.resize(cfg.clients, net.d_h());
    const double bound = std::sqrt(6.0 / (net.d_h() + cfg.clients));
    for (int l = 0; l < cfg.clients; ++l)
      for (int k = 0; k < net.d_h(); ++k)
        st.global.xi(l, k) = client_rng.uniform(-bound, bound);
  } else {
    st.global.gamma.resize(0);
    st.global.xi.resize(0, 0);
  }

  const int head_count = cfg.shared_target ? 1 : cfg.clients;
  const double hbound = std::sqrt(6.0 / (net.d_g() + num_classes));
  st.heads.resize(head_count);
  for (int c = 0; c < head_count; ++c) {
    st.heads[c].alpha = Eigen::VectorXd::Zero(num_classes);
    st.heads[c].beta.resize(num_classes, net.d_g());
    for (int k = 0; k < num_classes; ++k)
      for (int d = 0; d < net.d_g(); ++d)
        st.heads[c].beta(k, d) = target_rng.uniform(-hbound, hbound);
  }

  st.opt.resize(cfg.clients);
  for (int c = 0; c < cfg.clients; ++c) {
    ClientOptState& o = st.opt[c];
    o.v_emb = zeros_like(st.global.emb);
    o.v_gamma = Eigen::VectorXd::Zero(st.global.gamma.size());
    o.v_xi = Eigen::MatrixXd::Zero(st.global.xi.rows(), st.global.xi.cols());
    const Head& ref = st.heads[cfg.shared_target ? 0 : c];
    o.v_target.alpha = Eigen::VectorXd::Zero(ref.alpha.size());
    o.v_target.beta = Eigen::MatrixXd::Zero(ref.beta.rows(), ref.beta.cols());
    o.stream = Rng(cfg.seed).fork(0xc11e, static_cast<std::uint64_t>(c));
  }
  return st;
}

ClientUpdate local_update(const FederationConfig& cfg, const NetConfig& net,
                          const GlobalModel& broadcast, const Head& target_head,
                          ClientOptState& opt, const ClientDataset& data,
                          int round) {
  ClientUpdate u;
  u.emb = broadcast.emb;
  u.gamma = broadcast.gamma;
  u.xi = broadcast.xi;
  u.target = target_head;

  const bool client_head = cfg.mode == RunMode::feddrm;
  const double lr = cfg.lr_at(round);
  for (int step = 0; step < cfg.local_steps; ++step) {
    const Batch batch = make_batch(data, cfg.batch_size, opt.stream);
    LossResult res = reweighted_loss(batch, net, u.emb, u.target, u.gamma, u.xi,
                                     cfg.lambda, cfg.weight_decay, client_head);
    if (!std::isfinite(res.loss.total) || res.loss.total > kDivergenceCap)
      throw divergence_error("divergence at round " + std::to_string(round) +
                             ", client " + std::to_string(data.client_id) +
                             ", local step " + std::to_string(step) + ": loss " +
                             std::to_string(res.loss.total));
    u.last_loss = res.loss;

    if (!net.fixed_embedding) sgd_emb(u.emb, opt.v_emb, res.grads.emb, lr, cfg.momentum);
    if (client_head) {
      sgd_block(u.gamma, opt.v_gamma, res.grads.gamma, lr, cfg.momentum);
      sgd_block(u.xi, opt.v_xi, res.grads.xi, lr, cfg.momentum);
    }
    sgd_block(u.target.alpha, opt.v_target.alpha, res.grads.target.alpha, lr,
              cfg.momentum);
    sgd_block(u.target.beta, opt.v_target.beta, res.grads.target.beta, lr,
              cfg.momentum);
  }
  return u;
}

namespace {

std::vector<double> aggregation_weights(const std::vector<Eigen::Index>& sizes) {
  double total = 0.0;
  for (Eigen::Index n : sizes) total += static_cast<double>(n);
  std::vector<double> w(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i)
    w[i] = static_cast<double>(sizes[i]) / total;
  return w;
}

}  // namespace

GlobalModel aggregate(const std::vector<ClientUpdate>& updates,
                      const std::vector<Eigen::Index>& sizes) {
  if (updates.empty() || updates.size() != sizes.size())
    throw contract_error("aggregate: update/size count mismatch");
  const std::vector<double> w = aggregation_weights(sizes);

  GlobalModel out;
  out.emb = zeros_like(updates[0].emb);
  out.gamma = Eigen::VectorXd::Zero(updates[0].gamma.size());
  out.xi = Eigen::MatrixXd::Zero(updates[0].xi.rows(), updates[0].xi.cols());
  for (std::size_t i = 0; i < updates.size(); ++i) {
    if (updates[i].gamma.size() != out.gamma.size() ||
        updates[i].xi.rows() != out.xi.rows() ||
        updates[i].xi.cols() != out.xi.cols())
      throw contract_error("aggregate: shape mismatch across clients");
    axpy(w[i], updates[i].emb, out.emb);
    out.gamma += w[i] * updates[i].gamma;
    out.xi += w[i] * updates[i].xi;
  }
  return out;
}

Head aggregate_heads(const std::vector<ClientUpdate>& updates,
                     const std::vector<Eigen::Index>& sizes) {
  const std::vector<double> w = aggregation_weights(sizes);
  Head out;
  out.alpha = Eigen::VectorXd::Zero(updates[0].target.alpha.size());
  out.beta = Eigen::MatrixXd::Zero(updates[0].target.beta.rows(),
                                   updates[0].target.beta.cols());
  for (std::size_t i = 0; i < updates.size(); ++i) {
    out.alpha += w[i] * updates[i].target.alpha;
    out.beta += w[i] * updates[i].target.beta;
  }
  return out;
}

FederationState run(const FederationConfig& cfg, const NetConfig& net,
                    const std::vector<ClientDataset>& train, int num_classes,
                    std::uint64_t param_seed, const RoundObserver& observer) {
  return run_from(cfg, net, train, init_state(cfg, net, num_classes, param_seed),
                  observer);
}

FederationState run_from(const FederationConfig& cfg, const NetConfig& net,
                         const std::vector<ClientDataset>& train,
                         FederationState st, const RoundObserver& observer) {
  cfg.validate();
  if (static_cast<int>(train.size()) != cfg.clients)
    throw contract_error("run: dataset count does not match clients");
  for (const ClientDataset& d : train)
    if (d.size() < 1) throw data_error("run: empty client training set");

  std::vector<Eigen::Index> sizes(cfg.clients);
  for (int c = 0; c < cfg.clients; ++c) sizes[c] = train[c].size();

  const int workers = cfg.workers > 0
                          ? cfg.workers
                          : std::max(1u, std::thread::hardware_concurrency());

  std::vector<ClientUpdate> updates(cfg.clients);
  const int first_round = st.round;
  for (int t = first_round; t < first_round + cfg.rounds; ++t) {
    parallel_for(cfg.clients, workers, [&](int c) {
      const Head& head = st.heads[cfg.shared_target ? 0 : c];
      updates[c] = local_update(cfg, net, st.global, head, st.opt[c], train[c], t);
    });

    st.global = aggregate(updates, sizes);
    if (cfg.shared_target) {
      st.heads[0] = aggregate_heads(updates, sizes);
    } else {
      for (int c = 0; c < cfg.clients; ++c) st.heads[c] = updates[c].target;
    }
    st.round = t + 1;
    if (observer) observer(st);
  }
  return st;
}

LossBreakdown global_loss(const FederationConfig& cfg, const NetConfig& net,
                          const FederationState& state,
                          const std::vector<ClientDataset>& train) {
  double total_n = 0.0;
  for (const ClientDataset& d : train) total_n += static_cast<double>(d.size());
  LossBreakdown out;
  const bool client_head = cfg.mode == RunMode::feddrm;
  for (const ClientDataset& d : train) {
    const Head& head = state.heads[state.shared_target ? 0 : d.client_id];
    Batch b{d.X, d.y, d.client_id};
    LossResult r = reweighted_loss(b, net, state.global.emb, head,
                                   state.global.gamma, state.global.xi,
                                   cfg.lambda, cfg.weight_decay, client_head);
    const double w = static_cast<double>(d.size()) / total_n;
    out.client_ce += w * r.loss.client_ce;
    out.target_ce += w * r.loss.target_ce;
    out.l2 += w * r.loss.l2;
    out.total += w * r.loss.total;
  }
  return out;
}

}  // namespace feddrm
