#include <doctest.h>

#include <cmath>

#include "feddrm/federation.hpp"
#include "feddrm/rng.hpp"

using namespace feddrm;

namespace {

NetConfig bench_net(bool fixed = false) {
  NetConfig cfg;
  cfg.input_dim = 2;
  cfg.g_layers = {4, 2};
  cfg.h_layers = {2};
  cfg.sharing = Sharing::deep;
  cfg.activation = Activation::tanh;
  cfg.fixed_embedding = fixed;
  return cfg;
}

std::vector<ClientDataset> toy_clients(int m, int n_per, int num_classes,
                                       std::uint64_t seed) {
  std::vector<ClientDataset> out(m);
  Rng rng(seed);
  for (int c = 0; c < m; ++c) {
    out[c].client_id = c;
    out[c].X.resize(n_per, 2);
    out[c].y.resize(n_per);
    for (int j = 0; j < n_per; ++j) {
      out[c].X(j, 0) = rng.normal() + 1.5 * c;
      out[c].X(j, 1) = rng.normal() - 0.5 * c;
      out[c].y[j] = static_cast<int>(rng.uniform_int(num_classes));
    }
  }
  return out;
}

FederationConfig base_cfg(int m) {
  FederationConfig cfg;
  cfg.clients = m;
  cfg.rounds = 3;
  cfg.local_steps = 2;
  cfg.lr = 0.1;
  cfg.lambda = 0.8;
  cfg.weight_decay = 0.01;
  cfg.seed = 5;
  cfg.workers = 1;
  return cfg;
}

Eigen::VectorXd state_vector(const FederationState& st) {
  Eigen::VectorXd emb = st.global.emb.flatten();
  Eigen::Index n = emb.size() + st.global.gamma.size() + st.global.xi.size();
  for (const Head& h : st.heads) n += h.alpha.size() + h.beta.size();
  Eigen::VectorXd v(n);
  Eigen::Index at = 0;
  v.segment(at, emb.size()) = emb;
  at += emb.size();
  v.segment(at, st.global.gamma.size()) = st.global.gamma;
  at += st.global.gamma.size();
  for (Eigen::Index r = 0; r < st.global.xi.rows(); ++r)
    for (Eigen::Index c = 0; c < st.global.xi.cols(); ++c)
      v[at++] = st.global.xi(r, c);
  for (const Head& h : st.heads) {
    v.segment(at, h.alpha.size()) = h.alpha;
    at += h.alpha.size();
    for (Eigen::Index r = 0; r < h.beta.rows(); ++r)
      for (Eigen::Index c = 0; c < h.beta.cols(); ++c) v[at++] = h.beta(r, c);
  }
  return v;
}

}  // namespace

TEST_SUITE("federation") {

TEST_CASE("config validation") {
  FederationConfig cfg = base_cfg(2);
  cfg.lambda = 0.0;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = base_cfg(2);
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), config_error);
  cfg = base_cfg(2);
  cfg.mode = RunMode::fedavg_ref;
  cfg.shared_target = false;
  CHECK_THROWS_AS(cfg.validate(), config_error);
}

TEST_CASE("cosine schedule starts at lr and decays") {
  FederationConfig cfg = base_cfg(2);
  cfg.rounds = 10;
  cfg.schedule = LrSchedule::cosine;
  CHECK(cfg.lr_at(0) == cfg.lr);
  for (int t = 1; t < 10; ++t) CHECK(cfg.lr_at(t) < cfg.lr_at(t - 1));
  CHECK(cfg.lr_at(10) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("aggregate of identical clients is the identity") {
  const NetConfig net = bench_net();
  FederationConfig cfg = base_cfg(3);
  FederationState st = init_state(cfg, net, 4, 7);
  ClientUpdate u;
  u.emb = st.global.emb;
  u.gamma = st.global.gamma;
  u.xi = st.global.xi;
  u.target = st.heads[0];
  std::vector<ClientUpdate> ups{u, u, u};
  // weights (1/6, 1/3, 1/2) sum to one but round; identity holds to fp noise
  GlobalModel agg = aggregate(ups, {10, 20, 30});
  CHECK((agg.emb.flatten() - st.global.emb.flatten()).cwiseAbs().maxCoeff() <
        1e-15);
  CHECK((agg.gamma - st.global.gamma).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((agg.xi - st.global.xi).cwiseAbs().maxCoeff() < 1e-15);
  // a single client aggregates bit-exactly (weight is exactly 1.0)
  GlobalModel one = aggregate({u}, {10});
  CHECK(one.emb.flatten() == st.global.emb.flatten());
  CHECK(one.xi == st.global.xi);
}

TEST_CASE("aggregation weights are exact sample fractions") {
  ClientUpdate a, b;
  a.gamma = Eigen::VectorXd::Constant(2, 1.0);
  b.gamma = Eigen::VectorXd::Constant(2, 5.0);
  a.xi = Eigen::MatrixXd::Zero(2, 1);
  b.xi = Eigen::MatrixXd::Zero(2, 1);
  a.emb.g.push_back({Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::VectorXd::Zero(1)});
  b.emb.g.push_back({Eigen::MatrixXd::Constant(1, 1, 6.0), Eigen::VectorXd::Zero(1)});
  a.target.alpha = Eigen::VectorXd::Zero(1);
  b.target.alpha = Eigen::VectorXd::Zero(1);
  a.target.beta = Eigen::MatrixXd::Zero(1, 1);
  b.target.beta = Eigen::MatrixXd::Zero(1, 1);
  GlobalModel agg = aggregate({a, b}, {1, 3});
  // 0.25 * 1 + 0.75 * 5 = 4, 0.25 * 2 + 0.75 * 6 = 5
  CHECK(agg.gamma[0] == 4.0);
  CHECK(agg.emb.g[0].W(0, 0) == 5.0);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const NetConfig net = bench_net();
  FederationConfig cfg = base_cfg(2);
  cfg.lr = 0.0;  // local_update itself does not re-validate
  auto data = toy_clients(2, 8, 3, 1);
  FederationState st = init_state(base_cfg(2), net, 3, 2);
  ClientUpdate u = local_update(cfg, net, st.global, st.heads[0], st.opt[0],
                                data[0], 0);
  CHECK(u.emb.flatten() == st.global.emb.flatten());
  CHECK(u.gamma == st.global.gamma);
  CHECK(u.target.alpha == st.heads[0].alpha);
}

TEST_CASE("one full-batch step equals one explicit gradient step") {
  const NetConfig net = bench_net();
  FederationConfig cfg = base_cfg(1);
  cfg.local_steps = 1;
  cfg.batch_size = 0;
  auto data = toy_clients(1, 10, 3, 3);
  data[0].client_id = 0;
  FederationState st = init_state(cfg, net, 3, 4);

  Batch b{data[0].X, data[0].y, 0};
  LossResult ref = reweighted_loss(b, net, st.global.emb, st.heads[0],
                                   st.global.gamma, st.global.xi, cfg.lambda,
                                   cfg.weight_decay);
  ClientUpdate u = local_update(cfg, net, st.global, st.heads[0], st.opt[0],
                                data[0], 0);
  EmbeddingParams expect = st.global.emb;
  axpy(-cfg.lr, ref.grads.emb, expect);
  CHECK(u.emb.flatten() == expect.flatten());
  CHECK(u.gamma == Eigen::VectorXd(st.global.gamma - cfg.lr * ref.grads.gamma));
  CHECK(u.target.alpha ==
        Eigen::VectorXd(st.heads[0].alpha - cfg.lr * ref.grads.target.alpha));
}

TEST_CASE("runs are bitwise reproducible") {
  const NetConfig net = bench_net();
  FederationConfig cfg = base_cfg(3);
  cfg.rounds = 4;
  cfg.batch_size = 4;
  auto data = toy_clients(3, 12, 3, 9);
  FederationState a = run(cfg, net, data, 3, 11);
  FederationState b = run(cfg, net, data, 3, 11);
  CHECK(state_vector(a) == state_vector(b));
}

TEST_CASE("final state is independent of the worker count") {
  const NetConfig net = bench_net();
  FederationConfig cfg = base_cfg(4);
  cfg.rounds = 3;
  cfg.batch_size = 5;
  auto data = toy_clients(4, 10, 3, 13);
  cfg.workers = 1;
  FederationState a = run(cfg, net, data, 3, 11);
  cfg.workers = 4;
  FederationState b = run(cfg, net, data, 3, 11);
  cfg.workers = 3;
  FederationState c = run(cfg, net, data, 3, 11);
  CHECK(state_vector(a) == state_vector(b));
  CHECK(state_vector(a) == state_vector(c));
}

TEST_CASE("single client federation equals centralized SGD bitwise") {
  const NetConfig net = bench_net();
  FederationConfig cfg = base_cfg(1);
  cfg.rounds = 5;
  cfg.local_steps = 3;
  cfg.batch_size = 0;  // full batch keeps the streams trivially aligned
  auto data = toy_clients(1, 14, 3, 21);
  FederationState fed = run(cfg, net, data, 3, 22);

  // centralized: T*E plain SGD steps on the same loss from the same init
  FederationState central = init_state(cfg, net, 3, 22);
  Batch b{data[0].X, data[0].y, 0};
  for (int step = 0; step < cfg.rounds * cfg.local_steps; ++step) {
    LossResult r = reweighted_loss(b, net, central.global.emb, central.heads[0],
                                   central.global.gamma, central.global.xi,
                                   cfg.lambda, cfg.weight_decay);
    axpy(-cfg.lr, r.grads.emb, central.global.emb);
    central.global.gamma -= cfg.lr * r.grads.gamma;
    central.global.xi -= cfg.lr * r.grads.xi;
    central.heads[0].alpha -= cfg.lr * r.grads.target.alpha;
    central.heads[0].beta -= cfg.lr * r.grads.target.beta;
  }
  CHECK(state_vector(fed) == state_vector(central));
}

TEST_CASE("E=1 full batch equals one global gradient step on the shared stack") {
  const NetConfig net = bench_net();
  FederationConfig cfg = base_cfg(3);
  cfg.rounds = 1;
  cfg.local_steps = 1;
  cfg.batch_size = 0;
  cfg.shared_target = true;
  auto data = toy_clients(3, 9, 3, 31);
  FederationState init = init_state(cfg, net, 3, 32);
  FederationState after = run(cfg, net, data, 3, 32);

  // direct global step: zeta - eta * sum w_i grad_i
  double total = 27.0;
  EmbeddingParams emb_grad = zeros_like(init.global.emb);
  Eigen::VectorXd dgamma = Eigen::VectorXd::Zero(3);
  Eigen::MatrixXd dxi = Eigen::MatrixXd::Zero(3, net.d_h());
  Head dhead{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Zero(3, net.d_g())};
  for (int c = 0; c < 3; ++c) {
    Batch b{data[c].X, data[c].y, c};
    LossResult r = reweighted_loss(b, net, init.global.emb, init.heads[0],
                                   init.global.gamma, init.global.xi, cfg.lambda,
                                   cfg.weight_decay);
    const double w = data[c].size() / total;
    axpy(w, r.grads.emb, emb_grad);
    dgamma += w * r.grads.gamma;
    dxi += w * r.grads.xi;
    dhead.alpha += w * r.grads.target.alpha;
    dhead.beta += w * r.grads.target.beta;
  }
  EmbeddingParams expect_emb = init.global.emb;
  axpy(-cfg.lr, emb_grad, expect_emb);
  CHECK((after.global.emb.flatten() - expect_emb.flatten()).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK((after.global.gamma - (init.global.gamma - cfg.lr * dgamma))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK((after.heads[0].alpha - (init.heads[0].alpha - cfg.lr * dhead.alpha))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("lambda = 1 feddrm matches the FedAvg reference path bitwise") {
  const NetConfig net = bench_net();
  auto data = toy_clients(3, 11, 4, 41);

  FederationConfig drm = base_cfg(3);
  drm.lambda = 1.0;
  drm.shared_target = true;
  drm.rounds = 4;
  drm.local_steps = 2;
  FederationState a = run(drm, net, data, 4, 42);

  FederationConfig ref = drm;
  ref.mode = RunMode::fedavg_ref;
  FederationState b = run(ref, net, data, 4, 42);

  // the reference path carries no client head; everything else is bitwise equal
  CHECK(a.global.emb.flatten() == b.global.emb.flatten());
  CHECK(a.heads[0].alpha == b.heads[0].alpha);
  CHECK(a.heads[0].beta == b.heads[0].beta);
  CHECK(b.global.gamma.size() == 0);
}

TEST_CASE("personalization isolation under lambda=1 and frozen embedding") {
  const NetConfig net = bench_net(true);
  FederationConfig cfg = base_cfg(2);
  cfg.lambda = 1.0;
  cfg.rounds = 3;
  auto data = toy_clients(2, 10, 3, 51);
  FederationState a = run(cfg, net, data, 3, 52);

  auto tampered = data;
  tampered[1].X.array() += 2.5;  // client 1 changes, client 0 must not care
  FederationState b = run(cfg, net, tampered, 3, 52);
  CHECK(a.heads[0].alpha == b.heads[0].alpha);
  CHECK(a.heads[0].beta == b.heads[0].beta);
}

TEST_CASE("divergence raises a contextual error") {
  const NetConfig net = bench_net();
  FederationConfig cfg = base_cfg(2);
  cfg.lr = 1e5;
  cfg.rounds = 50;
  cfg.weight_decay = 10.0;
  auto data = toy_clients(2, 8, 3, 61);
  CHECK_THROWS_AS(run(cfg, net, data, 3, 62), divergence_error);
}

TEST_CASE("empty client dataset is rejected") {
  const NetConfig net = bench_net();
  FederationConfig cfg = base_cfg(2);
  auto data = toy_clients(2, 8, 3, 71);
  data[1].X.resize(0, 2);
  data[1].y.resize(0);
  CHECK_THROWS_AS(run(cfg, net, data, 3, 72), data_error);
}

}  // TEST_SUITE
