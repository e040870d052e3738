#include <benchmark/benchmark.h>

#include "feddrm/el.hpp"
#include "feddrm/federation.hpp"
#include "feddrm/loss.hpp"
#include "feddrm/partition.hpp"
#include "feddrm/rng.hpp"

using namespace feddrm;

namespace {

NetConfig bench_net(int input_dim) {
  NetConfig cfg;
  cfg.input_dim = input_dim;
  cfg.g_layers = {32, 16};
  cfg.h_layers = {16, 8};
  cfg.activation = Activation::relu;
  return cfg;
}

Batch random_batch(int n, int input_dim, int num_classes, std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.X = Eigen::MatrixXd::NullaryExpr(n, input_dim, [&](Eigen::Index, Eigen::Index) {
    return rng.normal();
  });
  b.y.resize(n);
  for (int j = 0; j < n; ++j) b.y[j] = static_cast<int>(rng.uniform_int(num_classes));
  b.client_id = 0;
  return b;
}

void BM_forward(benchmark::State& state) {
  const NetConfig cfg = bench_net(16);
  EmbeddingParams p = init_params(cfg, 1);
  Rng rng(2);
  Eigen::VectorXd x = Eigen::VectorXd::NullaryExpr(16, [&](Eigen::Index) {
    return rng.normal();
  });
  for (auto _ : state) {
    ForwardResult fr = forward(x, p, cfg);
    benchmark::DoNotOptimize(fr.g.sum());
  }
}
BENCHMARK(BM_forward);

void BM_reweighted_loss(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const NetConfig cfg = bench_net(16);
  EmbeddingParams emb = init_params(cfg, 1);
  Rng rng(3);
  Head head;
  head.alpha = Eigen::VectorXd::Zero(10);
  head.beta = Eigen::MatrixXd::NullaryExpr(10, cfg.d_g(), [&](Eigen::Index, Eigen::Index) {
    return 0.1 * rng.normal();
  });
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(4);
  Eigen::MatrixXd xi = Eigen::MatrixXd::NullaryExpr(4, cfg.d_h(), [&](Eigen::Index, Eigen::Index) {
    return 0.1 * rng.normal();
  });
  Batch b = random_batch(n, 16, 10, 4);
  for (auto _ : state) {
    LossResult r = reweighted_loss(b, cfg, emb, head, gamma, xi, 0.8, 1e-4);
    benchmark::DoNotOptimize(r.loss.total);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_reweighted_loss)->Arg(32)->Arg(128)->Arg(512);

void BM_el_solve(benchmark::State& state) {
  const int per_client = static_cast<int>(state.range(0));
  Rng rng(5);
  const int m = 4;
  Eigen::MatrixXd h(m * per_client, 2);
  std::vector<int> who;
  for (int l = 0; l < m; ++l)
    for (int j = 0; j < per_client; ++j) {
      who.push_back(l);
      h(l * per_client + j, 0) = rng.normal();
      h(l * per_client + j, 1) = rng.normal();
    }
  Eigen::MatrixXd xi = Eigen::MatrixXd::NullaryExpr(m, 2, [&](Eigen::Index, Eigen::Index) {
    return 0.3 * rng.normal();
  });
  Eigen::VectorXd gamma(m);
  for (int l = 0; l < m; ++l) {
    double mean = 0.0;
    for (int r = 0; r < m * per_client; ++r)
      mean += std::exp(xi.row(l).dot(h.row(r)));
    gamma[l] = -std::log(mean / (m * per_client));
  }
  TiltMatrix t = make_tilts(h, who, m, gamma, xi);
  for (auto _ : state) {
    MultiplierResult r = solve_multipliers(t);
    benchmark::DoNotOptimize(r.rho.sum());
  }
}
BENCHMARK(BM_el_solve)->Arg(16)->Arg(64)->Arg(256);

void BM_federated_round(benchmark::State& state) {
  const NetConfig cfg = bench_net(8);
  const int m = 4;
  std::vector<ClientDataset> train(m);
  Rng rng(6);
  for (int c = 0; c < m; ++c) {
    train[c].client_id = c;
    train[c].X = Eigen::MatrixXd::NullaryExpr(256, 8, [&](Eigen::Index, Eigen::Index) {
      return rng.normal() + c;
    });
    train[c].y.resize(256);
    for (int j = 0; j < 256; ++j) train[c].y[j] = static_cast<int>(rng.uniform_int(5));
  }
  FederationConfig fed;
  fed.clients = m;
  fed.rounds = 1;
  fed.local_steps = 2;
  fed.lr = 0.1;
  fed.lambda = 0.8;
  fed.batch_size = 64;
  fed.seed = 7;
  fed.workers = 1;
  for (auto _ : state) {
    FederationState st = run(fed, cfg, train, 5, 8);
    benchmark::DoNotOptimize(st.global.gamma.sum());
  }
}
BENCHMARK(BM_federated_round);

void BM_dirichlet_partition(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i % 10;
  for (auto _ : state) {
    PartitionResult res = dirichlet_partition(labels, 8, 0.3, 9);
    benchmark::DoNotOptimize(res.assignment.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_dirichlet_partition)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
