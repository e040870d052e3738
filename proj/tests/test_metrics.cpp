#include <doctest.h>

#include <cmath>

#include "feddrm/metrics.hpp"
#include "feddrm/rng.hpp"
#include "oracles.hpp"

using namespace feddrm;

namespace {

NetConfig id_net(int p) {
  // single linear layer per path initialized from seed, frozen where needed
  NetConfig cfg;
  cfg.input_dim = p;
  cfg.g_layers = {p};
  cfg.h_layers = {p};
  cfg.sharing = Sharing::deep;
  cfg.activation = Activation::tanh;
  return cfg;
}

// embedding params acting as the identity on both paths
EmbeddingParams identity_params(int p) {
  EmbeddingParams e;
  e.g.push_back({Eigen::MatrixXd::Identity(p, p), Eigen::VectorXd::Zero(p)});
  e.h.push_back({Eigen::MatrixXd::Identity(p, p), Eigen::VectorXd::Zero(p)});
  return e;
}

std::vector<ClientDataset> grid_tests(int m, int n_per, int num_classes,
                                      std::uint64_t seed) {
  std::vector<ClientDataset> out(m);
  Rng rng(seed);
  for (int c = 0; c < m; ++c) {
    out[c].client_id = c;
    out[c].split = Split::test;
    out[c].X.resize(n_per, 2);
    out[c].y.resize(n_per);
    for (int j = 0; j < n_per; ++j) {
      out[c].X(j, 0) = rng.normal() + 3.0 * c;
      out[c].X(j, 1) = rng.normal();
      out[c].y[j] = static_cast<int>(rng.uniform_int(num_classes));
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("routing with a single client always picks it") {
  EmbeddingParams emb = identity_params(2);
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(1);
  Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(1, 2);
  RoutingDecision d = route(0, Eigen::Vector2d(0.3, -1.2), id_net(2), emb, gamma, xi);
  CHECK(d.chosen == 0);
  CHECK(d.client_probs[0] == 1.0);
}

TEST_CASE("exact ties break to the lowest index") {
  EmbeddingParams emb = identity_params(2);
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(3);
  Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(3, 2);
  RoutingDecision d = route(0, Eigen::Vector2d(1.0, 1.0), id_net(2), emb, gamma, xi);
  CHECK(d.chosen == 0);
  // and a two-way tie away from index 0
  gamma << -5.0, 1.0, 1.0;
  d = route(0, Eigen::Vector2d(0.0, 0.0), id_net(2), emb, gamma, xi);
  CHECK(d.chosen == 1);
}

TEST_CASE("routing decisions are invariant to common intercept shifts") {
  EmbeddingParams emb = identity_params(2);
  Rng rng(3);
  Eigen::VectorXd gamma(3);
  gamma << 0.4, -0.2, 0.1;
  Eigen::MatrixXd xi = Eigen::MatrixXd::Random(3, 2);
  for (int i = 0; i < 50; ++i) {
    Eigen::Vector2d x(rng.normal(), rng.normal());
    RoutingDecision a = route(0, x, id_net(2), emb, gamma, xi);
    RoutingDecision b =
        route(0, x, id_net(2), emb, gamma.array() + 11.3, xi);
    CHECK(a.chosen == b.chosen);
  }
}

TEST_CASE("oracle labels give the plain per-client accuracy") {
  // heads built to classify y = 1(x0 > 3c + 1.5) style splits perfectly on
  // well-separated clusters, so oracle routing scores 1.0
  const int m = 2;
  auto tests = grid_tests(m, 60, 2, 5);
  // make labels perfectly determined by x1 sign so one shared rule is exact
  HeadBank bank;
  bank.shared_target = false;
  bank.gamma = Eigen::VectorXd::Zero(m);
  bank.xi.resize(m, 2);
  bank.xi << -5.0, 0.0, 5.0, 0.0;
  bank.gamma << 7.5, -7.5;  // decision boundary at x0 = 1.5
  for (int c = 0; c < m; ++c) {
    Head h;
    h.alpha = Eigen::VectorXd::Zero(2);
    h.beta.resize(2, 2);
    h.beta << 0.0, -10.0, 0.0, 10.0;  // class 1 iff x1 > 0
    bank.target.push_back(h);
  }
  for (auto& d : tests)
    for (Eigen::Index j = 0; j < d.size(); ++j) d.y[j] = d.X(j, 1) > 0 ? 1 : 0;

  NetConfig net = id_net(2);
  EmbeddingParams emb = identity_params(2);
  // tanh squashes nothing here because the identity layer is linear (single
  // layer = no activation), so predictions follow the raw features
  const double oracle = oracle_system_accuracy(net, emb, bank, tests);
  CHECK(oracle == 1.0);
  const double learned = system_accuracy(net, emb, bank, tests);
  CHECK(learned >= 0.95);  // routing rule splits near x0 = 1.5
  CHECK(oracle >= learned - 0.02);
}

TEST_CASE("average accuracy matches a pooled recomputation oracle") {
  const int m = 3;
  auto tests = grid_tests(m, 40, 3, 7);
  HeadBank bank;
  bank.shared_target = false;
  bank.gamma = Eigen::VectorXd::Zero(m);
  bank.xi = Eigen::MatrixXd::Random(m, 2);
  Rng rng(8);
  for (int c = 0; c < m; ++c) {
    Head h;
    h.alpha = Eigen::VectorXd::NullaryExpr(3, [&](Eigen::Index) {
      return rng.uniform(-1.0, 1.0);
    });
    h.beta = Eigen::MatrixXd::NullaryExpr(3, 2, [&](Eigen::Index, Eigen::Index) {
      return rng.uniform(-1.0, 1.0);
    });
    bank.target.push_back(h);
  }
  NetConfig net = id_net(2);
  EmbeddingParams emb = identity_params(2);
  std::vector<Eigen::Index> train_sizes{30, 10, 60};

  const double got = average_accuracy(net, emb, bank, tests, train_sizes);

  // independent recomputation from raw predictions
  double expect = 0.0;
  for (int c = 0; c < m; ++c) {
    double hits = 0.0;
    for (Eigen::Index j = 0; j < tests[c].size(); ++j) {
      Eigen::VectorXd logits = bank.target[c].alpha +
                               bank.target[c].beta * tests[c].X.row(j).transpose();
      int best = 0;
      for (int k = 1; k < 3; ++k)
        if (logits[k] > logits[best]) best = k;
      if (best == tests[c].y[j]) hits += 1.0;
    }
    expect += (train_sizes[c] / 100.0) * (hits / tests[c].size());
  }
  CHECK(std::abs(got - expect) < 1e-12);
}

TEST_CASE("weighted average accuracy: (1.0, 0.0) at sizes (3,1) gives 0.75") {
  auto tests = grid_tests(2, 20, 2, 9);
  HeadBank bank;
  bank.shared_target = false;
  bank.gamma = Eigen::VectorXd::Zero(2);
  bank.xi = Eigen::MatrixXd::Zero(2, 2);
  Head right, wrong;
  right.alpha = Eigen::VectorXd::Zero(2);
  right.beta.resize(2, 2);
  right.beta << 0.0, -10.0, 0.0, 10.0;
  wrong.alpha = Eigen::VectorXd::Zero(2);
  wrong.beta = -right.beta;
  bank.target = {right, wrong};
  for (auto& d : tests)
    for (Eigen::Index j = 0; j < d.size(); ++j) d.y[j] = d.X(j, 1) > 0 ? 1 : 0;
  const double acc = average_accuracy(id_net(2), identity_params(2), bank, tests,
                                      {3, 1});
  CHECK(acc == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("majority vote matches an exhaustive tally oracle") {
  const int m = 3;
  auto tests = grid_tests(m, 25, 4, 11);
  HeadBank bank;
  bank.shared_target = false;
  bank.gamma = Eigen::VectorXd::Zero(m);
  bank.xi = Eigen::MatrixXd::Random(m, 2);
  Rng rng(12);
  for (int c = 0; c < m; ++c) {
    Head h;
    h.alpha = Eigen::VectorXd::NullaryExpr(4, [&](Eigen::Index) {
      return rng.uniform(-1.0, 1.0);
    });
    h.beta = Eigen::MatrixXd::NullaryExpr(4, 2, [&](Eigen::Index, Eigen::Index) {
      return rng.uniform(-1.0, 1.0);
    });
    bank.target.push_back(h);
  }
  NetConfig net = id_net(2);
  EmbeddingParams emb = identity_params(2);
  const double got = majority_vote_accuracy(net, emb, bank, tests);

  double hits = 0.0, n = 0.0;
  for (const auto& d : tests)
    for (Eigen::Index j = 0; j < d.size(); ++j) {
      std::vector<int> tally(4, 0);
      for (int c = 0; c < m; ++c) {
        Eigen::VectorXd logits =
            bank.target[c].alpha + bank.target[c].beta * d.X.row(j).transpose();
        int best = 0;
        for (int k = 1; k < 4; ++k)
          if (logits[k] > logits[best]) best = k;
        ++tally[best];
      }
      int win = 0;
      for (int k = 1; k < 4; ++k)
        if (tally[k] > tally[win]) win = k;
      if (win == d.y[j]) hits += 1.0;
      n += 1.0;
    }
  CHECK(got == doctest::Approx(hits / n).epsilon(1e-12));
}

TEST_CASE("identical data zeroes the class drift but not the client drift") {
  // the class gradients coincide across clients; the client-classification
  // task still drifts because each client's own label differs
  const int m = 3;
  NetConfig net = id_net(2);
  EmbeddingParams emb = identity_params(2);
  std::vector<ClientDataset> train(m);
  Rng rng(13);
  Eigen::MatrixXd X(12, 2);
  Eigen::VectorXi y(12);
  for (int j = 0; j < 12; ++j) {
    X(j, 0) = rng.normal();
    X(j, 1) = rng.normal();
    y[j] = static_cast<int>(rng.uniform_int(3));
  }
  for (int c = 0; c < m; ++c) {
    train[c].client_id = c;
    train[c].X = X;
    train[c].y = y;
  }
  HeadBank bank;
  bank.shared_target = true;
  bank.gamma = Eigen::VectorXd::Zero(m);
  bank.xi = Eigen::MatrixXd::Zero(m, 2);
  Head h;
  h.alpha = Eigen::VectorXd::Zero(3);
  h.beta = Eigen::MatrixXd::Zero(3, 2);
  bank.target = {h};

  DriftReport rep = drift_report(net, emb, bank, train, 0.8);
  CHECK(rep.g_class2 == doctest::Approx(0.0).epsilon(1e-30));
  // closed form at uniform client probabilities: the intercept part of each
  // deviation is 1/m - e_i, contributing 1 - 1/m in total
  CHECK(rep.g_client2 >= 1.0 - 1.0 / m - 1e-12);
}

TEST_CASE("drift decomposition identity is exact") {
  const int m = 4;
  NetConfig net = id_net(2);
  EmbeddingParams emb = identity_params(2);
  auto train = grid_tests(m, 15, 3, 17);
  Rng rng(18);
  HeadBank bank;
  bank.shared_target = false;
  bank.gamma = Eigen::VectorXd::NullaryExpr(m, [&](Eigen::Index) {
    return rng.uniform(-0.5, 0.5);
  });
  bank.xi = Eigen::MatrixXd::NullaryExpr(m, 2, [&](Eigen::Index, Eigen::Index) {
    return rng.uniform(-0.5, 0.5);
  });
  for (int c = 0; c < m; ++c) {
    Head h;
    h.alpha = Eigen::VectorXd::NullaryExpr(3, [&](Eigen::Index) {
      return rng.uniform(-0.5, 0.5);
    });
    h.beta = Eigen::MatrixXd::NullaryExpr(3, 2, [&](Eigen::Index, Eigen::Index) {
      return rng.uniform(-0.5, 0.5);
    });
    bank.target.push_back(h);
  }
  for (double lambda : {0.5, 0.8, 0.99}) {
    DriftReport rep = drift_report(net, emb, bank, train, lambda);
    const double assembled = (1.0 - lambda) * (1.0 - lambda) * rep.g_client2 +
                             lambda * lambda * rep.g_class2;
    CHECK(oracles::rel_err(rep.g_total2, assembled) < 1e-12);
    CHECK(rep.g_client2 >= 0.0);
    CHECK(rep.g_class2 >= 0.0);
  }
}

TEST_CASE("fisher info: two classes, scalar feature, uniform probabilities") {
  Eigen::MatrixXd g(1, 1), h(1, 1);
  const double x = 1.7;
  g(0, 0) = x;
  h(0, 0) = x;
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(2, 1);
  Head head;
  head.alpha = Eigen::VectorXd::Zero(2);
  head.beta = Eigen::MatrixXd::Zero(2, 1);
  FisherInfo info = fisher_info(g, h, gamma, xi, head, 0.0);
  // class-major coords (alpha_0, beta_0, alpha_1, beta_1): the (beta_0,
  // beta_0) entry is 0.25 x^2
  CHECK(info.class_block(1, 1) == doctest::Approx(0.25 * x * x).epsilon(1e-14));
  CHECK(info.client_block(1, 1) == doctest::Approx(0.25 * x * x).epsilon(1e-14));
}

TEST_CASE("fisher blocks are symmetric PSD") {
  Rng rng(21);
  const int n = 40;
  Eigen::MatrixXd g(n, 2), h(n, 2);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < 2; ++k) {
      g(j, k) = rng.normal();
      h(j, k) = rng.normal();
    }
  Eigen::VectorXd gamma(3);
  Eigen::MatrixXd xi(3, 2);
  Head head;
  head.alpha.resize(4);
  head.beta.resize(4, 2);
  for (int i = 0; i < 3; ++i) gamma[i] = rng.uniform(-1.0, 1.0);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 2; ++k) xi(i, k) = rng.uniform(-1.0, 1.0);
  for (int i = 0; i < 4; ++i) head.alpha[i] = rng.uniform(-1.0, 1.0);
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 2; ++k) head.beta(i, k) = rng.uniform(-1.0, 1.0);

  FisherInfo info = fisher_info(g, h, gamma, xi, head, 0.05);
  CHECK((info.client_block - info.client_block.transpose()).cwiseAbs().maxCoeff() <
        1e-14);
  CHECK((info.class_block - info.class_block.transpose()).cwiseAbs().maxCoeff() <
        1e-14);
  CHECK(info.client_min_eig >= -1e-10);
  CHECK(info.class_min_eig >= -1e-10);

  Eigen::MatrixXd assembled = info.assembled(0.8);
  CHECK(assembled.rows() == info.client_block.rows() + info.class_block.rows());
  // the lambda-weighted diagonal blocks plus rho on the diagonal
  CHECK(assembled(0, 0) ==
        doctest::Approx(0.2 * info.client_block(0, 0) + 0.05).epsilon(1e-14));
}

TEST_CASE("fisher info equals the finite-difference Hessian of the mean NLL") {
  Rng rng(23);
  const int n = 30, m = 3, dh = 2;
  Eigen::MatrixXd h(n, dh), g(n, 1);
  std::vector<int> who(n);
  for (int j = 0; j < n; ++j) {
    who[j] = static_cast<int>(rng.uniform_int(m));
    for (int k = 0; k < dh; ++k) h(j, k) = rng.normal();
    g(j, 0) = rng.normal();
  }
  Eigen::VectorXd gamma(m);
  Eigen::MatrixXd xi(m, dh);
  for (int i = 0; i < m; ++i) {
    gamma[i] = rng.uniform(-0.5, 0.5);
    for (int k = 0; k < dh; ++k) xi(i, k) = rng.uniform(-0.5, 0.5);
  }
  Head head;
  head.alpha = Eigen::VectorXd::Zero(2);
  head.beta = Eigen::MatrixXd::Zero(2, 1);

  FisherInfo info = fisher_info(g, h, gamma, xi, head, 0.0);

  // mean client NLL as a function of the class-major client-head coordinates
  auto f = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd gm(m);
    Eigen::MatrixXd x(m, dh);
    for (int l = 0; l < m; ++l) {
      gm[l] = v[l * (1 + dh)];
      for (int k = 0; k < dh; ++k) x(l, k) = v[l * (1 + dh) + 1 + k];
    }
    double nll = 0.0;
    for (int j = 0; j < n; ++j) {
      Eigen::VectorXd logits = gm + x * h.row(j).transpose();
      const double mx = logits.maxCoeff();
      double s = 0.0;
      for (int l = 0; l < m; ++l) s += std::exp(logits[l] - mx);
      nll -= logits[who[j]] - mx - std::log(s);
    }
    return nll / n;
  };
  Eigen::VectorXd at(m * (1 + dh));
  for (int l = 0; l < m; ++l) {
    at[l * (1 + dh)] = gamma[l];
    for (int k = 0; k < dh; ++k) at[l * (1 + dh) + 1 + k] = xi(l, k);
  }
  Eigen::MatrixXd fd = oracles::fd_hessian(f, at, 1e-5);
  for (Eigen::Index a = 0; a < fd.rows(); ++a)
    for (Eigen::Index b = 0; b < fd.cols(); ++b)
      CHECK(oracles::rel_err(info.client_block(a, b), fd(a, b)) < 1e-4);
}

TEST_CASE("bayes router picks the nearest tilt under equal priors") {
  Eigen::MatrixXd xi(3, 2);
  xi << 0.0, 0.0, 6.0, 0.0, 0.0, 6.0;
  Eigen::VectorXd gamma(3);
  for (int i = 0; i < 3; ++i) gamma[i] = -0.5 * xi.row(i).squaredNorm();
  std::vector<Eigen::Index> sizes{100, 100, 100};
  CHECK(bayes_route(Eigen::Vector2d(0.1, -0.2), gamma, xi, sizes) == 0);
  CHECK(bayes_route(Eigen::Vector2d(5.8, 0.3), gamma, xi, sizes) == 1);
  CHECK(bayes_route(Eigen::Vector2d(0.4, 6.2), gamma, xi, sizes) == 2);
}

}  // TEST_SUITE
