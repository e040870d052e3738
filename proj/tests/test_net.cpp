#include <doctest.h>

#include <cmath>

#include "feddrm/net.hpp"
#include "feddrm/rng.hpp"
#include "oracles.hpp"

using namespace feddrm;

namespace {

NetConfig small_cfg(Sharing sharing = Sharing::deep,
                    Activation act = Activation::tanh) {
  NetConfig cfg;
  cfg.input_dim = 3;
  cfg.g_layers = {5, 4};
  cfg.h_layers = {4, 2};
  cfg.sharing = sharing;
  cfg.activation = act;
  return cfg;
}

Eigen::VectorXd random_vec(int n, Rng& rng, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.uniform(-1.0, 1.0);
  return v;
}

}  // namespace

TEST_SUITE("net") {

TEST_CASE("init is deterministic in the seed") {
  const NetConfig cfg = small_cfg();
  EmbeddingParams a = init_params(cfg, 7);
  EmbeddingParams b = init_params(cfg, 7);
  CHECK(a.flatten() == b.flatten());
  EmbeddingParams c = init_params(cfg, 8);
  CHECK(a.flatten() != c.flatten());
}

TEST_CASE("init biases are exactly zero") {
  EmbeddingParams p = init_params(small_cfg(), 3);
  for (const Layer& l : p.g) CHECK(l.b.cwiseAbs().maxCoeff() == 0.0);
  for (const Layer& l : p.h) CHECK(l.b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("init weights respect the fan bound") {
  NetConfig cfg;
  cfg.input_dim = 4;
  cfg.g_layers = {8};
  cfg.h_layers = {2};
  cfg.sharing = Sharing::deep;
  EmbeddingParams p = init_params(cfg, 0);
  const double bound = std::sqrt(6.0 / 12.0);  // fan_in 4, fan_out 8
  CHECK(p.g[0].W.cwiseAbs().maxCoeff() <= bound);
  CHECK(p.g[0].W.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("invalid widths raise config_error") {
  NetConfig cfg = small_cfg();
  cfg.g_layers = {4, 0};
  CHECK_THROWS_AS(init_params(cfg, 0), config_error);
  cfg = small_cfg();
  cfg.input_dim = 0;
  CHECK_THROWS_AS(init_params(cfg, 0), config_error);
  cfg = small_cfg();
  cfg.h_layers.clear();
  CHECK_THROWS_AS(init_params(cfg, 0), config_error);
}

TEST_CASE("zero weights propagate to zero embeddings under relu") {
  const NetConfig cfg = small_cfg(Sharing::deep, Activation::relu);
  EmbeddingParams p = init_params(cfg, 1);
  scale(0.0, p);
  Rng rng(4);
  Eigen::VectorXd x = random_vec(cfg.input_dim, rng);
  ForwardResult fr = forward(x, p, cfg);
  CHECK(fr.g.cwiseAbs().maxCoeff() == 0.0);
  CHECK(fr.h.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("deep sharing: theta perturbation moves both embeddings") {
  const NetConfig cfg = small_cfg();
  EmbeddingParams p = init_params(cfg, 5);
  Rng rng(6);
  Eigen::VectorXd x = random_vec(cfg.input_dim, rng);
  ForwardResult before = forward(x, p, cfg);
  p.g[0].W(0, 0) += 0.25;
  ForwardResult after = forward(x, p, cfg);
  CHECK((before.g - after.g).cwiseAbs().maxCoeff() > 0.0);
  CHECK((before.h - after.h).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("non-finite input raises numeric_error") {
  const NetConfig cfg = small_cfg();
  EmbeddingParams p = init_params(cfg, 5);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(cfg.input_dim);
  x[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(forward(x, p, cfg), numeric_error);
}

TEST_CASE("forward matches an independent reimplementation") {
  for (Sharing sharing : {Sharing::none, Sharing::shallow, Sharing::mid,
                          Sharing::deep}) {
    NetConfig cfg;
    cfg.input_dim = 4;
    cfg.g_layers = {6, 5, 3};
    cfg.h_layers = {4, 2};
    cfg.sharing = sharing;
    cfg.activation = Activation::tanh;
    EmbeddingParams p = init_params(cfg, 17);
    Rng rng(18);
    for (int trial = 0; trial < 10; ++trial) {
      Eigen::VectorXd x = random_vec(cfg.input_dim, rng, 2.0);
      ForwardResult fr = forward(x, p, cfg);
      std::vector<Eigen::MatrixXd> gw, hw;
      std::vector<Eigen::VectorXd> gb, hb;
      for (const Layer& l : p.g) {
        gw.push_back(l.W);
        gb.push_back(l.b);
      }
      for (const Layer& l : p.h) {
        hw.push_back(l.W);
        hb.push_back(l.b);
      }
      Eigen::VectorXd g_ref, h_ref;
      oracles::mlp_forward_reference(x, gw, gb, hw, hb, cfg.fork_layer(), true,
                                     g_ref, h_ref);
      CHECK((fr.g - g_ref).cwiseAbs().maxCoeff() == 0.0);
      CHECK((fr.h - h_ref).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("zero upstream gradients give zero parameter gradients") {
  const NetConfig cfg = small_cfg();
  EmbeddingParams p = init_params(cfg, 9);
  Rng rng(10);
  Eigen::VectorXd x = random_vec(cfg.input_dim, rng);
  ForwardResult fr = forward(x, p, cfg);
  EmbeddingParams g = backward(cfg, p, fr.cache, Eigen::VectorXd::Zero(cfg.d_g()),
                               Eigen::VectorXd::Zero(cfg.d_h()));
  CHECK(g.flatten().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fixed embedding short-circuits to zero gradients") {
  NetConfig cfg = small_cfg();
  cfg.fixed_embedding = true;
  EmbeddingParams p = init_params(cfg, 9);
  Rng rng(11);
  Eigen::VectorXd x = random_vec(cfg.input_dim, rng);
  ForwardResult fr = forward(x, p, cfg);
  EmbeddingParams g = backward(cfg, p, fr.cache, random_vec(cfg.d_g(), rng),
                               random_vec(cfg.d_h(), rng));
  CHECK(g.flatten().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward matches central finite differences") {
  for (Sharing sharing : {Sharing::none, Sharing::shallow, Sharing::mid,
                          Sharing::deep}) {
    NetConfig cfg;
    cfg.input_dim = 3;
    cfg.g_layers = {4, 3};
    cfg.h_layers = {3, 2};
    cfg.sharing = sharing;
    cfg.activation = Activation::tanh;  // smooth, required for 1e-5 agreement
    EmbeddingParams p = init_params(cfg, 23);
    Rng rng(24);
    Eigen::VectorXd x = random_vec(cfg.input_dim, rng);
    Eigen::VectorXd gg = random_vec(cfg.d_g(), rng);
    Eigen::VectorXd gh = random_vec(cfg.d_h(), rng);

    ForwardResult fr = forward(x, p, cfg);
    Eigen::VectorXd analytic = backward(cfg, p, fr.cache, gg, gh).flatten();

    EmbeddingParams probe = p;
    auto f = [&](const Eigen::VectorXd& theta) {
      probe.unflatten(theta);
      ForwardResult r = forward(x, probe, cfg);
      return gg.dot(r.g) + gh.dot(r.h);
    };
    Eigen::VectorXd numeric = oracles::fd_gradient(f, p.flatten(), 1e-6);
    for (Eigen::Index i = 0; i < numeric.size(); ++i)
      CHECK(oracles::rel_err(analytic[i], numeric[i]) < 1e-5);
  }
}

TEST_CASE("no sharing: h-side loss has zero gradient on theta") {
  const NetConfig cfg = small_cfg(Sharing::none);
  EmbeddingParams p = init_params(cfg, 31);
  Rng rng(32);
  Eigen::VectorXd x = random_vec(cfg.input_dim, rng);
  ForwardResult fr = forward(x, p, cfg);
  EmbeddingParams g = backward(cfg, p, fr.cache, Eigen::VectorXd::Zero(cfg.d_g()),
                               random_vec(cfg.d_h(), rng));
  for (const Layer& l : g.g) {
    CHECK(l.W.cwiseAbs().maxCoeff() == 0.0);
    CHECK(l.b.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("gradient shape mismatch raises contract_error") {
  const NetConfig cfg = small_cfg();
  EmbeddingParams p = init_params(cfg, 31);
  Rng rng(33);
  ForwardResult fr = forward(random_vec(cfg.input_dim, rng), p, cfg);
  CHECK_THROWS_AS(backward(cfg, p, fr.cache, Eigen::VectorXd::Zero(cfg.d_g() + 1),
                           Eigen::VectorXd::Zero(cfg.d_h())),
                  contract_error);
}

TEST_CASE("flatten and unflatten round-trip bit exactly") {
  EmbeddingParams p = init_params(small_cfg(), 77);
  Eigen::VectorXd flat = p.flatten();
  EmbeddingParams q = zeros_like(p);
  q.unflatten(flat);
  CHECK(q.flatten() == flat);
}

TEST_CASE("fork layer follows the sharing mode") {
  NetConfig cfg = small_cfg();
  cfg.g_layers = {8, 6, 4, 2};
  cfg.sharing = Sharing::none;
  CHECK(cfg.fork_layer() == 0);
  CHECK(cfg.fork_dim() == cfg.input_dim);
  cfg.sharing = Sharing::shallow;
  CHECK(cfg.fork_layer() == 1);
  CHECK(cfg.fork_dim() == 8);
  cfg.sharing = Sharing::mid;
  CHECK(cfg.fork_layer() == 2);  // ceil(4/2)
  cfg.sharing = Sharing::deep;
  CHECK(cfg.fork_layer() == 4);
  CHECK(cfg.fork_dim() == 2);
}

}  // TEST_SUITE
