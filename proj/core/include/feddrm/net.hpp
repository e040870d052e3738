#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "feddrm/errors.hpp"
#include "feddrm/rng.hpp"

namespace feddrm {

enum class Sharing { none, shallow, mid, deep };
enum class Activation { relu, tanh };

// Two-branch MLP embedding: a main path g(x) feeding the target heads and a
// branch h(.) feeding the client head.  The branch forks off the main path at
// a depth controlled by the sharing mode:
//   none    -> h consumes the raw input (disjoint parameter sets),
//   shallow -> h forks after main-path layer 1,
//   mid     -> h forks after main-path layer ceil(depth/2),
//   deep    -> h consumes the final g output.
// Hidden layers are activated; the last layer of each path is linear.
struct NetConfig {
  int input_dim = 0;
  std::vector<int> g_layers;  // widths; back() is the g embedding dim
  std::vector<int> h_layers;  // widths; back() is the h embedding dim
  Sharing sharing = Sharing::deep;
  Activation activation = Activation::relu;
  bool fixed_embedding = false;  // freeze both branches: backward returns zeros

  int d_g() const { return g_layers.back(); }
  int d_h() const { return h_layers.back(); }

  // index of the main-path layer after which the branch forks; 0 = raw input
  int fork_layer() const {
    const int depth = static_cast<int>(g_layers.size());
    switch (sharing) {
      case Sharing::none: return 0;
      case Sharing::shallow: return 1;
      case Sharing::mid: return (depth + 1) / 2;
      case Sharing::deep: return depth;
    }
    return depth;
  }

  // width of the branch input
  int fork_dim() const {
    const int f = fork_layer();
    return f == 0 ? input_dim : g_layers[f - 1];
  }

  void validate() const;  // throws config_error
};

struct Layer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;  // out
};

struct EmbeddingParams {
  std::vector<Layer> g;
  std::vector<Layer> h;

  std::size_t count() const;
  Eigen::VectorXd flatten() const;
  // inverse of flatten; shapes taken from the current layers. bit-exact round trip
  void unflatten(const Eigen::VectorXd& v);
  double squared_norm() const;
};

// activations per layer kept for the backward pass
struct ForwardCache {
  Eigen::VectorXd input;
  std::vector<Eigen::VectorXd> g_pre;  // pre-activation per main layer
  std::vector<Eigen::VectorXd> g_out;  // post-activation (last layer: linear)
  std::vector<Eigen::VectorXd> h_pre;
  std::vector<Eigen::VectorXd> h_out;
};

struct ForwardResult {
  Eigen::VectorXd g;
  Eigen::VectorXd h;
  ForwardCache cache;
};

// uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases; deterministic in seed
EmbeddingParams init_params(const NetConfig& cfg, std::uint64_t seed);

// throws numeric_error on non-finite input, contract_error on shape mismatch
ForwardResult forward(const Eigen::VectorXd& x, const EmbeddingParams& p,
                      const NetConfig& cfg);

// exact reverse-mode gradient of <grad_g, g> + <grad_h, h> w.r.t. all weights.
// cfg.fixed_embedding short-circuits to zeros.
EmbeddingParams backward(const NetConfig& cfg, const EmbeddingParams& p,
                         const ForwardCache& cache, const Eigen::VectorXd& grad_g,
                         const Eigen::VectorXd& grad_h);

// zero-valued gradient holder with the same shapes as p
EmbeddingParams zeros_like(const EmbeddingParams& p);

// in-place axpy over every weight: dst += a * src  (shapes must match)
void axpy(double a, const EmbeddingParams& src, EmbeddingParams& dst);
// in-place scale
void scale(double a, EmbeddingParams& p);

}  // namespace feddrm
