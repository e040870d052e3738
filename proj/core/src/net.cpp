#include "feddrm/net.hpp"

#include <cmath>

namespace feddrm {

namespace {

double act(double v, Activation a) {
  return a == Activation::relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
}

// derivative expressed through the pre-activation value; relu'(0) := 0
double act_grad(double pre, Activation a) {
  if (a == Activation::relu) return pre > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(pre);
  return 1.0 - t * t;
}

Eigen::VectorXd apply_act(const Eigen::VectorXd& pre, Activation a) {
  Eigen::VectorXd out(pre.size());
  for (Eigen::Index i = 0; i < pre.size(); ++i) out[i] = act(pre[i], a);
  return out;
}

// runs one path; last layer stays linear
void run_path(const std::vector<Layer>& layers, const Eigen::VectorXd& input,
              Activation a, std::vector<Eigen::VectorXd>& pre,
              std::vector<Eigen::VectorXd>& out) {
  pre.clear();
  out.clear();
  const Eigen::VectorXd* cur = &input;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].W.cols() != cur->size())
      throw contract_error("forward: layer input width mismatch");
    pre.push_back(layers[k].W * (*cur) + layers[k].b);
    if (k + 1 < layers.size())
      out.push_back(apply_act(pre.back(), a));
    else
      out.push_back(pre.back());
    cur = &out.back();
  }
}

// reverse sweep through one path. grad_out[k] accumulates d/d(out of layer k);
// entries may be preloaded with injected gradients (branch fork, head grads).
// Returns the gradient w.r.t. the path input.
Eigen::VectorXd back_path(const std::vector<Layer>& layers,
                          const Eigen::VectorXd& input, Activation a,
                          const std::vector<Eigen::VectorXd>& pre,
                          const std::vector<Eigen::VectorXd>& out,
                          std::vector<Eigen::VectorXd>& grad_out,
                          std::vector<Layer>& grad_layers) {
  const int depth = static_cast<int>(layers.size());
  Eigen::VectorXd d_in;
  for (int k = depth - 1; k >= 0; --k) {
    Eigen::VectorXd delta = grad_out[k];
    if (k < depth - 1) {
      for (Eigen::Index i = 0; i < delta.size(); ++i)
        delta[i] *= act_grad(pre[k][i], a);
    }
    const Eigen::VectorXd& in = k == 0 ? input : out[k - 1];
    grad_layers[k].W += delta * in.transpose();
    grad_layers[k].b += delta;
    d_in = layers[k].W.transpose() * delta;
    if (k > 0) grad_out[k - 1] += d_in;
  }
  return d_in;
}

}  // namespace

void NetConfig::validate() const {
  if (input_dim < 1) throw config_error("net: input_dim must be >= 1");
  if (g_layers.empty() || h_layers.empty())
    throw config_error("net: both paths need at least one layer");
  for (int w : g_layers)
    if (w < 1) throw config_error("net: g layer width must be >= 1");
  for (int w : h_layers)
    if (w < 1) throw config_error("net: h layer width must be >= 1");
}

std::size_t EmbeddingParams::count() const {
  std::size_t n = 0;
  for (const Layer& l : g) n += static_cast<std::size_t>(l.W.size() + l.b.size());
  for (const Layer& l : h) n += static_cast<std::size_t>(l.W.size() + l.b.size());
  return n;
}

Eigen::VectorXd EmbeddingParams::flatten() const {
  Eigen::VectorXd v(count());
  Eigen::Index at = 0;
  auto put = [&](const std::vector<Layer>& ls) {
    for (const Layer& l : ls) {
      for (Eigen::Index c = 0; c < l.W.cols(); ++c)
        for (Eigen::Index r = 0; r < l.W.rows(); ++r) v[at++] = l.W(r, c);
      for (Eigen::Index r = 0; r < l.b.size(); ++r) v[at++] = l.b[r];
    }
  };
  put(g);
  put(h);
  return v;
}

void EmbeddingParams::unflatten(const Eigen::VectorXd& v) {
  if (static_cast<std::size_t>(v.size()) != count())
    throw contract_error("unflatten: size mismatch");
  Eigen::Index at = 0;
  auto take = [&](std::vector<Layer>& ls) {
    for (Layer& l : ls) {
      for (Eigen::Index c = 0; c < l.W.cols(); ++c)
        for (Eigen::Index r = 0; r < l.W.rows(); ++r) l.W(r, c) = v[at++];
      for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b[r] = v[at++];
    }
  };
  take(g);
  take(h);
}

double EmbeddingParams::squared_norm() const {
  double s = 0.0;
  for (const Layer& l : g) s += l.W.squaredNorm() + l.b.squaredNorm();
  for (const Layer& l : h) s += l.W.squaredNorm() + l.b.squaredNorm();
  return s;
}

EmbeddingParams init_params(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  EmbeddingParams p;
  auto make_path = [&](const std::vector<int>& widths, int in_dim) {
    std::vector<Layer> layers;
    int prev = in_dim;
    for (int w : widths) {
      Layer l;
      l.W.resize(w, prev);
      const double bound = std::sqrt(6.0 / (prev + w));
      for (Eigen::Index r = 0; r < l.W.rows(); ++r)
        for (Eigen::Index c = 0; c < l.W.cols(); ++c)
          l.W(r, c) = rng.uniform(-bound, bound);
      l.b = Eigen::VectorXd::Zero(w);
      layers.push_back(std::move(l));
      prev = w;
    }
    return layers;
  };
  p.g = make_path(cfg.g_layers, cfg.input_dim);
  p.h = make_path(cfg.h_layers, cfg.fork_dim());
  return p;
}

ForwardResult forward(const Eigen::VectorXd& x, const EmbeddingParams& p,
                      const NetConfig& cfg) {
  if (x.size() != cfg.input_dim) throw contract_error("forward: input size mismatch");
  if (!x.allFinite()) throw numeric_error("forward: non-finite input");

  ForwardResult r;
  r.cache.input = x;
  run_path(p.g, x, cfg.activation, r.cache.g_pre, r.cache.g_out);
  const int fork = cfg.fork_layer();
  const Eigen::VectorXd& h_in = fork == 0 ? r.cache.input : r.cache.g_out[fork - 1];
  run_path(p.h, h_in, cfg.activation, r.cache.h_pre, r.cache.h_out);
  r.g = r.cache.g_out.back();
  r.h = r.cache.h_out.back();
  return r;
}

EmbeddingParams backward(const NetConfig& cfg, const EmbeddingParams& p,
                         const ForwardCache& cache, const Eigen::VectorXd& grad_g,
                         const Eigen::VectorXd& grad_h) {
  if (cache.g_out.size() != p.g.size() || cache.h_out.size() != p.h.size())
    throw contract_error("backward: cache does not match parameters");
  if (grad_g.size() != cfg.d_g() || grad_h.size() != cfg.d_h())
    throw contract_error("backward: embedding gradient size mismatch");

  EmbeddingParams grad = zeros_like(p);
  if (cfg.fixed_embedding) return grad;

  const int fork = cfg.fork_layer();
  const Eigen::VectorXd& h_in = fork == 0 ? cache.input : cache.g_out[fork - 1];

  std::vector<Eigen::VectorXd> h_grad_out(p.h.size());
  for (std::size_t k = 0; k < p.h.size(); ++k)
    h_grad_out[k] = Eigen::VectorXd::Zero(cache.h_out[k].size());
  h_grad_out.back() = grad_h;
  const Eigen::VectorXd d_fork =
      back_path(p.h, h_in, cfg.activation, cache.h_pre, cache.h_out, h_grad_out,
                grad.h);

  std::vector<Eigen::VectorXd> g_grad_out(p.g.size());
  for (std::size_t k = 0; k < p.g.size(); ++k)
    g_grad_out[k] = Eigen::VectorXd::Zero(cache.g_out[k].size());
  g_grad_out.back() += grad_g;
  if (fork > 0) g_grad_out[fork - 1] += d_fork;
  back_path(p.g, cache.input, cfg.activation, cache.g_pre, cache.g_out, g_grad_out,
            grad.g);
  return grad;
}

EmbeddingParams zeros_like(const EmbeddingParams& p) {
  EmbeddingParams z;
  auto zero_path = [](const std::vector<Layer>& ls) {
    std::vector<Layer> out;
    out.reserve(ls.size());
    for (const Layer& l : ls)
      out.push_back({Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()),
                     Eigen::VectorXd::Zero(l.b.size())});
    return out;
  };
  z.g = zero_path(p.g);
  z.h = zero_path(p.h);
  return z;
}

void axpy(double a, const EmbeddingParams& src, EmbeddingParams& dst) {
  if (src.g.size() != dst.g.size() || src.h.size() != dst.h.size())
    throw contract_error("axpy: layer count mismatch");
  for (std::size_t k = 0; k < src.g.size(); ++k) {
    dst.g[k].W += a * src.g[k].W;
    dst.g[k].b += a * src.g[k].b;
  }
  for (std::size_t k = 0; k < src.h.size(); ++k) {
    dst.h[k].W += a * src.h[k].W;
    dst.h[k].b += a * src.h[k].b;
  }
}

void scale(double a, EmbeddingParams& p) {
  for (Layer& l : p.g) {
    l.W *= a;
    l.b *= a;
  }
  for (Layer& l : p.h) {
    l.W *= a;
    l.b *= a;
  }
}

}  // namespace feddrm
