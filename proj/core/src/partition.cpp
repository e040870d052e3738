#include "feddrm/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "feddrm/rng.hpp"

namespace feddrm {

namespace {

int max_label(const std::vector<int>& labels) {
  int mx = -1;
  for (int l : labels) {
    if (l < 0) throw data_error("partition: negative label");
    mx = std::max(mx, l);
  }
  return mx;
}

}  // namespace

PartitionResult dirichlet_partition(const std::vector<int>& labels, int m,
                                    double alpha, std::uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  if (m < 1) throw config_error("dirichlet_partition: m must be >= 1");
  if (alpha <= 0.0) throw config_error("dirichlet_partition: alpha must be > 0");
  if (n < m) throw partition_error("dirichlet_partition: fewer samples than clients");
  const int num_classes = max_label(labels) + 1;

  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng = Rng(seed).fork(0xd1, attempt);
    PartitionResult res;
    res.assignment.assign(n, 0);
    if (m == 1) return res;

    // per class, in ascending class order: one Dirichlet draw then one
    // categorical draw per sample of that class in dataset order
    for (int k = 0; k < num_classes; ++k) {
      const std::vector<double> prop = rng.dirichlet(alpha, m);
      for (int j = 0; j < n; ++j)
        if (labels[j] == k) res.assignment[j] = rng.categorical(prop);
    }

    std::vector<int> sizes(m, 0);
    for (int c : res.assignment) ++sizes[c];
    if (std::all_of(sizes.begin(), sizes.end(), [](int s) { return s > 0; }))
      return res;
  }
  throw partition_error("dirichlet_partition: empty client after 100 redraws");
}

PartitionResult shard_partition(const std::vector<int>& labels, int m, int S,
                                std::uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  if (m < 1 || S < 1) throw config_error("shard_partition: m and S must be >= 1");
  const int num_shards = m * S;
  if (num_shards > n)
    throw partition_error("shard_partition: m*S exceeds the sample count");
  max_label(labels);

  // stable class sort: order by (label, original index)
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return labels[a] < labels[b]; });

  const int shard_size = n / num_shards;
  PartitionResult res;
  res.assignment.assign(n, -1);
  res.dropped = n - shard_size * num_shards;

  std::vector<int> shard_ids(num_shards);
  std::iota(shard_ids.begin(), shard_ids.end(), 0);
  Rng rng = Rng(seed).fork(0x5a);
  rng.shuffle(shard_ids);

  for (int s = 0; s < num_shards; ++s) {
    const int client = s / S;  // client c takes shards perm[c*S .. c*S+S)
    const int shard = shard_ids[s];
    for (int j = shard * shard_size; j < (shard + 1) * shard_size; ++j)
      res.assignment[order[j]] = client;
  }
  return res;
}

std::vector<Split> train_test_split(const std::vector<int>& assignment, int m,
                                    double train_fraction, std::uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction > 1.0)
    throw config_error("train_test_split: fraction must lie in (0, 1]");
  std::vector<Split> out(assignment.size(), Split::test);
  for (int c = 0; c < m; ++c) {
    std::vector<int> idx;
    for (std::size_t j = 0; j < assignment.size(); ++j)
      if (assignment[j] == c) idx.push_back(static_cast<int>(j));
    Rng rng = Rng(seed).fork(0x7073, static_cast<std::uint64_t>(c));
    rng.shuffle(idx);
    const int n_train = static_cast<int>(
        std::floor(train_fraction * static_cast<double>(idx.size()) + 0.5));
    for (int j = 0; j < static_cast<int>(idx.size()); ++j)
      out[idx[j]] = j < n_train ? Split::train : Split::test;
  }
  return out;
}

std::vector<ClientDataset> gather_clients(const Eigen::MatrixXd& X,
                                          const Eigen::VectorXi& y,
                                          const std::vector<int>& assignment,
                                          const std::vector<Split>& split, int m,
                                          Split which) {
  if (static_cast<Eigen::Index>(assignment.size()) != X.rows() ||
      static_cast<Eigen::Index>(split.size()) != X.rows() || y.size() != X.rows())
    throw contract_error("gather_clients: size mismatch");
  std::vector<std::vector<int>> members(m);
  for (std::size_t j = 0; j < assignment.size(); ++j) {
    if (assignment[j] < 0) continue;  // dropped by the partitioner
    if (assignment[j] >= m) throw contract_error("gather_clients: bad client id");
    if (split[j] == which) members[assignment[j]].push_back(static_cast<int>(j));
  }
  std::vector<ClientDataset> out(m);
  for (int c = 0; c < m; ++c) {
    out[c].client_id = c;
    out[c].split = which;
    out[c].X.resize(members[c].size(), X.cols());
    out[c].y.resize(members[c].size());
    for (std::size_t r = 0; r < members[c].size(); ++r) {
      out[c].X.row(r) = X.row(members[c][r]);
      out[c].y[r] = y[members[c][r]];
    }
  }
  return out;
}

// ---- covariate shift ----

void ShiftSpec::validate() const {
  if (!(gamma_px > 0.0)) throw config_error("shift: gamma factor must be > 0");
  if (hue_delta < -0.5 || hue_delta > 0.5)
    throw config_error("shift: hue delta must lie in [-0.5, 0.5]");
  if (saturation < 0.0) throw config_error("shift: saturation must be >= 0");
}

ShiftSpec shift_spec_for_client(ShiftIntensity level, int client_id) {
  double g[2], h[2], s[2];
  switch (level) {
    case ShiftIntensity::low:
      g[0] = 0.9; g[1] = 1.1; h[0] = -0.01; h[1] = 0.01; s[0] = 0.9; s[1] = 1.1;
      break;
    case ShiftIntensity::mid:
      g[0] = 0.75; g[1] = 1.25; h[0] = -0.05; h[1] = 0.05; s[0] = 0.7; s[1] = 1.3;
      break;
    case ShiftIntensity::high:
      g[0] = 0.6; g[1] = 1.4; h[0] = -0.1; h[1] = 0.1; s[0] = 0.5; s[1] = 1.5;
      break;
  }
  const int c = client_id & 7;
  return {g[c & 1], h[(c >> 1) & 1], s[(c >> 2) & 1]};
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double maxc = std::max({r, g, b});
  const double minc = std::min({r, g, b});
  v = maxc;
  const double d = maxc - minc;
  s = maxc == 0.0 ? 0.0 : d / maxc;
  if (d == 0.0) {
    h = 0.0;
    return;
  }
  if (maxc == r) h = (g - b) / d;
  else if (maxc == g) h = (b - r) / d + 2.0;
  else h = (r - g) / d + 4.0;
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  if (s == 0.0) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);  // wrap to [0, 1)
  const double x = h * 6.0;
  const int sector = std::min(5, static_cast<int>(x));
  const double f = x - sector;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

void apply_covariate_shift(ImageSet& images, const ShiftSpec& spec) {
  spec.validate();
  const bool color_ops = spec.hue_delta != 0.0 || spec.saturation != 1.0;
  if (color_ops && images.channels != 3)
    throw data_error("covariate shift: hue/saturation need 3 channels");
  if (images.data.size() !=
      static_cast<std::size_t>(images.count) * images.sample_bytes())
    throw data_error("covariate shift: byte count mismatch");

  const int plane = images.height * images.width;
  auto quantize = [](double v) {
    const double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    return static_cast<std::uint8_t>(std::min(q, 255.0));
  };

  for (int s = 0; s < images.count; ++s) {
    std::uint8_t* base = images.data.data() + s * images.sample_bytes();
    if (images.channels == 3) {
      for (int px = 0; px < plane; ++px) {
        double r = base[px] / 255.0;
        double g = base[plane + px] / 255.0;
        double b = base[2 * plane + px] / 255.0;
        r = std::pow(r, spec.gamma_px);
        g = std::pow(g, spec.gamma_px);
        b = std::pow(b, spec.gamma_px);
        double hh, ss, vv;
        rgb_to_hsv(r, g, b, hh, ss, vv);
        hh += spec.hue_delta;
        ss = std::clamp(ss * spec.saturation, 0.0, 1.0);
        hsv_to_rgb(hh, ss, vv, r, g, b);
        base[px] = quantize(r);
        base[plane + px] = quantize(g);
        base[2 * plane + px] = quantize(b);
      }
    } else {
      for (std::size_t i = 0; i < images.sample_bytes(); ++i)
        base[i] = quantize(std::pow(base[i] / 255.0, spec.gamma_px));
    }
  }
}

Eigen::MatrixXd flatten_images(const ImageSet& images) {
  const std::size_t sb = images.sample_bytes();
  Eigen::MatrixXd X(images.count, sb);
  for (int s = 0; s < images.count; ++s)
    for (std::size_t i = 0; i < sb; ++i)
      X(s, i) = images.data[s * sb + i] / 255.0;
  return X;
}

// ---- synthetic generators ----

void SynthDrmSpec::validate() const {
  if (m < 1 || num_classes < 2 || feature_dim < 1)
    throw config_error("synth_drm: bad sizes");
  if (static_cast<int>(n_train.size()) != m ||
      static_cast<int>(n_test.size()) != m)
    throw config_error("synth_drm: per-client size lists must have length m");
  for (int n : n_train)
    if (n < 1) throw config_error("synth_drm: train sizes must be >= 1");
  if (tilts.rows() != m || tilts.cols() != feature_dim)
    throw config_error("synth_drm: tilt matrix must be m x p");
  if (heads.size() != 1 && static_cast<int>(heads.size()) != m)
    throw config_error("synth_drm: need one shared head or one per client");
  for (const Head& hd : heads)
    if (hd.alpha.size() != num_classes || hd.beta.rows() != num_classes ||
        hd.beta.cols() != feature_dim)
      throw config_error("synth_drm: head shape mismatch");
}

SynthDrmData synth_drm_generate(const SynthDrmSpec& spec) {
  spec.validate();
  SynthDrmData out;
  out.truth.xi = spec.tilts;
  out.truth.gamma.resize(spec.m);
  for (int i = 0; i < spec.m; ++i)
    out.truth.gamma[i] = -0.5 * spec.tilts.row(i).squaredNorm();
  out.truth.heads = spec.heads;

  auto sample_client = [&](int c, int n, Split split, std::uint64_t tag) {
    ClientDataset ds;
    ds.client_id = c;
    ds.split = split;
    ds.X.resize(n, spec.feature_dim);
    ds.y.resize(n);
    Rng rng = Rng(spec.seed).fork(tag, static_cast<std::uint64_t>(c));
    const Head& head = spec.heads.size() == 1 ? spec.heads[0]
                                              : spec.heads[static_cast<std::size_t>(c)];
    for (int j = 0; j < n; ++j) {
      for (int k = 0; k < spec.feature_dim; ++k)
        ds.X(j, k) = spec.tilts(c, k) + rng.normal();
      const Eigen::VectorXd probs =
          softmax(head.alpha + head.beta * ds.X.row(j).transpose());
      std::vector<double> pv(probs.data(), probs.data() + probs.size());
      ds.y[j] = rng.categorical(pv);
    }
    return ds;
  };

  for (int c = 0; c < spec.m; ++c) {
    out.train.push_back(sample_client(c, spec.n_train[c], Split::train, 0x11));
    out.test.push_back(sample_client(c, spec.n_test[c], Split::test, 0x22));
  }
  return out;
}

Eigen::MatrixXd circle_tilts(int m, int p, double scale) {
  if (p < 2) throw config_error("circle_tilts: need feature dim >= 2");
  constexpr double two_pi = 6.283185307179586476925286766559;
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, p);
  for (int i = 0; i < m; ++i) {
    const double a = two_pi * static_cast<double>(i) / m;
    t(i, 0) = scale * std::cos(a);
    t(i, 1) = scale * std::sin(a);
  }
  return t;
}

std::vector<Head> random_heads(int count, int num_classes, int dim, double scale,
                               std::uint64_t seed) {
  std::vector<Head> heads(count);
  for (int c = 0; c < count; ++c) {
    Rng rng = Rng(seed).fork(0x4ead, static_cast<std::uint64_t>(c));
    heads[c].alpha.resize(num_classes);
    heads[c].beta.resize(num_classes, dim);
    for (int k = 0; k < num_classes; ++k) {
      heads[c].alpha[k] = scale * rng.uniform(-1.0, 1.0);
      for (int d = 0; d < dim; ++d) heads[c].beta(k, d) = scale * rng.uniform(-1.0, 1.0);
    }
  }
  return heads;
}

SynthTheoryData synth_theory_generate(const SynthTheorySpec& spec) {
  return synth_theory_generate(spec, init_params(spec.net, spec.net_seed));
}

SynthTheoryData synth_theory_generate(const SynthTheorySpec& spec,
                                      const EmbeddingParams& emb) {
  spec.net.validate();
  const int m = static_cast<int>(spec.gamma_true.size());
  if (spec.xi_true.rows() != m || spec.xi_true.cols() != spec.net.d_h())
    throw config_error("synth_theory: client truth shape mismatch");
  if (spec.target_true.beta.cols() != spec.net.d_g())
    throw config_error("synth_theory: target truth shape mismatch");
  if (spec.n_total < m) throw config_error("synth_theory: n_total too small");

  SynthTheoryData out;
  out.emb = emb;

  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng = Rng(spec.seed).fork(0x7e, attempt);
    std::vector<std::vector<int>> members(m);
    Eigen::MatrixXd X(spec.n_total, spec.net.input_dim);
    Eigen::VectorXi y(spec.n_total);
    std::vector<int> who(spec.n_total);
    for (int j = 0; j < spec.n_total; ++j) {
      for (int k = 0; k < spec.net.input_dim; ++k) X(j, k) = rng.normal();
      ForwardResult fr = forward(X.row(j).transpose(), out.emb, spec.net);
      Eigen::VectorXd cp = softmax(spec.gamma_true + spec.xi_true * fr.h);
      std::vector<double> cpv(cp.data(), cp.data() + cp.size());
      who[j] = rng.categorical(cpv);
      Eigen::VectorXd tp =
          softmax(spec.target_true.alpha + spec.target_true.beta * fr.g);
      std::vector<double> tpv(tp.data(), tp.data() + tp.size());
      y[j] = rng.categorical(tpv);
      members[who[j]].push_back(j);
    }
    const bool ok = std::all_of(members.begin(), members.end(),
                                [](const auto& v) { return !v.empty(); });
    if (!ok) continue;
    out.clients.assign(m, {});
    for (int c = 0; c < m; ++c) {
      out.clients[c].client_id = c;
      out.clients[c].X.resize(members[c].size(), spec.net.input_dim);
      out.clients[c].y.resize(members[c].size());
      for (std::size_t r = 0; r < members[c].size(); ++r) {
        out.clients[c].X.row(r) = X.row(members[c][r]);
        out.clients[c].y[r] = y[members[c][r]];
      }
    }
    return out;
  }
  throw partition_error("synth_theory: a client stayed empty after 100 redraws");
}

}  // namespace feddrm
