#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "feddrm/loss.hpp"
#include "feddrm/net.hpp"

namespace feddrm {

enum class Split { train, test };

struct ClientDataset {
  int client_id = 0;
  Eigen::MatrixXd X;  // n x p
  Eigen::VectorXi y;
  Split split = Split::train;

  Eigen::Index size() const { return X.rows(); }
};

struct PartitionResult {
  std::vector<int> assignment;  // client id per sample; -1 marks dropped samples
  int dropped = 0;
};

// Per-class Dirichlet(alpha) proportions over clients, then a categorical draw
// per sample.  Assignments leaving any client empty are redrawn from the next
// substream, at most 100 times.
PartitionResult dirichlet_partition(const std::vector<int>& labels, int m,
                                    double alpha, std::uint64_t seed);

// Sort by class, cut into m*S equal shards, deal S shards per client through a
// seeded permutation.  When N is not divisible by m*S the excess (at most
// m*S - 1 samples) is dropped and reported in `dropped`.
PartitionResult shard_partition(const std::vector<int>& labels, int m, int S,
                                std::uint64_t seed);

// Per-client 70/30 (or custom fraction) split: seeded shuffle of each client's
// samples, first floor(frac*n + 0.5) marked train.
std::vector<Split> train_test_split(const std::vector<int>& assignment, int m,
                                    double train_fraction, std::uint64_t seed);

std::vector<ClientDataset> gather_clients(const Eigen::MatrixXd& X,
                                          const Eigen::VectorXi& y,
                                          const std::vector<int>& assignment,
                                          const std::vector<Split>& split, int m,
                                          Split which);

// ---- covariate shift ----

struct ImageSet {
  int count = 0, channels = 0, height = 0, width = 0;
  std::vector<std::uint8_t> data;  // sample-major, then channel-major

  std::size_t sample_bytes() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
};

struct ShiftSpec {
  double gamma_px = 1.0;  // > 0
  double hue_delta = 0.0;  // in [-0.5, 0.5], fraction of a full rotation
  double saturation = 1.0;  // >= 0

  void validate() const;
};

enum class ShiftIntensity { low, mid, high };

// one of the 2^3 transform combinations; client_id selects via its low bits
// (bit 0 gamma, bit 1 hue, bit 2 saturation)
ShiftSpec shift_spec_for_client(ShiftIntensity level, int client_id);

// Per pixel: channels normalized to [0,1], then gamma correction, hue rotation
// and saturation scaling in HSV (in that order), then round-half-up back to
// bytes.  Hue/saturation require 3 channels; pure gamma works on any count.
void apply_covariate_shift(ImageSet& images, const ShiftSpec& spec);

// rows are flattened samples scaled to [0, 1]
Eigen::MatrixXd flatten_images(const ImageSet& images);

// HSV conversion used by the shift; exposed for tests. All components in [0,1],
// hue wraps in [0,1).
void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v);
void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b);

// ---- synthetic generators ----

// Gaussian baseline N(0, I_p) tilted per client by exp(gamma_i + xi_i.x) with
// gamma_i = -||xi_i||^2/2, i.e. client i draws N(xi_i, I_p).  Labels come from
// true softmax heads over the raw features.
struct SynthDrmSpec {
  int m = 0, num_classes = 0, feature_dim = 0;
  std::vector<int> n_train;  // per client
  std::vector<int> n_test;
  Eigen::MatrixXd tilts;     // m x p rows xi_i
  std::vector<Head> heads;   // size 1 (shared conditional) or m (full shift)
  std::uint64_t seed = 0;

  void validate() const;
};

struct DrmTruth {
  Eigen::VectorXd gamma;  // tilt normalizers -||xi_i||^2/2
  Eigen::MatrixXd xi;
  std::vector<Head> heads;
};

struct SynthDrmData {
  std::vector<ClientDataset> train;
  std::vector<ClientDataset> test;
  DrmTruth truth;
};

SynthDrmData synth_drm_generate(const SynthDrmSpec& spec);

// tilt rows evenly spaced on a circle in the first two coordinates, scaled;
// pairwise separation scale * 2 sin(pi/m)
Eigen::MatrixXd circle_tilts(int m, int p, double scale);

// heads with entries scale * U(-1, 1)
std::vector<Head> random_heads(int count, int num_classes, int dim, double scale,
                               std::uint64_t seed);

// Double-logistic generator: raw features i.i.d. N(0, I), both the client
// label and the class label sampled from true softmax heads over a fixed
// random embedding.  Client sizes are therefore random; draws leaving a client
// empty are redrawn (bounded).
struct SynthTheorySpec {
  NetConfig net;  // fixed_embedding expected set by the caller
  std::uint64_t net_seed = 0;
  Eigen::VectorXd gamma_true;  // m
  Eigen::MatrixXd xi_true;     // m x d_h
  Head target_true;            // K x d_g
  int n_total = 0;
  std::uint64_t seed = 0;
};

struct SynthTheoryData {
  std::vector<ClientDataset> clients;
  EmbeddingParams emb;  // the fixed embedding used for sampling
};

SynthTheoryData synth_theory_generate(const SynthTheorySpec& spec);

// same generator with a caller-provided frozen embedding
SynthTheoryData synth_theory_generate(const SynthTheorySpec& spec,
                                      const EmbeddingParams& emb);

}  // namespace feddrm
