#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "feddrm/loss.hpp"
#include "feddrm/net.hpp"
#include "feddrm/partition.hpp"
#include "feddrm/rng.hpp"

namespace feddrm {

enum class LrSchedule { constant, cosine };
enum class RunMode { feddrm, fedavg_ref };

struct FederationConfig {
  int clients = 0;      // m
  int rounds = 1;       // T
  int local_steps = 1;  // E
  double lr = 0.1;
  double lambda = 0.8;        // target-loss weight in (0, 1]
  double weight_decay = 0.0;  // rho
  double momentum = 0.0;
  LrSchedule schedule = LrSchedule::constant;
  int batch_size = 0;  // 0 = full batch
  bool shared_target = false;
  RunMode mode = RunMode::feddrm;
  std::uint64_t seed = 0;
  int workers = 0;  // 0 = hardware concurrency

  void validate() const;
  double lr_at(int round) const;
};

// parameters broadcast at the start of each round; gamma/xi are empty in the
// FedAvg reference mode, and the target head joins this set when it is shared
struct GlobalModel {
  EmbeddingParams emb;
  Eigen::VectorXd gamma;
  Eigen::MatrixXd xi;
};

// per-client momentum buffers and the client's private batch stream; buffers
// persist across rounds
struct ClientOptState {
  EmbeddingParams v_emb;
  Eigen::VectorXd v_gamma;
  Eigen::MatrixXd v_xi;
  Head v_target;
  Rng stream{0};
};

struct FederationState {
  int round = 0;
  GlobalModel global;
  std::vector<Head> heads;  // size 1 when shared, size m otherwise
  std::vector<ClientOptState> opt;
  bool shared_target = false;

  HeadBank bank() const {
    return HeadBank{heads, global.gamma, global.xi, shared_target};
  }
};

FederationState init_state(const FederationConfig& cfg, const NetConfig& net,
                           int num_classes, std::uint64_t param_seed);

// one client's E local SGD steps from its broadcast copy; pure given the
// inputs, so clients may run concurrently.  Throws divergence_error with
// round/step context when the loss blows up.
struct ClientUpdate {
  EmbeddingParams emb;
  Eigen::VectorXd gamma;
  Eigen::MatrixXd xi;
  Head target;
  LossBreakdown last_loss;
};

ClientUpdate local_update(const FederationConfig& cfg, const NetConfig& net,
                          const GlobalModel& broadcast, const Head& target_head,
                          ClientOptState& opt, const ClientDataset& data,
                          int round);

// n_i/N-weighted average of the shared blocks, summed in ascending client
// order.  Per-client target heads are never aggregated.
GlobalModel aggregate(const std::vector<ClientUpdate>& updates,
                      const std::vector<Eigen::Index>& sizes);

Head aggregate_heads(const std::vector<ClientUpdate>& updates,
                     const std::vector<Eigen::Index>& sizes);

using RoundObserver = std::function<void(const FederationState&)>;

// full training loop: broadcast -> parallel local updates -> aggregate, with
// the observer invoked after every aggregation
FederationState run(const FederationConfig& cfg, const NetConfig& net,
                    const std::vector<ClientDataset>& train, int num_classes,
                    std::uint64_t param_seed, const RoundObserver& observer = {});

// same loop continuing from a prepared state (resume, fixed-embedding setups)
FederationState run_from(const FederationConfig& cfg, const NetConfig& net,
                         const std::vector<ClientDataset>& train,
                         FederationState st, const RoundObserver& observer = {});

// weighted full-batch loss of the current global parameters over all clients
LossBreakdown global_loss(const FederationConfig& cfg, const NetConfig& net,
                          const FederationState& state,
                          const std::vector<ClientDataset>& train);

}  // namespace feddrm
