// feddrm: desk-scale federated training with a client-routing head, plus the
// numeric verification subcommands (EL duality, gradient drift, convergence
// and statistical-error trends).
//
// Subcommands: run, partition, eval, elcheck, drift, theory.
// Exit codes: 0 ok, 1 config error, 2 data/io error, 3 divergence,
// 4 verification tolerance failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "feddrm/el.hpp"
#include "feddrm/federation.hpp"
#include "feddrm/io.hpp"
#include "feddrm/metrics.hpp"
#include "feddrm/partition.hpp"
#include "feddrm/runconfig.hpp"
#include "feddrm/theory.hpp"

using namespace feddrm;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "feddrm-0.1.0";

// ---- config surface ----

const std::set<std::string> kCommonKeys = {
    "master_seed", "output_dir", "threads",
};

const std::set<std::string> kDataKeys = {
    "data.source",      "data.csv_path",  "data.fdrm_path", "data.labels_path",
    "data.train_fraction",
    "partition.clients", "partition.scheme", "partition.alpha",
    "partition.shards_per_client",
    "shift.enable",     "shift.intensity",
    "synth.m",          "synth.classes",  "synth.dim",      "synth.n_train",
    "synth.n_test",     "synth.tilt_scale", "synth.per_client_heads",
    "synth.head_scale", "synth.n_total",  "synth.truth_scale",
};

const std::set<std::string> kNetKeys = {
    "net.g_layers", "net.h_layers", "net.sharing", "net.activation",
    "net.fixed_embedding",
};

const std::set<std::string> kFedKeys = {
    "mode",          "fed.rounds",     "fed.local_steps", "fed.lr",
    "fed.lambda",    "fed.weight_decay", "fed.momentum",  "fed.schedule",
    "fed.batch",     "fed.shared_target",
    "metric_window", "checkpoint_every",
};

const std::set<std::string> kDriftKeys = {
    "drift.rounds", "drift.dim", "drift.classes", "drift.m",
    "drift.samples_per_class", "partition.alpha",
};

const std::set<std::string> kTheoryKeys = {
    "theory.m",           "theory.classes",      "theory.dim",
    "theory.n_grid",      "theory.stat_seeds",   "theory.stat_lambda",
    "theory.stat_rho",    "theory.e_grid",       "theory.eta",
    "theory.rounds",      "theory.conv_rho",     "theory.conv_lambda",
    "theory.n_train",     "theory.lambda_grid",  "theory.tradeoff_seeds",
    "theory.tradeoff_rounds", "theory.truth_scale", "theory.client_err_n",
};

std::set<std::string> merge_keys(std::initializer_list<std::set<std::string>> sets) {
  std::set<std::string> out;
  for (const auto& s : sets) out.insert(s.begin(), s.end());
  return out;
}

int worker_threads(const RunConfig& cfg) {
  if (const char* env = std::getenv("FEDDRM_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return cfg.get_int("threads", 0);
}

std::string output_header(const RunConfig& cfg) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "config_hash=%016llx master_seed=%llu version=%s",
                static_cast<unsigned long long>(cfg.hash()),
                static_cast<unsigned long long>(cfg.get_u64("master_seed")),
                kVersion);
  return buf;
}

NetConfig parse_net(const RunConfig& cfg, int input_dim) {
  NetConfig net;
  net.input_dim = input_dim;
  net.g_layers = cfg.get_int_list("net.g_layers");
  net.h_layers = cfg.get_int_list("net.h_layers");
  const std::string sharing = cfg.get_str("net.sharing", "deep");
  if (sharing == "none") net.sharing = Sharing::none;
  else if (sharing == "shallow") net.sharing = Sharing::shallow;
  else if (sharing == "mid") net.sharing = Sharing::mid;
  else if (sharing == "deep") net.sharing = Sharing::deep;
  else throw config_error("net.sharing: unknown value '" + sharing + "'");
  const std::string act = cfg.get_str("net.activation", "relu");
  if (act == "relu") net.activation = Activation::relu;
  else if (act == "tanh") net.activation = Activation::tanh;
  else throw config_error("net.activation: unknown value '" + act + "'");
  net.fixed_embedding = cfg.get_bool("net.fixed_embedding", false);
  net.validate();
  return net;
}

FederationConfig parse_fed(const RunConfig& cfg, int clients,
                           int default_rounds = 0) {
  FederationConfig fed;
  fed.clients = clients;
  fed.rounds = default_rounds > 0 ? cfg.get_int("fed.rounds", default_rounds)
                                  : cfg.get_int("fed.rounds");
  fed.local_steps = cfg.get_int("fed.local_steps", 1);
  fed.lr = cfg.get_double("fed.lr");
  fed.lambda = cfg.get_double("fed.lambda", 0.8);
  fed.weight_decay = cfg.get_double("fed.weight_decay", 0.0);
  fed.momentum = cfg.get_double("fed.momentum", 0.0);
  const std::string sched = cfg.get_str("fed.schedule", "constant");
  if (sched == "constant") fed.schedule = LrSchedule::constant;
  else if (sched == "cosine") fed.schedule = LrSchedule::cosine;
  else throw config_error("fed.schedule: unknown value '" + sched + "'");
  const std::string batch = cfg.get_str("fed.batch", "full");
  fed.batch_size = batch == "full" ? 0 : std::stoi(batch);
  fed.shared_target = cfg.get_bool("fed.shared_target", false);
  const std::string mode = cfg.get_str("mode", "feddrm");
  if (mode == "feddrm") fed.mode = RunMode::feddrm;
  else if (mode == "fedavg_ref") fed.mode = RunMode::fedavg_ref;
  else throw config_error("mode: unknown value '" + mode + "'");
  fed.seed = cfg.get_u64("master_seed");
  fed.workers = worker_threads(cfg);
  fed.validate();
  return fed;
}

ShiftIntensity parse_intensity(const std::string& s) {
  if (s == "low") return ShiftIntensity::low;
  if (s == "mid") return ShiftIntensity::mid;
  if (s == "high") return ShiftIntensity::high;
  throw config_error("shift.intensity: unknown value '" + s + "'");
}

// ---- data pipeline shared by run/eval ----

struct LoadedData {
  std::vector<ClientDataset> train, test;
  int num_classes = 0;
  int input_dim = 0;
  std::optional<DrmTruth> truth;
};

int max_class(const Eigen::VectorXi& y) {
  int mx = 0;
  for (Eigen::Index j = 0; j < y.size(); ++j) mx = std::max(mx, y[j]);
  return mx + 1;
}

LoadedData load_synth_drm(const RunConfig& cfg) {
  SynthDrmSpec spec;
  spec.m = cfg.get_int("synth.m");
  spec.num_classes = cfg.get_int("synth.classes");
  spec.feature_dim = cfg.get_int("synth.dim");
  spec.n_train.assign(spec.m, cfg.get_int("synth.n_train"));
  spec.n_test.assign(spec.m, cfg.get_int("synth.n_test", 0));
  spec.tilts = circle_tilts(spec.m, spec.feature_dim,
                            cfg.get_double("synth.tilt_scale", 1.0));
  const bool per_client = cfg.get_bool("synth.per_client_heads", false);
  spec.heads = random_heads(per_client ? spec.m : 1, spec.num_classes,
                            spec.feature_dim, cfg.get_double("synth.head_scale", 1.0),
                            cfg.get_u64("master_seed") ^ 0x4eadULL);
  spec.seed = cfg.get_u64("master_seed");
  SynthDrmData data = synth_drm_generate(spec);
  LoadedData out;
  out.train = std::move(data.train);
  out.test = std::move(data.test);
  out.truth = std::move(data.truth);
  out.num_classes = spec.num_classes;
  out.input_dim = spec.feature_dim;
  return out;
}

LoadedData load_synth_theory(const RunConfig& cfg) {
  const int m = cfg.get_int("synth.m");
  const int classes = cfg.get_int("synth.classes");
  TheoryBenchmarkSpec spec;
  spec.m = m;
  spec.num_classes = classes;
  spec.input_dim = cfg.get_int("synth.dim");
  spec.g_layers = cfg.get_int_list("net.g_layers");
  spec.h_layers = cfg.get_int_list("net.h_layers");
  spec.truth_scale = cfg.get_double("synth.truth_scale", 1.0);
  spec.n_train = cfg.get_int("synth.n_total");
  spec.n_test = cfg.get_int("synth.n_test", 0);
  spec.seed = cfg.get_u64("master_seed");
  TheoryBenchmark bench = make_theory_benchmark(spec);
  LoadedData out;
  out.train = std::move(bench.train);
  out.test = std::move(bench.test);
  out.num_classes = classes;
  out.input_dim = spec.input_dim;
  return out;
}

struct RawData {
  Eigen::MatrixXd X;
  Eigen::VectorXi y;
};

PartitionResult run_partitioner(const RunConfig& cfg,
                                const std::vector<int>& labels, int clients) {
  const std::string scheme = cfg.get_str("partition.scheme");
  if (scheme == "dirichlet")
    return dirichlet_partition(labels, clients,
                               cfg.get_double("partition.alpha", 0.3),
                               cfg.get_u64("master_seed"));
  if (scheme == "shard")
    return shard_partition(labels, clients,
                           cfg.get_int("partition.shards_per_client"),
                           cfg.get_u64("master_seed"));
  throw config_error("partition.scheme: unknown value '" + scheme + "'");
}

LoadedData load_file_data(const RunConfig& cfg) {
  const std::string source = cfg.get_str("data.source");
  const int clients = cfg.get_int("partition.clients");

  if (source == "fdrm") {
    ImageSet images = load_image_set(cfg.get_str("data.fdrm_path"));
    std::ifstream labels_in(cfg.get_str("data.labels_path"));
    if (!labels_in) throw io_error("cannot open " + cfg.get_str("data.labels_path"));
    std::vector<int> labels;
    int v;
    while (labels_in >> v) labels.push_back(v);
    if (static_cast<int>(labels.size()) != images.count)
      throw data_error("labels count does not match the image count");

    PartitionResult part = run_partitioner(cfg, labels, clients);
    if (cfg.get_bool("shift.enable", false)) {
      // per-client transform before the train/test split
      const ShiftIntensity level =
          parse_intensity(cfg.get_str("shift.intensity", "high"));
      const std::size_t sb = images.sample_bytes();
      for (int c = 0; c < clients; ++c) {
        ImageSet sub;
        sub.channels = images.channels;
        sub.height = images.height;
        sub.width = images.width;
        std::vector<int> idx;
        for (int j = 0; j < images.count; ++j)
          if (part.assignment[j] == c) idx.push_back(j);
        sub.count = static_cast<int>(idx.size());
        sub.data.resize(idx.size() * sb);
        for (std::size_t r = 0; r < idx.size(); ++r)
          std::copy_n(images.data.begin() + idx[r] * sb, sb,
                      sub.data.begin() + r * sb);
        apply_covariate_shift(sub, shift_spec_for_client(level, c));
        for (std::size_t r = 0; r < idx.size(); ++r)
          std::copy_n(sub.data.begin() + r * sb, sb,
                      images.data.begin() + idx[r] * sb);
      }
    }
    Eigen::MatrixXd X = flatten_images(images);
    Eigen::VectorXi y(images.count);
    for (int j = 0; j < images.count; ++j) y[j] = labels[j];
    std::vector<Split> split =
        train_test_split(part.assignment, clients,
                         cfg.get_double("data.train_fraction", 0.7),
                         cfg.get_u64("master_seed"));
    LoadedData out;
    out.train = gather_clients(X, y, part.assignment, split, clients, Split::train);
    out.test = gather_clients(X, y, part.assignment, split, clients, Split::test);
    out.num_classes = max_class(y);
    out.input_dim = static_cast<int>(X.cols());
    return out;
  }

  if (source != "csv")
    throw config_error("data.source: unknown value '" + source + "'");
  TabularData t = load_csv_dataset(cfg.get_str("data.csv_path"));
  RawData raw{std::move(t.X), std::move(t.y)};
  std::vector<int> labels(raw.y.data(), raw.y.data() + raw.y.size());
  PartitionResult part = run_partitioner(cfg, labels, clients);
  std::vector<Split> split =
      train_test_split(part.assignment, clients,
                       cfg.get_double("data.train_fraction", 0.7),
                       cfg.get_u64("master_seed"));
  LoadedData out;
  out.train = gather_clients(raw.X, raw.y, part.assignment, split, clients,
                             Split::train);
  out.test =
      gather_clients(raw.X, raw.y, part.assignment, split, clients, Split::test);
  out.num_classes = max_class(raw.y);
  out.input_dim = static_cast<int>(raw.X.cols());
  return out;
}

LoadedData load_data(const RunConfig& cfg) {
  const std::string source = cfg.get_str("data.source");
  if (source == "synth_drm") return load_synth_drm(cfg);
  if (source == "synth_theory") return load_synth_theory(cfg);
  return load_file_data(cfg);
}

// ---- metrics row assembly ----

struct MetricsRow {
  int round = 0;
  double train_loss = 0.0, client_ce = 0.0, target_ce = 0.0;
  double avg_acc = 0.0, sys_acc = 0.0, route_acc = 0.0;
  double g_client2 = 0.0, g_class2 = 0.0;
};

MetricsRow evaluate_round(const FederationConfig& fed, const NetConfig& net,
                          const FederationState& st, const LoadedData& data) {
  MetricsRow row;
  row.round = st.round;
  LossBreakdown loss = global_loss(fed, net, st, data.train);
  row.train_loss = loss.total;
  row.client_ce = loss.client_ce;
  row.target_ce = loss.target_ce;

  const bool have_tests = !data.test.empty() && data.test[0].size() > 0;
  const HeadBank bank = st.bank();
  std::vector<Eigen::Index> train_sizes;
  for (const auto& d : data.train) train_sizes.push_back(d.size());

  if (have_tests) {
    row.avg_acc = average_accuracy(net, st.global.emb, bank, data.test, train_sizes);
    if (fed.mode == RunMode::feddrm) {
      row.sys_acc = system_accuracy(net, st.global.emb, bank, data.test);
      row.route_acc = routing_accuracy(net, st.global.emb, bank, data.test);
    } else {
      row.sys_acc = majority_vote_accuracy(net, st.global.emb, bank, data.test);
      row.route_acc = std::nan("");
    }
  } else {
    row.avg_acc = row.sys_acc = row.route_acc = std::nan("");
  }

  if (fed.mode == RunMode::feddrm) {
    DriftReport drift =
        drift_report(net, st.global.emb, bank, data.train, fed.lambda);
    row.g_client2 = drift.g_client2;
    row.g_class2 = drift.g_class2;
  } else {
    row.g_client2 = row.g_class2 = std::nan("");
  }
  return row;
}

void write_metrics_header(std::ofstream& out, const std::string& header) {
  out << "# " << header << '\n';
  out << "round,train_loss,client_ce,target_ce,avg_acc,sys_acc,route_acc,"
         "G_client2,G_class2\n";
}

void write_metrics_row(std::ofstream& out, const MetricsRow& r) {
  out << r.round << ',' << format_double(r.train_loss) << ','
      << format_double(r.client_ce) << ',' << format_double(r.target_ce) << ','
      << format_double(r.avg_acc) << ',' << format_double(r.sys_acc) << ','
      << format_double(r.route_acc) << ',' << format_double(r.g_client2) << ','
      << format_double(r.g_class2) << '\n';
}

struct MeanStd {
  double mean = 0.0, stddev = 0.0;
};

MeanStd window_stats(const std::vector<double>& values, int window) {
  const int n = static_cast<int>(values.size());
  const int w = std::min(window, n);
  MeanStd out;
  if (w == 0) return out;
  for (int i = n - w; i < n; ++i) out.mean += values[i];
  out.mean /= w;
  for (int i = n - w; i < n; ++i)
    out.stddev += (values[i] - out.mean) * (values[i] - out.mean);
  out.stddev = std::sqrt(out.stddev / w);
  return out;
}

// ---- subcommands ----

int cmd_run(const std::string& config_path) {
  RunConfig cfg = RunConfig::parse_file(config_path);
  cfg.reject_unknown(merge_keys({kCommonKeys, kDataKeys, kNetKeys, kFedKeys}));

  const std::string out_dir = cfg.get_str("output_dir");
  std::filesystem::create_directories(out_dir);
  const std::string header = output_header(cfg);

  LoadedData data = load_data(cfg);
  const NetConfig net = parse_net(cfg, data.input_dim);
  const FederationConfig fed = parse_fed(cfg, static_cast<int>(data.train.size()));
  const int window = cfg.get_int("metric_window", 50);
  const int ckpt_every = cfg.get_int("checkpoint_every", 0);

  std::ofstream csv(out_dir + "/metrics.csv");
  if (!csv) throw io_error("cannot write " + out_dir + "/metrics.csv");
  write_metrics_header(csv, header);

  std::vector<MetricsRow> rows;
  FederationState final_state =
      run(fed, net, data.train, data.num_classes, fed.seed,
          [&](const FederationState& st) {
            MetricsRow row = evaluate_round(fed, net, st, data);
            rows.push_back(row);
            write_metrics_row(csv, row);
            if (ckpt_every > 0 && st.round % ckpt_every == 0) {
              char name[48];
              std::snprintf(name, sizeof(name), "/ckpt_round_%04d.bin", st.round);
              save_checkpoint(out_dir + name, state_to_checkpoint(st, cfg.hash()));
            }
          });
  csv.close();
  save_checkpoint(out_dir + "/ckpt_final.bin",
                  state_to_checkpoint(final_state, cfg.hash()));

  // summary: mean +- stddev over the final window
  auto column = [&](auto getter) {
    std::vector<double> v;
    for (const MetricsRow& r : rows) v.push_back(getter(r));
    return v;
  };
  ordered_json summary;
  summary["config_hash"] = output_header(cfg).substr(12, 16);
  summary["master_seed"] = cfg.get_u64("master_seed");
  summary["version"] = kVersion;
  summary["window"] = std::min<int>(window, static_cast<int>(rows.size()));
  auto put = [&](const char* name, std::vector<double> v) {
    MeanStd s = window_stats(v, window);
    summary["metrics"][name] = {{"mean", s.mean}, {"stddev", s.stddev}};
  };
  put("train_loss", column([](const MetricsRow& r) { return r.train_loss; }));
  put("client_ce", column([](const MetricsRow& r) { return r.client_ce; }));
  put("target_ce", column([](const MetricsRow& r) { return r.target_ce; }));
  put("avg_acc", column([](const MetricsRow& r) { return r.avg_acc; }));
  put("sys_acc", column([](const MetricsRow& r) { return r.sys_acc; }));
  put("route_acc", column([](const MetricsRow& r) { return r.route_acc; }));
  put("G_client2", column([](const MetricsRow& r) { return r.g_client2; }));
  put("G_class2", column([](const MetricsRow& r) { return r.g_class2; }));
  std::ofstream js(out_dir + "/summary.json");
  js << summary.dump(2) << '\n';
  return 0;
}

int cmd_partition(const std::string& config_path) {
  RunConfig cfg = RunConfig::parse_file(config_path);
  cfg.reject_unknown(merge_keys({kCommonKeys, kDataKeys}));

  const std::string out_dir = cfg.get_str("output_dir");
  std::filesystem::create_directories(out_dir);
  const int clients = cfg.get_int("partition.clients");

  const std::string source = cfg.get_str("data.source");
  std::vector<int> labels;
  std::optional<ImageSet> images;
  if (source == "fdrm") {
    images = load_image_set(cfg.get_str("data.fdrm_path"));
    std::ifstream in(cfg.get_str("data.labels_path"));
    if (!in) throw io_error("cannot open " + cfg.get_str("data.labels_path"));
    int v;
    while (in >> v) labels.push_back(v);
    if (static_cast<int>(labels.size()) != images->count)
      throw data_error("labels count does not match the image count");
  } else if (source == "csv") {
    TabularData t = load_csv_dataset(cfg.get_str("data.csv_path"));
    labels.assign(t.y.data(), t.y.data() + t.y.size());
  } else {
    throw config_error("partition: data.source must be csv or fdrm");
  }

  PartitionResult part = run_partitioner(cfg, labels, clients);
  std::vector<Split> split =
      train_test_split(part.assignment, clients,
                       cfg.get_double("data.train_fraction", 0.7),
                       cfg.get_u64("master_seed"));
  write_assignment_csv(out_dir + "/assignment.csv", output_header(cfg),
                       part.assignment, split);
  if (part.dropped > 0)
    std::cerr << "partition: dropped " << part.dropped
              << " samples to keep shards equal\n";

  if (images && cfg.get_bool("shift.enable", false)) {
    const ShiftIntensity level =
        parse_intensity(cfg.get_str("shift.intensity", "high"));
    const std::size_t sb = images->sample_bytes();
    for (int c = 0; c < clients; ++c) {
      ImageSet sub;
      sub.channels = images->channels;
      sub.height = images->height;
      sub.width = images->width;
      std::vector<int> idx;
      for (int j = 0; j < images->count; ++j)
        if (part.assignment[j] == c) idx.push_back(j);
      sub.count = static_cast<int>(idx.size());
      sub.data.resize(idx.size() * sb);
      for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(images->data.begin() + idx[r] * sb, sb, sub.data.begin() + r * sb);
      apply_covariate_shift(sub, shift_spec_for_client(level, c));
      for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(sub.data.begin() + r * sb, sb, images->data.begin() + idx[r] * sb);
    }
    save_image_set(out_dir + "/transformed.fdrm", *images);
  }
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path) {
  RunConfig cfg = RunConfig::parse_file(config_path);
  cfg.reject_unknown(merge_keys({kCommonKeys, kDataKeys, kNetKeys, kFedKeys}));

  LoadedData data = load_data(cfg);
  const NetConfig net = parse_net(cfg, data.input_dim);
  const FederationConfig fed = parse_fed(cfg, static_cast<int>(data.train.size()));

  FederationState st = init_state(fed, net, data.num_classes, fed.seed);
  Checkpoint ck = load_checkpoint(ckpt_path);
  apply_checkpoint(st, ck);

  MetricsRow row = evaluate_round(fed, net, st, data);
  ordered_json out;
  out["checkpoint"] = ckpt_path;
  out["checkpoint_config_hash"] = ck.config_hash;
  out["train_loss"] = row.train_loss;
  out["avg_acc"] = row.avg_acc;
  out["sys_acc"] = row.sys_acc;
  out["route_acc"] = row.route_acc;
  out["G_client2"] = row.g_client2;
  out["G_class2"] = row.g_class2;
  std::cout << out.dump(2) << '\n';

  const std::string out_dir = cfg.get_str("output_dir");
  std::filesystem::create_directories(out_dir);
  std::ofstream js(out_dir + "/eval.json");
  js << out.dump(2) << '\n';
  return 0;
}

int cmd_elcheck(int instances, std::uint64_t seed, int n_lo, int n_hi, int d_h,
                bool corrupt) {
  // tolerances of the dual-form verification
  constexpr double kGapTol = 1e-6;
  constexpr double kRhoTol = 1e-6;
  constexpr double kSumTol = 1e-10;
  constexpr double kConstraintTol = 1e-8;

  bool all_ok = true;
  std::printf("el dual-form verification: %d instances, seed %llu\n", instances,
              static_cast<unsigned long long>(seed));

  // degenerate reference case: all tilts one
  {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(6, d_h);
    std::vector<int> who{0, 0, 0, 1, 1, 1};
    TiltMatrix t = make_tilts(h, who, 2, Eigen::VectorXd::Zero(2),
                              Eigen::MatrixXd::Zero(2, d_h));
    ELSolution sol = solve_el(t);
    std::printf("degenerate case: rho = (%.3f, %.3f) degenerate=%d\n", sol.rho[0],
                sol.rho[1], sol.degenerate ? 1 : 0);
    if (!sol.degenerate) all_ok = false;
  }

  for (int i = 0; i < instances; ++i) {
    const int m = 2 + i % 3;  // cycle 2, 3, 4
    ElInstance inst = random_el_instance(m, n_lo, n_hi, d_h, seed + 1000003ULL * i);
    DualityReport rep = verify_duality(inst);

    double rho_err = rep.rho_err;
    double sum_err = rep.sum_p_err;
    if (corrupt) {
      // negative control: perturb the multipliers and re-check the constraints
      TiltMatrix t;
      // rebuild tilts at the reported optimum via a fresh duality pass
      DualOptimum dual = maximize_dual(inst);
      PrimalOptimum primal = maximize_primal(inst, dual);
      t = make_tilts(inst.h, inst.client_of_row, m, primal.gamma, primal.xi);
      Eigen::VectorXd bad = solve_multipliers(t).rho;
      bad[0] += 0.05;
      Eigen::VectorXd p = atom_weights(t, bad);
      sum_err = std::abs(p.sum() - 1.0);
      Eigen::VectorXd target(m);
      for (int l = 0; l < m; ++l)
        target[l] = inst.counts[l] / static_cast<double>(inst.h.rows());
      rho_err = (bad - target).cwiseAbs().maxCoeff();
    }

    const bool ok = std::abs(rep.gap) < kGapTol && rho_err < kRhoTol &&
                    sum_err < kSumTol && rep.constraint_err < kConstraintTol;
    std::printf(
        "instance %2d m=%d N=%3d | gap %.3e | rho_err %.3e | sum_p %.3e | "
        "constraint %.3e | xi_gap %.3e | %s\n",
        i, m, static_cast<int>(inst.h.rows()), rep.gap, rho_err, sum_err,
        rep.constraint_err, rep.xi_gap, ok ? "ok" : "FAIL");
    if (!ok) all_ok = false;
  }
  std::printf("elcheck: %s\n", all_ok ? "PASS" : "FAIL");
  return all_ok ? 0 : 4;
}

int cmd_drift(const std::string& config_path) {
  RunConfig cfg = RunConfig::parse_file(config_path);
  cfg.reject_unknown(merge_keys({kCommonKeys, kNetKeys, kFedKeys, kDriftKeys}));

  const std::string out_dir = cfg.get_str("output_dir");
  std::filesystem::create_directories(out_dir);
  const std::string header = output_header(cfg);

  // label-shifted synthetic mixture, fixed random embedding
  const int m = cfg.get_int("drift.m", 3);
  const int classes = cfg.get_int("drift.classes", 10);
  const int dim = cfg.get_int("drift.dim", 8);
  const int per_class = cfg.get_int("drift.samples_per_class", 60);
  const int rounds = cfg.get_int("drift.rounds", 50);
  const std::uint64_t seed = cfg.get_u64("master_seed");

  Rng rng(seed);
  const int n = classes * per_class;
  Eigen::MatrixXd X(n, dim);
  Eigen::VectorXi y(n);
  std::vector<int> labels(n);
  for (int k = 0; k < classes; ++k) {
    Eigen::VectorXd mean(dim);
    for (int d = 0; d < dim; ++d) mean[d] = 2.0 * rng.uniform(-1.0, 1.0);
    for (int j = 0; j < per_class; ++j) {
      const int row = k * per_class + j;
      for (int d = 0; d < dim; ++d) X(row, d) = mean[d] + rng.normal();
      y[row] = k;
      labels[row] = k;
    }
  }
  PartitionResult part =
      dirichlet_partition(labels, m, cfg.get_double("partition.alpha", 0.3), seed);
  std::vector<Split> split(n, Split::train);
  std::vector<ClientDataset> train =
      gather_clients(X, y, part.assignment, split, m, Split::train);

  NetConfig net = parse_net(cfg, dim);
  net.fixed_embedding = true;
  FederationConfig fed = parse_fed(cfg, m, rounds);
  fed.rounds = rounds;  // drift.rounds is authoritative here
  fed.shared_target = true;
  fed.mode = RunMode::feddrm;

  std::ofstream csv(out_dir + "/drift.csv");
  csv << "# " << header << '\n';
  csv << "round,G_client2,G_class2,G_total2\n";

  std::vector<DriftReport> reports;
  FederationState init = init_state(fed, net, classes, seed);
  {
    DriftReport rep = drift_report(net, init.global.emb, init.bank(), train,
                                   fed.lambda);
    reports.push_back(rep);
    csv << 0 << ',' << format_double(rep.g_client2) << ','
        << format_double(rep.g_class2) << ',' << format_double(rep.g_total2)
        << '\n';
  }
  run_from(fed, net, train, std::move(init), [&](const FederationState& st) {
    DriftReport rep =
        drift_report(net, st.global.emb, st.bank(), train, fed.lambda);
    reports.push_back(rep);
    csv << st.round << ',' << format_double(rep.g_client2) << ','
        << format_double(rep.g_class2) << ',' << format_double(rep.g_total2)
        << '\n';
  });
  csv.close();

  bool round0 = reports[0].g_client2 > reports[0].g_class2;
  bool all_rounds = true;
  for (const DriftReport& r : reports)
    if (!(r.g_client2 > r.g_class2)) all_rounds = false;

  std::ofstream verdict(out_dir + "/drift_verdict.txt");
  verdict << "# " << header << '\n';
  verdict << "check: G_client2 > G_class2 at round 0: "
          << (round0 ? "PASS" : "FAIL") << '\n';
  verdict << "check: G_client2 > G_class2 across " << rounds
          << " rounds: " << (all_rounds ? "PASS" : "FAIL") << '\n';
  std::cout << (round0 && all_rounds ? "drift: PASS\n" : "drift: FAIL\n");
  return round0 && all_rounds ? 0 : 4;
}

int cmd_theory(const std::string& config_path) {
  RunConfig cfg = RunConfig::parse_file(config_path);
  cfg.reject_unknown(merge_keys({kCommonKeys, kTheoryKeys}));

  const std::string out_dir = cfg.get_str("output_dir");
  std::filesystem::create_directories(out_dir);
  const std::string header = output_header(cfg);

  TheoryBenchmarkSpec base;
  base.m = cfg.get_int("theory.m", 3);
  base.num_classes = cfg.get_int("theory.classes", 3);
  base.input_dim = cfg.get_int("theory.dim", 6);
  base.truth_scale = cfg.get_double("theory.truth_scale", 1.0);
  base.seed = cfg.get_u64("master_seed");
  base.n_train = cfg.get_int("theory.n_train", 600);

  bool all_ok = true;
  std::ofstream verdict(out_dir + "/theory_verdict.txt");
  verdict << "# " << header << '\n';

  // 1. statistical error rate over the N grid
  {
    std::vector<int> n_grid = cfg.has("theory.n_grid")
                                  ? cfg.get_int_list("theory.n_grid")
                                  : std::vector<int>{500, 1000, 2000, 4000, 8000};
    const int seeds = cfg.get_int("theory.stat_seeds", 20);
    const double lambda = cfg.get_double("theory.stat_lambda", 0.8);
    const double rho = cfg.get_double("theory.stat_rho", 3e-4);
    StatisticalResult stat = statistical_experiment(base, n_grid, lambda, rho, seeds);

    std::ofstream csv(out_dir + "/stat_error.csv");
    csv << "# " << header << '\n';
    csv << "n,mean_err2,mean_client_err2\n";
    for (std::size_t i = 0; i < n_grid.size(); ++i)
      csv << n_grid[i] << ',' << format_double(stat.mean_err2[i]) << ','
          << format_double(stat.mean_client_err2[i]) << '\n';

    const bool ok = stat.slope >= -1.3 && stat.slope <= -0.7;
    verdict << "check: statistical log-log slope in [-1.3, -0.7]: slope = "
            << format_double(stat.slope) << ": " << (ok ? "PASS" : "FAIL") << '\n';
    all_ok = all_ok && ok;
  }

  // 2. convergence plateaus: zero heterogeneity and the E sweep
  {
    const double eta = cfg.get_double("theory.eta", 0.4);
    const int rounds = cfg.get_int("theory.rounds", 300);
    const double rho = cfg.get_double("theory.conv_rho", 0.1);
    const double lambda = cfg.get_double("theory.conv_lambda", 0.8);

    TheoryBenchmarkSpec zero = base;
    zero.identical_clients = true;
    TheoryBenchmark zb = make_theory_benchmark(zero);
    ConvergenceResult zres = convergence_run(zb, eta, 2, 1.0, rho, rounds, base.seed);
    const bool zok = zres.plateau < 1e-10;
    verdict << "check: zero-heterogeneity plateau < 1e-10: plateau = "
            << format_double(zres.plateau) << ": " << (zok ? "PASS" : "FAIL")
            << '\n';
    all_ok = all_ok && zok;

    std::vector<int> e_grid = cfg.has("theory.e_grid")
                                  ? cfg.get_int_list("theory.e_grid")
                                  : std::vector<int>{1, 2, 4, 8};
    TheoryBenchmark bench = make_theory_benchmark(base);
    std::ofstream csv(out_dir + "/convergence.csv");
    csv << "# " << header << '\n';
    csv << "local_steps,plateau,contraction,mu_hat,L_hat\n";
    std::vector<double> plateaus;
    for (int e : e_grid) {
      ConvergenceResult res =
          convergence_run(bench, eta, e, lambda, rho, rounds, base.seed);
      plateaus.push_back(res.plateau);
      csv << e << ',' << format_double(res.plateau) << ','
          << format_double(res.contraction) << ','
          << format_double(res.spectrum.mu_hat) << ','
          << format_double(res.spectrum.l_hat) << '\n';
    }
    bool mono = true;
    for (std::size_t i = 1; i < plateaus.size(); ++i)
      if (plateaus[i] < plateaus[i - 1]) mono = false;
    verdict << "check: plateau non-decreasing over E grid: "
            << (mono ? "PASS" : "FAIL") << '\n';
    all_ok = all_ok && mono;
  }

  // 3. client-block statistical error grows as lambda -> 1
  {
    const int n = cfg.get_int("theory.client_err_n", 2000);
    const int seeds = cfg.get_int("theory.stat_seeds", 20);
    const double rho = 5e-3;
    const double lo = client_block_error(base, n, 0.6, rho, seeds);
    const double hi = client_block_error(base, n, 0.99, rho, seeds);
    const bool ok = hi > lo;
    verdict << "check: client-block error grows from lambda 0.6 to 0.99: "
            << format_double(lo) << " -> " << format_double(hi) << ": "
            << (ok ? "PASS" : "FAIL") << '\n';
    all_ok = all_ok && ok;
  }

  // 4. lambda trade-off table
  {
    std::vector<double> grid = cfg.has("theory.lambda_grid")
                                   ? cfg.get_double_list("theory.lambda_grid")
                                   : std::vector<double>{0.5, 0.6, 0.9, 0.99};
    const int seeds = cfg.get_int("theory.tradeoff_seeds", 10);
    const int rounds = cfg.get_int("theory.tradeoff_rounds", 40);
    const double eta = cfg.get_double("theory.eta", 0.4);
    const double rho = cfg.get_double("theory.conv_rho", 0.1);
    std::vector<LambdaRow> rows =
        lambda_tradeoff(base, grid, eta, 2, rounds, rho, seeds);

    std::ofstream csv(out_dir + "/lambda_tradeoff.csv");
    csv << "# " << header << '\n';
    csv << "lambda,client_acc_mean,client_acc_std,class_acc_mean,class_acc_std,"
           "plateau\n";
    for (const LambdaRow& r : rows)
      csv << format_double(r.lambda) << ',' << format_double(r.client_acc_mean)
          << ',' << format_double(r.client_acc_std) << ','
          << format_double(r.class_acc_mean) << ','
          << format_double(r.class_acc_std) << ','
          << format_double(r.plateau_mean) << '\n';

    auto find_row = [&](double l) -> const LambdaRow* {
      for (const LambdaRow& r : rows)
        if (std::abs(r.lambda - l) < 1e-12) return &r;
      return nullptr;
    };
    const LambdaRow* l05 = find_row(0.5);
    const LambdaRow* l06 = find_row(0.6);
    const LambdaRow* l09 = find_row(0.9);
    const LambdaRow* l99 = find_row(0.99);
    if (l06 && l99) {
      const bool ok = l99->client_acc_mean < l06->client_acc_mean;
      verdict << "check: client accuracy at lambda 0.99 < at 0.6: "
              << format_double(l99->client_acc_mean) << " vs "
              << format_double(l06->client_acc_mean) << ": "
              << (ok ? "PASS" : "FAIL") << '\n';
      all_ok = all_ok && ok;
    }
    if (l05 && l09) {
      const bool ok =
          l09->class_acc_mean >= l05->class_acc_mean - l05->class_acc_std;
      verdict << "check: class accuracy at lambda 0.9 >= at 0.5 within 1 std: "
              << format_double(l09->class_acc_mean) << " vs "
              << format_double(l05->class_acc_mean) << " (std "
              << format_double(l05->class_acc_std) << "): "
              << (ok ? "PASS" : "FAIL") << '\n';
      all_ok = all_ok && ok;
    }
  }

  std::cout << (all_ok ? "theory: PASS\n" : "theory: FAIL\n");
  return all_ok ? 0 : 4;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"FedDRM desk-scale federated training and verification"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path;
  int instances = 25, n_lo = 6, n_hi = 10, d_h = 2;
  std::uint64_t el_seed = 1;
  bool corrupt = false;

  CLI::App* c_run = app.add_subcommand("run", "train per a config file");
  c_run->add_option("--config", config_path, "config file")->required();

  CLI::App* c_part = app.add_subcommand("partition", "materialize a partition");
  c_part->add_option("--config", config_path, "config file")->required();

  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  c_eval->add_option("--config", config_path, "config file")->required();
  c_eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();

  CLI::App* c_el = app.add_subcommand("elcheck", "verify the EL dual form");
  c_el->add_option("--instances", instances, "number of random instances");
  c_el->add_option("--seed", el_seed, "instance seed");
  c_el->add_option("--n-lo", n_lo, "minimum per-client count");
  c_el->add_option("--n-hi", n_hi, "maximum per-client count");
  c_el->add_option("--d-h", d_h, "embedding dimension");
  c_el->add_flag("--corrupt", corrupt, "negative control: corrupt multipliers");

  CLI::App* c_drift = app.add_subcommand("drift", "gradient-drift report");
  c_drift->add_option("--config", config_path, "config file")->required();

  CLI::App* c_theory = app.add_subcommand("theory", "convergence/error trends");
  c_theory->add_option("--config", config_path, "config file")->required();

  CLI11_PARSE(app, argc, argv);

  if (c_run->parsed()) return cmd_run(config_path);
  if (c_part->parsed()) return cmd_partition(config_path);
  if (c_eval->parsed()) return cmd_eval(config_path, ckpt_path);
  if (c_el->parsed()) return cmd_elcheck(instances, el_seed, n_lo, n_hi, d_h, corrupt);
  if (c_drift->parsed()) return cmd_drift(config_path);
  if (c_theory->parsed()) return cmd_theory(config_path);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const divergence_error& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return 3;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const io_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 2;
  } catch (const error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
