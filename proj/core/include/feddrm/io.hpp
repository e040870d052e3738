#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "feddrm/federation.hpp"
#include "feddrm/partition.hpp"

namespace feddrm {

// fixed-precision double formatting shared by every writer so reruns are
// byte-identical
std::string format_double(double v);

// tabular CSV: one sample per row, first columns features, last column an
// integer label; '#' lines ignored
struct TabularData {
  Eigen::MatrixXd X;
  Eigen::VectorXi y;
};
TabularData load_csv_dataset(const std::string& path);
void save_csv_dataset(const std::string& path, const Eigen::MatrixXd& X,
                      const Eigen::VectorXi& y);

// assignment CSV: header comment, then sample_index,client_id,split rows
void write_assignment_csv(const std::string& path, const std::string& header,
                          const std::vector<int>& assignment,
                          const std::vector<Split>& split);

// flat image container: magic "FDRM", u32 count, u32 channels, u32 height,
// u32 width (little-endian), then raw bytes sample-major
ImageSet load_image_set(const std::string& path);
void save_image_set(const std::string& path, const ImageSet& images);

// checkpoint: magic "FDCK", u32 version, u64 config hash, then named blocks of
// (u32 name length, name bytes, u64 count, count f64 little-endian values)
struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t config_hash = 0;
  std::vector<std::pair<std::string, Eigen::VectorXd>> blocks;

  const Eigen::VectorXd& block(const std::string& name) const;
};
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// block layout for a federation state: g.<k>.W / g.<k>.b / h.<k>.W / h.<k>.b
// column-major flats, client.gamma, client.xi, target.<c>.alpha, target.<c>.beta
Checkpoint state_to_checkpoint(const FederationState& st, std::uint64_t cfg_hash);
void apply_checkpoint(FederationState& st, const Checkpoint& ck);

}  // namespace feddrm
