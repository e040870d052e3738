#include "feddrm/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace feddrm {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  write_u64(os, v);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw io_error("unexpected EOF");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw io_error("unexpected EOF");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& is) {
  const std::uint64_t v = read_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

Eigen::VectorXd matrix_flat(const Eigen::MatrixXd& m) {
  Eigen::VectorXd v(m.size());
  Eigen::Index at = 0;
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) v[at++] = m(r, c);
  return v;
}

void matrix_unflat(Eigen::MatrixXd& m, const Eigen::VectorXd& v) {
  if (v.size() != m.size()) throw contract_error("checkpoint: block size mismatch");
  Eigen::Index at = 0;
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = v[at++];
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

TabularData load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw data_error("csv: non-numeric cell in " + path);
      }
    }
    if (row.size() < 2) throw data_error("csv: rows need >= 1 feature + label");
    if (!rows.empty() && rows[0].size() != row.size())
      throw data_error("csv: ragged rows in " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw data_error("csv: no samples in " + path);

  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index p = static_cast<Eigen::Index>(rows[0].size()) - 1;
  TabularData data;
  data.X.resize(n, p);
  data.y.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index k = 0; k < p; ++k) data.X(j, k) = rows[j][k];
    const double lab = rows[j][p];
    const int lab_i = static_cast<int>(lab);
    if (lab != static_cast<double>(lab_i) || lab_i < 0)
      throw data_error("csv: label column must hold nonnegative integers");
    data.y[j] = lab_i;
  }
  return data;
}

void save_csv_dataset(const std::string& path, const Eigen::MatrixXd& X,
                      const Eigen::VectorXi& y) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  for (Eigen::Index j = 0; j < X.rows(); ++j) {
    for (Eigen::Index k = 0; k < X.cols(); ++k)
      out << format_double(X(j, k)) << ',';
    out << y[j] << '\n';
  }
}

void write_assignment_csv(const std::string& path, const std::string& header,
                          const std::vector<int>& assignment,
                          const std::vector<Split>& split) {
  if (assignment.size() != split.size())
    throw contract_error("assignment csv: size mismatch");
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out << "# " << header << '\n';
  out << "sample_index,client_id,split\n";
  for (std::size_t j = 0; j < assignment.size(); ++j) {
    if (assignment[j] < 0) continue;  // dropped by the partitioner
    out << j << ',' << assignment[j] << ','
        << (split[j] == Split::train ? "train" : "test") << '\n';
  }
}

ImageSet load_image_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "FDRM", 4) != 0)
    throw data_error("image set: bad magic in " + path);
  ImageSet set;
  set.count = static_cast<int>(read_u32(in));
  set.channels = static_cast<int>(read_u32(in));
  set.height = static_cast<int>(read_u32(in));
  set.width = static_cast<int>(read_u32(in));
  const std::size_t bytes = static_cast<std::size_t>(set.count) * set.sample_bytes();
  set.data.resize(bytes);
  if (!in.read(reinterpret_cast<char*>(set.data.data()),
               static_cast<std::streamsize>(bytes)))
    throw data_error("image set: truncated payload in " + path);
  return set;
}

void save_image_set(const std::string& path, const ImageSet& images) {
  if (images.data.size() !=
      static_cast<std::size_t>(images.count) * images.sample_bytes())
    throw contract_error("image set: byte count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out.write("FDRM", 4);
  write_u32(out, static_cast<std::uint32_t>(images.count));
  write_u32(out, static_cast<std::uint32_t>(images.channels));
  write_u32(out, static_cast<std::uint32_t>(images.height));
  write_u32(out, static_cast<std::uint32_t>(images.width));
  out.write(reinterpret_cast<const char*>(images.data.data()),
            static_cast<std::streamsize>(images.data.size()));
}

const Eigen::VectorXd& Checkpoint::block(const std::string& name) const {
  for (const auto& [n, v] : blocks)
    if (n == name) return v;
  throw data_error("checkpoint: missing block " + name);
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out.write("FDCK", 4);
  write_u32(out, ck.version);
  write_u64(out, ck.config_hash);
  for (const auto& [name, values] : ck.blocks) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, static_cast<std::uint64_t>(values.size()));
    for (Eigen::Index i = 0; i < values.size(); ++i) write_f64(out, values[i]);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "FDCK", 4) != 0)
    throw data_error("checkpoint: bad magic in " + path);
  Checkpoint ck;
  ck.version = read_u32(in);
  ck.config_hash = read_u64(in);
  while (true) {
    std::uint32_t name_len;
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) break;  // clean EOF
    name_len = 0;
    for (int i = 0; i < 4; ++i) name_len |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len))
      throw data_error("checkpoint: truncated block name");
    const std::uint64_t count = read_u64(in);
    Eigen::VectorXd values(static_cast<Eigen::Index>(count));
    for (std::uint64_t i = 0; i < count; ++i)
      values[static_cast<Eigen::Index>(i)] = read_f64(in);
    ck.blocks.emplace_back(std::move(name), std::move(values));
  }
  return ck;
}

Checkpoint state_to_checkpoint(const FederationState& st, std::uint64_t cfg_hash) {
  Checkpoint ck;
  ck.config_hash = cfg_hash;
  for (std::size_t k = 0; k < st.global.emb.g.size(); ++k) {
    ck.blocks.emplace_back("g." + std::to_string(k) + ".W",
                           matrix_flat(st.global.emb.g[k].W));
    ck.blocks.emplace_back("g." + std::to_string(k) + ".b", st.global.emb.g[k].b);
  }
  for (std::size_t k = 0; k < st.global.emb.h.size(); ++k) {
    ck.blocks.emplace_back("h." + std::to_string(k) + ".W",
                           matrix_flat(st.global.emb.h[k].W));
    ck.blocks.emplace_back("h." + std::to_string(k) + ".b", st.global.emb.h[k].b);
  }
  if (st.global.gamma.size() > 0) {
    ck.blocks.emplace_back("client.gamma", st.global.gamma);
    ck.blocks.emplace_back("client.xi", matrix_flat(st.global.xi));
  }
  for (std::size_t c = 0; c < st.heads.size(); ++c) {
    ck.blocks.emplace_back("target." + std::to_string(c) + ".alpha",
                           st.heads[c].alpha);
    ck.blocks.emplace_back("target." + std::to_string(c) + ".beta",
                           matrix_flat(st.heads[c].beta));
  }
  return ck;
}

void apply_checkpoint(FederationState& st, const Checkpoint& ck) {
  for (std::size_t k = 0; k < st.global.emb.g.size(); ++k) {
    matrix_unflat(st.global.emb.g[k].W, ck.block("g." + std::to_string(k) + ".W"));
    const Eigen::VectorXd& b = ck.block("g." + std::to_string(k) + ".b");
    if (b.size() != st.global.emb.g[k].b.size())
      throw contract_error("checkpoint: bias size mismatch");
    st.global.emb.g[k].b = b;
  }
  for (std::size_t k = 0; k < st.global.emb.h.size(); ++k) {
    matrix_unflat(st.global.emb.h[k].W, ck.block("h." + std::to_string(k) + ".W"));
    const Eigen::VectorXd& b = ck.block("h." + std::to_string(k) + ".b");
    if (b.size() != st.global.emb.h[k].b.size())
      throw contract_error("checkpoint: bias size mismatch");
    st.global.emb.h[k].b = b;
  }
  if (st.global.gamma.size() > 0) {
    const Eigen::VectorXd& g = ck.block("client.gamma");
    if (g.size() != st.global.gamma.size())
      throw contract_error("checkpoint: gamma size mismatch");
    st.global.gamma = g;
    matrix_unflat(st.global.xi, ck.block("client.xi"));
  }
  for (std::size_t c = 0; c < st.heads.size(); ++c) {
    const Eigen::VectorXd& a = ck.block("target." + std::to_string(c) + ".alpha");
    if (a.size() != st.heads[c].alpha.size())
      throw contract_error("checkpoint: alpha size mismatch");
    st.heads[c].alpha = a;
    matrix_unflat(st.heads[c].beta, ck.block("target." + std::to_string(c) + ".beta"));
  }
}

}  // namespace feddrm
