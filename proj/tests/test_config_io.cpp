#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "feddrm/io.hpp"
#include "feddrm/runconfig.hpp"
#include "feddrm/rng.hpp"

using namespace feddrm;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("config_io") {

TEST_CASE("key-value parsing with comments and whitespace") {
  RunConfig cfg = RunConfig::parse_string(
      "# a comment\n"
      "alpha = 0.3   # trailing comment\n"
      "  name =  synth_drm\n"
      "flag = true\n"
      "grid = 1,2,4,8\n"
      "\n");
  CHECK(cfg.get_double("alpha") == 0.3);
  CHECK(cfg.get_str("name") == "synth_drm");
  CHECK(cfg.get_bool("flag"));
  CHECK(cfg.get_int_list("grid") == std::vector<int>{1, 2, 4, 8});
  CHECK(cfg.get_int("absent", 7) == 7);
}

TEST_CASE("missing required keys name the key") {
  RunConfig cfg = RunConfig::parse_string("a = 1\n");
  try {
    cfg.get_str("output_dir");
    CHECK(false);
  } catch (const config_error& e) {
    CHECK(std::string(e.what()).find("output_dir") != std::string::npos);
  }
}

TEST_CASE("unknown and duplicate keys are rejected") {
  RunConfig cfg = RunConfig::parse_string("a = 1\nb = 2\n");
  CHECK_THROWS_AS(cfg.reject_unknown({"a"}), config_error);
  cfg.reject_unknown({"a", "b", "c"});
  CHECK_THROWS_AS(RunConfig::parse_string("a = 1\na = 2\n"), config_error);
  CHECK_THROWS_AS(RunConfig::parse_string("just a line\n"), config_error);
}

TEST_CASE("config hash is stable and content sensitive") {
  RunConfig a = RunConfig::parse_string("x = 1\ny = 2\n");
  RunConfig b = RunConfig::parse_string("y = 2\nx = 1\n");  // order irrelevant
  RunConfig c = RunConfig::parse_string("x = 1\ny = 3\n");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != c.hash());
}

TEST_CASE("csv dataset round trip") {
  const std::string path = temp_path("feddrm_test_data.csv");
  Rng rng(1);
  Eigen::MatrixXd x(20, 3);
  Eigen::VectorXi y(20);
  for (int j = 0; j < 20; ++j) {
    for (int k = 0; k < 3; ++k) x(j, k) = rng.normal();
    y[j] = static_cast<int>(rng.uniform_int(5));
  }
  save_csv_dataset(path, x, y);
  TabularData data = load_csv_dataset(path);
  CHECK(data.X == x);  // %.17g round-trips doubles exactly
  CHECK(data.y == y);
  std::remove(path.c_str());
}

TEST_CASE("csv loader rejects bad content") {
  const std::string path = temp_path("feddrm_bad.csv");
  {
    std::ofstream out(path);
    out << "1.0,2.0,hello\n";
  }
  CHECK_THROWS_AS(load_csv_dataset(path), data_error);
  {
    std::ofstream out(path);
    out << "1.0,2.0,1.5\n";  // non-integer label
  }
  CHECK_THROWS_AS(load_csv_dataset(path), data_error);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_csv_dataset(path), io_error);
}

TEST_CASE("image set round trip") {
  const std::string path = temp_path("feddrm_test.fdrm");
  ImageSet img;
  img.count = 3;
  img.channels = 3;
  img.height = 2;
  img.width = 2;
  Rng rng(2);
  img.data.resize(3 * 3 * 4);
  for (auto& b : img.data) b = static_cast<std::uint8_t>(rng.uniform_int(256));
  save_image_set(path, img);
  ImageSet back = load_image_set(path);
  CHECK(back.count == img.count);
  CHECK(back.channels == img.channels);
  CHECK(back.height == img.height);
  CHECK(back.width == img.width);
  CHECK(back.data == img.data);
  std::remove(path.c_str());
}

TEST_CASE("image loader rejects bad magic and truncation") {
  const std::string path = temp_path("feddrm_bad.fdrm");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE";
  }
  CHECK_THROWS_AS(load_image_set(path), data_error);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint round trip is bit exact") {
  const std::string path = temp_path("feddrm_test.fdck");
  NetConfig net;
  net.input_dim = 3;
  net.g_layers = {4, 2};
  net.h_layers = {2};
  FederationConfig fc;
  fc.clients = 3;
  fc.lr = 0.1;
  FederationState st = init_state(fc, net, 4, 9);
  st.global.gamma << 0.25, -1.5, 3.25;

  Checkpoint ck = state_to_checkpoint(st, 0xabcdef0123456789ULL);
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path);
  CHECK(back.config_hash == ck.config_hash);
  CHECK(back.version == ck.version);
  REQUIRE(back.blocks.size() == ck.blocks.size());
  for (std::size_t i = 0; i < ck.blocks.size(); ++i) {
    CHECK(back.blocks[i].first == ck.blocks[i].first);
    CHECK(back.blocks[i].second == ck.blocks[i].second);
  }

  FederationState restored = init_state(fc, net, 4, 777);  // different init
  apply_checkpoint(restored, back);
  CHECK(restored.global.emb.flatten() == st.global.emb.flatten());
  CHECK(restored.global.gamma == st.global.gamma);
  CHECK(restored.heads[0].alpha == st.heads[0].alpha);
  std::remove(path.c_str());
}

TEST_CASE("assignment csv skips dropped samples") {
  const std::string path = temp_path("feddrm_assign.csv");
  write_assignment_csv(path, "config_hash=42 seed=1", {0, -1, 1},
                       {Split::train, Split::test, Split::test});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line.find("config_hash=42") != std::string::npos);
  std::getline(in, line);
  CHECK(line == "sample_index,client_id,split");
  std::getline(in, line);
  CHECK(line == "0,0,train");
  std::getline(in, line);
  CHECK(line == "2,1,test");
  CHECK(!std::getline(in, line));
  std::remove(path.c_str());
}

}  // TEST_SUITE
