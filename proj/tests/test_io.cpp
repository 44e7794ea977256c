#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "orbit/checkpoint.hpp"
#include "orbit/trace.hpp"

using namespace orbit;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("orbit_ckpt_rt");
  Rng rng(1);
  auto mlp = nn::Mlp::make(3, {4}, 2, nn::OutputActivation::linear, rng);
  std::vector<double> extra{0.1, -1e300, 5e-324};
  TensorRegistry reg;
  reg.add("net", mlp);
  reg.add("extra", 1, 3, extra);
  CheckpointInfo info;
  info.seed = 99;
  info.step = 7;
  info.extra["note"] = "x";
  save_checkpoint(dir.path / "ck", reg, info);

  Rng other(2);
  auto mlp2 = nn::Mlp::make(3, {4}, 2, nn::OutputActivation::linear, other);
  std::vector<double> extra2(3, 0.0);
  TensorRegistry reg2;
  reg2.add("net", mlp2);
  reg2.add("extra", 1, 3, extra2);
  auto got = load_checkpoint(dir.path / "ck", reg2);
  EXPECT_EQ(got.seed, 99u);
  EXPECT_EQ(got.step, 7);
  EXPECT_EQ(got.extra["note"], "x");
  EXPECT_EQ(extra2, extra);
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    EXPECT_EQ(mlp2.layers[l].weights, mlp.layers[l].weights);
    EXPECT_EQ(mlp2.layers[l].bias, mlp.layers[l].bias);
  }
  EXPECT_EQ(std::filesystem::file_size(dir.path / "ck.bin"), 8u * (4 * 3 + 4 + 2 * 4 + 2 + 3));
}

TEST(Checkpoint, BlobIsLittleEndianFloat64) {
  TempDir dir("orbit_ckpt_le");
  std::vector<double> v{1.0};
  TensorRegistry reg;
  reg.add("one", 1, 1, v);
  save_checkpoint(dir.path / "le", reg, {});
  std::ifstream in(dir.path / "le.bin", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(bytes, (std::vector<unsigned char>{0, 0, 0, 0, 0, 0, 0xf0, 0x3f}));
}

TEST(Checkpoint, MismatchesAreRejected) {
  TempDir dir("orbit_ckpt_bad");
  std::vector<double> a{1, 2, 3, 4};
  TensorRegistry reg;
  reg.add("a", 2, 2, a);
  save_checkpoint(dir.path / "c", reg, {});

  std::vector<double> wrong(4);
  TensorRegistry shape;
  shape.add("a", 1, 4, wrong);
  EXPECT_THROW(load_checkpoint(dir.path / "c", shape), CheckpointError);
  TensorRegistry name;
  name.add("b", 2, 2, wrong);
  EXPECT_THROW(load_checkpoint(dir.path / "c", name), CheckpointError);

  {
    std::ofstream out(dir.path / "c.bin", std::ios::binary | std::ios::app);
    out.put('x');
  }
  TensorRegistry ok;
  ok.add("a", 2, 2, wrong);
  EXPECT_THROW(load_checkpoint(dir.path / "c", ok), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir.path / "missing", ok), CheckpointError);
}

TEST(Trace, JsonlRoundTrip) {
  EpisodeTraceLog log;
  log.header = {3, "task-9", 2, 5, 2, 0.75, 0.2, 0.125, 0.725};
  log.decisions.push_back({DecisionKind::activate, {4}, 0.3, 0.61, true});
  log.decisions.push_back({DecisionKind::spatial, {0, 4}, -1.0 / 3.0, 0.7, false});
  log.decisions.push_back({DecisionKind::temporal, {4, 0}, 2.5, 0.924, true});
  std::stringstream ss;
  write_trace(ss, log);
  write_trace(ss, log);
  auto back = read_traces(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].header.task_id, "task-9");
  EXPECT_EQ(back[1].header.reward, 0.725);
  ASSERT_EQ(back[0].decisions.size(), 3u);
  EXPECT_EQ(back[0].decisions[1].logit, -1.0 / 3.0);
  EXPECT_EQ(back[0].decisions[2].kind, DecisionKind::temporal);
  EXPECT_EQ(back[0].decisions[1].ids, (std::vector<AgentId>{0, 4}));

  std::stringstream first_line;
  write_trace(first_line, log);
  std::string line;
  std::getline(first_line, line);
  std::getline(first_line, line);
  EXPECT_EQ(line, R"({"kind":"activate","ids":[4],"logit":0.3,"probability":0.61,"accepted":true})");
}

TEST(Trace, CorruptInputReportsLine) {
  std::stringstream bad("{\"kind\":\"episode\"}\n");
  EXPECT_THROW(read_traces(bad), TraceFormatError);
  std::stringstream orphan(R"({"kind":"spatial","ids":[0,1],"logit":0,"probability":0.5,"accepted":true})");
  EXPECT_THROW(read_traces(orphan), TraceFormatError);
  std::stringstream garbage("not json\n");
  try {
    read_traces(garbage);
    FAIL();
  } catch (const TraceFormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
  std::stringstream empty("");
  EXPECT_TRUE(read_traces(empty).empty());
}
