#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/harness.hpp"

using namespace vidq;
using namespace vidq::testing;

namespace {

const char* kProgram = R"(vobj Car {
  detector general_car;
  @stateless(intrinsic) property color = color;
}
vobj Person {
  detector general_person;
}
query RedCar {
  bind c: Car;
  frame_constraint c.color == "red";
}
query Pair {
  bind p: Person;
  bind c: Car;
  frame_constraint c.color == "red";
}
)";

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  TempDir dir{"cli"};

  void SetUp() override {
    std::ofstream(dir.file("p.vq")) << kProgram;
    synth::WorldSpec s;
    s.frames = 40;
    s.seed = 5;
    auto car = linear(1, "car", 100, 100, 2, 0);
    car.attrs["color"] = Value("red");
    s.objects.push_back(car);
    s.objects.push_back(linear(2, "person", 400, 400, 0, 1));
    synth::write_world(synth::generate(s), dir.str());
  }

  CliRun vidq(const std::string& args) {
    const std::string cmd = std::string(VIDQ_CLI_PATH) + " " + args + " >" + dir.file("stdout") + " 2>" +
                            dir.file("stderr");
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(dir.file("stdout")), slurp(dir.file("stderr"))};
  }

  std::string base() const {
    return "--program " + dir.file("p.vq") + " --trace " + dir.file("trace.jsonl") + " --meta " +
           dir.file("meta.json");
  }
};

}  // namespace

TEST_F(Cli, RunWritesResults) {
  const CliRun r = vidq("run " + base() + " --query RedCar --out " + dir.file("out.jsonl"));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string out = slurp(dir.file("out.jsonl"));
  EXPECT_NE(out.find("\"matched_frames\":40"), std::string::npos) << out;
}

TEST_F(Cli, SyntaxErrorExitsOneWithLocation) {
  std::ofstream(dir.file("bad.vq")) << "vobj Car {\n  detector general_car\n}\n";
  const CliRun r = vidq("validate --program " + dir.file("bad.vq"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(dir.file("bad.vq") + ":3:"), std::string::npos) << r.err;
}

TEST_F(Cli, ValidateAcceptsGoodProgram) {
  const CliRun r = vidq("validate --program " + dir.file("p.vq"));
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(Cli, MissingTraceExitsThree) {
  const CliRun r = vidq("run --program " + dir.file("p.vq") + " --trace " + dir.file("nope.jsonl"));
  EXPECT_EQ(r.code, 3);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(Cli, UnknownQueryIsAnError) {
  EXPECT_EQ(vidq("run " + base() + " --query Nope").code, 1);
  EXPECT_EQ(vidq("run " + base() + " --query \"\"").code, 1);
}

TEST_F(Cli, ExplainShowsBothBranchesAndJoin) {
  const CliRun r = vidq("explain " + base() + " --query Pair");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("digraph"), std::string::npos);
  EXPECT_NE(r.out.find("Join"), std::string::npos);
  EXPECT_NE(r.out.find("general_car"), std::string::npos);
  EXPECT_NE(r.out.find("general_person"), std::string::npos);
}

TEST_F(Cli, ExplainAllPrintsEveryCandidate) {
  std::ofstream(dir.file("reg.json")) << R"({"detectors": [{"name": "red_car", "classes": ["car"], "match": {"color": "red"}}]})";
  std::ofstream(dir.file("p.vq"), std::ios::app) << "vobj RedCar extends Car {\n  detector red_car;\n  where color == \"red\";\n}\n"
                                                    "query Reds {\n  bind r: RedCar;\n  frame_constraint r.color == \"red\";\n}\n";
  const CliRun r = vidq("explain " + base() + " --registry " + dir.file("reg.json") + " --query Reds --all");
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t graphs = 0;
  for (std::size_t p = r.out.find("digraph"); p != std::string::npos; p = r.out.find("digraph", p + 1)) ++graphs;
  EXPECT_EQ(graphs, 2u);
}

TEST_F(Cli, SynthWritesWorldAndLabels) {
  std::ofstream(dir.file("spec.json")) << R"({"seed": 1, "frames": 10, "objects": [
    {"id": 1, "class": "car", "attrs": {"color": "red"}, "trajectory": {"kind": "linear", "x": 100, "y": 100}}]})";
  const CliRun r = vidq("synth --spec " + dir.file("spec.json") + " --out-dir " + dir.file("w") + " --program " +
                     dir.file("p.vq") + " --label RedCar");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir.file("w/trace.jsonl")));
  EXPECT_TRUE(std::filesystem::exists(dir.file("w/labels_RedCar.jsonl")));
}

TEST_F(Cli, BadRegistryIsParseStage) {
  std::ofstream(dir.file("reg.json")) << "[1, 2";
  EXPECT_EQ(vidq("run " + base() + " --registry " + dir.file("reg.json")).code, 1);
}
