#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ternforge/format.hpp"
#include "ternforge/image.hpp"
#include "ternforge/synthetic.hpp"

using namespace ternforge;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("ternforge_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.json") << R"({"depth":2,"dim":16,"heads":2,"patch":8,"img_size":32,"num_classes":7})";
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the CLI with stdout captured; env is a prefix such as "TERNFORGE_THREADS=2".
  Result run(const std::string& args, const std::string& env = "") const {
    const fs::path out = dir_ / "stdout.txt";
    const std::string cmd = (env.empty() ? "" : "env " + env + " ") + "\"" + TERNFORGE_CLI_PATH + "\" " + args +
                            " > \"" + out.string() + "\" 2> \"" + (dir_ / "stderr.txt").string() + "\"";
    const int status = std::system(cmd.c_str());
    std::ifstream in(out);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
  }

  std::string p(const std::string& name) const { return "\"" + (dir_ / name).string() + "\""; }

  void make_models() {
    ASSERT_EQ(run("gen-synthetic --config " + p("tiny.json") + " --seed 3 --out " + p("m.nwa")).code, 0);
    ASSERT_EQ(run("quantize --in " + p("m.nwa") + " --plan ternary --out " + p("m.ftv")).code, 0);
    fs::create_directories(dir_ / "imgs");
    const VitConfig c = config_from_json(R"({"depth":2,"dim":16,"heads":2,"patch":8,"img_size":32,"num_classes":7})");
    for (int i = 0; i < 3; ++i) {
      F32Tensor img = synthetic_image(c, static_cast<std::uint64_t>(i));
      for (float& v : img.data()) v = 0.5f + 0.2f * v;
      write_rawf(dir_ / "imgs" / ("i" + std::to_string(i) + ".rawf"), img);
    }
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, PipelineIsDeterministic) {
  make_models();
  const auto first = read_file_bytes(dir_ / "m.ftv");
  ASSERT_EQ(run("gen-synthetic --config " + p("tiny.json") + " --seed 3 --out " + p("m2.nwa")).code, 0);
  ASSERT_EQ(run("quantize --in " + p("m2.nwa") + " --plan ternary --out " + p("m2.ftv")).code, 0);
  EXPECT_EQ(read_file_bytes(dir_ / "m2.ftv"), first);
  EXPECT_EQ(read_file_bytes(dir_ / "m2.nwa"), read_file_bytes(dir_ / "m.nwa"));
}

TEST_F(Cli, InferPrintsDescendingTopK) {
  make_models();
  std::ofstream(dir_ / "labels.txt") << "a\nb\nc\nd\ne\nf\ng\n";
  const Result r = run("infer --model " + p("m.ftv") + " --image " + p("imgs/i0.rawf") + " --labels " +
                       p("labels.txt") + " --topk 5");
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(r.out);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("rank", 0), 0u);
  double prev = 1e30;
  int rows = 0;
  for (std::string line; std::getline(in, line);) {
    std::istringstream ls(line);
    std::size_t rank, cls;
    double logit;
    std::string label;
    ls >> rank >> cls >> logit >> label;
    EXPECT_EQ(rank, static_cast<std::size_t>(rows + 1));
    EXPECT_LE(logit, prev);
    EXPECT_EQ(label, std::string(1, static_cast<char>('a' + cls)));
    prev = logit;
    ++rows;
  }
  EXPECT_EQ(rows, 5);
  const std::string once = run("infer --model " + p("m.ftv") + " --image " + p("imgs/i0.rawf")).out;
  EXPECT_EQ(run("infer --model " + p("m.ftv") + " --image " + p("imgs/i0.rawf")).out, once);
}

TEST_F(Cli, CompareProfileRollout) {
  make_models();
  const Result cmp = run("compare --model " + p("m.ftv") + " --ref " + p("m.nwa") + " --images " + p("imgs") +
                         " --out " + p("fid.csv"), "TERNFORGE_THREADS=2");
  ASSERT_EQ(cmp.code, 0) << cmp.out;
  EXPECT_NE(cmp.out.find("images            3"), std::string::npos);
  const auto csv = read_file_bytes(dir_ / "fid.csv");
  EXPECT_EQ(std::string(csv.begin(), csv.begin() + 25), "section,name,metric,value");

  const Result prof = run("profile --model " + p("m.ftv") + " --image " + p("imgs/i1.rawf") + " --reps 3 --csv " +
                          p("prof.csv"));
  ASSERT_EQ(prof.code, 0);
  EXPECT_NE(prof.out.find("Total (2 blocks)"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "prof.csv"));

  const Result roll = run("rollout --model " + p("m.ftv") + " --image " + p("imgs/i2.rawf") + " --out " + p("r.pgm"));
  ASSERT_EQ(roll.code, 0);
  const auto pgm = read_file_bytes(dir_ / "r.pgm");
  EXPECT_EQ(std::string(pgm.begin(), pgm.begin() + 11), "P5\n4 4\n255\n");
  EXPECT_EQ(pgm.size(), 11u + 16);
}

TEST_F(Cli, ImportanceToy) {
  std::ofstream(dir_ / "toy.json") << R"({"type":"quadratic","w":[1,1,1],"a":[1,2,3]})";
  const Result r = run("importance --toy " + p("toy.json") + " --seed 1 --probes 8 --out " + p("imp.csv"));
  ASSERT_EQ(r.code, 0);
  std::ifstream in(dir_ / "imp.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "group,params,param_share,taylor_fo,taylor_fo_share,hessian_trace,hessian_stderr,hessian_share");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("quantize --in x.nwa --plan int4 --out y.ftv").code, 2);
  EXPECT_EQ(run("infer --model " + p("missing.ftv") + " --image x.ppm").code, 3);
  std::ofstream(dir_ / "bad.ftv") << "not a model at all";
  EXPECT_EQ(run("infer --model " + p("bad.ftv") + " --image x.ppm").code, 4);
  std::ofstream(dir_ / "toy.json") << R"({"type":"linear","w":[1],"c":[1]})";
  EXPECT_EQ(run("importance --toy " + p("toy.json") + " --seed 1 --out " + p("o.csv"), "TERNFORGE_THREADS=zero").code, 2);
  EXPECT_EQ(run("importance --toy " + p("toy.json") + " --seed 1 --out " + p("o.csv"), "TERNFORGE_THREADS=0").code, 2);
  EXPECT_EQ(run("importance --toy " + p("toy.json") + " --seed 1 --out " + p("o.csv"), "TERNFORGE_THREADS=4").code, 0);
  EXPECT_EQ(run("size --config deit_tiny_224 --plan ternary").code, 0);
  EXPECT_EQ(run("size --config no_such_model --plan ternary").code, 2);
}
