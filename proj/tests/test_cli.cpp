// End-to-end checks of the cml executable.

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#ifndef CML_CLI_PATH
#error "CML_CLI_PATH must point at the cml executable"
#endif

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int status = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("cml_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunResult run(const std::string& args) {
    const auto out = dir_ / "stdout.txt";
    const std::string cmd = std::string("\"") + CML_CLI_PATH + "\" " + args + " > \"" + out.string() +
                            "\" 2> \"" + (dir_ / "stderr.txt").string() + "\"";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    return r;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // 24 users, 12 items in two halves, 6 interactions per user, ratings 1..5.
  void write_dataset(const std::string& name) {
    std::ofstream out(dir_ / name);
    for (int u = 0; u < 24; ++u) {
      const int base = (u % 2) * 6;
      for (int i = 0; i < 6; ++i) out << "user" << u << "\titem" << base + i << "\t" << 3 + (u + i) % 3 << "\n";
    }
  }

  fs::path dir_;
};

TEST_F(CliTest, PreprocessSmallFixture) {
  std::ofstream(dir_ / "raw.tsv") << "a\tx\t5\na\ty\t4\na\tz\t1\nb\tx\t5\nb\ty\t5\n"
                                     "c\tz\t2\nc\tx\t5\nd\tw\t3\nd\tx\t4\ne\ty\t5\n";
  const auto r = run("preprocess --input " + path("raw.tsv") + " --out " + path("proc") +
                     " --threshold 4 --threshold-mode ge --min-user 2");
  ASSERT_EQ(r.status, 0) << slurp(dir_ / "stderr.txt");
  // Kept: a{x,y}, b{x,y}, d{x}->dropped, c{x}->dropped, e{y}->dropped.
  EXPECT_NE(r.out.find("num_users\t2\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("num_items\t2\n"), std::string::npos);
  EXPECT_NE(r.out.find("num_interactions\t4\n"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "proc" / "interactions.tsv"));
  EXPECT_EQ(slurp(dir_ / "proc" / "users.tsv"), "0\ta\n1\tb\n");
}

TEST_F(CliTest, MissingInputIsDataError) {
  EXPECT_EQ(run("preprocess --input " + path("nope.tsv") + " --out " + path("proc")).status, 2);
  EXPECT_EQ(run("bogus").status, 1);
  EXPECT_EQ(run("train").status, 1);
}

TEST_F(CliTest, MalformedLineIsDataError) {
  std::ofstream(dir_ / "bad.tsv") << "a\tx\t5\nb\ty\n";
  EXPECT_EQ(run("preprocess --input " + path("bad.tsv") + " --out " + path("proc")).status, 2);
}

TEST_F(CliTest, SplitTrainEvaluateRecommend) {
  write_dataset("raw.tsv");
  ASSERT_EQ(run("preprocess --input " + path("raw.tsv") + " --out " + path("proc")).status, 0);
  ASSERT_EQ(run("split --data " + path("proc") + " --folds 4 --seed 3").status, 0);
  EXPECT_TRUE(fs::exists(dir_ / "proc" / "folds.tsv"));

  const std::string common = " --data " + path("proc") +
                             " --strategy two_stage --candidates 8 --negatives 2 --batch 16 --dim 4"
                             " --epochs 3 --lr 0.01 --seed 9";
  for (int f = 0; f < 4; ++f) {
    const auto model = path("m" + std::to_string(f) + ".cmle");
    const auto t = run("train" + common + " --test_fold " + std::to_string(f) + " --out " + model);
    ASSERT_EQ(t.status, 0) << slurp(dir_ / "stderr.txt");
    const auto e = run("evaluate --model " + model + " --data " + path("proc") + " --k 5 --metrics " +
                       path("metrics.tsv"));
    ASSERT_EQ(e.status, 0) << slurp(dir_ / "stderr.txt");
  }
  const auto metrics = slurp(dir_ / "metrics.tsv");
  EXPECT_EQ(metrics.rfind("strategy\tn_negatives\tbatch_size\tfold\tmap_at_5\tndcg_at_5\tmmr\n", 0), 0u);
  for (int f = 0; f < 4; ++f) {
    EXPECT_NE(metrics.find("two_stage\t2\t16\t" + std::to_string(f) + "\t"), std::string::npos) << metrics;
  }
  EXPECT_NE(metrics.find("two_stage\t2\t16\tmean±std\t"), std::string::npos);

  const auto log = slurp(path("m0.cmle") + ".log.tsv");
  EXPECT_EQ(log.rfind("epoch\tmean_loss\tactive_fraction\n", 0), 0u);

  const auto rec = run("recommend --model " + path("m0.cmle") + " --data " + path("proc") + " --user user3 --k 4");
  ASSERT_EQ(rec.status, 0);
  std::istringstream lines(rec.out);
  std::string line;
  double prev = 1e9;
  int count = 0;
  while (std::getline(lines, line)) {
    std::istringstream fields(line);
    int rank;
    std::string item;
    double score;
    fields >> rank >> item >> score;
    EXPECT_EQ(rank, count + 1);
    EXPECT_LE(score, prev + 1e-12);
    prev = score;
    ++count;
  }
  EXPECT_EQ(count, 4);
  // Excluding training items leaves fewer than 50 candidates out of 12.
  const auto longer = run("recommend --model " + path("m0.cmle") + " --data " + path("proc") + " --user user3 --k 50");
  ASSERT_EQ(longer.status, 0);
  EXPECT_LT(std::count(longer.out.begin(), longer.out.end(), '\n'), 12);

  EXPECT_EQ(run("recommend --model " + path("m0.cmle") + " --data " + path("proc") + " --user nobody").status, 2);
}

TEST_F(CliTest, CorruptModelIsRejected) {
  write_dataset("raw.tsv");
  ASSERT_EQ(run("preprocess --input " + path("raw.tsv") + " --out " + path("proc")).status, 0);
  ASSERT_EQ(run("split --data " + path("proc")).status, 0);
  ASSERT_EQ(run("train --data " + path("proc") + " --dim 4 --epochs 1 --out " + path("m.cmle")).status, 0);
  auto bytes = slurp(dir_ / "m.cmle");
  bytes[0] = 'X';
  std::ofstream(dir_ / "bad.cmle", std::ios::binary) << bytes;
  EXPECT_EQ(run("evaluate --model " + path("bad.cmle") + " --data " + path("proc")).status, 2);
  EXPECT_EQ(run("train --data " + path("proc") + " --dim abc").status, 1);
  EXPECT_EQ(run("train --data " + path("proc") + " --bogus 1").status, 1);
}

TEST_F(CliTest, ConfigFileAndFlagPrecedence) {
  write_dataset("raw.tsv");
  ASSERT_EQ(run("preprocess --input " + path("raw.tsv") + " --out " + path("proc") + " --dataset book-crossing").status, 0);
  ASSERT_EQ(run("split --data " + path("proc")).status, 0);
  std::ofstream(dir_ / "exp.cfg") << "dim=6\nepochs=2\nstrategy=popularity\n";
  ASSERT_EQ(run("train --data " + path("proc") + " --config " + path("exp.cfg") + " --dim 3 --out " + path("m.cmle")).status, 0);
  const auto cfg = slurp(path("m.cmle") + ".cfg");
  EXPECT_NE(cfg.find("dim=3\n"), std::string::npos) << cfg;
  EXPECT_NE(cfg.find("epochs=2\n"), std::string::npos);
  EXPECT_NE(cfg.find("strategy=popularity\n"), std::string::npos);
  EXPECT_NE(cfg.find("beta=0.80000000000000004\n"), std::string::npos);
  EXPECT_NE(cfg.find("batch_size=256\n"), std::string::npos);
}

TEST_F(CliTest, SameSeedSameBytes) {
  write_dataset("raw.tsv");
  ASSERT_EQ(run("preprocess --input " + path("raw.tsv") + " --out " + path("proc")).status, 0);
  ASSERT_EQ(run("split --data " + path("proc") + " --seed 5").status, 0);
  const std::string args = "train --data " + path("proc") + " --dim 4 --epochs 2 --candidates 5 --seed 11 --out ";
  ASSERT_EQ(run(args + path("a.cmle")).status, 0);
  ASSERT_EQ(run(args + path("b.cmle")).status, 0);
  EXPECT_EQ(slurp(dir_ / "a.cmle"), slurp(dir_ / "b.cmle"));
  EXPECT_EQ(slurp(path("a.cmle") + ".log.tsv"), slurp(path("b.cmle") + ".log.tsv"));
  const auto ea = run("evaluate --model " + path("a.cmle") + " --data " + path("proc") + " --k 5");
  const auto eb = run("evaluate --model " + path("b.cmle") + " --data " + path("proc") + " --k 5");
  EXPECT_EQ(ea.out, eb.out);
}

}  // namespace
