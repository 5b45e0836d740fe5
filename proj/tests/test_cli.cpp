#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "oodscore/calib.hpp"
#include "oodscore/cli.hpp"
#include "oodscore/datastore.hpp"
#include "oodscore/metrics.hpp"
#include "oodscore/report.hpp"
#include "oodscore/scores.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace oodscore;
using oodscore::testing::slurp;
using oodscore::testing::snapshot;
using oodscore::testing::spit;
using oodscore::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new TempDir;
    const auto r = cli({"synth", "--K", "3", "--d", "8", "--n-per-class", "20", "--n-ood", "40", "--ood-kind",
                        "mean_shift", "--shift-mag", "2", "--seed", "5", "--out", path("data")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto c = cli({"calibrate", "--train", path("data/train"), "--out", path("stats")});
    ASSERT_EQ(c.code, 0) << c.err;
  }
  static void TearDownTestSuite() {
    delete root_;
    root_ = nullptr;
  }
  static std::string path(const std::string& rel) { return (root_->path() / rel).string(); }

  // Scores test and ood with the given extra flags and returns the eval row.
  CliRun score_pair(const std::string& tag, std::vector<std::string> flags) {
    for (const char* split : {"test", "ood"}) {
      std::vector<std::string> args{"score", "--eval", path(std::string("data/") + split), "--stats", path("stats"),
                                    "--out", scratch_ / (tag + "_" + split), "--threads", "1"};
      args.insert(args.end(), flags.begin(), flags.end());
      const auto r = cli(args);
      EXPECT_EQ(r.code, 0) << r.err;
    }
    return cli({"eval", "--id", scratch_ / (tag + "_test"), "--ood", scratch_ / (tag + "_ood")});
  }

  static TempDir* root_;
  TempDir scratch_;
};

TempDir* Cli::root_ = nullptr;

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  EXPECT_EQ(cli({}).code, kExitValidation);
  EXPECT_EQ(cli({"nonsense"}).code, kExitValidation);
  EXPECT_EQ(cli({"calibrate", "--train", path("data/train")}).code, kExitValidation);
  EXPECT_EQ(cli({"eval", "--id", "a", "--ood", "b", "--bogus"}).code, kExitValidation);
}

TEST_F(Cli, SynthIsDeterministic) {
  const std::vector<std::string> base{"synth", "--K", "3", "--d", "8", "--n-per-class", "20", "--n-ood", "40",
                                      "--ood-kind", "mean_shift", "--shift-mag", "2", "--seed", "5", "--out"};
  auto args = base;
  args.push_back(scratch_ / "again");
  const auto r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(snapshot(scratch_ / "again"), snapshot(path("data")));
  EXPECT_TRUE(contains(r.out, "mean_shift_delta2"));

  args = base;
  args[args.size() - 2] = "6";
  args.push_back(scratch_ / "other");
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_NE(slurp(scratch_ / "other/ood/features.bin"), slurp(path("data/ood/features.bin")));

  EXPECT_EQ(cli({"synth", "--K", "1", "--out", scratch_ / "bad"}).code, kExitValidation);
  EXPECT_FALSE(fs::exists(scratch_ / "bad/train"));
  EXPECT_EQ(cli({"synth", "--ood-kind", "sideways", "--out", scratch_ / "bad"}).code, kExitValidation);
}

TEST_F(Cli, SynthLayout) {
  const auto train = read_dataset(path("data/train"));
  const auto ood = read_dataset(path("data/ood"));
  EXPECT_EQ(train.dataset.size(), 60u);
  EXPECT_TRUE(train.dataset.labels.has_value());
  EXPECT_TRUE(train.head.has_value());
  EXPECT_EQ(ood.dataset.size(), 40u);
  EXPECT_FALSE(ood.dataset.labels.has_value());
}

TEST_F(Cli, CalibrateRerunIsByteIdentical) {
  const auto r = cli({"calibrate", "--train", path("data/train"), "--out", scratch_ / "stats"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "grouping=labels"));
  EXPECT_EQ(snapshot(scratch_ / "stats"), snapshot(path("stats")));
  const auto stats = read_stats(scratch_ / "stats");
  EXPECT_EQ(stats.num_classes(), 3u);
  EXPECT_TRUE(stats.react_clip.has_value());
}

TEST_F(Cli, CalibrateErrors) {
  const auto missing_labels =
      cli({"calibrate", "--train", path("data/ood"), "--grouping", "labels", "--out", scratch_ / "s"});
  EXPECT_EQ(missing_labels.code, kExitValidation);
  EXPECT_TRUE(contains(missing_labels.err, "labels"));
  EXPECT_FALSE(fs::exists(scratch_ / "s"));

  const auto predicted = cli({"calibrate", "--train", path("data/ood"), "--out", scratch_ / "s"});
  EXPECT_EQ(predicted.code, kExitOk) << predicted.err;
  EXPECT_TRUE(contains(predicted.out, "grouping=predicted"));

  EXPECT_EQ(cli({"calibrate", "--train", scratch_ / "nowhere", "--out", scratch_ / "t"}).code, kExitIo);
  EXPECT_EQ(cli({"calibrate", "--train", path("data/train"), "--temperature", "0", "--out", scratch_ / "t"}).code,
            kExitValidation);
  EXPECT_EQ(cli({"calibrate", "--train", path("data/train"), "--grouping", "x", "--out", scratch_ / "t"}).code,
            kExitValidation);
  EXPECT_FALSE(fs::exists(scratch_ / "t"));
}

TEST_F(Cli, ScoreMethodsAndLabels) {
  auto run = [&](const std::string& out, std::vector<std::string> flags) {
    std::vector<std::string> args{"score", "--eval", path("data/test"), "--stats", path("stats"), "--out",
                                  scratch_ / out};
    args.insert(args.end(), flags.begin(), flags.end());
    const auto r = cli(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return read_scores(scratch_ / out);
  };
  const auto msp = run("msp", {"--method", "msp"});
  EXPECT_EQ(msp.scores.method.label(), "msp");
  EXPECT_EQ(msp.dataset, "test");
  EXPECT_EQ(msp.scores.values.size(), 60u);
  for (double v : msp.scores.values) {
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(run("gafdc", {"--b", "0"}).scores.method.label(), "gafd_cc[lambda=0.5;b=0;T=1]");
  EXPECT_EQ(run("named", {"--method", "energy", "--name", "held_out"}).dataset, "held_out");
  EXPECT_EQ(run("react", {"--method", "react"}).scores.method.label(), "react[clip=stats;T=1]");
}

TEST_F(Cli, ScoreValidation) {
  const auto bad_lambda = cli({"score", "--eval", path("data/test"), "--stats", path("stats"), "--lambda", "1.5",
                               "--out", scratch_ / "x"});
  EXPECT_EQ(bad_lambda.code, kExitValidation);
  EXPECT_TRUE(contains(bad_lambda.err, "lambda out of range"));
  EXPECT_EQ(cli({"score", "--eval", path("data/test"), "--out", scratch_ / "x"}).code, kExitValidation);
  EXPECT_EQ(cli({"score", "--eval", path("data/test"), "--method", "cosine", "--out", scratch_ / "x"}).code,
            kExitValidation);
  EXPECT_EQ(cli({"score", "--eval", path("data/test"), "--stats", path("stats"), "--temperature", "2", "--out",
                 scratch_ / "x"})
                .code,
            kExitValidation);
  EXPECT_EQ(cli({"score", "--eval", scratch_ / "nowhere", "--method", "msp", "--out", scratch_ / "x"}).code,
            kExitIo);
  EXPECT_FALSE(fs::exists(scratch_ / "x"));
}

TEST_F(Cli, ScoreReportsDegenerateRowsAndWritesNothing) {
  auto loaded = read_dataset(path("data/test"));
  auto& f = loaded.dataset.features;
  for (std::size_t j = 0; j < f.cols(); ++j) {
    f(4, j) = 0.0;
    f(9, j) = 0.0;
  }
  loaded.dataset.logits.reset();
  write_dataset(loaded.dataset, &*loaded.head, scratch_ / "degenerate");
  const auto r = cli({"score", "--eval", scratch_ / "degenerate", "--stats", path("stats"), "--out",
                      scratch_ / "scores"});
  EXPECT_EQ(r.code, kExitRowFailure);
  EXPECT_TRUE(contains(r.err, "row 4"));
  EXPECT_TRUE(contains(r.err, "row 9"));
  EXPECT_FALSE(contains(r.err, "row 5:"));
  EXPECT_FALSE(fs::exists(scratch_ / "scores"));

  // Baselines that ignore the feature norm still succeed.
  EXPECT_EQ(cli({"score", "--eval", scratch_ / "degenerate", "--method", "energy", "--out", scratch_ / "e"}).code,
            kExitOk);
}

TEST_F(Cli, EvalSymmetryAndTprTarget) {
  const auto forward = score_pair("g", {});
  ASSERT_EQ(forward.code, 0) << forward.err;
  const auto rows = parse_metrics_csv(forward.out);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].method, "gafd_cc[lambda=0.5;b=1;T=1]");
  EXPECT_EQ(rows[0].dataset_id, "test");
  EXPECT_EQ(rows[0].dataset_ood, "ood");

  const auto backward = cli({"eval", "--id", scratch_ / "g_ood", "--ood", scratch_ / "g_test"});
  ASSERT_EQ(backward.code, 0);
  EXPECT_NEAR(parse_metrics_csv(backward.out)[0].result.auroc, 1.0 - rows[0].result.auroc, 1.5e-6);

  const auto id = read_scores(scratch_ / "g_test").scores.values;
  const auto ood = read_scores(scratch_ / "g_ood").scores.values;
  const auto at99 = cli({"eval", "--id", scratch_ / "g_test", "--ood", scratch_ / "g_ood", "--tpr", "0.99",
                         "--header"});
  ASSERT_EQ(at99.code, 0);
  EXPECT_EQ(lines(at99.out)[0] + "\n", csv_header());
  const auto r99 = parse_metrics_csv(at99.out)[0].result;
  EXPECT_NEAR(r99.fpr, oracle::scan_fpr(id, ood, 0.99), 5e-7);
  EXPECT_NEAR(r99.threshold, oracle::scan_threshold(id, 0.99), 5e-7);
  EXPECT_NEAR(r99.auroc, oracle::pairwise_auroc(id, ood), 5e-7);
}

TEST_F(Cli, EvalErrors) {
  score_pair("g", {});
  ASSERT_EQ(cli({"score", "--eval", path("data/ood"), "--method", "msp", "--out", scratch_ / "msp_ood"}).code, 0);
  const auto mismatch = cli({"eval", "--id", scratch_ / "g_test", "--ood", scratch_ / "msp_ood"});
  EXPECT_EQ(mismatch.code, kExitValidation);
  EXPECT_TRUE(contains(mismatch.err, "method mismatch"));
  EXPECT_EQ(cli({"eval", "--id", scratch_ / "g_test", "--ood", scratch_ / "none"}).code, kExitIo);
  EXPECT_EQ(cli({"eval", "--id", scratch_ / "g_test", "--ood", scratch_ / "g_ood", "--tpr", "0"}).code,
            kExitValidation);
}

TEST_F(Cli, SweepCardinalityAndGafdCColumn) {
  const auto sweep = cli({"sweep", "--eval", path("data/test"), "--ood", path("data/ood"), "--stats", path("stats"),
                          "--lambda-grid", "0,0.25,0.5,0.75,1", "--threads", "2"});
  ASSERT_EQ(sweep.code, 0) << sweep.err;
  const auto rows = parse_metrics_csv(sweep.out);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(lines(sweep.out).size(), 6u);
  for (const auto& r : rows) {
    EXPECT_TRUE(std::isfinite(r.result.auroc));
    EXPECT_TRUE(std::isfinite(r.result.fpr));
    EXPECT_EQ(r.dataset_id, "test");
    EXPECT_EQ(r.dataset_ood, "ood");
  }
  EXPECT_EQ(rows[0].method, "gafd_cc[lambda=0;b=1;T=1]");
  EXPECT_EQ(rows[4].method, "gafd_cc[lambda=1;b=1;T=1]");

  const auto gc = cli({"sweep", "--eval", path("data/test"), "--ood", path("data/ood"), "--stats", path("stats"),
                       "--lambda-grid", "0.5", "--b-grid", "0,1,2", "--out", scratch_ / "sweep.csv"});
  ASSERT_EQ(gc.code, 0) << gc.err;
  EXPECT_TRUE(gc.out.empty());
  const auto gc_rows = parse_metrics_csv(slurp(scratch_ / "sweep.csv"));
  ASSERT_EQ(gc_rows.size(), 3u);

  // The b = 0 row is the class-confidence-free variant scored on its own.
  const auto single = score_pair("c", {"--b", "0"});
  ASSERT_EQ(single.code, 0);
  const auto expected = parse_metrics_csv(single.out)[0];
  EXPECT_EQ(gc_rows[0].method, expected.method);
  EXPECT_EQ(gc_rows[0].result.auroc, expected.result.auroc);
  EXPECT_EQ(gc_rows[0].result.fpr, expected.result.fpr);
}

TEST_F(Cli, SweepErrors) {
  const std::vector<std::string> base{"sweep", "--eval", path("data/test"), "--ood", path("data/ood"), "--stats",
                                      path("stats")};
  auto with = [&](std::vector<std::string> extra) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return cli(a).code;
  };
  EXPECT_EQ(with({"--lambda-grid", "0,x"}), kExitValidation);
  EXPECT_EQ(with({"--lambda-grid", "0,1.1"}), kExitValidation);
  EXPECT_EQ(with({"--b-grid", ""}), kExitValidation);
  EXPECT_EQ(cli({"sweep", "--eval", path("data/test"), "--ood", path("data/ood"), "--stats", scratch_ / "none"}).code,
            kExitIo);
}

TEST_F(Cli, ReportMergesFiles) {
  const auto g = score_pair("g", {});
  const auto c = score_pair("c", {"--b", "0"});
  spit(scratch_ / "a.csv", csv_header() + g.out);
  spit(scratch_ / "b.csv", c.out);
  const auto r = cli({"report", scratch_ / "a.csv", scratch_ / "b.csv", "--best-bold"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "gafd_cc[lambda=0.5;b=0;T=1]"));
  EXPECT_TRUE(contains(r.out, "**"));
  const auto plain = cli({"report", scratch_ / "a.csv", scratch_ / "b.csv"});
  EXPECT_FALSE(contains(plain.out, "**"));

  ASSERT_EQ(cli({"report", scratch_ / "a.csv", "--out", scratch_ / "r.md"}).code, 0);
  EXPECT_EQ(slurp(scratch_ / "r.md"), cli({"report", scratch_ / "a.csv"}).out);

  const auto dup = cli({"report", scratch_ / "a.csv", scratch_ / "a.csv"});
  EXPECT_EQ(dup.code, kExitValidation);
  EXPECT_TRUE(contains(dup.err, "duplicate key"));
  EXPECT_EQ(cli({"report", scratch_ / "missing.csv"}).code, kExitIo);
}

TEST_F(Cli, ConfigFileAndOverrides) {
  spit(scratch_ / "score.cfg", "# defaults\nmethod = energy\nstats=" + path("stats") + "\n\nthreads=2\n");
  const auto from_file = cli({"score", "--config", scratch_ / "score.cfg", "--eval", path("data/test"), "--out",
                              scratch_ / "e"});
  ASSERT_EQ(from_file.code, 0) << from_file.err;
  EXPECT_EQ(read_scores(scratch_ / "e").scores.method.label(), "energy[T=1]");

  const auto overridden = cli({"score", "--eval", path("data/test"), "--method", "msp", "--config",
                               scratch_ / "score.cfg", "--out", scratch_ / "m"});
  ASSERT_EQ(overridden.code, 0) << overridden.err;
  EXPECT_EQ(read_scores(scratch_ / "m").scores.method.label(), "msp");

  spit(scratch_ / "synth.cfg", "n_per_class=4\nn_ood=6\nK=2\nd=3\n");
  ASSERT_EQ(cli({"synth", "--config=" + (scratch_ / "synth.cfg").string(), "--out", scratch_ / "tiny"}).code, 0);
  EXPECT_EQ(read_dataset(scratch_ / "tiny/ood").dataset.size(), 6u);

  spit(scratch_ / "bad.cfg", "colour=red\n");
  EXPECT_EQ(cli({"synth", "--config", scratch_ / "bad.cfg", "--out", scratch_ / "x"}).code, kExitValidation);
  spit(scratch_ / "bad2.cfg", "just words\n");
  EXPECT_EQ(cli({"synth", "--config", scratch_ / "bad2.cfg", "--out", scratch_ / "x"}).code, kExitValidation);
  EXPECT_EQ(cli({"synth", "--config", scratch_ / "none.cfg", "--out", scratch_ / "x"}).code, kExitIo);
  EXPECT_FALSE(fs::exists(scratch_ / "x"));
}

TEST_F(Cli, ThreadCountDoesNotChangeOutput) {
  auto score_with = [&](const std::string& out, std::vector<std::string> extra) {
    std::vector<std::string> args{"score", "--eval", path("data/ood"), "--stats", path("stats"), "--out",
                                  scratch_ / out};
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args).code;
  };
  ASSERT_EQ(score_with("t1", {"--threads", "1"}), 0);
  ASSERT_EQ(score_with("t7", {"--threads", "7"}), 0);
  ::setenv("OODSCORE_THREADS", "3", 1);
  ASSERT_EQ(score_with("env", {}), 0);
  ::setenv("OODSCORE_THREADS", "zero", 1);
  EXPECT_EQ(score_with("bad", {}), kExitValidation);
  EXPECT_EQ(score_with("flag_wins", {"--threads", "2"}), 0);
  ::unsetenv("OODSCORE_THREADS");
  EXPECT_EQ(snapshot(scratch_ / "t1"), snapshot(scratch_ / "t7"));
  EXPECT_EQ(snapshot(scratch_ / "t1"), snapshot(scratch_ / "env"));
  EXPECT_EQ(snapshot(scratch_ / "t1"), snapshot(scratch_ / "flag_wins"));
  EXPECT_FALSE(fs::exists(scratch_ / "bad"));
}
