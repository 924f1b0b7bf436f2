#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dreg/experiments.hpp"
#include "dreg/optim.hpp"
#include "dreg/output.hpp"

using namespace dreg;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("dreg_exp_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("experiments") {
  TEST_CASE("number formatting is shortest round-trip") {
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(-2.5e-300) == "-2.5e-300");
    CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
    CHECK(format_number(NAN) == "nan");
    CHECK(format_number(-INFINITY) == "-inf");
  }

  TEST_CASE("CSV table") {
    CsvTable t({"a", "b"});
    t.row({"1", "x"});
    CHECK(t.text() == "a,b\n1,x\n");
    CHECK_THROWS_AS(t.row({"1"}), Error);
    CHECK_THROWS_AS(t.row({"1", "x,y"}), Error);
    CHECK_THROWS_AS(CsvTable({}), Error);
  }

  TEST_CASE("atomic write leaves only the target") {
    const auto dir = temp_dir("atomic");
    write_file_atomic(dir / "sub" / "f.txt", "hello");
    CHECK(slurp(dir / "sub" / "f.txt") == "hello");
    CHECK_FALSE(std::filesystem::exists(dir / "sub" / "f.txt.tmp"));
    write_file_atomic(dir / "sub" / "f.txt", "bye");
    CHECK(slurp(dir / "sub" / "f.txt") == "bye");
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("Adam climbs a concave quadratic") {
    std::vector<double> x{5.0, -3.0};
    Adam opt(2, AdamConfig{0.05});
    for (int i = 0; i < 2000; ++i) {
      const std::vector<double> g{-(x[0] - 1.0), -4.0 * (x[1] + 2.0)};
      opt.step(x, g);
    }
    CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(x[1] == doctest::Approx(-2.0).epsilon(1e-3));
    CHECK(opt.steps() == 2000);
  }

  TEST_CASE("Adam index subsets touch only their coordinates") {
    std::vector<double> x{0.0, 0.0, 0.0};
    Adam opt(3);
    const std::vector<double> g{1.0, 1.0, 1.0};
    const std::vector<std::size_t> idx{1};
    opt.step(x, g, idx);
    CHECK(x[0] == 0.0);
    CHECK(x[1] == doctest::Approx(1e-3));
    CHECK(x[2] == 0.0);
    // First step of an untouched coordinate is still a full bias-corrected step.
    const std::vector<std::size_t> idx0{0};
    opt.step(x, g, idx0);
    CHECK(x[0] == doctest::Approx(1e-3));
    CHECK_THROWS_AS(Adam(2, AdamConfig{-1.0}), ConfigError);
  }

  TEST_CASE("toy-snr smoke run") {
    ExperimentConfig c = default_config(Experiment::kToySnr);
    c.trials = 1;
    c.samples = 10;
    c.k_grid = {1};
    const ToySnrResult r = run_toy_snr(c);
    // JVI estimators are skipped at K = 1.
    CHECK(r.rows.size() == 5 * r.n_phi);
    CHECK(r.n_phi == 4 * 4 + 4);
    for (const auto& row : r.rows) {
      CHECK(std::isfinite(row.mean));
      CHECK(std::isfinite(row.variance));
      CHECK(row.variance >= 0.0);
    }
    const auto dir = temp_dir("toy");
    write_toy_snr(r, dir);
    const std::string csv = slurp(dir / "toy_snr.csv");
    CHECK(csv.rfind("estimator,K,trial,coordinate", 0) == 0);
    CHECK(std::filesystem::exists(dir / "toy_snr_summary.csv"));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("bias-test references and report") {
    CHECK(bias_reference_name(EstimatorSpec::parse("RWS-DReG")) == "RWS-wake");
    CHECK(bias_reference_name(EstimatorSpec::parse("JVI1-DReG")) == "JVI1");
    CHECK(bias_reference_name(EstimatorSpec::parse("STL")) == "IWAE");
    ExperimentConfig c = default_config(Experiment::kBiasTest);
    c.samples = 2000;
    c.k_grid = {8};
    c.estimators.push_back(EstimatorSpec::parse("DReG(0.5)"));
    const BiasTestResult r = run_bias_test(c);
    REQUIRE(r.verdicts.size() == 5);
    // At alpha = 1/2 the estimator equals its reference sample by sample.
    CHECK_FALSE(r.verdicts[4].bias_detected);
    for (const auto& t : r.verdicts[4].coordinates) CHECK(t.degenerate);
    const std::string report = bias_report_text(r);
    CHECK(report.find("IWAE-DReG vs IWAE, K = 8") != std::string::npos);
    CHECK(report.find("verdict:") != std::string::npos);
    for (const auto& v : r.verdicts) CHECK(v.coordinates.size() == 20);
    // IWAE-DReG - IWAE and RWS-DReG - RWS-wake are the same weighted score
    // term in the ascent convention.
    const BiasVerdict& iw = r.verdicts[0];
    const BiasVerdict& rws = r.verdicts[2];
    REQUIRE(rws.estimator.name() == "RWS-DReG");
    for (std::size_t i = 0; i < 20; ++i) CHECK(iw.coordinates[i].t == doctest::Approx(rws.coordinates[i].t));
  }

  TEST_CASE("short training run stays finite and writes its files") {
    ExperimentConfig c = default_config(Experiment::kTrain);
    c.steps = 100;
    c.eval_every = 50;
    c.data.n = 200;
    c.vae = VaeConfig{4, 8, 16};
    c.estimator = EstimatorSpec::parse("RWS-DReG");
    const TrainResult r = run_train(c);
    CHECK(r.two_updates);
    REQUIRE(r.rows.size() >= 2);
    for (const auto& row : r.rows) {
      CHECK(std::isfinite(row.train_objective));
      CHECK(std::isfinite(row.heldout_bound));
      CHECK(row.heldout_bound < 0.0);
    }
    const auto dir = temp_dir("train");
    c.output = dir.string();
    run_experiment(c, dir);
    CHECK(std::filesystem::exists(dir / "train.csv"));
    CHECK(std::filesystem::exists(dir / "checkpoint.bin"));
    CHECK(manifest_text(load_config(dir / "manifest.json")) == manifest_text(c));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("missing MNIST files are a runtime error") {
    ExperimentConfig c = default_config(Experiment::kTrain);
    c.data.source = "mnist";
    c.data.train_images = "/nonexistent/train-images-idx3-ubyte";
    c.data.test_images = "/nonexistent/t10k-images-idx3-ubyte";
    CHECK_THROWS_WITH_AS(run_train(c), doctest::Contains("dataset missing"), Error);
  }
}
