#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef DREG_LAB_PATH
#error "DREG_LAB_PATH must point at the dreg-lab binary"
#endif

namespace {

namespace fs = std::filesystem;

const fs::path kRoot = fs::temp_directory_path() / "dreg_cli";

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + DREG_LAB_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const std::string& name, const std::string& text) {
  fs::create_directories(kRoot);
  const fs::path p = kRoot / name;
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("successful run writes to --out and honours --seed") {
    const fs::path cfg = write_config("ok.json", R"({"trials": 1, "samples": 20, "k_grid": [4],
      "estimators": ["IWAE", "IWAE-DReG"]})");
    const fs::path out = kRoot / "ok_out";
    fs::remove_all(out);
    CHECK(run("toy-snr --config " + cfg.string() + " --seed 99 --out " + out.string()) == 0);
    CHECK(fs::exists(out / "toy_snr.csv"));
    std::ifstream in(out / "manifest.json");
    const std::string manifest((std::istreambuf_iterator<char>(in)), {});
    CHECK(manifest.find("\"seed\": 99") != std::string::npos);
  }

  TEST_CASE("configuration problems exit with 1") {
    const fs::path unknown = write_config("unknown.json", R"({"trails": 3})");
    const fs::path broken = write_config("broken.json", "{ not json");
    const fs::path other = write_config("other.json", R"({"experiment": "train"})");
    CHECK(run("toy-snr --config " + unknown.string()) == 1);
    CHECK(run("toy-snr --config " + broken.string()) == 1);
    CHECK(run("toy-snr --config " + other.string()) == 1);
    CHECK(run("toy-snr --config " + (kRoot / "absent.json").string()) == 1);
    CHECK(run("toy-snr") == 1);
    CHECK(run("sweep --config " + unknown.string()) == 1);
    CHECK(run("toy-snr --config " + unknown.string() + " --seed minus-one") == 1);
  }

  TEST_CASE("runtime failures exit with 2") {
    const fs::path cfg = write_config("mnist.json", R"({"data": {"source": "mnist",
      "train_images": "/nonexistent/train-images-idx3-ubyte",
      "test_images": "/nonexistent/t10k-images-idx3-ubyte"}})");
    CHECK(run("train --config " + cfg.string() + " --out " + (kRoot / "mnist_out").string()) == 2);
  }
}
