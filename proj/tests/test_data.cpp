#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "dreg/data.hpp"
#include "dreg/error.hpp"

using namespace dreg;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dreg_data_" + name);
}

Dataset ramp(std::size_t n, std::size_t d) {
  Dataset ds;
  ds.n = n;
  ds.obs_dim = d;
  for (std::size_t i = 0; i < n * d; ++i) ds.images.push_back(static_cast<double>((i * 37) % 256) / 255.0);
  return ds;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("IDX images round-trip") {
    const Dataset d = ramp(5, 6);
    const auto path = temp_path("img.idx");
    const std::vector<std::uint32_t> dims{2, 3};
    write_idx(path, d, dims);
    CHECK(std::filesystem::file_size(path) == 16 + 30);
    const Dataset back = load_idx(path);
    CHECK(back.n == 5);
    CHECK(back.obs_dim == 6);
    CHECK(back.images == d.images);
    const std::vector<std::uint32_t> wrong{2, 2};
    CHECK_THROWS_AS(write_idx(path, d, wrong), Error);
    std::filesystem::remove(path);
  }

  TEST_CASE("IDX labels round-trip") {
    const std::vector<std::uint8_t> labels{3, 1, 4, 1, 5, 9};
    const auto path = temp_path("lab.idx");
    write_idx_labels(path, labels);
    CHECK(load_idx_labels(path) == labels);
    CHECK_THROWS_WITH_AS(load_idx(path), "IDX file has bad magic", Error);
    std::filesystem::remove(path);
  }

  TEST_CASE("IDX format errors") {
    const auto path = temp_path("broken.idx");
    write_bytes(path, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3});
    CHECK_THROWS_WITH_AS(load_idx(path), "IDX file truncated", Error);
    write_bytes(path, {0, 0, 8, 3, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff});
    CHECK_THROWS_WITH_AS(load_idx(path), "IDX dimension overflow", Error);
    write_bytes(path, {0, 0, 8});
    CHECK_THROWS_AS(load_idx(path), Error);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_idx(path), Error);
  }

  TEST_CASE("dynamic binarization") {
    Dataset d;
    d.n = 200;
    d.obs_dim = 50;
    d.images.assign(d.n * d.obs_dim, 0.3);
    for (std::size_t i = 0; i < d.obs_dim; ++i) d.images[i] = i % 2 ? 1.0 : 0.0;
    const auto a = dynamic_binarize(d, 4, 0), b = dynamic_binarize(d, 4, 0), c = dynamic_binarize(d, 4, 1);
    CHECK(a == b);
    CHECK(a != c);
    double mean = 0.0;
    for (std::size_t i = d.obs_dim; i < a.size(); ++i) {
      REQUIRE((a[i] == 0.0 || a[i] == 1.0));
      mean += a[i];
    }
    mean /= static_cast<double>(a.size() - d.obs_dim);
    CHECK(std::abs(mean - 0.3) < 0.01);
    for (std::size_t i = 0; i < d.obs_dim; ++i) CHECK(a[i] == d.images[i]);
    const auto row = binarize_row(d, 7, 4, 1);
    CHECK(std::equal(row.begin(), row.end(), c.begin() + 7 * 50));
  }

  TEST_CASE("synthetic dataset") {
    const Dataset s = synthetic_dataset(40, 16, 3, 8);
    CHECK_NOTHROW(s.validate());
    CHECK(s.images.size() == 40 * 16);
    CHECK(synthetic_dataset(40, 16, 3, 8).images == s.images);
    CHECK(synthetic_dataset(40, 16, 3, 9).images != s.images);
    CHECK_THROWS_AS(synthetic_dataset(0, 16, 3, 8), Error);
  }

  TEST_CASE("validate rejects bad pixels and shapes") {
    Dataset d = ramp(2, 2);
    d.images[1] = 1.5;
    CHECK_THROWS_AS(d.validate(), Error);
    d.images.pop_back();
    CHECK_THROWS_AS(d.validate(), Error);
  }

  TEST_CASE("splits are sized, disjoint and cover the requested fractions") {
    Dataset d;
    d.n = 103;
    d.obs_dim = 1;
    for (std::size_t i = 0; i < d.n; ++i) d.images.push_back(static_cast<double>(i) / 102.0);
    const Splits s = split(d, 0.8, 0.1, 0.1, 3);
    CHECK(s.valid.n == 10);
    CHECK(s.test.n == 10);
    CHECK(s.train.n == 83);
    std::set<double> seen;
    for (const Dataset* part : {&s.train, &s.valid, &s.test}) seen.insert(part->images.begin(), part->images.end());
    CHECK(seen.size() == 103);
    CHECK(s.train.split == Split::kTrain);
    const Splits ordered = split(d, 0.8, 0.1, 0.1);
    CHECK(ordered.train.images.front() == 0.0);
    CHECK(ordered.train.images != s.train.images);
    CHECK_THROWS_AS(split(d, 0.8, 0.3, 0.1), Error);
    CHECK_THROWS_WITH_AS(split(ramp(3, 1), 0.5, 0.1, 0.1), "split: empty split", Error);
  }

  TEST_CASE("standard MNIST split holds out the tail of the training file") {
    const Dataset tr = ramp(12, 2), te = ramp(4, 2);
    const Splits s = mnist_standard_split(tr, te, 3);
    CHECK(s.train.n == 9);
    CHECK(s.valid.n == 3);
    CHECK(s.test.images == te.images);
    CHECK(s.valid.row(0)[0] == tr.row(9)[0]);
    CHECK_THROWS_AS(mnist_standard_split(tr, te, 12), Error);
  }
}
