#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "doctest.h"
#include "json.hpp"

#include "conki/data.hpp"
#include "conki/errors.hpp"

using namespace conki;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("conki_test_data_" + name);
  fs::remove_all(p);
  return p;
}

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.n_train = 3;
  c.n_valid = 2;
  c.n_test = 2;
  c.seed = 11;
  return c;
}

// Fraction of label variance explained by a least-squares fit on [features, 1].
double r_squared(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::MatrixXd design(x.rows(), x.cols() + 1);
  design << x, Eigen::VectorXd::Ones(x.rows());
  const Eigen::VectorXd w = design.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd resid = y - design * w;
  const double ss_res = resid.squaredNorm();
  const double ss_tot = (y.array() - y.mean()).square().sum();
  return 1.0 - ss_res / ss_tot;
}

}  // namespace

TEST_CASE("round_to_interval: ties go away from zero") {
  const LabelRange r;
  CHECK(round_to_interval(0.0, r).value() == 0);
  CHECK(round_to_interval(3.7, r).value() == 3);
  CHECK(round_to_interval(-9.0, r).value() == -3);
  // Enumerate every half-integer tie inside the range.
  for (double t : {0.5, 1.5, 2.5}) {
    const int away = static_cast<int>(t + 0.5);
    CHECK(round_to_interval(t, r).value() == away);
    CHECK(round_to_interval(-t, r).value() == -away);
  }
  CHECK(round_to_interval(0.49999, r).value() == 0);
  CHECK(round_to_interval(-1.2, r).value() == -1);
}

TEST_CASE("round_to_interval: monotone and idempotent") {
  const LabelRange r;
  int prev = round_to_interval(-5.0, r).value();
  for (double y = -5.0; y <= 5.0; y += 0.001) {
    const int k = round_to_interval(y, r).value();
    CHECK(k >= prev);
    CHECK(round_to_interval(static_cast<double>(k), r).value() == k);
    prev = k;
  }
  std::set<int> seen;
  for (double y = -3.0; y <= 3.0; y += 0.01) seen.insert(round_to_interval(y, r).value());
  CHECK(seen.size() == 7);
}

TEST_CASE("round_to_interval: non-finite input is rejected") {
  CHECK_THROWS_AS(round_to_interval(std::nan(""), {}), InvalidInputError);
  CHECK_THROWS_AS(round_to_interval(INFINITY, {}), InvalidInputError);
}

TEST_CASE("generator: deterministic, sized and valid") {
  GeneratorConfig c;
  c.seed = 7;
  const Dataset a = generate_synthetic_dataset(c);
  const Dataset b = generate_synthetic_dataset(c);
  CHECK(a == b);
  CHECK(a.train.size() == 64);
  CHECK_NOTHROW(a.validate());

  std::set<std::string> ids;
  for (Split s : {Split::Train, Split::Valid, Split::Test}) {
    for (const auto& smp : a.split(s)) {
      ids.insert(smp.sample_id);
      CHECK(smp.text_tokens.size() == 12);
      CHECK(smp.vision.rows == 10);
      CHECK(smp.vision.cols == 8);
      CHECK(smp.label >= -3.0);
      CHECK(smp.label <= 3.0);
      for (auto t : smp.text_tokens) CHECK(t < 64u);
    }
  }
  CHECK(ids.size() == 128);

  c.seed = 8;
  CHECK_FALSE(generate_synthetic_dataset(c) == a);
}

TEST_CASE("generator: invalid sizes are config errors") {
  GeneratorConfig c;
  c.n_train = 0;
  CHECK_THROWS_AS(generate_synthetic_dataset(c), ConfigError);
  c = GeneratorConfig{};
  c.d_v = 0;
  CHECK_THROWS_AS(generate_synthetic_dataset(c), ConfigError);
  c = GeneratorConfig{};
  c.noise_sigma = -1.0;
  CHECK_THROWS_AS(generate_synthetic_dataset(c), ConfigError);
}

TEST_CASE("generator: noiseless features are linearly decodable") {
  GeneratorConfig c;
  c.n_train = 256;
  c.noise_sigma = 0.0;
  c.seed = 3;
  const Dataset ds = generate_synthetic_dataset(c);
  const auto n = static_cast<Eigen::Index>(ds.train.size());
  Eigen::VectorXd y(n);
  Eigen::MatrixXd xv(n, c.d_v), xa(n, c.d_a);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = ds.train[static_cast<std::size_t>(i)];
    y(i) = s.label;
    for (int j = 0; j < c.d_v; ++j) {
      double m = 0.0;
      for (int t = 0; t < s.vision.rows; ++t) m += s.vision.at(t, j);
      xv(i, j) = m / s.vision.rows;
    }
    for (int j = 0; j < c.d_a; ++j) {
      double m = 0.0;
      for (int t = 0; t < s.audio.rows; ++t) m += s.audio.at(t, j);
      xa(i, j) = m / s.audio.rows;
    }
  }
  CHECK(r_squared(xv, y) > 0.99);
  CHECK(r_squared(xa, y) > 0.99);
}

TEST_CASE("container: round trip is the identity") {
  const Dataset ds = generate_synthetic_dataset(small_config());
  const fs::path dir = scratch_dir("roundtrip");
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  CHECK(back == ds);
  fs::remove_all(dir);
}

TEST_CASE("container: empty split round-trips") {
  Dataset ds = generate_synthetic_dataset(small_config());
  ds.valid.clear();
  const fs::path dir = scratch_dir("empty");
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  CHECK(back.valid.empty());
  CHECK(back == ds);
  fs::remove_all(dir);
}

TEST_CASE("container: manifest dims that disagree with the tensor file are rejected") {
  GeneratorConfig c = small_config();
  c.d_v = 7;
  const Dataset ds = generate_synthetic_dataset(c);
  const fs::path dir = scratch_dir("shape");
  save_dataset(ds, dir);
  nlohmann::json manifest;
  {
    std::ifstream is(dir / "manifest.json");
    manifest = nlohmann::json::parse(is);
  }
  manifest["d_v"] = 8;
  {
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    os << manifest.dump(2);
  }
  try {
    load_dataset(dir);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("shape mismatch") != std::string::npos);
    CHECK(msg.find(ds.train[0].sample_id) != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("container: missing manifest, truncation and duplicates") {
  const fs::path dir = scratch_dir("errors");
  CHECK_THROWS_AS(load_dataset(dir), FormatError);

  Dataset ds = generate_synthetic_dataset(small_config());
  save_dataset(ds, dir);
  fs::resize_file(dir / "test.bin", fs::file_size(dir / "test.bin") - 4);
  CHECK_THROWS_AS(load_dataset(dir), FormatError);

  ds.test[1].sample_id = ds.train[0].sample_id;
  CHECK_THROWS(save_dataset(ds, dir));
  fs::remove_all(dir);
}

TEST_CASE("dataset validation catches broken samples") {
  Dataset ds = generate_synthetic_dataset(small_config());
  CHECK_NOTHROW(ds.validate());
  Dataset bad = ds;
  bad.train[0].text_tokens[0] = 9999;
  CHECK_THROWS(bad.validate());
  bad = ds;
  bad.train[0].label = 4.0;
  CHECK_THROWS(bad.validate());
  bad = ds;
  bad.train[0].vision.data[0] = NAN;
  CHECK_THROWS(bad.validate());
  bad = ds;
  bad.train[0].text_tokens.clear();
  CHECK_THROWS(bad.validate());
}
