#include <algorithm>
#include <random>
#include <set>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include "conki/contrastive.hpp"
#include "conki/errors.hpp"

using namespace conki;

namespace {

std::vector<double> random_labels(std::mt19937_64& rng, int batch) {
  std::uniform_real_distribution<double> u(-3.5, 3.5);
  std::vector<double> y(static_cast<std::size_t>(batch));
  for (auto& v : y) v = u(rng);
  // Make shared intervals common enough to exercise P2.
  if (batch > 1 && rng() % 2 == 0) y[1] = y[0] + 0.1;
  return y;
}

std::vector<Vec> random_reps(std::mt19937_64& rng, int batch, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec> reps(static_cast<std::size_t>(kKeysPerSample * batch));
  for (auto& r : reps) {
    r.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) r[i] = n(rng);
  }
  return reps;
}

std::set<std::pair<int, int>> as_set(const std::vector<KeyPair>& v) {
  std::set<std::pair<int, int>> s;
  for (const auto& p : v) s.insert({p.first, p.second});
  return s;
}

// Cells of the expected pairing matrix for labels {1.2, 0.8, -2.0}: samples 1 and 2 share
// interval 1, sample 3 sits in interval -2.
const char* const kFigureMatrix[18] = {
    "-11111000000000000", "1-1111000000000000", "11-111000000000000",
    "111-11000000000000", "1111-1000000000000", "11111-000000000000",
    "000000-11000000000", "0000001-1000000000", "00000011-000000000",
    "000000000-11111000", "0000000001-1111000", "00000000011-111000",
    "000000000111-11000", "0000000001111-1000", "00000000011111-000",
    "000000000000000-11", "0000000000000001-1", "00000000000000011-",
};

}  // namespace

TEST_CASE("key layout follows the figure order") {
  CHECK(key_label(key_at(0, 3)) == "O_t^1");
  CHECK(key_label(key_at(5, 3)) == "O_a^2");
  CHECK(key_label(key_at(9, 3)) == "A_t^1");
  CHECK(key_label(key_at(17, 3)) == "A_a^3");
  for (int b = 1; b <= 5; ++b)
    for (int k = 0; k < 6 * b; ++k) CHECK(key_index(key_at(k, b), b) == k);
}

TEST_CASE("figure example: counts and matrix") {
  const std::vector<double> labels{1.2, 0.8, -2.0};
  const PairPartition part = build_pairs(labels);
  CHECK(part.p1.size() == 18);
  CHECK(part.p2.size() == 18);
  CHECK(part.n1.size() == 81);
  CHECK(part.n2.size() == 36);
  CHECK(part.total() == 153);

  std::istringstream is(pairing_matrix_text(part));
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  std::vector<std::string> cols{std::istream_iterator<std::string>(hs), {}};
  REQUIRE(cols.size() == 18);
  CHECK(cols.front() == "O_t^1");
  CHECK(cols[9] == "A_t^1");
  CHECK(cols.back() == "A_a^3");
  for (int r = 0; r < 18; ++r) {
    std::string line;
    REQUIRE(std::getline(is, line));
    std::istringstream ls(line);
    std::string label, cells, tok;
    ls >> label;
    CHECK(label == cols[static_cast<std::size_t>(r)]);
    while (ls >> tok) cells += tok;
    CHECK(cells == kFigureMatrix[r]);
  }
}

TEST_CASE("single sample: six P1 pairs and nine N1 pairs") {
  const PairPartition part = build_pairs(std::vector<double>{0.3});
  CHECK(part.p1.size() == 6);
  CHECK(part.n1.size() == 9);
  CHECK(part.p2.empty());
  CHECK(part.n2.empty());
}

TEST_CASE("build_pairs agrees with the brute-force classifier") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int batch = 1 + trial % 8;
    const auto labels = random_labels(rng, batch);
    const PairPartition part = build_pairs(labels);
    auto ref = oracle::partition(labels);
    CHECK(as_set(part.p1) == ref[oracle::kP1]);
    CHECK(as_set(part.p2) == ref[oracle::kP2]);
    CHECK(as_set(part.n1) == ref[oracle::kN1]);
    CHECK(as_set(part.n2) == ref[oracle::kN2]);

    const std::size_t n = 6 * static_cast<std::size_t>(batch);
    CHECK(part.total() == n * (n - 1) / 2);
    std::set<std::pair<int, int>> all;
    for (const auto* s : {&part.p1, &part.p2, &part.n1, &part.n2})
      for (const auto& p : *s) {
        CHECK(p.first < p.second);
        all.insert({p.first, p.second});
      }
    CHECK(all.size() == part.total());  // disjoint
    // Fixed counts: 6 per sample in P1 and 9 per sample pair in N1 (and 9B in N1 overall within a sample).
    CHECK(part.p1.size() == 6 * static_cast<std::size_t>(batch));
    CHECK(part.n1.size() == 9 * static_cast<std::size_t>(batch) * static_cast<std::size_t>(batch));
  }
}

TEST_CASE("empty batch is rejected") {
  CHECK_THROWS_AS(build_pairs(std::vector<double>{}), InvalidInputError);
}

TEST_CASE("identical unit vectors with tau = 1 give log 15") {
  const PairPartition part = build_pairs(std::vector<double>{0.0});
  Vec u = Vec::Zero(4);
  u[0] = 1.0;
  std::vector<Vec> reps(6, u);
  ContrastiveOptions o;
  o.tau = 1.0;
  CHECK(std::abs(contrastive_loss(reps, part, o) - std::log(15.0)) < 1e-9);
}

TEST_CASE("contrastive loss matches direct evaluation") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int batch = 1 + trial % 8;
    const auto labels = random_labels(rng, batch);
    const auto reps = random_reps(rng, batch, 5);
    const double tau = trial % 2 == 0 ? 0.07 : 0.5;
    ContrastiveOptions o;
    o.tau = tau;
    const double got = contrastive_loss(reps, build_pairs(labels), o);
    const double want = oracle::loss(reps, labels, tau);
    CHECK(std::abs(got - want) / std::abs(want) < 1e-10);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("dropping N1 matches the oracle and changes the loss") {
  std::mt19937_64 rng(3);
  const auto labels = random_labels(rng, 4);
  const auto reps = random_reps(rng, 4, 6);
  ContrastiveOptions o;
  o.tau = 0.2;
  const double full = contrastive_loss(reps, build_pairs(labels), o);
  o.include_n1 = false;
  const double no_n1 = contrastive_loss(reps, build_pairs(labels), o);
  CHECK(no_n1 != full);
  CHECK(std::abs(no_n1 - oracle::loss(reps, labels, 0.2, false)) / no_n1 < 1e-10);
}

TEST_CASE("loss is invariant to positive rescaling of any representation") {
  std::mt19937_64 rng(4);
  const auto labels = random_labels(rng, 3);
  auto reps = random_reps(rng, 3, 6);
  const PairPartition part = build_pairs(labels);
  ContrastiveOptions o;
  const double base = contrastive_loss(reps, part, o);
  for (std::size_t k : {0UL, 7UL, 17UL}) {
    auto scaled = reps;
    scaled[k] *= 13.5;
    CHECK(contrastive_loss(scaled, part, o) == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("loss is invariant to relabeling samples") {
  std::mt19937_64 rng(5);
  const int batch = 4;
  const auto labels = random_labels(rng, batch);
  const auto reps = random_reps(rng, batch, 6);
  std::vector<int> perm{2, 0, 3, 1};
  std::vector<double> plabels(batch);
  std::vector<Vec> preps(reps.size());
  for (int s = 0; s < batch; ++s) {
    plabels[static_cast<std::size_t>(perm[static_cast<std::size_t>(s)])] = labels[static_cast<std::size_t>(s)];
    for (int k = 0; k < 2; ++k)
      for (int m = 0; m < 3; ++m) {
        const RepKey from{s, static_cast<Knowledge>(k), static_cast<Modality>(m)};
        const RepKey to{perm[static_cast<std::size_t>(s)], static_cast<Knowledge>(k), static_cast<Modality>(m)};
        preps[static_cast<std::size_t>(key_index(to, batch))] = reps[static_cast<std::size_t>(key_index(from, batch))];
      }
  }
  ContrastiveOptions o;
  CHECK(contrastive_loss(preps, build_pairs(plabels), o) ==
        doctest::Approx(contrastive_loss(reps, build_pairs(labels), o)).epsilon(1e-12));
}

TEST_CASE("contrastive gradient matches finite differences") {
  std::mt19937_64 rng(6);
  for (int batch : {1, 3, 5}) {
    const auto labels = random_labels(rng, batch);
    auto reps = random_reps(rng, batch, 5);
    const PairPartition part = build_pairs(labels);
    ContrastiveOptions o;
    o.tau = 0.3;
    std::vector<Vec> grads;
    const double value = contrastive_loss_grad(reps, part, o, grads);
    CHECK(value == contrastive_loss(reps, part, o));
    std::vector<double*> pool;
    std::vector<double> analytic;
    for (std::size_t k = 0; k < reps.size(); ++k)
      for (Eigen::Index i = 0; i < reps[k].size(); ++i) {
        pool.push_back(&reps[k][i]);
        analytic.push_back(grads[k][i]);
      }
    auto loss = [&] { return contrastive_loss(reps, part, o); };
    CAPTURE(batch);
    CHECK(testutil::check_coords(pool, analytic, loss, 20, 7 + static_cast<std::uint64_t>(batch)) < 1e-4);
  }
}

TEST_CASE("absent knowledge types are ignored") {
  std::mt19937_64 rng(8);
  const auto labels = random_labels(rng, 3);
  auto reps = random_reps(rng, 3, 4);
  const PairPartition part = build_pairs(labels);
  ContrastiveOptions o;
  o.use_specific = false;
  const double a = contrastive_loss(reps, part, o);
  for (std::size_t k = 9; k < 18; ++k) reps[k] = Vec();
  CHECK(contrastive_loss(reps, part, o) == a);
  std::vector<Vec> grads;
  contrastive_loss_grad(reps, part, o, grads);
  CHECK(grads[10].size() == 0);
  CHECK(grads[0].size() == 4);
}

TEST_CASE("temperature and input validation") {
  const std::vector<double> p{1.0, 0.0}, q{0.0, 1.0};
  CHECK_THROWS_AS(pair_similarity(p, q, 0.0), ConfigError);
  CHECK_THROWS_AS(pair_similarity(p, q, -1.0), ConfigError);
  const std::vector<double> bad{NAN, 1.0};
  CHECK_THROWS_AS(pair_similarity(bad, q, 1.0), InvalidInputError);
  CHECK(pair_similarity(p, p, 1.0) == doctest::Approx(std::exp(1.0)));
  // The norm guard keeps zero vectors finite.
  const std::vector<double> zero{0.0, 0.0};
  CHECK(pair_similarity(zero, p, 1.0) == 1.0);

  const PairPartition part = build_pairs(std::vector<double>{0.0});
  std::vector<Vec> reps(6, Vec::Ones(3));
  ContrastiveOptions o;
  o.tau = 0.0;
  CHECK_THROWS_AS(contrastive_loss(reps, part, o), ConfigError);
}

TEST_CASE("property: partition invariants for every batch size up to 8") {
  std::mt19937_64 rng(9);
  for (int batch = 1; batch <= 8; ++batch) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto labels = random_labels(rng, batch);
      const PairPartition part = build_pairs(labels);
      // Every sample has at least its six P1 pairs, so each anchor term is defined.
      std::vector<int> pos(static_cast<std::size_t>(batch), 0);
      for (const auto* s : {&part.p1, &part.p2})
        for (const auto& p : *s) {
          const int a = key_at(p.first, batch).sample, b = key_at(p.second, batch).sample;
          ++pos[static_cast<std::size_t>(a)];
          if (b != a) ++pos[static_cast<std::size_t>(b)];
        }
      for (int c : pos) CHECK(c >= 6);
      // P2 and N2 only join samples of equal / different intervals.
      for (const auto& p : part.p2)
        CHECK(part.intervals[static_cast<std::size_t>(key_at(p.first, batch).sample)] ==
              part.intervals[static_cast<std::size_t>(key_at(p.second, batch).sample)]);
      for (const auto& p : part.n2)
        CHECK(part.intervals[static_cast<std::size_t>(key_at(p.first, batch).sample)] !=
              part.intervals[static_cast<std::size_t>(key_at(p.second, batch).sample)]);
    }
  }
}
