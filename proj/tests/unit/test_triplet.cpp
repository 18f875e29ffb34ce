#include <limits>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "tweak/triplet.hpp"

using namespace tweak;

namespace {

double sq(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Exhaustive enumeration of every valid triplet.
std::vector<std::pair<Triplet, double>> enumerate(const std::vector<double>& e, std::size_t dim,
                                                  const std::vector<DeviceId>& labels, double margin) {
  std::vector<std::pair<Triplet, double>> out;
  const std::size_t n = labels.size();
  auto row = [&](std::size_t i) { return std::span<const double>(e).subspan(i * dim, dim); };
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < n; ++q)
        if (p != a && labels[p] == labels[a] && labels[q] != labels[a])
          out.push_back({{a, p, q}, std::max(sq(row(a), row(p)) - sq(row(a), row(q)) + margin, 0.0)});
  return out;
}

}  // namespace

TEST_SUITE("triplet") {
  TEST_CASE("loss examples") {
    const std::vector<double> z{0.3, -0.2};
    CHECK(triplet_loss(z, z, z, 0.1) == doctest::Approx(0.1).epsilon(1e-15));
    const std::vector<double> a{0.0, 0.0}, n1{std::sqrt(0.1), 0.0};
    CHECK(triplet_loss(a, a, n1, 0.1) == doctest::Approx(0.0).epsilon(1e-15).scale(1e-15));
    const std::vector<double> p{0.2, 0.0}, n2{0.0, 0.3};
    CHECK(triplet_loss(a, p, n2, 0.1) == doctest::Approx(0.05).epsilon(1e-12));
  }

  TEST_CASE("random triples match the formula") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 1000; ++t) {
      const auto a = testing::random_vector(rng, 12), p = testing::random_vector(rng, 12),
                 n = testing::random_vector(rng, 12);
      const double expect = std::max(sq(a, p) - sq(a, n) + 0.1, 0.0);
      CHECK(std::abs(triplet_loss(a, p, n, 0.1) - expect) <= 1e-12);
    }
  }

  TEST_CASE("every example with a positive is an anchor") {
    const std::vector<double> e{0.0, 0.1, 5.0};
    const std::vector<DeviceId> labels{1, 1, 2};
    const auto r = mine_triplets(e, 1, labels, 0.1, MiningStrategy::batch_hard);
    CHECK(r.anchors_considered == 2);
  }

  TEST_CASE("well separated labels yield no triplets and zero gradient") {
    const std::vector<double> e{0.0, 0.1, 0.2, 10.0};
    const std::vector<DeviceId> labels{1, 1, 1, 2};
    for (auto s : {MiningStrategy::batch_hard, MiningStrategy::batch_all}) {
      CHECK(mine_triplets(e, 1, labels, 0.1, s).triplets.empty());
      const auto obj = mined_triplet_objective(e, 1, labels, 0.1, s);
      CHECK(obj.loss == 0.0);
      for (double g : obj.grad) CHECK(g == 0.0);
    }
  }

  TEST_CASE("a batch without positives or negatives is diagnosed") {
    const std::vector<double> e{0.0, 1.0};
    const std::vector<DeviceId> same{1, 1}, distinct{1, 2};
    CHECK_FALSE(mine_triplets(e, 1, same, 0.1).diagnostic.empty());
    CHECK_FALSE(mine_triplets(e, 1, distinct, 0.1).diagnostic.empty());
  }

  TEST_CASE("mining matches brute-force enumeration") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t dim = 3, n = 4 + trial % 9;
      std::vector<DeviceId> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<DeviceId>(i % 3);
      const auto e = testing::random_vector(rng, n * dim, -0.3, 0.3);
      const auto all = enumerate(e, dim, labels, 0.1);

      const auto ba = mine_triplets(e, dim, labels, 0.1, MiningStrategy::batch_all);
      std::vector<Triplet> expect_all;
      for (const auto& [t, l] : all)
        if (l > 0) expect_all.push_back(t);
      auto key = [](const Triplet& t) { return std::tuple(t.anchor, t.positive, t.negative); };
      auto sorted = [&](std::vector<Triplet> v) {
        std::sort(v.begin(), v.end(), [&](auto& x, auto& y) { return key(x) < key(y); });
        return v;
      };
      CHECK(sorted(ba.triplets) == sorted(expect_all));

      // batch hard: per anchor the hardest triplet by exhaustive search
      const auto bh = mine_triplets(e, dim, labels, 0.1, MiningStrategy::batch_hard);
      std::map<std::size_t, double> worst;
      for (const auto& [t, l] : all) worst[t.anchor] = std::max(worst[t.anchor], l);
      std::size_t positive = 0;
      for (const auto& [a, l] : worst) positive += l > 0;
      CHECK(bh.triplets.size() == positive);
      for (std::size_t i = 0; i < bh.triplets.size(); ++i)
        CHECK(bh.losses[i] == doctest::Approx(worst[bh.triplets[i].anchor]).epsilon(1e-12));
    }
  }

  TEST_CASE("objective gradient matches finite differences on embeddings") {
    std::mt19937_64 rng(3);
    const std::size_t dim = 4, n = 8;
    std::vector<DeviceId> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<DeviceId>(i % 2);
    auto e = testing::random_vector(rng, n * dim, -0.2, 0.2);
    for (auto s : {MiningStrategy::batch_hard, MiningStrategy::batch_all}) {
      const auto obj = mined_triplet_objective(e, dim, labels, 0.1, s);
      REQUIRE(obj.active > 0);
      for (std::size_t i = 0; i < e.size(); ++i) {
        const double h = 1e-6, keep = e[i];
        e[i] = keep + h;
        const double up = mined_triplet_objective(e, dim, labels, 0.1, s).loss;
        e[i] = keep - h;
        const double dn = mined_triplet_objective(e, dim, labels, 0.1, s).loss;
        e[i] = keep;
        CHECK(obj.grad[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5).scale(1e-6));
      }
    }
  }

  TEST_CASE("all-triplet loss averages zeros too") {
    const std::vector<double> e{0.0, 0.0, 10.0, 0.05};
    const std::vector<DeviceId> labels{1, 1, 2, 2};
    const auto s = all_triplet_loss(e, 1, labels, 0.1);
    const auto all = enumerate(e, 1, labels, 0.1);
    double sum = 0;
    for (const auto& [t, l] : all) sum += l;
    CHECK(s.count == all.size());
    CHECK(s.sum == doctest::Approx(sum).epsilon(1e-12));
  }
}
