#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <limits>

#include "lsprox/prox_ops.hpp"
#include "oracles.hpp"

using lsprox::Matrix;
using lsprox::Vector;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

bool bit_identical(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

double spectral_norm(const Matrix& q) { return lsprox::svd(q).K[0]; }

}  // namespace

TEST_CASE("soft thresholding on scalars") {
  CHECK_THAT(lsprox::soft(0.5, 0.2), WithinAbs(0.3, 1e-15));
  CHECK(lsprox::soft(-0.1, 0.2) == 0.0);
  CHECK_THAT(lsprox::soft(-1.5, 0.25), WithinAbs(-1.25, 1e-15));

  SECTION("tau = 0 is the identity") {
    auto rng = oracles::make_rng(11);
    std::normal_distribution<double> dist(0.0, 2.0);
    for (int i = 0; i < 200; ++i) {
      const double q = dist(rng);
      CHECK(lsprox::soft(q, 0.0) == q);
    }
  }

  SECTION("invalid inputs rejected") {
    CHECK_THROWS_AS(lsprox::soft(1.0, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(lsprox::soft(std::numeric_limits<double>::quiet_NaN(), 0.1),
                    std::invalid_argument);
    CHECK_THROWS_AS(lsprox::soft(1.0, std::numeric_limits<double>::infinity()),
                    std::invalid_argument);
  }

  SECTION("firmly nonexpansive") {
    auto rng = oracles::make_rng(12);
    std::normal_distribution<double> dist(0.0, 3.0);
    std::uniform_real_distribution<double> taus(0.0, 2.0);
    for (int i = 0; i < 500; ++i) {
      const double a = dist(rng), b = dist(rng), tau = taus(rng);
      // rounding slack: each soft output carries up to half an ulp of its input
      CHECK(std::abs(lsprox::soft(a, tau) - lsprox::soft(b, tau)) <=
            std::abs(a - b) + 4e-16 * std::max({std::abs(a), std::abs(b), tau}));
    }
  }
}

TEST_CASE("soft thresholding on matrices") {
  CHECK(lsprox::soft_matrix(Matrix::Zero(3, 4), 0.7).isZero(0.0));

  Matrix q(2, 2);
  q << 1.0, -0.5, 0.2, -2.0;
  Matrix expected(2, 2);
  expected << 0.5, 0.0, 0.0, -1.5;
  CHECK(lsprox::soft_matrix(q, 0.5) == expected);

  SECTION("matches the scalar loop") {
    auto rng = oracles::make_rng(21);
    const Matrix r = oracles::random_matrix(rng, 5, 4);
    const Matrix out = lsprox::soft_matrix(r, 0.3);
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 5; ++i) CHECK(out(i, j) == oracles::soft_scalar(r(i, j), 0.3));
  }

  SECTION("rejects bad inputs") {
    CHECK_THROWS_AS(lsprox::soft_matrix(q, -1.0), std::invalid_argument);
    Matrix bad = q;
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(lsprox::soft_matrix(bad, 0.1), std::invalid_argument);
  }
}

TEST_CASE("svd factors") {
  SECTION("identity") {
    const auto f = lsprox::svd(Matrix::Identity(3, 3));
    for (int i = 0; i < 3; ++i) CHECK_THAT(f.K[i], WithinAbs(1.0, 1e-12));
  }

  SECTION("diagonal case with sign convention") {
    Matrix q = Matrix::Zero(2, 2);
    q(0, 0) = 3.0;
    q(1, 1) = 1.0;
    const auto f = lsprox::svd(q);
    CHECK_THAT(f.K[0], WithinAbs(3.0, 1e-12));
    CHECK_THAT(f.K[1], WithinAbs(1.0, 1e-12));
    CHECK_THAT((f.U - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), WithinAbs(0.0, 1e-12));
    CHECK_THAT((f.V - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), WithinAbs(0.0, 1e-12));
  }

  SECTION("singular values match the Gram-matrix eigen oracle") {
    auto rng = oracles::make_rng(31);
    const Matrix q = oracles::random_matrix(rng, 6, 4);
    const auto f = lsprox::svd(q);
    const auto expected = oracles::singular_values(q);
    REQUIRE(f.K.size() == 4);
    for (int i = 0; i < 4; ++i)
      CHECK_THAT(f.K[i], WithinAbs(expected[static_cast<std::size_t>(i)], 1e-8));
  }

  SECTION("factor invariants on random shapes") {
    auto rng = oracles::make_rng(32);
    for (auto [m, n] : {std::pair{7, 5}, std::pair{4, 9}, std::pair{6, 6}, std::pair{1, 3}}) {
      const Matrix q = oracles::random_matrix(rng, m, n);
      const auto f = lsprox::svd(q);
      const int r = std::min(m, n);
      REQUIRE(f.U.cols() == r);
      REQUIRE(f.V.cols() == r);
      CHECK((f.U.transpose() * f.U - Matrix::Identity(r, r)).cwiseAbs().maxCoeff() <= 1e-8);
      CHECK((f.V.transpose() * f.V - Matrix::Identity(r, r)).cwiseAbs().maxCoeff() <= 1e-8);
      const Matrix rec = f.U * f.K.asDiagonal() * f.V.transpose();
      CHECK((q - rec).norm() <= 1e-8 * std::max(1.0, q.norm()));
      for (int i = 0; i + 1 < r; ++i) CHECK(f.K[i] >= f.K[i + 1]);
      CHECK(f.K[r - 1] >= 0.0);
      for (int j = 0; j < r; ++j) {
        for (int i = 0; i < m; ++i) {
          if (f.U(i, j) != 0.0) {
            CHECK(f.U(i, j) > 0.0);
            break;
          }
        }
      }
    }
  }

  SECTION("deterministic") {
    auto rng = oracles::make_rng(33);
    const Matrix q = oracles::random_matrix(rng, 8, 5);
    const auto f1 = lsprox::svd(q);
    const auto f2 = lsprox::svd(q);
    CHECK(bit_identical(f1.U, f2.U));
    CHECK(bit_identical(f1.V, f2.V));
    CHECK(std::memcmp(f1.K.data(), f2.K.data(),
                      sizeof(double) * static_cast<std::size_t>(f1.K.size())) == 0);
  }

  SECTION("rank uses the relative floor") {
    Matrix q = Matrix::Zero(3, 3);
    q(0, 0) = 1.0;
    q(1, 1) = 1e-6;
    q(2, 2) = 1e-14;
    const auto f = lsprox::svd(q);
    CHECK(f.rank() == 2);
  }
}

TEST_CASE("singular value thresholding") {
  SECTION("diagonal case") {
    Matrix q = Matrix::Zero(2, 2);
    q(0, 0) = 3.0;
    q(1, 1) = 1.0;
    const Matrix out = lsprox::svt(q, 2.0);
    CHECK_THAT(out(0, 0), WithinAbs(1.0, 1e-12));
    CHECK_THAT(out(1, 1), WithinAbs(0.0, 1e-12));
    CHECK_THAT(out(0, 1), WithinAbs(0.0, 1e-12));
  }

  SECTION("tau = 0 is the identity") {
    auto rng = oracles::make_rng(41);
    const Matrix q = oracles::random_matrix(rng, 6, 4);
    CHECK((lsprox::svt(q, 0.0) - q).norm() <= 1e-8 * q.norm());
  }

  SECTION("result singular values are max(sigma - tau, 0)") {
    auto rng = oracles::make_rng(42);
    const Matrix q = oracles::random_matrix(rng, 7, 5);
    const double tau = 0.8;
    const auto before = lsprox::svd(q);
    const auto after = lsprox::svd(lsprox::svt(q, tau));
    for (int i = 0; i < 5; ++i)
      CHECK_THAT(after.K[i], WithinAbs(std::max(before.K[i] - tau, 0.0), 1e-10));
  }

  SECTION("prox optimality against sampled perturbations") {
    auto rng = oracles::make_rng(43);
    const Matrix q = oracles::random_matrix(rng, 8, 6);
    const auto f = lsprox::svd(q);
    const double tau = f.K[3];  // median-scale threshold
    const Matrix x = lsprox::svt(q, tau);
    auto prox_objective = [&](const Matrix& c) {
      return tau * lsprox::nuclear_norm(c) + 0.5 * (c - q).squaredNorm();
    };
    const double at_svt = prox_objective(x);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      Matrix pert(8, 6);
      for (int j = 0; j < 6; ++j)
        for (int i = 0; i < 8; ++i) pert(i, j) = dist(rng);
      const double step = trial % 2 == 0 ? 1e-2 : 0.3;
      CHECK(at_svt <= prox_objective(x + step * pert) + 1e-12);
    }
  }

  SECTION("nonexpansive in Frobenius norm") {
    auto rng = oracles::make_rng(44);
    std::uniform_real_distribution<double> taus(0.0, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
      const Matrix a = oracles::random_matrix(rng, 5, 4);
      const Matrix b = oracles::random_matrix(rng, 5, 4);
      const double tau = taus(rng);
      CHECK((lsprox::svt(a, tau) - lsprox::svt(b, tau)).norm() <= (a - b).norm() + 1e-8);
    }
  }
}

TEST_CASE("norms") {
  SECTION("nuclear norm") {
    CHECK_THAT(lsprox::nuclear_norm(Matrix::Identity(4, 4)), WithinAbs(4.0, 1e-12));
    auto rng = oracles::make_rng(51);
    const Matrix u = oracles::random_matrix(rng, 6, 1);
    const Matrix v = oracles::random_matrix(rng, 5, 1);
    CHECK_THAT(lsprox::nuclear_norm(u * v.transpose()),
               WithinRel(u.norm() * v.norm(), 1e-10));
    const Matrix q = oracles::random_matrix(rng, 5, 5);
    CHECK_THAT(lsprox::nuclear_norm(q), WithinRel(oracles::nuclear_via_gram(q), 1e-8));
  }

  SECTION("l1 norm") {
    CHECK(lsprox::l1_norm(Matrix::Zero(3, 3)) == 0.0);
    Matrix q(2, 2);
    q << 1.0, -2.0, 0.0, 3.0;
    CHECK_THAT(lsprox::l1_norm(q), WithinAbs(6.0, 1e-15));
    auto rng = oracles::make_rng(52);
    const Matrix r = oracles::random_matrix(rng, 6, 7);
    CHECK_THAT(lsprox::l1_norm(r), WithinRel(oracles::l1_loop(r), 1e-14));
  }

  SECTION("frobenius norm") {
    CHECK_THAT(lsprox::frobenius_norm(Matrix::Identity(3, 3)), WithinRel(std::sqrt(3.0), 1e-14));
    CHECK(lsprox::frobenius_norm(Matrix::Zero(2, 5)) == 0.0);
    auto rng = oracles::make_rng(53);
    const Matrix r = oracles::random_matrix(rng, 8, 3);
    CHECK_THAT(lsprox::frobenius_norm(r), WithinRel(oracles::frobenius_loop(r), 1e-14));
  }

  SECTION("non-finite input rejected") {
    Matrix bad = Matrix::Zero(2, 2);
    bad(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(lsprox::l1_norm(bad), std::invalid_argument);
    CHECK_THROWS_AS(lsprox::frobenius_norm(bad), std::invalid_argument);
    CHECK_THROWS_AS(lsprox::nuclear_norm(bad), std::invalid_argument);
  }
}

TEST_CASE("operator properties over random instances") {
  auto rng = oracles::make_rng(61);
  std::uniform_real_distribution<double> taus(0.0, 2.0);
  for (int trial = 0; trial < 30; ++trial) {
    const int m = 3 + static_cast<int>(rng() % 6);
    const int n = 3 + static_cast<int>(rng() % 6);
    const Matrix q = oracles::random_matrix(rng, m, n);
    const double tau = taus(rng);

    // nuclear(svt(Q, tau)) == sum max(sigma_i - tau, 0)
    const auto f = lsprox::svd(q);
    double expected = 0.0;
    for (int i = 0; i < f.K.size(); ++i) expected += std::max(f.K[i] - tau, 0.0);
    const double got = lsprox::nuclear_norm(lsprox::svt(q, tau));
    CHECK(std::abs(got - expected) <= 1e-8 * std::max(1.0, expected));

    // norm ordering: l1 >= frobenius >= spectral
    CHECK(lsprox::l1_norm(q) >= lsprox::frobenius_norm(q) - 1e-12);
    CHECK(lsprox::frobenius_norm(q) >= spectral_norm(q) - 1e-12);
  }
}
