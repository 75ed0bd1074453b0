#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "palm/geometry.hpp"
#include "support.hpp"

using namespace palm;

namespace {

// E[cos(x, mu)] for a vMF on S^{D-1}: the cosine t has density proportional to
// e^{kappa t} (1 - t^2)^{(D-3)/2} on [-1, 1]. Composite Simpson on a fine grid.
double vmf_mean_cosine(double kappa, int dim) {
  const int n = 200000;
  const double h = 2.0 / n;
  double num = 0.0, den = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t = -1.0 + h * i;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const double f = std::exp(kappa * (t - 1.0)) * std::pow(std::max(0.0, 1.0 - t * t), 0.5 * (dim - 3));
    num += w * t * f;
    den += w * f;
  }
  return num / den;
}

// Lloyd's 2-means seeded with the farthest pair; returns between / within sum of squares.
double two_means_ratio(const Matrix& x) {
  Eigen::Index a = 0, b = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j)
      if (double d = (x.row(i) - x.row(j)).squaredNorm(); d > best) best = d, a = i, b = j;
  Eigen::RowVectorXd c0 = x.row(a), c1 = x.row(b);
  std::vector<int> lab(static_cast<std::size_t>(x.rows()));
  for (int it = 0; it < 100; ++it) {
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      lab[static_cast<std::size_t>(i)] = (x.row(i) - c0).squaredNorm() <= (x.row(i) - c1).squaredNorm() ? 0 : 1;
    Eigen::RowVectorXd s0 = Eigen::RowVectorXd::Zero(x.cols()), s1 = s0;
    int n0 = 0, n1 = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (lab[static_cast<std::size_t>(i)] == 0) s0 += x.row(i), ++n0;
      else s1 += x.row(i), ++n1;
    }
    c0 = s0 / n0;
    c1 = s1 / n1;
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  double within = 0.0, between = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto& c = lab[static_cast<std::size_t>(i)] == 0 ? c0 : c1;
    within += (x.row(i) - c).squaredNorm();
    between += (c - mean).squaredNorm();
  }
  return between / within;
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("normalize analytic cases") {
  Vector x(2);
  x << 3, 4;
  const UnitVector u = normalize(x);
  CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-15));

  const Vector e1 = Vector::Unit(5, 0);
  CHECK(normalize(e1).vec() == e1);

  Vector tiny(2);
  tiny << 1e-15, 0;
  try {
    normalize(tiny);
    FAIL("expected DegenerateVector");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateVector);
  }
}

TEST_CASE("normalize is idempotent") {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const Vector x = oracle::random_matrix(1, 7, rng, 3.0).row(0).transpose();
    const Vector u = normalize(x).vec();
    CHECK((normalize(u).vec() - u).cwiseAbs().maxCoeff() <= 4 * std::numeric_limits<double>::epsilon());
  }
}

TEST_CASE("UnitVector::checked rejects non-unit input") {
  Vector x(3);
  x << 1, 1, 0;
  CHECK_THROWS_AS(UnitVector::checked(x), Error);
  CHECK_NOTHROW(UnitVector::checked(x / x.norm()));
}

TEST_CASE("normalize_jacobian closed forms") {
  Vector x(2);
  x << 2, 0;
  Eigen::MatrixXd expect(2, 2);
  expect << 0, 0, 0, 0.5;
  CHECK((normalize_jacobian(x) - expect).norm() < 1e-15);

  Rng rng(2);
  const Vector u = oracle::random_unit_rows(1, 6, rng).row(0).transpose();
  const Eigen::MatrixXd j = normalize_jacobian(u);
  CHECK((j - (Eigen::MatrixXd::Identity(6, 6) - u * u.transpose())).norm() < 1e-14);
}

TEST_CASE("normalize_jacobian matches finite differences and is tangent") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const Vector x = oracle::random_matrix(1, 5, rng, 2.0).row(0).transpose();
    const Eigen::MatrixXd j = normalize_jacobian(x);
    CHECK((j * x).norm() < 1e-12);
    for (Eigen::Index col = 0; col < x.size(); ++col) {
      const auto fcol = [&](const Vector& y) { return normalize(y).vec()[col]; };
      // Row `col` of J is the gradient of output component `col`.
      const Vector fd = oracle::central_difference(fcol, x, 1e-6);
      CHECK(oracle::max_relative_error(j.row(col).transpose(), fd, 1e-8) <= 1e-6);
    }
  }
}

TEST_CASE("normalize_rows names the degenerate row") {
  Matrix m = Matrix::Ones(3, 2);
  m.row(1).setZero();
  try {
    normalize_rows(m);
    FAIL("expected DegenerateVector");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateVector);
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
}

TEST_CASE("uniform vMF has a vanishing mean") {
  Rng rng(4);
  const VmfParams p{UnitVector::checked(Vector::Unit(8, 0)), 0.0};
  const Matrix s = sample_vmf(p, 10000, rng);
  CHECK(s.colwise().mean().norm() < 0.05);
  CHECK(((s.rowwise().norm().array() - 1.0).abs() < 1e-9).all());
}

TEST_CASE("highly concentrated vMF stays near its mean") {
  Rng rng(5);
  Vector mu = Vector::Ones(6);
  mu /= mu.norm();
  const VmfParams p{UnitVector::checked(mu), 1e4};
  const Matrix s = sample_vmf(p, 2000, rng);
  CHECK(((s * mu).array() > 0.99).all());
}

TEST_CASE("point-mass vMF returns the mean exactly") {
  Rng rng(6);
  const Vector mu = Vector::Unit(4, 2);
  const Matrix s = sample_vmf({UnitVector::checked(mu), std::numeric_limits<double>::infinity()}, 5, rng);
  for (Eigen::Index i = 0; i < s.rows(); ++i) CHECK(s.row(i).transpose() == mu);
}

TEST_CASE("vMF mean cosine matches quadrature within three standard errors") {
  const int dim = 16;
  const double kappa = 50.0;
  Rng rng(7);
  const Vector mu = Vector::Unit(dim, 3);
  const Matrix s = sample_vmf({UnitVector::checked(mu), kappa}, 100000, rng);
  const Vector t = s * mu;
  const double mean = t.mean();
  const double sd = std::sqrt((t.array() - mean).square().sum() / (t.size() - 1));
  const double se = sd / std::sqrt(static_cast<double>(t.size()));
  const double expect = vmf_mean_cosine(kappa, dim);
  CHECK(std::abs(mean - expect) < 3 * se);
  // Resultant length: the tangent components average out.
  CHECK(std::abs(s.colwise().mean().norm() - expect) < 3 * se + 1e-4);
}

TEST_CASE("vMF sampling is seed-deterministic") {
  const VmfParams p{UnitVector::checked(Vector::Unit(5, 0)), 20.0};
  Rng a(11), b(11);
  CHECK(sample_vmf(p, 50, a) == sample_vmf(p, 50, b));
}

TEST_CASE("synthetic data: counts, labels, separation") {
  SyntheticSpec spec;
  const SyntheticDataset ds = gen_synthetic(spec);
  CHECK(ds.id_train.size() == spec.classes * spec.train_per_class);
  CHECK(ds.id_test.size() == spec.classes * spec.test_per_class);
  CHECK(ds.ood_test.size() == spec.ood_test);
  CHECK_FALSE(ds.ood_test.labeled());
  std::vector<int> hist(static_cast<std::size_t>(spec.classes), 0);
  for (int y : ds.id_train.labels) {
    REQUIRE(y >= 0);
    REQUIRE(y < spec.classes);
    ++hist[static_cast<std::size_t>(y)];
  }
  for (int h : hist) CHECK(h == spec.train_per_class);

  Matrix all(ds.mode_directions.rows() + ds.ood_direction_set.rows(), spec.dim);
  all << ds.mode_directions, ds.ood_direction_set;
  for (Eigen::Index i = 0; i < all.rows(); ++i)
    for (Eigen::Index j = i + 1; j < all.rows(); ++j)
      CHECK(std::acos(std::clamp(all.row(i).dot(all.row(j)), -1.0, 1.0)) >= spec.min_angular_sep - 1e-12);
  CHECK(((ds.id_train.values.rowwise().norm().array() - 1.0).abs() < 1e-9).all());
}

TEST_CASE("synthetic data is seed-deterministic") {
  SyntheticSpec spec;
  spec.seed = 42;
  const SyntheticDataset a = gen_synthetic(spec), b = gen_synthetic(spec);
  CHECK(a.id_train.values == b.id_train.values);
  CHECK(a.id_train.labels == b.id_train.labels);
  CHECK(a.ood_test.values == b.ood_test.values);
  spec.seed = 43;
  CHECK_FALSE(gen_synthetic(spec).id_train.values == a.id_train.values);
}

TEST_CASE("single infinitely concentrated mode collapses each class") {
  SyntheticSpec spec;
  spec.modes_per_class = 1;
  spec.kappa_id = std::numeric_limits<double>::infinity();
  spec.train_per_class = 20;
  const SyntheticDataset ds = gen_synthetic(spec);
  for (Eigen::Index i = 0; i < ds.id_train.size(); ++i) {
    const int y = ds.id_train.labels[static_cast<std::size_t>(i)];
    CHECK(ds.id_train.values.row(i) == ds.mode_directions.row(y));
  }
}

TEST_CASE("default classes are bimodal under 2-means") {
  const SyntheticDataset ds = gen_synthetic(SyntheticSpec{});
  for (int c = 0; c < 4; ++c) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < ds.id_train.size(); ++i)
      if (ds.id_train.labels[static_cast<std::size_t>(i)] == c) idx.push_back(i);
    const Matrix xc = ds.id_train.values(idx, Eigen::all);
    CHECK(two_means_ratio(xc) > 1.0);
  }
}

TEST_CASE("infeasible separation is reported") {
  SyntheticSpec spec;
  spec.dim = 2;
  spec.classes = 6;
  spec.min_angular_sep = std::numbers::pi / 2;
  try {
    gen_synthetic(spec);
    FAIL("expected SpecInfeasible");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SpecInfeasible);
  }
}

}  // TEST_SUITE
