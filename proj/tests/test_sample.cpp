#include <doctest.h>

#include "support.hpp"
#include "uqe/errors.hpp"
#include "uqe/sample.hpp"

using namespace uqe;
using testing::col;
using testing::vec;

namespace {

StudySample study(std::vector<double> y, Index d1 = 1, Index d2 = 1) {
  StudySample s;
  s.y = vec(y);
  s.z1 = MatrixXd::Constant(s.y.size(), d1, 0.5);
  s.z2 = MatrixXd::Constant(s.y.size(), d2, 1.5);
  return s;
}

AuxSample aux(std::vector<double> x, Index d1 = 1, Index d2 = 1) {
  AuxSample a;
  a.x = vec(x);
  a.z1 = MatrixXd::Constant(a.x.size(), d1, 0.25);
  a.z2 = MatrixXd::Constant(a.x.size(), d2, 2.5);
  return a;
}

}  // namespace

TEST_CASE("merge counts rows and the study share") {
  MergedSample m = merge_samples(study({1, 2}), aux({3, 4, 5}));
  CHECK(m.n() == 5);
  CHECK(m.n_study() == 2);
  CHECK(m.q0_hat() == doctest::Approx(0.4));
}

TEST_CASE("sample sizes of the wage application") {
  MergedSample m = merge_samples(study(std::vector<double>(3504, 1.0)), aux(std::vector<double>(1697, 2.0)));
  CHECK(m.n() == 5201);
  CHECK(m.q0_hat() == doctest::Approx(0.6737).epsilon(1e-4));
}

TEST_CASE("instrument dimensions are preserved") {
  MergedSample m = merge_samples(study({1, 2, 3}, 4, 1), aux({1, 2}, 4, 1));
  CHECK(m.z1().rows() == 5);
  CHECK(m.z1().cols() == 4);
  CHECK(m.z2().cols() == 1);
}

TEST_CASE("study rows come first and observability follows r") {
  MergedSample m = merge_samples(study({7, 8}), aux({1, 2, 3}));
  for (Index i = 0; i < m.n(); ++i) {
    CHECK(m.r(i) == (i < 2 ? 1 : 0));
    CHECK(m.y_obs(i).has_value() == (i < 2));
    CHECK(m.x_obs(i).has_value() == (i >= 2));
  }
  CHECK(*m.y_obs(1) == 8.0);
  CHECK(*m.x_obs(4) == 3.0);
}

TEST_CASE("merge is lossless and keeps row order") {
  StudySample s = study({3, 1, 2});
  s.z2(1, 0) = -4.0;
  AuxSample a = aux({9, 8});
  a.z1(0, 0) = 7.0;
  MergedSample m = merge_samples(s, a);
  StudySample s2 = m.study();
  AuxSample a2 = m.aux();
  CHECK(s2.y == s.y);
  CHECK(s2.z1 == s.z1);
  CHECK(s2.z2 == s.z2);
  CHECK(a2.x == a.x);
  CHECK(a2.z1 == a.z1);
  CHECK(a2.z2 == a.z2);
}

TEST_CASE("merge rejects bad input") {
  CHECK_THROWS_AS(merge_samples(study({}), aux({1})), ValidationError);
  CHECK_THROWS_AS(merge_samples(study({1}), aux({})), ValidationError);
  CHECK_THROWS_AS(merge_samples(study({1}, 2, 1), aux({1}, 1, 1)), ValidationError);
  CHECK_THROWS_AS(merge_samples(study({1}, 1, 1), aux({1}, 1, 2)), ValidationError);
  StudySample s = study({1, std::nan("")});
  CHECK_THROWS_AS(merge_samples(s, aux({1})), ValidationError);
}

TEST_CASE("columns are matched by name") {
  StudySample s = study({1, 2}, 2, 1);
  s.z1_names = {"z1_a", "z1_b"};
  s.z1.col(0).setConstant(1.0);
  s.z1.col(1).setConstant(2.0);
  AuxSample a = aux({3}, 2, 1);
  a.z1_names = {"z1_b", "z1_a"};
  a.z1(0, 0) = 20.0;
  a.z1(0, 1) = 10.0;
  MergedSample m = merge_samples(s, a);
  CHECK(m.z1()(2, 0) == 10.0);
  CHECK(m.z1()(2, 1) == 20.0);
  a.z1_names = {"z1_b", "z1_c"};
  CHECK_THROWS_AS(merge_samples(s, a), ValidationError);
}

TEST_CASE("overlap report flags study ranges outside the auxiliary range") {
  StudySample s = study({1, 2});
  AuxSample a = aux({1, 2});
  a.z2 = s.z2;
  s.z1 = col({0.0, 1.0});
  a.z1 = col({-1.0, 2.0});
  OverlapReport nested = validate_overlap(merge_samples(s, a));
  CHECK(nested.flagged_count() == 0);

  s.z1 = col({0.0, 3.0});
  a.z1 = col({0.0, 2.0});
  OverlapReport out = validate_overlap(merge_samples(s, a));
  REQUIRE(out.columns.size() == 2);
  CHECK_FALSE(out.columns[1].flagged);
  CHECK(out.columns[0].flagged);
  CHECK(out.columns[0].excess == doctest::Approx(1.0));
  CHECK(out.flagged_count() == 1);
  CHECK(validate_overlap(merge_samples(s, a), 1.5).flagged_count() == 0);
}

TEST_CASE("identical instrument samples raise no flags") {
  StudySample s = study({1, 2, 3});
  s.z1 = col({0.1, 0.5, 0.9});
  s.z2 = col({-1, 0, 1});
  AuxSample a;
  a.x = vec({4, 5, 6});
  a.z1 = s.z1;
  a.z2 = s.z2;
  CHECK(validate_overlap(merge_samples(s, a)).flagged_count() == 0);
}
