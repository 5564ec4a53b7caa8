#pragma once

#include <random>
#include <vector>

#include "uqe/sample.hpp"

namespace testing {

using uqe::Index;
using uqe::MatrixXd;
using uqe::VectorXd;

inline VectorXd vec(std::vector<double> v) {
  return Eigen::Map<VectorXd>(v.data(), static_cast<Index>(v.size()));
}

inline MatrixXd col(std::vector<double> v) { return vec(std::move(v)); }

// Study/aux pair with one z1 and one z2 column.
inline uqe::MergedSample tiny(std::vector<double> y, std::vector<double> x) {
  uqe::StudySample s;
  s.y = vec(y);
  s.z1 = MatrixXd::Zero(s.y.size(), 1);
  s.z2 = MatrixXd::Zero(s.y.size(), 1);
  for (Index i = 0; i < s.y.size(); ++i) {
    s.z1(i, 0) = 0.1 * static_cast<double>(i % 3);
    s.z2(i, 0) = 0.2 * static_cast<double>(i % 4);
  }
  uqe::AuxSample a;
  a.x = vec(x);
  a.z1 = MatrixXd::Zero(a.x.size(), 1);
  a.z2 = MatrixXd::Zero(a.x.size(), 1);
  for (Index i = 0; i < a.x.size(); ++i) {
    a.z1(i, 0) = 0.1 * static_cast<double>((i + 1) % 3);
    a.z2(i, 0) = 0.2 * static_cast<double>((i + 2) % 4);
  }
  return uqe::merge_samples(s, a);
}

inline VectorXd normal_draws(Index n, std::uint64_t seed, double mu = 0.0, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(mu, sd);
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

}  // namespace testing
