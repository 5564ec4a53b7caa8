#include "uqe/sample.hpp"

#include <algorithm>
#include <cmath>

#include "uqe/errors.hpp"

namespace uqe {

namespace {

std::vector<std::string> names_or_default(const std::vector<std::string>& names,
                                          const std::string& prefix, Index cols) {
  if (names.empty()) return default_names(prefix, cols);
  if (static_cast<Index>(names.size()) != cols)
    throw ValidationError(prefix + " has " + std::to_string(cols) + " columns but " +
                          std::to_string(names.size()) + " names");
  return names;
}

void check_finite(const MatrixXd& m, const std::string& what) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      if (!std::isfinite(m(i, j)))
        throw ValidationError(what + ": non-finite value in row " + std::to_string(i));
}

// Column permutation taking aux order to study order, keyed on names.
std::vector<Index> match_columns(const std::vector<std::string>& study,
                                 const std::vector<std::string>& aux, const std::string& block) {
  if (study.size() != aux.size())
    throw ValidationError(block + " dimension mismatch: study has " + std::to_string(study.size()) +
                          " columns, auxiliary has " + std::to_string(aux.size()));
  std::vector<Index> perm;
  for (const auto& name : study) {
    auto it = std::find(aux.begin(), aux.end(), name);
    if (it == aux.end())
      throw ValidationError("column '" + name + "' missing from the auxiliary sample");
    perm.push_back(static_cast<Index>(it - aux.begin()));
  }
  return perm;
}

}  // namespace

std::vector<std::string> default_names(const std::string& prefix, Index count) {
  std::vector<std::string> out;
  for (Index j = 0; j < count; ++j) out.push_back(prefix + "_" + std::to_string(j + 1));
  return out;
}

std::optional<double> MergedSample::y_obs(Index i) const {
  if (i < n_s_) return y_(i);
  return std::nullopt;
}

std::optional<double> MergedSample::x_obs(Index i) const {
  if (i >= n_s_ && i < n()) return x_(i - n_s_);
  return std::nullopt;
}

StudySample MergedSample::study() const {
  return {y_, z1_.topRows(n_s_), z2_.topRows(n_s_), z1_names_, z2_names_};
}

AuxSample MergedSample::aux() const {
  return {x_, z1_.bottomRows(n_a_), z2_.bottomRows(n_a_), z1_names_, z2_names_};
}

MergedSample merge_samples(const StudySample& study, const AuxSample& aux) {
  const Index ns = study.y.size();
  const Index na = aux.x.size();
  if (ns < 1) throw ValidationError("study sample is empty");
  if (na < 1) throw ValidationError("auxiliary sample is empty");
  if (study.z1.rows() != ns || study.z2.rows() != ns)
    throw ValidationError("study instrument rows do not match the outcome length");
  if (aux.z1.rows() != na || aux.z2.rows() != na)
    throw ValidationError("auxiliary instrument rows do not match the covariate length");
  check_finite(study.y, "study y");
  check_finite(study.z1, "study z1");
  check_finite(study.z2, "study z2");
  check_finite(aux.x, "auxiliary x");
  check_finite(aux.z1, "auxiliary z1");
  check_finite(aux.z2, "auxiliary z2");

  auto s1 = names_or_default(study.z1_names, "z1", study.z1.cols());
  auto s2 = names_or_default(study.z2_names, "z2", study.z2.cols());
  auto a1 = names_or_default(aux.z1_names, "z1", aux.z1.cols());
  auto a2 = names_or_default(aux.z2_names, "z2", aux.z2.cols());
  auto p1 = match_columns(s1, a1, "z1");
  auto p2 = match_columns(s2, a2, "z2");

  MergedSample m;
  m.n_s_ = ns;
  m.n_a_ = na;
  m.y_ = study.y;
  m.x_ = aux.x;
  m.z1_.resize(ns + na, study.z1.cols());
  m.z2_.resize(ns + na, study.z2.cols());
  m.z1_.topRows(ns) = study.z1;
  m.z2_.topRows(ns) = study.z2;
  for (std::size_t j = 0; j < p1.size(); ++j) m.z1_.col(j).tail(na) = aux.z1.col(p1[j]);
  for (std::size_t j = 0; j < p2.size(); ++j) m.z2_.col(j).tail(na) = aux.z2.col(p2[j]);
  m.z1_names_ = s1;
  m.z2_names_ = s2;
  return m;
}

std::size_t OverlapReport::flagged_count() const {
  return static_cast<std::size_t>(
      std::count_if(columns.begin(), columns.end(), [](const auto& c) { return c.flagged; }));
}

OverlapReport validate_overlap(const MergedSample& merged, double tolerance) {
  OverlapReport report;
  const Index ns = merged.n_study();
  const Index na = merged.n_aux();
  auto scan = [&](const MatrixXd& z, const std::vector<std::string>& names) {
    for (Index j = 0; j < z.cols(); ++j) {
      OverlapColumn c;
      c.name = names[j];
      c.study_min = z.col(j).head(ns).minCoeff();
      c.study_max = z.col(j).head(ns).maxCoeff();
      c.aux_min = z.col(j).tail(na).minCoeff();
      c.aux_max = z.col(j).tail(na).maxCoeff();
      c.excess = std::max(0.0, c.aux_min - c.study_min) + std::max(0.0, c.study_max - c.aux_max);
      c.flagged = c.excess > tolerance;
      report.columns.push_back(c);
    }
  };
  scan(merged.z1(), merged.z1_names());
  scan(merged.z2(), merged.z2_names());
  return report;
}

}  // namespace uqe
