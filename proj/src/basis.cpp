#include "uqe/basis.hpp"

#include <algorithm>
#include <cmath>

#include "uqe/errors.hpp"

namespace uqe {

namespace {

double ipow(double v, int p) {
  double out = 1.0;
  for (int k = 0; k < p; ++k) out *= v;
  return out;
}

}  // namespace

Basis Basis::parse(const std::vector<std::string>& specs, const std::vector<std::string>& z1_names,
                   const std::vector<std::string>& z2_names, bool allow_x, bool allow_z2) {
  std::vector<Term> terms;
  for (const auto& raw : specs) {
    std::string name = raw;
    int power = 1;
    if (auto caret = raw.find('^'); caret != std::string::npos) {
      name = raw.substr(0, caret);
      try {
        power = std::stoi(raw.substr(caret + 1));
      } catch (const std::exception&) {
        throw ValidationError("bad power in basis term '" + raw + "'");
      }
      if (power < 1 || power > 8) throw ValidationError("basis power out of range in '" + raw + "'");
    }
    auto suffix = power == 1 ? std::string() : "^" + std::to_string(power);
    if (name == "1") {
      if (power != 1) throw ValidationError("constant term cannot carry a power");
      terms.push_back({Term::Var::one, -1, 1, "1"});
    } else if (name == "x") {
      if (!allow_x) throw ValidationError("term 'x' is not allowed in this basis");
      terms.push_back({Term::Var::x, -1, power, "x" + suffix});
    } else if (name == "z1_*" || name == "z2_*") {
      bool first = name[1] == '1';
      if (!first && !allow_z2) throw ValidationError("z2 terms are not allowed in this basis");
      const auto& names = first ? z1_names : z2_names;
      for (std::size_t j = 0; j < names.size(); ++j)
        terms.push_back({first ? Term::Var::z1 : Term::Var::z2, static_cast<Eigen::Index>(j), power,
                         names[j] + suffix});
    } else {
      auto it1 = std::find(z1_names.begin(), z1_names.end(), name);
      auto it2 = std::find(z2_names.begin(), z2_names.end(), name);
      if (it1 != z1_names.end()) {
        terms.push_back({Term::Var::z1, static_cast<Eigen::Index>(it1 - z1_names.begin()), power,
                         name + suffix});
      } else if (it2 != z2_names.end()) {
        if (!allow_z2) throw ValidationError("z2 terms are not allowed in this basis: '" + raw + "'");
        terms.push_back({Term::Var::z2, static_cast<Eigen::Index>(it2 - z2_names.begin()), power,
                         name + suffix});
      } else {
        throw ValidationError("unknown basis term '" + raw + "'");
      }
    }
  }
  if (terms.empty()) throw ValidationError("basis is empty");
  return Basis(std::move(terms));
}

std::vector<std::string> Basis::labels() const {
  std::vector<std::string> out;
  for (const auto& t : terms_) out.push_back(t.label);
  return out;
}

bool Basis::constant_first() const {
  return !terms_.empty() && terms_.front().var == Term::Var::one;
}

bool Basis::involves_x() const {
  return std::any_of(terms_.begin(), terms_.end(), [](const Term& t) { return t.var == Term::Var::x; });
}

bool Basis::involves_z1() const {
  return std::any_of(terms_.begin(), terms_.end(), [](const Term& t) { return t.var == Term::Var::z1; });
}

Eigen::MatrixXd Basis::design(const Eigen::MatrixXd& z1, const Eigen::MatrixXd& z2) const {
  const Eigen::Index n = z1.rows();
  Eigen::MatrixXd out(n, size());
  for (Eigen::Index k = 0; k < size(); ++k) {
    const Term& t = terms_[k];
    switch (t.var) {
      case Term::Var::one: out.col(k).setOnes(); break;
      case Term::Var::x: throw ValidationError("x term in an instrument basis");
      case Term::Var::z1:
        for (Eigen::Index i = 0; i < n; ++i) out(i, k) = ipow(z1(i, t.column), t.power);
        break;
      case Term::Var::z2:
        for (Eigen::Index i = 0; i < n; ++i) out(i, k) = ipow(z2(i, t.column), t.power);
        break;
    }
  }
  return out;
}

void Basis::features(double x, const Eigen::MatrixXd& z1, Eigen::Index row, double* out,
                     double* out_dx) const {
  for (std::size_t k = 0; k < terms_.size(); ++k) {
    const Term& t = terms_[k];
    switch (t.var) {
      case Term::Var::one:
        out[k] = 1.0;
        if (out_dx) out_dx[k] = 0.0;
        break;
      case Term::Var::x:
        out[k] = ipow(x, t.power);
        if (out_dx) out_dx[k] = t.power * ipow(x, t.power - 1);
        break;
      case Term::Var::z1:
        out[k] = ipow(z1(row, t.column), t.power);
        if (out_dx) out_dx[k] = 0.0;
        break;
      case Term::Var::z2: throw ValidationError("z2 term in an outcome index");
    }
  }
}

}  // namespace uqe
