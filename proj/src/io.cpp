#include "uqe/io.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "uqe/errors.hpp"

namespace uqe {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\"");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\"");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "na" || cell == "NaN" || cell == "nan" || cell == ".";
}

std::string row_list(const std::vector<std::size_t>& rows) {
  std::ostringstream os;
  for (std::size_t i = 0; i < rows.size() && i < 20; ++i) os << (i ? ", " : "") << rows[i];
  if (rows.size() > 20) os << ", ... (" << rows.size() << " rows)";
  return os.str();
}

struct Columns {
  Index target = -1;
  std::vector<Index> z1, z2;
  std::vector<std::string> z1_names, z2_names;
};

Columns classify(const CsvTable& t, const std::string& target, const std::string& label) {
  Columns c;
  std::vector<std::string> unknown;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    const std::string& h = t.header[j];
    if (h == target) {
      c.target = static_cast<Index>(j);
    } else if (h.rfind("z1", 0) == 0) {
      c.z1.push_back(static_cast<Index>(j));
      c.z1_names.push_back(h);
    } else if (h.rfind("z2", 0) == 0) {
      c.z2.push_back(static_cast<Index>(j));
      c.z2_names.push_back(h);
    } else {
      unknown.push_back(h);
    }
  }
  if (c.target < 0) throw ValidationError(label + " file has no '" + target + "' column");
  if (!unknown.empty()) {
    std::string list;
    for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
    throw ValidationError(label + " file has unexpected columns: " + list);
  }
  if (c.z2.empty()) throw ValidationError(label + " file has no z2_* instrument column");
  return c;
}

MatrixXd take(const CsvTable& t, const std::vector<Index>& cols) {
  MatrixXd m(static_cast<Index>(t.rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) m(i, j) = t.rows[i][cols[j]];
  return m;
}

VectorXd column(const CsvTable& t, Index col) {
  VectorXd v(static_cast<Index>(t.rows.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i) v(i) = t.rows[i][col];
  return v;
}

void write_rows(std::ostream& out, const std::string& target, const VectorXd& v, const MatrixXd& z1,
                const MatrixXd& z2, std::vector<std::string> n1, std::vector<std::string> n2) {
  if (n1.empty()) n1 = default_names("z1", z1.cols());
  if (n2.empty()) n2 = default_names("z2", z2.cols());
  out << target;
  for (const auto& n : n1) out << ',' << n;
  for (const auto& n : n2) out << ',' << n;
  out << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Index i = 0; i < v.size(); ++i) {
    out << v(i);
    for (Index j = 0; j < z1.cols(); ++j) out << ',' << z1(i, j);
    for (Index j = 0; j < z2.cols(); ++j) out << ',' << z2(i, j);
    out << '\n';
  }
}

}  // namespace

CsvTable read_csv(std::istream& in, const std::string& label) {
  CsvTable t;
  std::string line;
  while (std::getline(in, line) && trim(line).empty()) {
  }
  if (trim(line).empty()) throw ValidationError(label + " file is empty");
  t.header = split(line);
  std::map<std::string, std::vector<std::size_t>> missing;
  std::size_t lineno = 1, rowno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    ++rowno;
    auto cells = split(line);
    if (cells.size() != t.header.size()) {
      std::ostringstream os;
      os << label << " file line " << lineno << " has " << cells.size() << " fields, expected "
         << t.header.size();
      throw ValidationError(os.str());
    }
    std::vector<double> row(cells.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (is_missing(cells[j])) {
        missing[t.header[j]].push_back(rowno);
        continue;
      }
      std::size_t used = 0;
      try {
        row[j] = std::stod(cells[j], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cells[j].size() || !std::isfinite(row[j])) {
        std::ostringstream os;
        os << label << " file line " << lineno << ", column '" << t.header[j]
           << "': not a finite number: '" << cells[j] << "'";
        throw ValidationError(os.str());
      }
    }
    t.rows.push_back(std::move(row));
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << label << " file has missing values";
    for (const auto& [col, rows] : missing) os << "; column '" << col << "' in data rows " << row_list(rows);
    throw ValidationError(os.str());
  }
  if (t.rows.empty()) throw ValidationError(label + " file has no data rows");
  return t;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return read_csv(in, path);
}

StudySample study_from_table(const CsvTable& t, const std::string& label) {
  Columns c = classify(t, "y", label);
  StudySample s;
  s.y = column(t, c.target);
  s.z1 = take(t, c.z1);
  s.z2 = take(t, c.z2);
  s.z1_names = c.z1_names;
  s.z2_names = c.z2_names;
  return s;
}

AuxSample aux_from_table(const CsvTable& t, const std::string& label) {
  Columns c = classify(t, "x", label);
  AuxSample a;
  a.x = column(t, c.target);
  a.z1 = take(t, c.z1);
  a.z2 = take(t, c.z2);
  a.z1_names = c.z1_names;
  a.z2_names = c.z2_names;
  return a;
}

StudySample read_study_csv(const std::string& path) { return study_from_table(read_csv_file(path), path); }
AuxSample read_aux_csv(const std::string& path) { return aux_from_table(read_csv_file(path), path); }

void write_study_csv(const StudySample& s, std::ostream& out) {
  write_rows(out, "y", s.y, s.z1, s.z2, s.z1_names, s.z2_names);
}

void write_aux_csv(const AuxSample& a, std::ostream& out) {
  write_rows(out, "x", a.x, a.z1, a.z2, a.z1_names, a.z2_names);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << text;
  if (!out) throw ValidationError("failed writing '" + path + "'");
}

}  // namespace uqe
