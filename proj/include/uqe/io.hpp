#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "uqe/sample.hpp"

namespace uqe {

// Header row required. Study files hold y, auxiliary files hold x; both hold
// instrument columns named z1_* and z2_*. Empty, NA and NaN cells are missing.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

CsvTable read_csv(std::istream& in, const std::string& label);
CsvTable read_csv_file(const std::string& path);

StudySample study_from_table(const CsvTable& table, const std::string& label = "study");
AuxSample aux_from_table(const CsvTable& table, const std::string& label = "aux");
StudySample read_study_csv(const std::string& path);
AuxSample read_aux_csv(const std::string& path);

void write_study_csv(const StudySample& s, std::ostream& out);
void write_aux_csv(const AuxSample& a, std::ostream& out);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace uqe
