#pragma once

#include <string>
#include <vector>

#include "covreg/types.hpp"

namespace covreg {

/// Reads a JSON manifest {"p":., "q":., "subjects":[{"y":path,"x":path},..]}
/// with per-subject CSV files (y: T_i x p; x: 1 x q with x[0]=1). Relative
/// paths resolve against the manifest's directory. Validation failures name
/// the offending subject index.
Dataset load_dataset(const std::string& manifest_path);

/// Dense numeric CSV, comma delimited, '.' decimal, no header.
Matrix load_csv_matrix(const std::string& path);

/// Structure matrix for the generalized-lasso penalty; must have q columns.
Matrix load_d_matrix(const std::string& path, int q);

/// Writes a matrix as CSV with shortest round-trip number formatting
/// (replay gives byte-identical files).
void write_csv_matrix(const std::string& path, const Matrix& m);

/// Shortest decimal representation that round-trips the double.
std::string format_double(double v);

}  // namespace covreg
