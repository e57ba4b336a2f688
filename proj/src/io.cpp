#include "covreg/io.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "covreg/errors.hpp"

namespace fs = std::filesystem;

namespace covreg {

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::vector<double>> parse_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open file: " + path);
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      size_t a = cell.find_first_not_of(" \t");
      size_t b = cell.find_last_not_of(" \t");
      if (a == std::string::npos) {
        throw InputError("empty field at " + path + ":" +
                         std::to_string(line_no));
      }
      cell = cell.substr(a, b - a + 1);
      try {
        size_t used = 0;
        double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        row.push_back(v);
      } catch (const std::exception&) {
        throw InputError("invalid numeric field '" + cell + "' at " + path +
                         ":" + std::to_string(line_no));
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw InputError("empty CSV file: " + path);
  }
  return rows;
}

Matrix rows_to_matrix(const std::vector<std::vector<double>>& rows,
                      const std::string& path) {
  const size_t cols = rows.front().size();
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) {
      throw InputError("ragged CSV row " + std::to_string(i + 1) + " in " +
                       path + ": expected " + std::to_string(cols) +
                       " fields, got " + std::to_string(rows[i].size()));
    }
  }
  Matrix m(rows.size(), cols);
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j];
  return m;
}

}  // namespace

Matrix load_csv_matrix(const std::string& path) {
  return rows_to_matrix(parse_csv(path), path);
}

Matrix load_d_matrix(const std::string& path, int q) {
  Matrix d = load_csv_matrix(path);
  if (d.cols() != q) {
    throw InputError("penalty matrix D must have q=" + std::to_string(q) +
                     " columns, got " + std::to_string(d.cols()));
  }
  return d;
}

Dataset load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw InputError("cannot open manifest: " + manifest_path);
  }
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed manifest JSON: " + std::string(e.what()));
  }
  if (!manifest.contains("p") || !manifest.contains("q") ||
      !manifest.contains("subjects")) {
    throw InputError("manifest must contain fields p, q, subjects");
  }
  Dataset dataset;
  dataset.p = manifest.at("p").get<int>();
  dataset.q = manifest.at("q").get<int>();
  const fs::path base = fs::path(manifest_path).parent_path();

  int index = 0;
  for (const auto& entry : manifest.at("subjects")) {
    const std::string tag = ", subject " + std::to_string(index);
    auto resolve = [&](const std::string& rel) {
      fs::path p(rel);
      return (p.is_absolute() ? p : base / p).string();
    };
    Matrix y, x_row;
    try {
      y = load_csv_matrix(resolve(entry.at("y").get<std::string>()));
      x_row = load_csv_matrix(resolve(entry.at("x").get<std::string>()));
    } catch (const InputError& e) {
      throw InputError(std::string(e.what()) + tag);
    }
    if (y.cols() != dataset.p) {
      throw InputError("observation dimension mismatch: expected p=" +
                       std::to_string(dataset.p) + ", got " +
                       std::to_string(y.cols()) + tag);
    }
    if (x_row.rows() != 1 || x_row.cols() != dataset.q) {
      throw InputError("covariate file must be 1 row x q=" +
                       std::to_string(dataset.q) + " columns" + tag);
    }
    SubjectData subject{std::move(y), x_row.row(0).transpose()};
    validate_subject(subject, index);
    dataset.subjects.push_back(std::move(subject));
    ++index;
  }
  validate_dataset(dataset);
  return dataset;
}

void write_csv_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) {
    throw InputError("cannot write file: " + path);
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

}  // namespace covreg
