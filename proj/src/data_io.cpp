#include "colproj/data_io.hpp"

#include <cstdio>
#include <fstream>
#include <optional>

#include "colproj/errors.hpp"

namespace colproj {

namespace {

void put_number(std::string& out, double v) {
  if (!std::isfinite(v)) {
    throw NumericError("cannot serialize non-finite value");
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void put_matrix(std::string& out, const Matrix& m) {
  out += '[';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (r) out += ',';
    out += '[';
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      put_number(out, m(r, c));
    }
    out += ']';
  }
  out += ']';
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) {
    throw Error("io", "cannot open '" + path.string() + "' for writing");
  }
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("io", "cannot open '" + path.string() + "'");
  }
  return in;
}

std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

const nlohmann::json& field(const nlohmann::json& obj, const char* name, std::size_t line) {
  const auto it = obj.find(name);
  if (it == obj.end()) {
    throw ParseError(at_line(line) + "missing field \"" + name + "\"");
  }
  return *it;
}

Matrix parse_matrix(const nlohmann::json& j, const std::string& what, std::size_t line) {
  if (!j.is_array() || j.empty()) {
    throw ParseError(at_line(line) + what + " must be a non-empty array of rows");
  }
  const std::size_t rows = j.size();
  std::size_t cols = 0;
  std::vector<double> values;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.empty()) {
      throw ParseError(at_line(line) + what + " row " + std::to_string(r) +
                       " must be a non-empty array");
    }
    if (r == 0) cols = row.size();
    if (row.size() != cols) {
      throw FormatError(at_line(line) + what + " row " + std::to_string(r) + " has " +
                        std::to_string(row.size()) + " values, expected " + std::to_string(cols));
    }
    for (const auto& v : row) {
      if (!v.is_number()) {
        throw ParseError(at_line(line) + what + " contains a non-number");
      }
      values.push_back(v.get<double>());
    }
  }
  return Matrix(rows, cols, std::move(values));
}

nlohmann::json parse_line(const std::string& text, std::size_t line) {
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object()) throw ParseError(at_line(line) + "expected a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(at_line(line) + e.what());
  }
}

bool is_blank(const std::string& s) { return s.find_first_not_of(" \t\r") == std::string::npos; }

// Tracks the token dimension shared by every matrix in a file.
struct DimGuard {
  std::optional<std::size_t> dim;
  void check(const Matrix& m, std::size_t line) {
    if (!dim) dim = m.cols();
    if (m.cols() != *dim) {
      throw FormatError(at_line(line) + "token dimension " + std::to_string(m.cols()) +
                        " differs from " + std::to_string(*dim) + " used earlier in the file");
    }
  }
};

}  // namespace

void write_tuples(const std::filesystem::path& path, std::span<const TrainingTuple> tuples,
                  const nlohmann::json& meta) {
  std::ofstream out = open_out(path);
  out << nlohmann::json{{"_meta", meta}}.dump() << '\n';
  std::string line;
  for (const TrainingTuple& t : tuples) {
    line.clear();
    line += "{\"query\":";
    put_matrix(line, t.query);
    line += ",\"docs\":[";
    for (std::size_t i = 0; i < t.candidates.size(); ++i) {
      if (i) line += ',';
      put_matrix(line, t.candidates[i]);
    }
    line += "],\"teacher_scores\":[";
    for (std::size_t i = 0; i < t.teacher_scores.size(); ++i) {
      if (i) line += ',';
      put_number(line, t.teacher_scores[i]);
    }
    line += "]}\n";
    out << line;
  }
}

std::vector<TrainingTuple> load_tuples(const std::filesystem::path& path, nlohmann::json* meta) {
  std::ifstream in = open_in(path);
  std::vector<TrainingTuple> tuples;
  DimGuard dims;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (is_blank(text)) continue;
    const nlohmann::json j = parse_line(text, line);
    if (j.contains("_meta")) {
      if (meta) *meta = j["_meta"];
      continue;
    }
    TrainingTuple t;
    t.query = parse_matrix(field(j, "query", line), "query", line);
    dims.check(t.query, line);
    const auto& docs = field(j, "docs", line);
    if (!docs.is_array() || docs.empty()) {
      throw ParseError(at_line(line) + "\"docs\" must be a non-empty array");
    }
    for (std::size_t i = 0; i < docs.size(); ++i) {
      t.candidates.push_back(parse_matrix(docs[i], "docs[" + std::to_string(i) + "]", line));
      dims.check(t.candidates.back(), line);
    }
    const auto& scores = field(j, "teacher_scores", line);
    if (!scores.is_array()) {
      throw ParseError(at_line(line) + "\"teacher_scores\" must be an array");
    }
    for (const auto& s : scores) {
      if (!s.is_number()) throw ParseError(at_line(line) + "teacher_scores contains a non-number");
      t.teacher_scores.push_back(s.get<double>());
    }
    try {
      t.validate();
    } catch (const Error& e) {
      throw FormatError(at_line(line) + e.what());
    }
    tuples.push_back(std::move(t));
  }
  return tuples;
}

void write_token_sets(const std::filesystem::path& path, const std::map<std::string, Matrix>& items,
                      const nlohmann::json& meta) {
  std::ofstream out = open_out(path);
  out << nlohmann::json{{"_meta", meta}}.dump() << '\n';
  std::string line;
  for (const auto& [id, tokens] : items) {
    line.clear();
    line += "{\"id\":";
    line += nlohmann::json(id).dump();
    line += ",\"tokens\":";
    put_matrix(line, tokens);
    line += "}\n";
    out << line;
  }
}

TokenSetFile load_token_sets(const std::filesystem::path& path, std::size_t token_cap) {
  if (token_cap == 0) {
    throw ContractError("load_token_sets: token cap must be at least 1");
  }
  std::ifstream in = open_in(path);
  TokenSetFile file;
  DimGuard dims;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (is_blank(text)) continue;
    const nlohmann::json j = parse_line(text, line);
    if (j.contains("_meta")) {
      file.meta = j["_meta"];
      continue;
    }
    const auto& id = field(j, "id", line);
    if (!id.is_string()) throw ParseError(at_line(line) + "\"id\" must be a string");
    Matrix tokens = parse_matrix(field(j, "tokens", line), "tokens", line);
    dims.check(tokens, line);
    if (tokens.rows() > token_cap) {
      tokens = tokens.slice_rows(0, token_cap);
      ++file.truncated;
    }
    const std::string key = id.get<std::string>();
    if (!file.items.emplace(key, std::move(tokens)).second) {
      throw FormatError(at_line(line) + "duplicate id '" + key + "'");
    }
  }
  if (file.items.empty()) {
    file.warnings.push_back("'" + path.string() + "' contains no entries");
  }
  if (file.truncated > 0) {
    file.warnings.push_back(std::to_string(file.truncated) + " entries truncated to " +
                            std::to_string(token_cap) + " tokens");
  }
  return file;
}

}  // namespace colproj
