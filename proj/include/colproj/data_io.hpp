#pragma once

// Line-delimited JSON files for tuples, corpora and query sets.
//
// Every file written here starts with a {"_meta": {...}} line; loaders skip
// it. Numbers are written with 17 significant digits so f64 values round
// trip exactly.
//
//   tuples : {"query": [[...]...], "docs": [[[...]...]...], "teacher_scores": [...]}
//   corpus : {"id": "...", "tokens": [[...]...]}
//   queries: same as corpus

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "colproj/retrieval.hpp"
#include "colproj/training.hpp"
#include "json.hpp"

namespace colproj {

inline constexpr std::size_t kQueryTokenCap = 32;
inline constexpr std::size_t kDocTokenCap = 300;

void write_tuples(const std::filesystem::path& path, std::span<const TrainingTuple> tuples,
                  const nlohmann::json& meta = nlohmann::json::object());
/// ParseError (with line number) on malformed lines or missing fields;
/// FormatError at the first line whose token dimension disagrees.
std::vector<TrainingTuple> load_tuples(const std::filesystem::path& path,
                                       nlohmann::json* meta = nullptr);

struct TokenSetFile {
  std::map<std::string, Matrix> items;
  std::size_t truncated = 0;  // entries cut down to the token cap
  std::vector<std::string> warnings;
  nlohmann::json meta;
};

void write_token_sets(const std::filesystem::path& path, const std::map<std::string, Matrix>& items,
                      const nlohmann::json& meta = nlohmann::json::object());
/// Loads id/tokens lines, truncating each entry to `token_cap` rows.
/// Duplicate ids raise FormatError.
TokenSetFile load_token_sets(const std::filesystem::path& path, std::size_t token_cap);

inline TokenSetFile load_corpus(const std::filesystem::path& path) {
  return load_token_sets(path, kDocTokenCap);
}
inline TokenSetFile load_queries(const std::filesystem::path& path) {
  return load_token_sets(path, kQueryTokenCap);
}

}  // namespace colproj
