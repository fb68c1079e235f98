#pragma once

#include <map>
#include <string>
#include <vector>

#include "colproj/head.hpp"
#include "colproj/matrix.hpp"

namespace colproj {

/// Document id → raw token embeddings. Ordered by id so results never
/// depend on insertion order.
using Corpus = std::map<std::string, Matrix>;
/// Query id → raw token embeddings.
using QuerySet = std::map<std::string, Matrix>;

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;
};

/// One query's ranking: non-increasing score, ties by ascending doc id.
/// Rank of ranking[i] is i + 1.
struct RunEntry {
  std::string query_id;
  std::vector<ScoredDoc> ranking;
};

/// Orders by score descending, then doc id ascending.
bool ranks_before(const ScoredDoc& a, const ScoredDoc& b);

/// Scores every query against every document (head projection + MaxSim)
/// and keeps the top_k per query. Results are ordered by query id.
std::vector<RunEntry> exact_search(const QuerySet& queries, const Corpus& corpus,
                                   const HeadParams& head, std::size_t top_k);

}  // namespace colproj
