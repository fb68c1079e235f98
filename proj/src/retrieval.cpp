#include "colproj/retrieval.hpp"

#include <algorithm>

#include "colproj/errors.hpp"
#include "colproj/maxsim.hpp"

namespace colproj {

bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

std::vector<RunEntry> exact_search(const QuerySet& queries, const Corpus& corpus,
                                   const HeadParams& head, std::size_t top_k) {
  if (corpus.empty()) {
    throw ContractError("exact_search: empty corpus");
  }
  if (top_k == 0) {
    throw ContractError("exact_search: top_k must be at least 1");
  }
  std::vector<std::string> ids;
  std::vector<TokenMatrix> docs;
  ids.reserve(corpus.size());
  docs.reserve(corpus.size());
  for (const auto& [id, tokens] : corpus) {
    ids.push_back(id);
    docs.emplace_back(head_forward(head, tokens));
  }

  std::vector<RunEntry> run;
  run.reserve(queries.size());
  for (const auto& [qid, tokens] : queries) {
    const TokenMatrix q(head_forward(head, tokens));
    const std::vector<double> scores = score_batch(q, docs);
    std::vector<ScoredDoc> ranked;
    ranked.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ranked.push_back({ids[i], scores[i]});
    const std::size_t keep = std::min(top_k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep),
                      ranked.end(), ranks_before);
    ranked.resize(keep);
    run.push_back(RunEntry{qid, std::move(ranked)});
  }
  return run;
}

}  // namespace colproj
