#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "hmde/model.hpp"

namespace hmde {

struct DocumentIndex {
  std::vector<std::string> doc_ids;
  Tensor embeddings;        // [D×h]
  std::string encoder_tag;  // hmde | sliding | truncated
};

// query_id -> set of relevant doc_ids (binary judgments)
using Qrels = std::map<std::string, std::set<std::string>>;

struct ScoredDoc {
  std::string doc_id;
  float score;
};

// per-query ranked lists, descending score
struct RetrievalRun {
  std::string tag;
  std::map<std::string, std::vector<ScoredDoc>> by_query;
};

struct Query {
  std::string query_id;
  std::string lang;
  std::string text;
};

// Full hierarchical encoding of every document, input order preserved.
// Honors HMDE_THREADS (default 1) for read-only parallel encoding.
DocumentIndex encode_collection(const std::vector<SegmentedDocument>& docs,
                                HmdeModel& model);

// A document with its tokens flattened to one stream (no [BOS] inside).
struct FlatDocument {
  std::string doc_id;
  std::vector<int> tokens;
};

// Sliding-window baseline over the lower encoder only: windows of
// segment_len tokens, adjacent windows overlapping floor(segment_len/3),
// each window [BOS]-prefixed, document embedding = mean of window embeddings.
DocumentIndex encode_collection_sliding(const std::vector<FlatDocument>& docs,
                                        HmdeModel& model, int segment_len = 128);

// Truncation baseline: first `limit` tokens through the lower encoder only.
DocumentIndex encode_collection_truncated(const std::vector<FlatDocument>& docs,
                                          HmdeModel& model, int limit = 128);

// Window [start, end) offsets for the sliding baseline.
std::vector<std::pair<int, int>> sliding_windows(int num_tokens,
                                                 int segment_len);

// Cosine ranking, descending; ties broken by ascending doc_id.
// top_k == 0 ranks the whole collection.
std::vector<ScoredDoc> rank_documents(const Tensor& query_embedding,
                                      const DocumentIndex& index,
                                      size_t top_k = 0);

double average_precision(const std::vector<std::string>& ranked,
                         const std::set<std::string>& relevant);

// Mean of per-query AP over queries that have >= 1 relevant document.
double mean_average_precision(const RetrievalRun& run, const Qrels& qrels);

// TREC formats: "<qid> Q0 <doc_id> <rank> <score:4dp> <tag>" and
// "<qid> 0 <doc_id> <grade>".
void write_run(const RetrievalRun& run, const std::string& path);
RetrievalRun load_run(const std::string& path);
Qrels load_qrels(const std::string& path);
void write_qrels(const Qrels& qrels, const std::string& path);
std::vector<Query> load_queries(const std::string& path);
void write_queries(const std::vector<Query>& queries, const std::string& path);

}  // namespace hmde
