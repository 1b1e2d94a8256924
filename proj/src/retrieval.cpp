#include "hmde/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <functional>
#include <json.hpp>
#include <mutex>
#include <sstream>
#include <thread>

#include "hmde/errors.hpp"

namespace hmde {

using nlohmann::json;

namespace {

int worker_count() {
  const char* env = std::getenv("HMDE_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n < 1 ? 1 : n;
}

DocumentIndex build_index(std::vector<std::string> ids,
                          std::vector<Tensor> rows, std::string tag) {
  if (rows.empty()) throw ContractError("encoding an empty collection");
  const int h = static_cast<int>(rows[0].size());
  Tensor all = Tensor::zeros({static_cast<int>(rows.size()), h});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].data().begin(), rows[i].data().end(),
              all.data().begin() + int64_t(i) * h);
  return {std::move(ids), std::move(all), std::move(tag)};
}

// Runs fn(i) for every index, over HMDE_THREADS workers; results are keyed
// by index so the schedule cannot change the output.
void parallel_for(size_t count, const std::function<void(size_t)>& fn) {
  const int workers =
      static_cast<int>(std::min(size_t(worker_count()), count));
  if (workers <= 1) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w]() {
      try {
        for (size_t i = w; i < count; i += size_t(workers)) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

DocumentIndex encode_collection(const std::vector<SegmentedDocument>& docs,
                                HmdeModel& model) {
  if (docs.empty()) throw ContractError("encode_collection on empty input");
  std::vector<std::string> ids(docs.size());
  std::vector<Tensor> rows(docs.size());
  parallel_for(docs.size(), [&](size_t i) {
    EncodedDocument e = encode_document(docs[i], model);
    ids[i] = e.doc_id;
    rows[i] = e.embedding;
  });
  return build_index(std::move(ids), std::move(rows), "hmde");
}

std::vector<std::pair<int, int>> sliding_windows(int num_tokens,
                                                 int segment_len) {
  if (segment_len < 3) throw ParameterError("segment_len must be >= 3");
  if (num_tokens < 1) throw ContractError("sliding_windows on empty document");
  const int overlap = segment_len / 3;
  const int stride = segment_len - overlap;
  std::vector<std::pair<int, int>> out;
  for (int start = 0;; start += stride) {
    const int end = std::min(num_tokens, start + segment_len);
    out.emplace_back(start, end);
    if (end >= num_tokens) break;
  }
  return out;
}

namespace {

Tensor lower_window_embedding(const std::vector<int>& tokens, int start,
                              int end, HmdeModel& model) {
  std::vector<int> ids = {kBosId};
  ids.insert(ids.end(), tokens.begin() + start, tokens.begin() + end);
  return encode_query(ids, model);
}

}  // namespace

DocumentIndex encode_collection_sliding(const std::vector<FlatDocument>& docs,
                                        HmdeModel& model, int segment_len) {
  if (docs.empty()) throw ContractError("encode_collection on empty input");
  std::vector<std::string> ids(docs.size());
  std::vector<Tensor> rows(docs.size());
  const int h = model.cfg.lower.hidden_size;
  parallel_for(docs.size(), [&](size_t i) {
    const FlatDocument& d = docs[i];
    if (d.tokens.empty())
      throw ContractError("document '" + d.doc_id + "' has no tokens");
    auto windows = sliding_windows(static_cast<int>(d.tokens.size()), segment_len);
    std::vector<double> acc(h, 0.0);
    for (auto [start, end] : windows) {
      Tensor e = lower_window_embedding(d.tokens, start, end, model);
      for (int j = 0; j < h; ++j) acc[j] += e.data()[j];
    }
    Tensor mean = Tensor::zeros({h});
    for (int j = 0; j < h; ++j)
      mean.data()[j] = static_cast<float>(acc[j] / windows.size());
    ids[i] = d.doc_id;
    rows[i] = mean;
  });
  return build_index(std::move(ids), std::move(rows), "sliding");
}

DocumentIndex encode_collection_truncated(const std::vector<FlatDocument>& docs,
                                          HmdeModel& model, int limit) {
  if (docs.empty()) throw ContractError("encode_collection on empty input");
  std::vector<std::string> ids(docs.size());
  std::vector<Tensor> rows(docs.size());
  parallel_for(docs.size(), [&](size_t i) {
    const FlatDocument& d = docs[i];
    if (d.tokens.empty())
      throw ContractError("document '" + d.doc_id + "' has no tokens");
    const int end = std::min<int>(static_cast<int>(d.tokens.size()), limit);
    ids[i] = d.doc_id;
    rows[i] = lower_window_embedding(d.tokens, 0, end, model);
  });
  return build_index(std::move(ids), std::move(rows), "truncated");
}

std::vector<ScoredDoc> rank_documents(const Tensor& query_embedding,
                                      const DocumentIndex& index,
                                      size_t top_k) {
  const int d = index.embeddings.dim(0);
  const int h = index.embeddings.dim(1);
  if (static_cast<int>(query_embedding.size()) != h)
    throw ShapeError("query embedding width does not match index");
  double qn = 0.0;
  for (float v : query_embedding.data()) qn += double(v) * v;
  qn = std::sqrt(qn);
  if (qn <= 0.0) throw DegenerateVectorError("zero-norm query embedding");

  std::vector<ScoredDoc> scored(d);
  const auto& emb = index.embeddings.data();
  const auto& q = query_embedding.data();
  for (int i = 0; i < d; ++i) {
    double dot = 0.0, dn = 0.0;
    const float* row = emb.data() + int64_t(i) * h;
    for (int j = 0; j < h; ++j) {
      dot += double(row[j]) * q[j];
      dn += double(row[j]) * row[j];
    }
    dn = std::sqrt(dn);
    if (dn <= 0.0)
      throw DegenerateVectorError("zero-norm document embedding at row " +
                                  std::to_string(i));
    scored[i] = {index.doc_ids[i], static_cast<float>(dot / (qn * dn))};
  }
  std::sort(scored.begin(), scored.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
  if (top_k > 0 && scored.size() > top_k) scored.resize(top_k);
  return scored;
}

double average_precision(const std::vector<std::string>& ranked,
                         const std::set<std::string>& relevant) {
  if (relevant.empty())
    throw ContractError("average_precision with an empty relevant set");
  double sum = 0.0;
  int hits = 0;
  for (size_t k = 0; k < ranked.size(); ++k) {
    if (relevant.count(ranked[k])) {
      ++hits;
      sum += double(hits) / double(k + 1);
    }
  }
  return sum / double(relevant.size());
}

double mean_average_precision(const RetrievalRun& run, const Qrels& qrels) {
  double sum = 0.0;
  int judged = 0;
  for (const auto& [qid, relevant] : qrels) {
    if (relevant.empty()) continue;
    auto it = run.by_query.find(qid);
    std::vector<std::string> ranked;
    if (it != run.by_query.end())
      for (const ScoredDoc& sd : it->second) ranked.push_back(sd.doc_id);
    sum += average_precision(ranked, relevant);
    ++judged;
  }
  if (judged == 0)
    throw ContractError("mean_average_precision with no judged queries");
  return sum / judged;
}

void write_run(const RetrievalRun& run, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  for (const auto& [qid, docs] : run.by_query) {
    int rank = 1;
    for (const ScoredDoc& sd : docs) {
      out << qid << " Q0 " << sd.doc_id << ' ' << rank << ' ' << std::fixed
          << std::setprecision(4) << sd.score << ' ' << run.tag << '\n';
      ++rank;
    }
  }
}

RetrievalRun load_run(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open run file: " + path);
  RetrievalRun run;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string qid, q0, doc_id, tag;
    int rank;
    float score;
    if (!(is >> qid >> q0 >> doc_id >> rank >> score >> tag) || q0 != "Q0")
      throw ParseError("malformed run line " + std::to_string(line_no));
    run.tag = tag;
    run.by_query[qid].push_back({doc_id, score});
  }
  return run;
}

Qrels load_qrels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open qrels file: " + path);
  Qrels qrels;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string qid, zero, doc_id;
    int grade;
    if (!(is >> qid >> zero >> doc_id >> grade))
      throw ParseError("malformed qrels line " + std::to_string(line_no));
    if (grade > 0) qrels[qid].insert(doc_id);
    else qrels.try_emplace(qid);  // judged non-relevant still marks the query
  }
  return qrels;
}

void write_qrels(const Qrels& qrels, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  for (const auto& [qid, relevant] : qrels)
    for (const std::string& doc_id : relevant)
      out << qid << " 0 " << doc_id << " 1\n";
}

std::vector<Query> load_queries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open queries file: " + path);
  std::vector<Query> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    Query q;
    q.query_id = j.at("query_id").get<std::string>();
    q.lang = j.at("lang").get<std::string>();
    q.text = j.at("text").get<std::string>();
    out.push_back(std::move(q));
  }
  return out;
}

void write_queries(const std::vector<Query>& queries, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  for (const Query& q : queries) {
    json j;
    j["query_id"] = q.query_id;
    j["lang"] = q.lang;
    j["text"] = q.text;
    out << j.dump() << '\n';
  }
}

}  // namespace hmde
