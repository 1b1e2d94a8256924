#include "hmde/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <json.hpp>
#include <random>
#include <set>
#include <sstream>

#include "hmde/errors.hpp"

namespace hmde {

using nlohmann::json;

// ---- Vocabulary -------------------------------------------------------------

Vocabulary::Vocabulary() {
  tokens_ = {"[PAD]", "[UNK]", "[BOS]"};
  for (int i = 0; i < 3; ++i) index_[tokens_[i]] = i;
}

int Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_[token] = id;
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw VocabularyError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

// ---- ingestion --------------------------------------------------------------

namespace {

std::string require_string(const json& j, const char* field, int line_no) {
  if (!j.contains(field) || !j[field].is_string())
    throw ParseError("line " + std::to_string(line_no) +
                     ": missing or non-string field '" + field + "'");
  return j[field].get<std::string>();
}

}  // namespace

std::vector<Document> load_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dump file: " + path);
  std::vector<Document> docs;
  std::set<std::string> seen_ids;
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
    Document d;
    d.doc_id = require_string(j, "doc_id", line_no);
    d.lang = require_string(j, "lang", line_no);
    d.concept_id = require_string(j, "concept_id", line_no);
    d.title = require_string(j, "title", line_no);
    if (!j.contains("categories") || !j["categories"].is_array())
      throw ParseError("line " + std::to_string(line_no) +
                       ": missing or non-array field 'categories'");
    for (const auto& c : j["categories"])
      d.categories.push_back(c.get<std::string>());
    if (j.contains("sentences") && j["sentences"].is_array()) {
      for (const auto& s : j["sentences"])
        d.sentences.push_back(s.get<std::string>());
    } else if (j.contains("text") && j["text"].is_string()) {
      d.sentences = split_sentences(j["text"].get<std::string>());
    } else {
      throw ParseError("line " + std::to_string(line_no) +
                       ": record needs 'sentences' or 'text'");
    }
    if (d.lang.empty())
      throw ParseError("line " + std::to_string(line_no) + ": empty lang");
    if (d.sentences.empty())
      throw ParseError("line " + std::to_string(line_no) +
                       ": document has no sentences");
    if (!seen_ids.insert(d.doc_id).second)
      throw IntegrityError("duplicate doc_id '" + d.doc_id + "' at line " +
                           std::to_string(line_no));
    docs.push_back(std::move(d));
  }
  return docs;
}

void save_dump(const std::vector<Document>& docs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  for (const Document& d : docs) {
    json j;
    j["doc_id"] = d.doc_id;
    j["lang"] = d.lang;
    j["concept_id"] = d.concept_id;
    j["categories"] = d.categories;
    j["title"] = d.title;
    j["sentences"] = d.sentences;
    out << j.dump() << '\n';
  }
}

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&]() {
    size_t b = cur.find_first_not_of(" \t\r");
    size_t e = cur.find_last_not_of(" \t\r");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
    cur.clear();
  };
  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      flush();
      continue;
    }
    cur.push_back(c);
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]))))
      flush();
  }
  flush();
  return out;
}

std::vector<std::vector<int>> chunk_tokens(const std::vector<int>& tokens,
                                           int chunk_size) {
  if (chunk_size < 1) throw ParameterError("chunk_size must be >= 1");
  std::vector<std::vector<int>> out;
  for (size_t start = 0; start < tokens.size(); start += chunk_size) {
    const size_t end = std::min(tokens.size(), start + chunk_size);
    out.emplace_back(tokens.begin() + start, tokens.begin() + end);
  }
  return out;
}

namespace {

std::vector<std::string> words_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string w;
  while (is >> w) {
    for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(w);
  }
  return out;
}

}  // namespace

Vocabulary build_vocab(const std::vector<Document>& docs, int min_frequency) {
  if (docs.empty()) throw ContractError("build_vocab on an empty corpus");
  std::map<std::string, int64_t> freq;
  for (const Document& d : docs)
    for (const std::string& s : d.sentences)
      for (const std::string& w : words_of(s)) ++freq[w];
  std::vector<std::pair<std::string, int64_t>> kept;
  for (const auto& [w, n] : freq)
    if (n >= min_frequency) kept.emplace_back(w, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [w, n] : kept) v.add(w);
  return v;
}

std::vector<int> tokenize(const std::string& sentence, const Vocabulary& vocab) {
  std::vector<int> ids = {kBosId};
  for (const std::string& w : words_of(sentence)) ids.push_back(vocab.id(w));
  return ids;
}

void save_vocab(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  // reserved ids 0..2 are implicit: line number == id - 3
  for (int i = 3; i < vocab.size(); ++i) out << vocab.token(i) << '\n';
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vocabulary file: " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) v.add(line);
  return v;
}

// ---- triple mining ----------------------------------------------------------

namespace {

bool share_category(const Document& a, const Document& b) {
  for (const auto& ca : a.categories)
    for (const auto& cb : b.categories)
      if (ca == cb) return true;
  return false;
}

}  // namespace

std::vector<const Document*> eligible_negatives(
    const std::vector<Document>& docs, const Document& anchor) {
  std::vector<const Document*> out;
  for (const Document& d : docs) {
    if (d.lang != anchor.lang) continue;
    if (d.concept_id == anchor.concept_id) continue;
    if (!share_category(anchor, d)) continue;
    out.push_back(&d);
  }
  return out;
}

std::vector<TrainingTriple> mine_triples(const std::vector<Document>& docs,
                                         const std::vector<std::string>& langs,
                                         uint64_t seed, MiningStats* stats) {
  const std::set<std::string> lang_set(langs.begin(), langs.end());

  // concept -> lang -> page, enforcing one page per (concept, lang)
  std::map<std::string, std::map<std::string, const Document*>> by_concept;
  for (const Document& d : docs) {
    if (!lang_set.count(d.lang)) continue;
    auto& per_lang = by_concept[d.concept_id];
    if (!per_lang.emplace(d.lang, &d).second)
      throw IntegrityError("duplicate page for concept '" + d.concept_id +
                           "' in language '" + d.lang + "'");
  }

  MiningStats local;
  std::vector<TrainingTriple> out;
  std::mt19937_64 rng(seed);
  for (const auto& [concept_id, pages] : by_concept) {  // sorted by concept_id
    if (pages.size() < 2) continue;
    ++local.concepts_kept;
    for (const auto& [lang_a, anchor] : pages) {     // sorted anchor lang
      for (const auto& [lang_p, positive] : pages) { // sorted positive lang
        if (lang_a == lang_p) continue;
        ++local.pairs_total;
        auto candidates = eligible_negatives(docs, *anchor);
        if (candidates.empty()) {
          ++local.pairs_dropped_no_negative;
          continue;
        }
        const Document* neg = candidates[rng() % candidates.size()];
        out.push_back({anchor->doc_id, positive->doc_id, neg->doc_id});
      }
    }
  }
  if (stats) *stats = local;
  return out;
}

std::vector<TrainingTriple> downsample_triples(
    const std::vector<TrainingTriple>& triples, size_t target_count,
    uint64_t seed) {
  if (target_count > triples.size())
    throw ParameterError("downsample target " + std::to_string(target_count) +
                         " exceeds triple count " +
                         std::to_string(triples.size()));
  // seeded Fisher-Yates over indices, then restore original order
  std::vector<size_t> idx(triples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (size_t i = 0; i + 1 < idx.size(); ++i) {
    const size_t j = i + rng() % (idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(target_count);
  std::sort(idx.begin(), idx.end());
  std::vector<TrainingTriple> out;
  out.reserve(target_count);
  for (size_t i : idx) out.push_back(triples[i]);
  return out;
}

void save_triples(const std::vector<TrainingTriple>& triples,
                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path);
  for (const TrainingTriple& t : triples) {
    json j;
    j["anchor_id"] = t.anchor_id;
    j["positive_id"] = t.positive_id;
    j["negative_id"] = t.negative_id;
    out << j.dump() << '\n';
  }
}

std::vector<TrainingTriple> load_triples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open triples file: " + path);
  std::vector<TrainingTriple> out;
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
    out.push_back({require_string(j, "anchor_id", line_no),
                   require_string(j, "positive_id", line_no),
                   require_string(j, "negative_id", line_no)});
  }
  return out;
}

// ---- synthetic corpus ---------------------------------------------------------

void CorpusSpec::validate() const {
  if (languages.size() < 2)
    throw ParameterError("synthetic corpus needs at least 2 languages");
  if (num_concepts < 1 || num_categories < 1)
    throw ParameterError("num_concepts and num_categories must be >= 1");
  if (min_pages_per_concept < 1 ||
      max_pages_per_concept < min_pages_per_concept)
    throw ParameterError("invalid pages_per_concept range");
  if (min_sentences_per_doc < 1 ||
      max_sentences_per_doc < min_sentences_per_doc)
    throw ParameterError("invalid sentences_per_doc range");
  if (shared_vocab_fraction < 0.0f || shared_vocab_fraction > 1.0f)
    throw ParameterError("shared_vocab_fraction must be in [0, 1]");
}

namespace {

// Uniform int in [lo, hi], from the raw generator stream.
int rand_range(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % uint64_t(hi - lo + 1));
}

}  // namespace

std::vector<Document> generate_synthetic_corpus(const CorpusSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);

  // Semantic ids below num_shared render as language-independent entity
  // tokens; the rest render per language.
  const int semantic_size = std::max(300, spec.num_concepts * 8);
  const int num_shared =
      static_cast<int>(spec.shared_vocab_fraction * semantic_size);
  auto surface = [&](int w, const std::string& lang) {
    return w < num_shared ? "ent" + std::to_string(w)
                          : lang + "_w" + std::to_string(w);
  };

  // per-category topic words
  const int cat_topic_size = 12;
  std::vector<std::vector<int>> category_topic(spec.num_categories);
  for (auto& topic : category_topic)
    for (int i = 0; i < cat_topic_size; ++i)
      topic.push_back(rand_range(rng, 0, semantic_size - 1));

  // per-concept topic words plus a dedicated shared entity when available
  const int con_topic_size = 10;
  std::vector<std::vector<int>> concept_topic(spec.num_concepts);
  std::vector<int> concept_entity(spec.num_concepts, -1);
  for (int c = 0; c < spec.num_concepts; ++c) {
    for (int i = 0; i < con_topic_size; ++i)
      concept_topic[c].push_back(rand_range(rng, 0, semantic_size - 1));
    if (num_shared > 0) concept_entity[c] = c % num_shared;
  }

  const int num_langs = static_cast<int>(spec.languages.size());
  std::vector<Document> docs;
  for (int c = 0; c < spec.num_concepts; ++c) {
    const int category = c % spec.num_categories;
    // which languages have a page for this concept
    int pages = std::min(
        num_langs,
        rand_range(rng, spec.min_pages_per_concept, spec.max_pages_per_concept));
    std::vector<int> order(num_langs);
    for (int i = 0; i < num_langs; ++i) order[i] = i;
    for (int i = 0; i + 1 < num_langs; ++i)
      std::swap(order[i], order[i + rng() % uint64_t(num_langs - i)]);
    order.resize(pages);
    std::sort(order.begin(), order.end());

    const bool extra_cat = rand_range(rng, 0, 3) == 0;
    const int second_cat = extra_cat ? rand_range(rng, 0, spec.num_categories - 1)
                                     : -1;

    for (int li : order) {
      const std::string& lang = spec.languages[li];
      Document d;
      d.doc_id = "d_" + std::to_string(c) + "_" + lang;
      d.lang = lang;
      d.concept_id = "Q" + std::to_string(c);
      d.categories.push_back("cat" + std::to_string(category));
      if (second_cat >= 0 && second_cat != category)
        d.categories.push_back("cat" + std::to_string(second_cat));
      d.title = "concept" + std::to_string(c) + " " + lang;

      const int n_sent =
          rand_range(rng, spec.min_sentences_per_doc, spec.max_sentences_per_doc);
      for (int s = 0; s < n_sent; ++s) {
        std::ostringstream sent;
        bool first = true;
        // the lead sentence opens with the concept's shared entity
        if (s == 0 && concept_entity[c] >= 0) {
          sent << surface(concept_entity[c], lang);
          first = false;
        }
        const int n_tokens = rand_range(rng, 8, 12);
        for (int t = 0; t < n_tokens; ++t) {
          int w;
          const int roll = rand_range(rng, 0, 99);
          if (roll < 30 && concept_entity[c] >= 0) {
            w = concept_entity[c];
          } else if (roll < 60) {
            w = concept_topic[c][rng() % concept_topic[c].size()];
          } else if (roll < 85) {
            w = category_topic[category][rng() % category_topic[category].size()];
          } else {
            w = rand_range(rng, 0, semantic_size - 1);
          }
          if (!first) sent << ' ';
          sent << surface(w, lang);
          first = false;
        }
        sent << '.';
        d.sentences.push_back(sent.str());
      }
      docs.push_back(std::move(d));
    }
  }
  return docs;
}

int synthetic_label(const Document& doc, int num_classes) {
  if (num_classes < 2) throw ParameterError("num_classes must be >= 2");
  if (doc.categories.empty())
    throw ContractError("document '" + doc.doc_id + "' has no categories");
  const std::string& cat = doc.categories.front();
  int k = 0;
  for (char ch : cat)
    if (std::isdigit(static_cast<unsigned char>(ch))) k = k * 10 + (ch - '0');
  return k % num_classes;
}

// ---- segmentation -------------------------------------------------------------

SegmentedDocument segment_document(const Document& doc, const Vocabulary& vocab,
                                   SegmentationMode mode, int chunk_size) {
  SegmentedDocument out;
  out.doc_id = doc.doc_id;
  if (mode == SegmentationMode::kSentence) {
    for (const std::string& s : doc.sentences)
      out.segments.push_back(tokenize(s, vocab));
  } else {
    const std::vector<int> flat = flat_tokens(doc, vocab);
    for (auto& chunk : chunk_tokens(flat, chunk_size)) {
      std::vector<int> seg = {kBosId};
      seg.insert(seg.end(), chunk.begin(), chunk.end());
      out.segments.push_back(std::move(seg));
    }
  }
  if (out.segments.empty())
    throw ContractError("document '" + doc.doc_id + "' produced no segments");
  return out;
}

std::vector<int> flat_tokens(const Document& doc, const Vocabulary& vocab) {
  std::vector<int> out;
  for (const std::string& s : doc.sentences) {
    std::vector<int> ids = tokenize(s, vocab);
    out.insert(out.end(), ids.begin() + 1, ids.end());  // drop the BOS
  }
  return out;
}

}  // namespace hmde
