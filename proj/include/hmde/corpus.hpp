#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "hmde/model.hpp"

namespace hmde {

struct Document {
  std::string doc_id;
  std::string lang;
  std::string concept_id;
  std::vector<std::string> categories;
  std::string title;
  std::vector<std::string> sentences;
};

// (anchor, cross-lingual positive, same-language hard negative)
struct TrainingTriple {
  std::string anchor_id;
  std::string positive_id;
  std::string negative_id;

  bool operator==(const TrainingTriple&) const = default;
};

class Vocabulary {
 public:
  Vocabulary();

  int add(const std::string& token);           // idempotent
  int id(const std::string& token) const;      // [UNK] when absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> tokens_;
};

struct CorpusSpec {
  std::vector<std::string> languages;
  int num_concepts = 50;
  int min_pages_per_concept = 2;
  int max_pages_per_concept = 2;
  int num_categories = 8;
  int min_sentences_per_doc = 3;
  int max_sentences_per_doc = 6;
  float shared_vocab_fraction = 0.2f;
  uint64_t seed = 0;

  void validate() const;
};

struct MiningStats {
  int concepts_kept = 0;
  int pairs_total = 0;
  int pairs_dropped_no_negative = 0;
};

// ---- ingestion ------------------------------------------------------------

// JSONL: one document object per line.
std::vector<Document> load_dump(const std::string& path);
void save_dump(const std::vector<Document>& docs, const std::string& path);

std::vector<std::string> split_sentences(const std::string& text);

// Non-overlapping consecutive chunks; the final chunk may be shorter.
std::vector<std::vector<int>> chunk_tokens(const std::vector<int>& tokens,
                                           int chunk_size = 128);

// Whitespace word tokens with frequency >= min_frequency, ids assigned in
// descending-frequency then lexicographic order after the reserved three.
Vocabulary build_vocab(const std::vector<Document>& docs, int min_frequency);

// [BOS] + lowercased word ids; unknown words map to [UNK].
std::vector<int> tokenize(const std::string& sentence, const Vocabulary& vocab);

void save_vocab(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocab(const std::string& path);

// ---- triple mining --------------------------------------------------------

// Hard-negative candidates for an anchor: same language, different concept,
// at least one shared category.
std::vector<const Document*> eligible_negatives(
    const std::vector<Document>& docs, const Document& anchor);

std::vector<TrainingTriple> mine_triples(const std::vector<Document>& docs,
                                         const std::vector<std::string>& langs,
                                         uint64_t seed,
                                         MiningStats* stats = nullptr);

std::vector<TrainingTriple> downsample_triples(
    const std::vector<TrainingTriple>& triples, size_t target_count,
    uint64_t seed);

void save_triples(const std::vector<TrainingTriple>& triples,
                  const std::string& path);
std::vector<TrainingTriple> load_triples(const std::string& path);

// ---- synthetic corpus -----------------------------------------------------

// Deterministic multilingual stand-in corpus: per-language disjoint surface
// vocabularies except a shared pool of entity tokens; same-concept pages
// share topics and entities across languages; same-category concepts share
// topic mass.
std::vector<Document> generate_synthetic_corpus(const CorpusSpec& spec);

// Class label for synthetic classification runs: category group of the
// document's first category id.
int synthetic_label(const Document& doc, int num_classes);

// ---- segmentation for encoding -------------------------------------------

enum class SegmentationMode { kSentence, kChunk };

SegmentedDocument segment_document(const Document& doc, const Vocabulary& vocab,
                                   SegmentationMode mode, int chunk_size = 128);

// Word ids of the whole document in order, without any [BOS].
std::vector<int> flat_tokens(const Document& doc, const Vocabulary& vocab);

}  // namespace hmde
