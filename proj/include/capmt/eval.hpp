#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "capmt/data.hpp"
#include "capmt/model.hpp"

namespace capmt {

// Corpus-level 4-gram BLEU with brevity penalty on the 0..100 scale, single
// reference, no smoothing: orders with no candidate n-grams are skipped; any
// scored order without a single clipped match makes the score 0.
double bleu(const std::vector<std::vector<std::string>>& hypotheses,
            const std::vector<std::vector<std::string>>& references);
double bleu_lines(const std::vector<std::string>& hypotheses,
                  const std::vector<std::string>& references);

struct BucketRow {
  std::string label;
  int upper;  // inclusive source-length bound; INT_MAX for the overflow bucket
  std::int64_t count = 0;
  double bleu = 0.0;
};

// Partition by source length at the given monotone edges (a final open bucket
// is always appended) and score each bucket independently.
std::vector<BucketRow> length_buckets(const std::vector<std::vector<std::string>>& hypotheses,
                                      const std::vector<std::vector<std::string>>& references,
                                      const std::vector<int>& src_lengths,
                                      const std::vector<int>& edges = {5, 10, 15, 20});

struct ParamCounts {
  std::map<std::string, std::int64_t> by_component;
  std::int64_t total = 0;
  std::int64_t base = 0;          // embeddings + attention + FFN + output projection
  std::int64_t dccn_related = 0;  // capsule networks + gate + attention substitutes
};
ParamCounts count_params(const Model& model);

// Greedy decoding over a record list; returns hypothesis token sequences.
std::vector<std::vector<std::string>> translate_corpus(const Model& model,
                                                       const std::vector<SentenceRecord>& records,
                                                       const Vocab& src_vocab,
                                                       const Vocab& tgt_vocab,
                                                       std::int64_t limit = -1);

// Fraction of annotated sentences whose hypothesis carries the gold
// sense-determined token at the ambiguous source position.
double ambiguous_accuracy(const std::vector<std::vector<std::string>>& hypotheses,
                          const std::vector<SentenceRecord>& records);

}  // namespace capmt
