#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "capmt/rng.hpp"
#include "capmt/visual.hpp"

namespace capmt {

std::vector<std::string> tokenize(const std::string& line);
std::string detokenize(const std::vector<std::string>& tokens);

// Token <-> id bijection with fixed reserved ids.
class Vocab {
 public:
  static constexpr int kPad = 0, kBos = 1, kEos = 2, kUnk = 3;

  Vocab();
  int id(const std::string& token) const;  // kUnk for unknown tokens
  const std::string& token(int id) const;
  bool contains(const std::string& token) const;
  std::size_t size() const { return id_to_token_.size(); }

  void add(const std::string& token);

  std::vector<std::string> dump() const { return id_to_token_; }
  static Vocab from_tokens(const std::vector<std::string>& id_to_token);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Frequency-ordered ids after the reserved block; frequency ties break
// lexicographically.
Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus);

struct SentenceRecord {
  std::vector<std::string> src_tokens, tgt_tokens;
  std::shared_ptr<const VisualFeatures> features;  // null for text-only corpora
  std::vector<int> region_classes;                 // synthetic one-hot annotations
  // Disambiguation metadata (absent for plain corpora).
  int amb_pos = -1;
  std::string amb_token;
  int sense = -1;
  std::string gold_target;
};

struct SyntheticTaskSpec {
  int vocab_size = 200;  // source surface types, ambiguous ones included
  int n_ambiguous = 20;
  int n_senses = 2;
  std::vector<double> sense_prior = {0.6, 0.4};
  int min_len = 4, max_len = 8;
  int n_train = 8000, n_valid = 1000, n_test = 1000;
  std::uint64_t seed = 1;
  int n_classes = 64;
  int n_regions = 3;
  double noise = 0.0;
  double class_scale = 0.5;
  double global_scale = 0.005;

  void validate() const;
  SynthFeatureConfig feature_config() const;
};

struct SyntheticDataset {
  SyntheticTaskSpec spec;
  std::vector<SentenceRecord> train, valid, test;
};

// Each sentence carries exactly one ambiguous token; its sense is drawn from
// the prior and determines both the gold target token and the features, so the
// text alone cannot resolve it.
SyntheticDataset generate_synthetic(const SyntheticTaskSpec& spec);

// Reassigns features (and their sense annotations) across sentences with a
// seeded permutation, decoupling images from senses.
void shuffle_features(std::vector<SentenceRecord>& records, std::uint64_t seed);

struct Batch {
  std::vector<std::int64_t> sentence_ids;       // indices into the source records
  std::vector<std::vector<int>> src, tgt;       // [B x S_max], [B x T_max], 0-padded
  std::vector<std::vector<std::uint8_t>> src_mask, tgt_mask;
  std::vector<int> src_len, tgt_len;
  std::int64_t token_count = 0;  // non-pad source + target tokens
};

// Seeded shuffle then greedy packing under a token budget; every sentence
// lands in exactly one batch.
std::vector<Batch> make_batches(const std::vector<std::pair<int, int>>& lengths,
                                std::int64_t budget, Rng rng);
std::vector<Batch> make_batches(const std::vector<SentenceRecord>& records, const Vocab& src_vocab,
                                const Vocab& tgt_vocab, std::int64_t budget, Rng rng);

// On-disk layout: parallel UTF-8 token files aligned by line, a feature
// manifest (one container path per line, relative to its own directory), and
// a metadata JSONL with the disambiguation annotations.
void save_dataset(const std::string& dir, const SyntheticDataset& data, bool force);
struct LoadedSplit {
  std::vector<SentenceRecord> records;
};
LoadedSplit load_split(const std::string& src_path, const std::string& tgt_path,
                       const std::string& manifest_path, const std::string& meta_path);
SyntheticTaskSpec load_taskspec(const std::string& path);

}  // namespace capmt
