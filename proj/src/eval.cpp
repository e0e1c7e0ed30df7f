#include "capmt/eval.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <map>

#include "capmt/error.hpp"

namespace capmt {

namespace {

constexpr int kMaxOrder = 4;

void count_ngrams(const std::vector<std::string>& tokens, int n,
                  std::map<std::vector<std::string>, std::int64_t>& counts) {
  if (static_cast<int>(tokens.size()) < n) return;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
}

}  // namespace

double bleu(const std::vector<std::vector<std::string>>& hypotheses,
            const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.size() != references.size())
    throw InputError("hypothesis count " + std::to_string(hypotheses.size()) +
                     " does not match reference count " + std::to_string(references.size()));

  std::int64_t matched[kMaxOrder] = {0}, total[kMaxOrder] = {0};
  std::int64_t hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    hyp_len += static_cast<std::int64_t>(hypotheses[s].size());
    ref_len += static_cast<std::int64_t>(references[s].size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      std::map<std::vector<std::string>, std::int64_t> hyp_counts, ref_counts;
      count_ngrams(hypotheses[s], n, hyp_counts);
      count_ngrams(references[s], n, ref_counts);
      for (const auto& [gram, cnt] : hyp_counts) {
        total[n - 1] += cnt;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matched[n - 1] += std::min(cnt, it->second);
      }
    }
  }

  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  int orders = 0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (total[n] == 0) continue;  // hypotheses too short for this order
    if (matched[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
    ++orders;
  }
  if (orders == 0) return 0.0;
  const double precision = std::exp(log_sum / orders);
  const double brevity =
      hyp_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * brevity * precision;
}

double bleu_lines(const std::vector<std::string>& hypotheses,
                  const std::vector<std::string>& references) {
  std::vector<std::vector<std::string>> h, r;
  for (const auto& line : hypotheses) h.push_back(tokenize(line));
  for (const auto& line : references) r.push_back(tokenize(line));
  return bleu(h, r);
}

std::vector<BucketRow> length_buckets(const std::vector<std::vector<std::string>>& hypotheses,
                                      const std::vector<std::vector<std::string>>& references,
                                      const std::vector<int>& src_lengths,
                                      const std::vector<int>& edges) {
  if (hypotheses.size() != references.size() || hypotheses.size() != src_lengths.size())
    throw InputError("length_buckets: misaligned inputs");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (edges[i] <= edges[i - 1]) throw ConfigError("bucket edges must be strictly increasing");

  std::vector<BucketRow> rows;
  int lo = 1;
  for (int e : edges) {
    BucketRow row;
    row.upper = e;
    row.label = lo == e ? std::to_string(e) : std::to_string(lo) + "-" + std::to_string(e);
    rows.push_back(row);
    lo = e + 1;
  }
  BucketRow overflow;
  overflow.upper = INT_MAX;
  overflow.label = ">" + std::to_string(edges.empty() ? 0 : edges.back());
  rows.push_back(overflow);

  std::vector<std::vector<std::vector<std::string>>> hyp_parts(rows.size()), ref_parts(rows.size());
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    std::size_t bucket = rows.size() - 1;
    for (std::size_t b = 0; b < rows.size(); ++b)
      if (src_lengths[s] <= rows[b].upper) {
        bucket = b;
        break;
      }
    hyp_parts[bucket].push_back(hypotheses[s]);
    ref_parts[bucket].push_back(references[s]);
  }
  for (std::size_t b = 0; b < rows.size(); ++b) {
    rows[b].count = static_cast<std::int64_t>(hyp_parts[b].size());
    rows[b].bleu = rows[b].count ? bleu(hyp_parts[b], ref_parts[b]) : 0.0;
  }
  return rows;
}

ParamCounts count_params(const Model& model) {
  ParamCounts counts;
  for (const NamedTensor& p : model.named_params()) {
    std::string component;
    if (p.name.rfind("encoder.", 0) == 0) component = "encoder";
    else if (p.name.rfind("decoder.", 0) == 0) component = "decoder";
    else if (p.name.rfind("last.dccn_global.", 0) == 0) component = "dccn_global";
    else if (p.name.rfind("last.dccn_regional.", 0) == 0) component = "dccn_regional";
    else if (p.name.rfind("last.gate.", 0) == 0) component = "gate";
    else if (p.name.rfind("last.attn_global.", 0) == 0) component = "attention_global";
    else if (p.name.rfind("last.attn_regional.", 0) == 0) component = "attention_regional";
    else if (p.name.rfind("last.", 0) == 0) component = "last_ffn";
    else if (p.name.rfind("output.", 0) == 0) component = "output";
    else if (p.name.rfind("class_embeddings.", 0) == 0) component = "class_embeddings";
    else component = "other";
    counts.by_component[component] += p.tensor.numel();
    counts.total += p.tensor.numel();
  }
  for (const char* c : {"dccn_global", "dccn_regional", "gate", "attention_global",
                        "attention_regional"}) {
    auto it = counts.by_component.find(c);
    if (it != counts.by_component.end()) counts.dccn_related += it->second;
  }
  for (const char* c : {"encoder", "decoder", "last_ffn", "output"}) {
    auto it = counts.by_component.find(c);
    if (it != counts.by_component.end()) counts.base += it->second;
  }
  return counts;
}

std::vector<std::vector<std::string>> translate_corpus(const Model& model,
                                                       const std::vector<SentenceRecord>& records,
                                                       const Vocab& src_vocab,
                                                       const Vocab& tgt_vocab,
                                                       std::int64_t limit) {
  std::vector<std::vector<std::string>> hyps;
  const std::size_t n = limit < 0 ? records.size()
                                  : std::min<std::size_t>(records.size(),
                                                          static_cast<std::size_t>(limit));
  hyps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SentenceRecord& rec = records[i];
    std::vector<int> src;
    for (const auto& tok : rec.src_tokens) src.push_back(src_vocab.id(tok));
    auto feats = model.feature_input(rec.features.get());
    std::vector<int> ids = model.translate(src, feats);
    std::vector<std::string> tokens;
    for (int id : ids) tokens.push_back(tgt_vocab.token(id));
    hyps.push_back(std::move(tokens));
  }
  return hyps;
}

double ambiguous_accuracy(const std::vector<std::vector<std::string>>& hypotheses,
                          const std::vector<SentenceRecord>& records) {
  std::int64_t scored = 0, correct = 0;
  for (std::size_t i = 0; i < hypotheses.size() && i < records.size(); ++i) {
    const SentenceRecord& rec = records[i];
    if (rec.amb_pos < 0) continue;
    ++scored;
    const std::size_t pos = static_cast<std::size_t>(rec.amb_pos);
    if (pos < hypotheses[i].size() && hypotheses[i][pos] == rec.gold_target) ++correct;
  }
  if (scored == 0) throw InputError("no sentences carry disambiguation annotations");
  return static_cast<double>(correct) / static_cast<double>(scored);
}

}  // namespace capmt
