#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capmt/data.hpp"
#include "capmt/model.hpp"

namespace capmt {

// Noam-style schedule: factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
double lr_schedule(std::int64_t step, std::int64_t d_model, std::int64_t warmup,
                   double factor = 1.0);

struct OptimizerState {
  double beta1 = 0.9, beta2 = 0.998, eps = 1e-9;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m, v;

  void init(const std::vector<NamedTensor>& params);
};

// Bias-corrected Adam over the accumulated gradients; leaves gradients
// untouched (callers zero them per step).
void adam_step(const std::vector<NamedTensor>& params, OptimizerState& state, double lr);

struct TrainConfig {
  int epochs = 3;
  std::int64_t max_steps = -1;  // stop early when positive
  std::int64_t batch_tokens = 512;
  std::int64_t warmup = 4000;
  double lr_factor = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.998;
  double adam_eps = 1e-9;
  std::uint64_t seed = 1;
  bool deterministic = true;
  std::int64_t valid_limit = 0;  // greedy-decode at most this many sentences (0: all)
  bool shuffled_features = false;
};

struct TrainResult {
  std::int64_t steps = 0;
  double final_train_loss = 0.0;
  double best_valid_loss = 0.0;
  double final_valid_accuracy = -1.0;
  std::string best_checkpoint, final_checkpoint, metrics_path;
};

// Cross-entropy training with per-epoch validation (loss + ambiguous-token
// accuracy when the records carry annotations). Writes metrics.jsonl and the
// best / final checkpoints under out_dir.
TrainResult train_model(Model& model, const std::vector<SentenceRecord>& train_records,
                        const std::vector<SentenceRecord>& valid_records, const Vocab& src_vocab,
                        const Vocab& tgt_vocab, const TrainConfig& tc, const std::string& out_dir,
                        const std::string& config_snapshot_json);

// Mean NLL per target token over a record list (inference mode).
double corpus_loss(const Model& model, const std::vector<SentenceRecord>& records,
                   const Vocab& src_vocab, const Vocab& tgt_vocab);

}  // namespace capmt
