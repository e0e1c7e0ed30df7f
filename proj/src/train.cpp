#include "capmt/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>

#include <json.hpp>

#include "capmt/checkpoint.hpp"
#include "capmt/error.hpp"
#include "capmt/eval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace capmt {

double lr_schedule(std::int64_t step, std::int64_t d_model, std::int64_t warmup, double factor) {
  if (step < 1) throw UsageError("learning-rate schedule is defined for steps >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return factor / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

void OptimizerState::init(const std::vector<NamedTensor>& params) {
  step = 0;
  m.clear();
  v.clear();
  for (const NamedTensor& p : params) {
    m.emplace_back(p.tensor.value().size(), 0.0);
    v.emplace_back(p.tensor.value().size(), 0.0);
  }
}

void adam_step(const std::vector<NamedTensor>& params, OptimizerState& state, double lr) {
  if (state.m.size() != params.size()) throw UsageError("optimizer state not initialized");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].tensor;
    t.data().ensure_grad();
    auto& grad = t.grad();
    auto& value = t.value();
    auto& mp = state.m[p];
    auto& vp = state.v[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter '" + params[p].name + "'");
      mp[i] = state.beta1 * mp[i] + (1.0 - state.beta1) * g;
      vp[i] = state.beta2 * vp[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = mp[i] / bc1;
      const double v_hat = vp[i] / bc2;
      value[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

namespace {

struct IdRecord {
  std::vector<int> src, tgt_in, labels;
  const SentenceRecord* rec;
};

std::vector<IdRecord> to_ids(const std::vector<SentenceRecord>& records, const Vocab& src_vocab,
                             const Vocab& tgt_vocab) {
  std::vector<IdRecord> out;
  out.reserve(records.size());
  for (const SentenceRecord& r : records) {
    IdRecord ir;
    ir.rec = &r;
    for (const auto& t : r.src_tokens) ir.src.push_back(src_vocab.id(t));
    // Teacher forcing: inputs BOS + tokens, labels tokens + EOS.
    ir.tgt_in.push_back(Vocab::kBos);
    for (const auto& t : r.tgt_tokens) {
      const int id = tgt_vocab.id(t);
      ir.tgt_in.push_back(id);
      ir.labels.push_back(id);
    }
    ir.labels.push_back(Vocab::kEos);
    out.push_back(std::move(ir));
  }
  return out;
}

std::optional<FeatureInput> features_for(const Model& model, Graph& g, const IdRecord& ir) {
  if (!variant_uses_features(model.cfg.variant)) return std::nullopt;
  if (model.cfg.train_class_embeddings)
    return model.feature_input_trained(g, *ir.rec->features, ir.rec->region_classes);
  return model.feature_input(ir.rec->features.get());
}

}  // namespace

double corpus_loss(const Model& model, const std::vector<SentenceRecord>& records,
                   const Vocab& src_vocab, const Vocab& tgt_vocab) {
  const auto ids = to_ids(records, src_vocab, tgt_vocab);
  double total = 0.0;
  std::int64_t tokens = 0;
  for (const IdRecord& ir : ids) {
    Graph g(Graph::Mode::kInfer);
    auto feats = features_for(model, g, ir);
    Tensor logits = model.forward(g, ir.src, ir.tgt_in, feats);
    total += g.nll_loss(logits, ir.labels).item();
    tokens += static_cast<std::int64_t>(ir.labels.size());
  }
  return total / static_cast<double>(tokens);
}

TrainResult train_model(Model& model, const std::vector<SentenceRecord>& train_records,
                        const std::vector<SentenceRecord>& valid_records, const Vocab& src_vocab,
                        const Vocab& tgt_vocab, const TrainConfig& tc, const std::string& out_dir,
                        const std::string& config_snapshot_json) {
  if (train_records.empty()) throw InputError("training split is empty");
  fs::create_directories(out_dir);

  std::vector<SentenceRecord> train = train_records;
  std::vector<SentenceRecord> valid = valid_records;
  if (tc.shuffled_features) {
    shuffle_features(train, tc.seed);
    shuffle_features(valid, tc.seed + 1);
  }

  const auto train_ids = to_ids(train, src_vocab, tgt_vocab);
  const auto params = model.named_params();
  OptimizerState opt;
  opt.beta1 = tc.beta1;
  opt.beta2 = tc.beta2;
  opt.eps = tc.adam_eps;
  opt.init(params);

  const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw IoError("cannot write " + metrics_path);

  const std::string best_path = (fs::path(out_dir) / "checkpoint_best.bin").string();
  const std::string final_path = (fs::path(out_dir) / "checkpoint_final.bin").string();

  Rng master(tc.seed);
  TrainResult result;
  result.metrics_path = metrics_path;
  double best_valid = std::numeric_limits<double>::infinity();
  bool have_checkpoint = false;
  std::int64_t step = 0;
  double last_loss = 0.0;

  std::vector<std::pair<int, int>> lengths;
  for (const auto& ir : train_ids)
    lengths.emplace_back(static_cast<int>(ir.src.size()), static_cast<int>(ir.labels.size()));

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng shuffle_rng = master.fork("shuffle").fork(static_cast<std::uint64_t>(epoch));
    const auto batches = make_batches(lengths, tc.batch_tokens, shuffle_rng);
    for (const Batch& batch : batches) {
      if (tc.max_steps > 0 && step >= tc.max_steps) break;
      ++step;
      Graph g(Graph::Mode::kTrain,
              master.fork("dropout").fork(static_cast<std::uint64_t>(step)).seed());
      Tensor total;
      std::int64_t tokens = 0;
      for (std::int64_t id : batch.sentence_ids) {
        const IdRecord& ir = train_ids[static_cast<std::size_t>(id)];
        auto feats = features_for(model, g, ir);
        Tensor logits = model.forward(g, ir.src, ir.tgt_in, feats);
        Tensor loss = g.nll_loss(logits, ir.labels);
        total = total.defined() ? g.add(total, loss) : loss;
        tokens += static_cast<std::int64_t>(ir.labels.size());
      }
      Tensor batch_loss = g.scale(total, 1.0 / static_cast<double>(tokens));
      last_loss = batch_loss.item();
      if (!std::isfinite(last_loss)) {
        if (have_checkpoint)
          throw NumericError("training loss diverged at step " + std::to_string(step) +
                             "; last good checkpoint: " + best_path);
        throw NumericError("training loss diverged at step " + std::to_string(step));
      }
      model.zero_grad();
      g.backward(batch_loss);
      const double lr = lr_schedule(step, model.cfg.d_model, tc.warmup, tc.lr_factor);
      adam_step(params, opt, lr);

      metrics << json{{"step", step}, {"lr", lr}, {"train_loss", last_loss}}.dump() << '\n';
    }
    const double vloss = corpus_loss(model, valid, src_vocab, tgt_vocab);
    double vacc = -1.0;
    bool annotated = false;
    for (const auto& r : valid)
      if (r.amb_pos >= 0) {
        annotated = true;
        break;
      }
    if (annotated) {
      const auto hyps = translate_corpus(model, valid, src_vocab, tgt_vocab,
                                         tc.valid_limit > 0 ? tc.valid_limit : -1);
      std::vector<SentenceRecord> scored(valid.begin(),
                                         valid.begin() + static_cast<std::ptrdiff_t>(hyps.size()));
      vacc = ambiguous_accuracy(hyps, scored);
    }
    metrics << json{{"step", step},
                    {"epoch", epoch + 1},
                    {"valid_loss", vloss},
                    {"ambiguous_accuracy", vacc}}
                   .dump()
            << '\n';
    metrics.flush();
    result.final_valid_accuracy = vacc;
    if (vloss < best_valid) {
      best_valid = vloss;
      save_checkpoint(best_path, params, config_snapshot_json);
      have_checkpoint = true;
    }
    if (tc.max_steps > 0 && step >= tc.max_steps) break;
  }

  save_checkpoint(final_path, params, config_snapshot_json);
  result.steps = step;
  result.final_train_loss = last_loss;
  result.best_valid_loss = best_valid;
  result.best_checkpoint = best_path;
  result.final_checkpoint = final_path;
  return result;
}

}  // namespace capmt
