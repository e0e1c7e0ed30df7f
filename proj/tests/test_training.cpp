#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "capmt/checkpoint.hpp"
#include "capmt/eval.hpp"
#include "capmt/train.hpp"

using capmt::Graph;
using capmt::Model;
using capmt::ModelConfig;
using capmt::Rng;
using capmt::Tensor;
using capmt::TrainConfig;
using capmt::Variant;
using capmt::Vocab;

namespace {

struct TinyTask {
  capmt::SyntheticDataset data;
  Vocab src_vocab, tgt_vocab;
  ModelConfig cfg;
};

TinyTask tiny_task(Variant variant, int train_size = 48) {
  capmt::SyntheticTaskSpec spec;
  spec.vocab_size = 24;
  spec.n_ambiguous = 3;
  spec.n_train = train_size;
  spec.n_valid = 12;
  spec.n_test = 12;
  spec.n_classes = 12;
  spec.min_len = 3;
  spec.max_len = 5;
  spec.seed = 9;

  TinyTask task;
  task.data = capmt::generate_synthetic(spec);
  std::vector<std::vector<std::string>> src, tgt;
  for (const auto& r : task.data.train) {
    src.push_back(r.src_tokens);
    tgt.push_back(r.tgt_tokens);
  }
  task.src_vocab = capmt::build_vocab(src);
  task.tgt_vocab = capmt::build_vocab(tgt);

  task.cfg.d_model = 16;
  task.cfg.d_ff = 32;
  task.cfg.n_heads = 2;
  task.cfg.n_enc_layers = 1;
  task.cfg.n_dec_layers = 2;
  task.cfg.n_high = 1;
  task.cfg.n_iterations = 2;
  task.cfg.dropout = 0.0;
  task.cfg.variant = variant;
  task.cfg.src_vocab = static_cast<std::int64_t>(task.src_vocab.size());
  task.cfg.tgt_vocab = static_cast<std::int64_t>(task.tgt_vocab.size());
  return task;
}

std::filesystem::path temp_dir(const char* tag) {
  auto p = std::filesystem::temp_directory_path() / (std::string("capmt_train_") + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::vector<double> train_losses(const std::string& metrics_path) {
  std::ifstream in(metrics_path);
  std::vector<double> losses;
  std::string line;
  while (std::getline(in, line)) {
    const auto pos = line.find("\"train_loss\":");
    if (pos == std::string::npos) continue;
    losses.push_back(std::stod(line.substr(pos + 13)));
  }
  return losses;
}

}  // namespace

TEST_CASE("schedule peaks at warmup and decays with inverse square root") {
  const std::int64_t d = 256, warmup = 4000;
  const double at_warmup = capmt::lr_schedule(warmup, d, warmup);
  const double before = capmt::lr_schedule(warmup - 1, d, warmup);
  const double after = capmt::lr_schedule(warmup + 1, d, warmup);
  CHECK(at_warmup >= before);
  CHECK(at_warmup >= after);
  // The two min branches agree at the crossover.
  CHECK(static_cast<double>(warmup) * std::pow(static_cast<double>(warmup), -1.5) ==
        doctest::Approx(1.0 / std::sqrt(static_cast<double>(warmup))).epsilon(1e-12));

  CHECK(capmt::lr_schedule(4 * warmup, d, warmup) == doctest::Approx(at_warmup / 2).epsilon(1e-12));

  // Direct formula evaluation.
  const double want = 1.0 / std::sqrt(256.0) *
                      std::min(1.0 / std::sqrt(100.0), 100.0 * std::pow(4000.0, -1.5));
  CHECK(capmt::lr_schedule(100, 256, 4000) == doctest::Approx(want).epsilon(1e-15));

  // Monotone up before warmup, down after.
  for (std::int64_t s = 1; s < 50; ++s)
    CHECK(capmt::lr_schedule(s + 1, d, 50) > capmt::lr_schedule(s, d, 50));
  for (std::int64_t s = 50; s < 100; ++s)
    CHECK(capmt::lr_schedule(s + 1, d, 50) < capmt::lr_schedule(s, d, 50));

  CHECK_THROWS_AS(capmt::lr_schedule(0, d, warmup), capmt::UsageError);
}

TEST_CASE("adam basics") {
  Tensor w = Tensor::from({1, 1}, {2.0});
  w.data().requires_grad = true;
  std::vector<capmt::NamedTensor> params{{"w", w}};
  capmt::OptimizerState st;
  st.init(params);

  // Zero gradient leaves the parameter unchanged.
  w.zero_grad();
  capmt::adam_step(params, st, 0.1);
  CHECK(w.value()[0] == 2.0);

  // Unit gradient moves by about the learning rate on the first step.
  st.init(params);
  w.grad()[0] = 1.0;
  capmt::adam_step(params, st, 0.1);
  CHECK(std::fabs((2.0 - w.value()[0]) - 0.1) < 1e-6);

  w.grad()[0] = std::nan("");
  try {
    capmt::adam_step(params, st, 0.1);
    FAIL("expected numeric error");
  } catch (const capmt::NumericError& e) {
    CHECK(std::string(e.what()).find("'w'") != std::string::npos);
  }
}

TEST_CASE("uniform logits give ln|V| loss; one step lowers batch loss") {
  TinyTask task = tiny_task(Variant::kTextOnly);
  Model model = Model::make(task.cfg, 77);

  for (double& v : model.w_out.value()) v = 0.0;
  const double expect = std::log(static_cast<double>(task.cfg.tgt_vocab));
  const double loss0 =
      capmt::corpus_loss(model, task.data.valid, task.src_vocab, task.tgt_vocab);
  CHECK(loss0 == doctest::Approx(expect).epsilon(1e-9));

  // Single batch, single Adam step with a small rate reduces that batch loss.
  Model m2 = Model::make(task.cfg, 78);
  std::vector<capmt::SentenceRecord> batch(task.data.train.begin(),
                                           task.data.train.begin() + 8);
  auto loss_on_batch = [&]() {
    return capmt::corpus_loss(m2, batch, task.src_vocab, task.tgt_vocab);
  };
  const double before = loss_on_batch();

  TrainConfig tc;
  tc.epochs = 1;
  tc.max_steps = 1;
  tc.batch_tokens = 1024;  // everything in one batch
  tc.warmup = 1;           // step 1 is already past warmup
  tc.lr_factor = 0.05;
  tc.seed = 3;
  auto dir = temp_dir("onestep");
  capmt::train_model(m2, batch, batch, task.src_vocab, task.tgt_vocab, tc, dir.string(), "{}");
  CHECK(loss_on_batch() < before);
  std::filesystem::remove_all(dir);
}

TEST_CASE("batch gradient equals the sum of per-sentence gradients") {
  TinyTask task = tiny_task(Variant::kFull, 6);
  Model model = Model::make(task.cfg, 5);
  const auto params = model.named_params();

  auto ids_of = [&](const capmt::SentenceRecord& r) {
    std::vector<int> src, tgt_in{Vocab::kBos}, labels;
    for (const auto& t : r.src_tokens) src.push_back(task.src_vocab.id(t));
    for (const auto& t : r.tgt_tokens) {
      tgt_in.push_back(task.tgt_vocab.id(t));
      labels.push_back(task.tgt_vocab.id(t));
    }
    labels.push_back(Vocab::kEos);
    return std::tuple(src, tgt_in, labels);
  };

  std::vector<capmt::SentenceRecord> batch(task.data.train.begin(),
                                           task.data.train.begin() + 3);
  std::int64_t total_tokens = 0;
  for (const auto& r : batch) total_tokens += static_cast<std::int64_t>(r.tgt_tokens.size()) + 1;

  // Whole-batch gradients.
  model.zero_grad();
  {
    Graph g(Graph::Mode::kTrain, 1);
    Tensor total;
    for (const auto& r : batch) {
      auto [src, tgt_in, labels] = ids_of(r);
      Tensor logits = model.forward(g, src, tgt_in, model.feature_input(r.features.get()));
      Tensor l = g.nll_loss(logits, labels);
      total = total.defined() ? g.add(total, l) : l;
    }
    g.backward(g.scale(total, 1.0 / static_cast<double>(total_tokens)));
  }
  std::vector<std::vector<double>> batch_grads;
  for (const auto& p : params) {
    p.tensor.data().ensure_grad();
    batch_grads.push_back(p.tensor.grad());
  }

  // Accumulated per-sentence gradients with the same 1/N scaling.
  model.zero_grad();
  for (const auto& r : batch) {
    Graph g(Graph::Mode::kTrain, 1);
    auto [src, tgt_in, labels] = ids_of(r);
    Tensor logits = model.forward(g, src, tgt_in, model.feature_input(r.features.get()));
    g.backward(g.scale(g.nll_loss(logits, labels), 1.0 / static_cast<double>(total_tokens)));
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    params[p].tensor.data().ensure_grad();
    const auto& got = params[p].tensor.grad();
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i)
      worst = std::max(worst, std::fabs(got[i] - batch_grads[p][i]));
    INFO(params[p].name);
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("deterministic mode reproduces loss traces and checkpoints bit-exactly") {
  TinyTask task = tiny_task(Variant::kFull, 24);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_tokens = 96;
  tc.warmup = 20;
  tc.lr_factor = 0.3;
  tc.seed = 11;
  tc.valid_limit = 6;

  auto run = [&](const char* tag) {
    Model model = Model::make(task.cfg, 123);
    auto dir = temp_dir(tag);
    auto result = capmt::train_model(model, task.data.train, task.data.valid, task.src_vocab,
                                     task.tgt_vocab, tc, dir.string(), "{}");
    std::ifstream ck(result.final_checkpoint, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(ck)), std::istreambuf_iterator<char>());
    auto losses = train_losses(result.metrics_path);
    std::filesystem::remove_all(dir);
    return std::pair(losses, bytes);
  };
  auto [losses_a, ck_a] = run("det_a");
  auto [losses_b, ck_b] = run("det_b");
  REQUIRE(!losses_a.empty());
  CHECK(losses_a == losses_b);
  CHECK(ck_a == ck_b);
}

TEST_CASE("checkpoints round-trip bit-exactly and validate structure") {
  TinyTask task = tiny_task(Variant::kFull);
  Model model = Model::make(task.cfg, 200);
  auto dir = temp_dir("ckpt");
  const std::string path = (dir / "model.bin").string();
  capmt::save_checkpoint(path, model.named_params(), "{\"note\":1}");

  const double loss_before =
      capmt::corpus_loss(model, task.data.valid, task.src_vocab, task.tgt_vocab);

  Model fresh = Model::make(task.cfg, 201);
  auto ck = capmt::load_checkpoint(path);
  CHECK(ck.config_json == "{\"note\":1}");
  capmt::apply_checkpoint(ck, fresh.named_params());
  const double loss_after =
      capmt::corpus_loss(fresh, task.data.valid, task.src_vocab, task.tgt_vocab);
  CHECK(loss_before == loss_after);  // bit-identical parameters

  // Save -> load -> save produces identical bytes.
  const std::string path2 = (dir / "model2.bin").string();
  capmt::save_checkpoint(path2, fresh.named_params(), ck.config_json);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  // Truncation is caught with a byte offset.
  std::filesystem::resize_file(path2, std::filesystem::file_size(path2) / 2);
  try {
    capmt::load_checkpoint(path2);
    FAIL("expected format error");
  } catch (const capmt::FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }

  // A checkpoint from a different variant is rejected.
  TinyTask text = tiny_task(Variant::kTextOnly);
  Model text_model = Model::make(text.cfg, 202);
  CHECK_THROWS_AS(capmt::apply_checkpoint(ck, text_model.named_params()), capmt::FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("trainable class embeddings receive gradients") {
  TinyTask task = tiny_task(Variant::kFull, 6);
  task.cfg.train_class_embeddings = true;
  task.cfg.n_classes = task.data.spec.n_classes;
  Model model = Model::make(task.cfg, 301);
  REQUIRE(model.class_table.defined());

  const auto& rec = task.data.train[0];
  std::vector<int> src, tgt_in{Vocab::kBos}, labels;
  for (const auto& t : rec.src_tokens) src.push_back(task.src_vocab.id(t));
  for (const auto& t : rec.tgt_tokens) {
    tgt_in.push_back(task.tgt_vocab.id(t));
    labels.push_back(task.tgt_vocab.id(t));
  }
  labels.push_back(Vocab::kEos);

  model.zero_grad();
  Graph g(Graph::Mode::kTrain, 1);
  auto feats = model.feature_input_trained(g, *rec.features, rec.region_classes);
  Tensor logits = model.forward(g, src, tgt_in, feats);
  g.backward(g.nll_loss(logits, labels));
  double grad_norm = 0.0;
  for (double v : model.class_table.grad()) grad_norm += v * v;
  CHECK(grad_norm > 0.0);
}
