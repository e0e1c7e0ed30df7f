#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include "capmt/data.hpp"
#include "capmt/visual.hpp"

using capmt::Batch;
using capmt::Rng;
using capmt::SentenceRecord;
using capmt::SyntheticTaskSpec;
using capmt::Vocab;

namespace {

SyntheticTaskSpec tiny_spec() {
  SyntheticTaskSpec spec;
  spec.vocab_size = 30;
  spec.n_ambiguous = 4;
  spec.n_train = 80;
  spec.n_valid = 20;
  spec.n_test = 20;
  spec.n_classes = 16;
  spec.seed = 5;
  return spec;
}

std::filesystem::path temp_dir(const char* tag) {
  auto p = std::filesystem::temp_directory_path() / (std::string("capmt_data_") + tag);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("tokenize and detokenize round-trip pre-tokenized text") {
  const std::string line = "a quick test sentence";
  CHECK(capmt::detokenize(capmt::tokenize(line)) == line);
  CHECK(capmt::tokenize("  spaced   out  ") == std::vector<std::string>{"spaced", "out"});
}

TEST_CASE("vocabulary is frequency-ordered with lexicographic ties") {
  capmt::Vocab v = capmt::build_vocab({{"a", "a", "b"}});
  CHECK(v.id("a") == 4);  // first free id after the reserved block
  CHECK(v.id("b") == 5);
  CHECK(v.id("missing") == Vocab::kUnk);
  CHECK(v.token(Vocab::kPad) == "<pad>");
  CHECK(v.token(Vocab::kBos) == "<bos>");
  CHECK(v.token(Vocab::kEos) == "<eos>");

  capmt::Vocab tie = capmt::build_vocab({{"b", "a"}});
  CHECK(tie.id("a") == 4);
  CHECK(tie.id("b") == 5);

  capmt::Vocab again = capmt::build_vocab({{"a", "a", "b"}});
  CHECK(again.dump() == v.dump());

  CHECK_THROWS_AS(capmt::build_vocab({}), capmt::InputError);
}

TEST_CASE("batching respects the budget and conserves the corpus") {
  std::vector<std::pair<int, int>> lengths;
  Rng lrng(3);
  for (int i = 0; i < 57; ++i)
    lengths.emplace_back(2 + static_cast<int>(lrng.below(7)),
                         2 + static_cast<int>(lrng.below(7)));
  const std::int64_t budget = 40;
  auto batches = capmt::make_batches(lengths, budget, Rng(11));

  std::int64_t total_tokens = 0;
  for (const auto& l : lengths) total_tokens += l.first + l.second;
  CHECK(static_cast<std::int64_t>(batches.size()) >=
        (total_tokens + budget - 1) / budget);

  std::vector<std::int64_t> seen;
  for (const auto& b : batches) {
    CHECK(b.token_count <= budget);
    std::int64_t recount = 0;
    for (std::int64_t id : b.sentence_ids)
      recount += lengths[static_cast<std::size_t>(id)].first +
                 lengths[static_cast<std::size_t>(id)].second;
    CHECK(recount == b.token_count);
    seen.insert(seen.end(), b.sentence_ids.begin(), b.sentence_ids.end());
  }
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < seen.size(); ++i) CHECK(seen[i] == static_cast<std::int64_t>(i));
  CHECK(seen.size() == lengths.size());

  auto batches2 = capmt::make_batches(lengths, budget, Rng(11));
  REQUIRE(batches2.size() == batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i)
    CHECK(batches2[i].sentence_ids == batches[i].sentence_ids);

  CHECK(capmt::make_batches({{3, 4}}, 100, Rng(1)).size() == 1);
  CHECK_THROWS_AS(capmt::make_batches({{30, 30}}, 40, Rng(1)), capmt::InputError);
}

TEST_CASE("padded batches carry consistent masks") {
  auto data = capmt::generate_synthetic(tiny_spec());
  std::vector<std::vector<std::string>> src_corpus, tgt_corpus;
  for (const auto& r : data.train) {
    src_corpus.push_back(r.src_tokens);
    tgt_corpus.push_back(r.tgt_tokens);
  }
  Vocab sv = capmt::build_vocab(src_corpus), tv = capmt::build_vocab(tgt_corpus);
  auto batches = capmt::make_batches(data.train, sv, tv, 64, Rng(7));
  for (const auto& b : batches) {
    for (std::size_t s = 0; s < b.src.size(); ++s) {
      for (std::size_t i = 0; i < b.src[s].size(); ++i) {
        CHECK((b.src_mask[s][i] == 1) == (static_cast<int>(i) < b.src_len[s]));
        if (!b.src_mask[s][i]) CHECK(b.src[s][i] == Vocab::kPad);
      }
      for (std::size_t i = 0; i < b.tgt[s].size(); ++i)
        if (!b.tgt_mask[s][i]) CHECK(b.tgt[s][i] == Vocab::kPad);
    }
  }
}

TEST_CASE("synthetic generation is deterministic and sense-annotated") {
  auto a = capmt::generate_synthetic(tiny_spec());
  auto b = capmt::generate_synthetic(tiny_spec());
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].src_tokens == b.train[i].src_tokens);
    CHECK(a.train[i].tgt_tokens == b.train[i].tgt_tokens);
    CHECK(a.train[i].sense == b.train[i].sense);
    CHECK(a.train[i].features->global == b.train[i].features->global);
  }

  int sense0 = 0;
  for (const auto& r : a.train) {
    REQUIRE(r.amb_pos >= 0);
    REQUIRE(r.amb_pos < static_cast<int>(r.src_tokens.size()));
    CHECK(r.src_tokens[static_cast<std::size_t>(r.amb_pos)] == r.amb_token);
    CHECK(r.tgt_tokens[static_cast<std::size_t>(r.amb_pos)] == r.gold_target);
    CHECK(r.src_tokens.size() == r.tgt_tokens.size());
    sense0 += r.sense == 0;
  }
  const double frac = static_cast<double>(sense0) / static_cast<double>(a.train.size());
  CHECK(frac > 0.45);
  CHECK(frac < 0.75);  // prior 0.6 with sampling slack

  // Features decode the sense perfectly at noise 0.
  const auto fcfg = a.spec.feature_config();
  const auto table = capmt::synth_class_table(fcfg);
  for (const auto& r : a.train)
    CHECK(capmt::probe_sense(*r.features, table, fcfg.n_senses) == r.sense);
}

TEST_CASE("shuffling features preserves the multiset and decouples senses") {
  auto data = capmt::generate_synthetic(tiny_spec());
  auto records = data.train;
  std::map<const capmt::VisualFeatures*, int> before;
  for (const auto& r : records) ++before[r.features.get()];
  capmt::shuffle_features(records, 99);
  std::map<const capmt::VisualFeatures*, int> after;
  for (const auto& r : records) ++after[r.features.get()];
  CHECK(before == after);

  auto again = data.train;
  capmt::shuffle_features(again, 99);
  bool same = true;
  for (std::size_t i = 0; i < records.size(); ++i)
    same = same && again[i].features.get() == records[i].features.get();
  CHECK(same);  // deterministic for a fixed seed
}

TEST_CASE("dataset save/load round-trip") {
  auto dir = temp_dir("roundtrip");
  auto data = capmt::generate_synthetic(tiny_spec());
  capmt::save_dataset(dir.string(), data, false);

  CHECK_THROWS_AS(capmt::save_dataset(dir.string(), data, false), capmt::InputError);
  capmt::save_dataset(dir.string(), data, true);  // --force path

  auto spec = capmt::load_taskspec((dir / "taskspec.json").string());
  CHECK(spec.vocab_size == data.spec.vocab_size);
  CHECK(spec.seed == data.spec.seed);

  auto split = capmt::load_split((dir / "train.src").string(), (dir / "train.tgt").string(),
                                 (dir / "train.feats.manifest").string(),
                                 (dir / "train.meta.jsonl").string());
  REQUIRE(split.records.size() == data.train.size());
  for (std::size_t i = 0; i < split.records.size(); ++i) {
    CHECK(split.records[i].src_tokens == data.train[i].src_tokens);
    CHECK(split.records[i].tgt_tokens == data.train[i].tgt_tokens);
    CHECK(split.records[i].sense == data.train[i].sense);
    CHECK(split.records[i].gold_target == data.train[i].gold_target);
    REQUIRE(split.records[i].features != nullptr);
    CHECK(split.records[i].features->global == data.train[i].features->global);
    CHECK(split.records[i].features->regional == data.train[i].features->regional);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("split loading validates alignment") {
  auto dir = temp_dir("misaligned");
  std::filesystem::create_directories(dir);
  {
    std::ofstream src(dir / "x.src");
    src << "a b\nc d\n";
    std::ofstream tgt(dir / "x.tgt");
    tgt << "e f\n";
  }
  CHECK_THROWS_AS(
      capmt::load_split((dir / "x.src").string(), (dir / "x.tgt").string(), "", ""),
      capmt::InputError);
  std::filesystem::remove_all(dir);
}
