#include "capmt/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "capmt/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace capmt {

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> tokens;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
}

void Vocab::add(const std::string& token) {
  if (token_to_id_.count(token)) return;
  token_to_id_[token] = static_cast<int>(id_to_token_.size());
  id_to_token_.push_back(token);
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocab::contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= static_cast<int>(id_to_token_.size()))
    throw InputError("token id " + std::to_string(id) + " outside vocabulary");
  return id_to_token_[static_cast<std::size_t>(id)];
}

Vocab Vocab::from_tokens(const std::vector<std::string>& id_to_token) {
  Vocab v;
  if (id_to_token.size() < 4 || id_to_token[0] != "<pad>" || id_to_token[1] != "<bos>" ||
      id_to_token[2] != "<eos>" || id_to_token[3] != "<unk>")
    throw FormatError("vocabulary does not start with the reserved tokens");
  for (std::size_t i = 4; i < id_to_token.size(); ++i) v.add(id_to_token[i]);
  return v;
}

Vocab build_vocab(const std::vector<std::vector<std::string>>& corpus) {
  if (corpus.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::int64_t> freq;  // ordered map fixes the tie-break
  for (const auto& sent : corpus)
    for (const auto& tok : sent) ++freq[tok];
  std::vector<std::pair<std::string, std::int64_t>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [tok, n] : entries) v.add(tok);
  return v;
}

void SyntheticTaskSpec::validate() const {
  if (vocab_size <= n_ambiguous || n_ambiguous < 1)
    throw ConfigError("vocabulary must be larger than the ambiguous token count");
  if (n_senses < 2) throw ConfigError("need at least two senses");
  if (static_cast<int>(sense_prior.size()) != n_senses)
    throw ConfigError("sense prior length does not match sense count");
  double total = 0.0;
  for (double p : sense_prior) {
    if (p <= 0.0) throw ConfigError("sense prior entries must be positive");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("sense prior must sum to 1");
  if (min_len < 1 || max_len < min_len) throw ConfigError("bad sentence length range");
  if (n_train < 1 || n_valid < 1 || n_test < 1)
    throw ConfigError("split sizes must be positive");
  if (n_classes <= n_senses) throw ConfigError("class vocabulary too small");
  if (n_regions < 1 || n_regions > VisualFeatures::kRegionRows)
    throw ConfigError("region count must be in [1, 10]");
  if (noise < 0.0 || noise > 1.0) throw ConfigError("noise level must be in [0, 1]");
  if (class_scale <= 0.0 || global_scale <= 0.0)
    throw ConfigError("feature scales must be positive");
}

SynthFeatureConfig SyntheticTaskSpec::feature_config() const {
  SynthFeatureConfig cfg;
  cfg.n_classes = n_classes;
  cfg.n_senses = n_senses;
  cfg.n_regions = n_regions;
  cfg.noise = noise;
  cfg.class_scale = class_scale;
  cfg.global_scale = global_scale;
  cfg.embedding_seed = Rng::splitmix64(seed ^ Rng::fnv1a64("class_table"));
  return cfg;
}

namespace {

std::string src_surface(int token) { return "w" + std::to_string(token); }
std::string amb_surface(int k) { return "amb" + std::to_string(k); }
std::string tgt_surface(int token) { return "t" + std::to_string(token); }
std::string amb_tgt_surface(int k, int sense) {
  return "T" + std::to_string(k) + "s" + std::to_string(sense);
}

std::vector<SentenceRecord> generate_split(const SyntheticTaskSpec& spec,
                                           const SynthFeatureConfig& fcfg, Rng rng,
                                           int n_sentences,
                                           std::vector<std::shared_ptr<const VisualFeatures>>*
                                               sense_cache) {
  const int n_plain = spec.vocab_size - spec.n_ambiguous;
  std::vector<SentenceRecord> out;
  out.reserve(static_cast<std::size_t>(n_sentences));
  for (int s = 0; s < n_sentences; ++s) {
    Rng srng = rng.fork(static_cast<std::uint64_t>(s));
    SentenceRecord rec;
    const int len = spec.min_len +
                    static_cast<int>(srng.below(static_cast<std::uint64_t>(
                        spec.max_len - spec.min_len + 1)));
    const int amb_token = static_cast<int>(srng.below(static_cast<std::uint64_t>(spec.n_ambiguous)));
    const int amb_pos = static_cast<int>(srng.below(static_cast<std::uint64_t>(len)));

    double draw = srng.uniform();
    int sense = spec.n_senses - 1;
    double acc = 0.0;
    for (int j = 0; j < spec.n_senses; ++j) {
      acc += spec.sense_prior[static_cast<std::size_t>(j)];
      if (draw < acc) {
        sense = j;
        break;
      }
    }

    for (int pos = 0; pos < len; ++pos) {
      if (pos == amb_pos) {
        rec.src_tokens.push_back(amb_surface(amb_token));
        rec.tgt_tokens.push_back(amb_tgt_surface(amb_token, sense));
      } else {
        const int tok = static_cast<int>(srng.below(static_cast<std::uint64_t>(n_plain)));
        rec.src_tokens.push_back(src_surface(tok));
        rec.tgt_tokens.push_back(tgt_surface(tok));
      }
    }
    rec.amb_pos = amb_pos;
    rec.amb_token = amb_surface(amb_token);
    rec.sense = sense;
    rec.gold_target = amb_tgt_surface(amb_token, sense);

    // At noise 0 the features depend on the sense alone, so sentences share
    // one container per sense instead of materializing thousands of copies.
    if (spec.noise == 0.0 && sense_cache) {
      auto& slot = (*sense_cache)[static_cast<std::size_t>(sense)];
      if (!slot)
        slot = std::make_shared<VisualFeatures>(
            synthesize_features(sense, static_cast<std::uint64_t>(sense), fcfg));
      rec.features = slot;
    } else {
      rec.features = std::make_shared<VisualFeatures>(
          synthesize_features(sense, srng.fork("features").seed(), fcfg));
    }
    // Only the sense region's class annotation is kept; it is all the
    // trainable-class-embedding mode consumes.
    rec.region_classes.push_back(sense);

    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticTaskSpec& spec) {
  spec.validate();
  SyntheticDataset data;
  data.spec = spec;
  const SynthFeatureConfig fcfg = spec.feature_config();
  Rng master(spec.seed);
  std::vector<std::shared_ptr<const VisualFeatures>> cache(
      static_cast<std::size_t>(spec.n_senses));
  data.train = generate_split(spec, fcfg, master.fork("train"), spec.n_train, &cache);
  data.valid = generate_split(spec, fcfg, master.fork("valid"), spec.n_valid, &cache);
  data.test = generate_split(spec, fcfg, master.fork("test"), spec.n_test, &cache);
  return data;
}

void shuffle_features(std::vector<SentenceRecord>& records, std::uint64_t seed) {
  Rng rng = Rng(seed).fork("feature_shuffle");
  std::vector<std::size_t> perm(records.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<std::shared_ptr<const VisualFeatures>> feats(records.size());
  std::vector<std::vector<int>> classes(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    feats[i] = records[perm[i]].features;
    classes[i] = records[perm[i]].region_classes;
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].features = std::move(feats[i]);
    records[i].region_classes = std::move(classes[i]);
  }
}

std::vector<Batch> make_batches(const std::vector<std::pair<int, int>>& lengths,
                                std::int64_t budget, Rng rng) {
  std::vector<std::size_t> order(lengths.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<Batch> batches;
  Batch current;
  for (std::size_t idx : order) {
    const std::int64_t tokens = lengths[idx].first + lengths[idx].second;
    if (tokens > budget)
      throw InputError("sentence " + std::to_string(idx) + " has " + std::to_string(tokens) +
                       " tokens, over the batch budget of " + std::to_string(budget));
    if (current.token_count + tokens > budget && !current.sentence_ids.empty()) {
      batches.push_back(std::move(current));
      current = Batch();
    }
    current.sentence_ids.push_back(static_cast<std::int64_t>(idx));
    current.token_count += tokens;
  }
  if (!current.sentence_ids.empty()) batches.push_back(std::move(current));
  return batches;
}

std::vector<Batch> make_batches(const std::vector<SentenceRecord>& records,
                                const Vocab& src_vocab, const Vocab& tgt_vocab,
                                std::int64_t budget, Rng rng) {
  std::vector<std::pair<int, int>> lengths;
  lengths.reserve(records.size());
  for (const auto& r : records)
    lengths.emplace_back(static_cast<int>(r.src_tokens.size()),
                         static_cast<int>(r.tgt_tokens.size()));
  std::vector<Batch> batches = make_batches(lengths, budget, rng);

  for (Batch& b : batches) {
    int s_max = 0, t_max = 0;
    for (std::int64_t id : b.sentence_ids) {
      s_max = std::max(s_max, lengths[static_cast<std::size_t>(id)].first);
      t_max = std::max(t_max, lengths[static_cast<std::size_t>(id)].second);
    }
    for (std::int64_t id : b.sentence_ids) {
      const auto& rec = records[static_cast<std::size_t>(id)];
      std::vector<int> src(static_cast<std::size_t>(s_max), Vocab::kPad);
      std::vector<int> tgt(static_cast<std::size_t>(t_max), Vocab::kPad);
      std::vector<std::uint8_t> sm(static_cast<std::size_t>(s_max), 0);
      std::vector<std::uint8_t> tm(static_cast<std::size_t>(t_max), 0);
      for (std::size_t i = 0; i < rec.src_tokens.size(); ++i) {
        src[i] = src_vocab.id(rec.src_tokens[i]);
        sm[i] = 1;
      }
      for (std::size_t i = 0; i < rec.tgt_tokens.size(); ++i) {
        tgt[i] = tgt_vocab.id(rec.tgt_tokens[i]);
        tm[i] = 1;
      }
      b.src.push_back(std::move(src));
      b.tgt.push_back(std::move(tgt));
      b.src_mask.push_back(std::move(sm));
      b.tgt_mask.push_back(std::move(tm));
      b.src_len.push_back(lengths[static_cast<std::size_t>(id)].first);
      b.tgt_len.push_back(lengths[static_cast<std::size_t>(id)].second);
    }
  }
  return batches;
}

namespace {

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

void save_split(const fs::path& dir, const std::string& name,
                const std::vector<SentenceRecord>& records, double noise) {
  std::vector<std::string> src, tgt, manifest, meta;
  fs::create_directories(dir / "features" / name);
  std::map<const VisualFeatures*, std::string> written;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    src.push_back(detokenize(r.src_tokens));
    tgt.push_back(detokenize(r.tgt_tokens));
    json m{{"amb_pos", r.amb_pos},
           {"amb_token", r.amb_token},
           {"sense", r.sense},
           {"gold", r.gold_target},
           {"region_classes", r.region_classes}};
    meta.push_back(m.dump());

    const VisualFeatures* key = r.features.get();
    auto it = written.find(key);
    if (it == written.end()) {
      // One container per sense at noise 0, one per sentence otherwise.
      std::string rel = noise == 0.0
                            ? "features/" + name + "/sense" + std::to_string(r.sense) + ".vfc"
                            : "features/" + name + "/" + std::to_string(i) + ".vfc";
      save_features((dir / rel).string(), *r.features);
      it = written.emplace(key, rel).first;
    }
    manifest.push_back(it->second);
  }
  write_lines(dir / (name + ".src"), src);
  write_lines(dir / (name + ".tgt"), tgt);
  write_lines(dir / (name + ".feats.manifest"), manifest);
  write_lines(dir / (name + ".meta.jsonl"), meta);
}

}  // namespace

void save_dataset(const std::string& dir, const SyntheticDataset& data, bool force) {
  fs::path root(dir);
  if (fs::exists(root) && !fs::is_empty(root) && !force)
    throw InputError("output directory " + dir + " is not empty (use --force to overwrite)");
  fs::create_directories(root);

  json spec{{"vocab_size", data.spec.vocab_size},
            {"n_ambiguous", data.spec.n_ambiguous},
            {"n_senses", data.spec.n_senses},
            {"sense_prior", data.spec.sense_prior},
            {"min_len", data.spec.min_len},
            {"max_len", data.spec.max_len},
            {"n_train", data.spec.n_train},
            {"n_valid", data.spec.n_valid},
            {"n_test", data.spec.n_test},
            {"seed", data.spec.seed},
            {"n_classes", data.spec.n_classes},
            {"n_regions", data.spec.n_regions},
            {"noise", data.spec.noise},
            {"class_scale", data.spec.class_scale},
            {"global_scale", data.spec.global_scale}};
  std::ofstream spec_out(root / "taskspec.json");
  if (!spec_out) throw IoError("cannot write " + (root / "taskspec.json").string());
  spec_out << spec.dump(2) << '\n';

  save_split(root, "train", data.train, data.spec.noise);
  save_split(root, "valid", data.valid, data.spec.noise);
  save_split(root, "test", data.test, data.spec.noise);
}

SyntheticTaskSpec load_taskspec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  SyntheticTaskSpec spec;
  spec.vocab_size = j.at("vocab_size").get<int>();
  spec.n_ambiguous = j.at("n_ambiguous").get<int>();
  spec.n_senses = j.at("n_senses").get<int>();
  spec.sense_prior = j.at("sense_prior").get<std::vector<double>>();
  spec.min_len = j.at("min_len").get<int>();
  spec.max_len = j.at("max_len").get<int>();
  spec.n_train = j.at("n_train").get<int>();
  spec.n_valid = j.at("n_valid").get<int>();
  spec.n_test = j.at("n_test").get<int>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.n_classes = j.at("n_classes").get<int>();
  spec.n_regions = j.at("n_regions").get<int>();
  spec.noise = j.at("noise").get<double>();
  if (j.contains("class_scale")) spec.class_scale = j.at("class_scale").get<double>();
  if (j.contains("global_scale")) spec.global_scale = j.at("global_scale").get<double>();
  spec.validate();
  return spec;
}

LoadedSplit load_split(const std::string& src_path, const std::string& tgt_path,
                       const std::string& manifest_path, const std::string& meta_path) {
  const auto src_lines = read_lines(src_path);
  const auto tgt_lines = read_lines(tgt_path);
  if (src_lines.size() != tgt_lines.size())
    throw InputError("line-count mismatch: " + src_path + " has " +
                     std::to_string(src_lines.size()) + " lines, " + tgt_path + " has " +
                     std::to_string(tgt_lines.size()));

  std::vector<std::string> manifest;
  if (!manifest_path.empty()) {
    manifest = read_lines(manifest_path);
    if (manifest.size() != src_lines.size())
      throw InputError("feature manifest " + manifest_path + " has " +
                       std::to_string(manifest.size()) + " lines for " +
                       std::to_string(src_lines.size()) + " sentences");
  }
  std::vector<std::string> meta;
  if (!meta_path.empty()) {
    meta = read_lines(meta_path);
    if (meta.size() != src_lines.size())
      throw InputError("metadata " + meta_path + " does not align with the corpus");
  }

  const fs::path manifest_dir = manifest_path.empty()
                                    ? fs::path()
                                    : fs::path(manifest_path).parent_path();
  std::map<std::string, std::shared_ptr<const VisualFeatures>> feature_cache;

  LoadedSplit split;
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    SentenceRecord rec;
    rec.src_tokens = tokenize(src_lines[i]);
    rec.tgt_tokens = tokenize(tgt_lines[i]);
    if (rec.src_tokens.empty())
      throw InputError(src_path + ": line " + std::to_string(i + 1) + " is empty");
    if (!manifest.empty()) {
      const std::string& rel = manifest[i];
      auto it = feature_cache.find(rel);
      if (it == feature_cache.end()) {
        auto feats = std::make_shared<VisualFeatures>(
            load_features((manifest_dir / rel).string()));
        it = feature_cache.emplace(rel, std::move(feats)).first;
      }
      rec.features = it->second;
    }
    if (!meta.empty()) {
      json m;
      try {
        m = json::parse(meta[i]);
      } catch (const json::exception& e) {
        throw FormatError(meta_path + ": line " + std::to_string(i + 1) + ": " + e.what());
      }
      rec.amb_pos = m.at("amb_pos").get<int>();
      rec.amb_token = m.at("amb_token").get<std::string>();
      rec.sense = m.at("sense").get<int>();
      rec.gold_target = m.at("gold").get<std::string>();
      if (m.contains("region_classes"))
        rec.region_classes = m.at("region_classes").get<std::vector<int>>();
    }
    split.records.push_back(std::move(rec));
  }
  return split;
}

}  // namespace capmt
