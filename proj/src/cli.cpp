#include "capmt/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "capmt/checkpoint.hpp"
#include "capmt/data.hpp"
#include "capmt/error.hpp"
#include "capmt/eval.hpp"
#include "capmt/model.hpp"
#include "capmt/svg.hpp"
#include "capmt/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace capmt {

namespace {

void reject_unknown_keys(const json& j, const std::vector<std::string>& known,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown config key '" + where + it.key() + "'");
  }
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data_dir;
  std::string out;
  std::uint64_t seed = 1;
};

ModelConfig parse_model_config(const json& j) {
  reject_unknown_keys(j,
                      {"d_model", "d_ff", "n_heads", "n_enc_layers", "n_dec_layers", "d_capsule",
                       "n_high", "n_iterations", "dropout", "variant", "train_class_embeddings",
                       "n_classes"},
                      "model.");
  ModelConfig m;
  maybe(j, "d_model", m.d_model);
  m.d_ff = 4 * m.d_model;  // convention unless stated
  maybe(j, "d_ff", m.d_ff);
  maybe(j, "n_heads", m.n_heads);
  maybe(j, "n_enc_layers", m.n_enc_layers);
  maybe(j, "n_dec_layers", m.n_dec_layers);
  maybe(j, "d_capsule", m.d_capsule);
  maybe(j, "n_high", m.n_high);
  maybe(j, "n_iterations", m.n_iterations);
  maybe(j, "dropout", m.dropout);
  if (j.contains("variant")) m.variant = variant_from_name(j.at("variant").get<std::string>());
  maybe(j, "train_class_embeddings", m.train_class_embeddings);
  maybe(j, "n_classes", m.n_classes);
  return m;
}

json model_config_json(const ModelConfig& m) {
  return json{{"d_model", m.d_model},
              {"d_ff", m.d_ff},
              {"n_heads", m.n_heads},
              {"n_enc_layers", m.n_enc_layers},
              {"n_dec_layers", m.n_dec_layers},
              {"d_capsule", m.d_capsule},
              {"n_high", m.n_high},
              {"n_iterations", m.n_iterations},
              {"dropout", m.dropout},
              {"variant", variant_name(m.variant)},
              {"train_class_embeddings", m.train_class_embeddings},
              {"n_classes", m.n_classes}};
}

TrainConfig parse_train_config(const json& j) {
  reject_unknown_keys(j,
                      {"epochs", "max_steps", "batch_tokens", "warmup", "lr_factor", "beta1",
                       "beta2", "adam_eps", "deterministic", "valid_limit", "shuffled_features"},
                      "train.");
  TrainConfig t;
  t.batch_tokens = 3700;  // token-budget batching default
  maybe(j, "epochs", t.epochs);
  maybe(j, "max_steps", t.max_steps);
  maybe(j, "batch_tokens", t.batch_tokens);
  maybe(j, "warmup", t.warmup);
  maybe(j, "lr_factor", t.lr_factor);
  maybe(j, "beta1", t.beta1);
  maybe(j, "beta2", t.beta2);
  maybe(j, "adam_eps", t.adam_eps);
  maybe(j, "deterministic", t.deterministic);
  maybe(j, "valid_limit", t.valid_limit);
  maybe(j, "shuffled_features", t.shuffled_features);
  return t;
}

json train_config_json(const TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"max_steps", t.max_steps},
              {"batch_tokens", t.batch_tokens},
              {"warmup", t.warmup},
              {"lr_factor", t.lr_factor},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},
              {"deterministic", t.deterministic},
              {"valid_limit", t.valid_limit},
              {"shuffled_features", t.shuffled_features}};
}

RunConfig parse_run_config(const json& j) {
  reject_unknown_keys(j, {"model", "train", "data", "out", "seed"}, "");
  RunConfig cfg;
  if (j.contains("model")) cfg.model = parse_model_config(j.at("model"));
  if (j.contains("train")) cfg.train = parse_train_config(j.at("train"));
  if (j.contains("data")) {
    reject_unknown_keys(j.at("data"), {"dir"}, "data.");
    maybe(j.at("data"), "dir", cfg.data_dir);
  }
  maybe(j, "out", cfg.out);
  maybe(j, "seed", cfg.seed);
  return cfg;
}

json run_config_json(const RunConfig& cfg) {
  return json{{"model", model_config_json(cfg.model)},
              {"train", train_config_json(cfg.train)},
              {"data", json{{"dir", cfg.data_dir}}},
              {"out", cfg.out},
              {"seed", cfg.seed}};
}

SyntheticTaskSpec parse_taskspec(const json& j) {
  reject_unknown_keys(j,
                      {"vocab_size", "n_ambiguous", "n_senses", "sense_prior", "min_len",
                       "max_len", "n_train", "n_valid", "n_test", "seed", "n_classes",
                       "n_regions", "noise", "class_scale", "global_scale"},
                      "");
  SyntheticTaskSpec spec;
  maybe(j, "vocab_size", spec.vocab_size);
  maybe(j, "n_ambiguous", spec.n_ambiguous);
  maybe(j, "n_senses", spec.n_senses);
  maybe(j, "sense_prior", spec.sense_prior);
  maybe(j, "min_len", spec.min_len);
  maybe(j, "max_len", spec.max_len);
  maybe(j, "n_train", spec.n_train);
  maybe(j, "n_valid", spec.n_valid);
  maybe(j, "n_test", spec.n_test);
  maybe(j, "seed", spec.seed);
  maybe(j, "n_classes", spec.n_classes);
  maybe(j, "n_regions", spec.n_regions);
  maybe(j, "noise", spec.noise);
  maybe(j, "class_scale", spec.class_scale);
  maybe(j, "global_scale", spec.global_scale);
  spec.validate();
  return spec;
}

std::string env_out_dir() {
  const char* env = std::getenv("CAPMT_OUT");
  return env ? std::string(env) : std::string();
}

std::string resolve_out(const std::string& flag_value, const std::string& config_value,
                        const char* what) {
  if (!flag_value.empty()) return flag_value;
  const std::string env = env_out_dir();
  if (!env.empty()) return env;
  if (!config_value.empty()) return config_value;
  throw ConfigError(std::string("no output directory for ") + what +
                    " (use --out, CAPMT_OUT, or the config file)");
}

struct ModelBundle {
  Model model;
  Vocab src_vocab, tgt_vocab;
};

ModelBundle load_model_bundle(const std::string& checkpoint_path) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  json j;
  try {
    j = json::parse(ck.config_json);
  } catch (const json::exception& e) {
    throw FormatError(checkpoint_path + ": embedded config: " + e.what());
  }
  ModelBundle bundle{
      Model(), Vocab::from_tokens(j.at("src_vocab").get<std::vector<std::string>>()),
      Vocab::from_tokens(j.at("tgt_vocab").get<std::vector<std::string>>())};
  ModelConfig mc = parse_model_config(j.at("model"));
  mc.src_vocab = static_cast<std::int64_t>(bundle.src_vocab.size());
  mc.tgt_vocab = static_cast<std::int64_t>(bundle.tgt_vocab.size());
  bundle.model = Model::make(mc, 0);
  apply_checkpoint(ck, bundle.model.named_params());
  return bundle;
}

struct SplitPaths {
  std::string src, tgt, manifest, meta;
};

SplitPaths split_paths(const std::string& dir, const std::string& name) {
  SplitPaths p;
  p.src = (fs::path(dir) / (name + ".src")).string();
  p.tgt = (fs::path(dir) / (name + ".tgt")).string();
  const std::string manifest = (fs::path(dir) / (name + ".feats.manifest")).string();
  const std::string meta = (fs::path(dir) / (name + ".meta.jsonl")).string();
  if (fs::exists(manifest)) p.manifest = manifest;
  if (fs::exists(meta)) p.meta = meta;
  return p;
}

// ---------------------------------------------------------------------------

int cmd_gen(const std::string& spec_path, std::string out_dir, bool force,
            std::optional<std::uint64_t> seed_override) {
  SyntheticTaskSpec spec = parse_taskspec(read_json_file(spec_path));
  if (seed_override) spec.seed = *seed_override;
  out_dir = resolve_out(out_dir, "", "gen");
  SyntheticDataset data = generate_synthetic(spec);
  save_dataset(out_dir, data, force);
  std::cout << "wrote " << data.train.size() << "/" << data.valid.size() << "/"
            << data.test.size() << " sentences to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_flag,
              std::optional<std::uint64_t> seed_override, const std::string& variant_override,
              bool deterministic_flag) {
  RunConfig cfg = parse_run_config(read_json_file(config_path));
  if (seed_override) cfg.seed = *seed_override;
  if (!variant_override.empty()) cfg.model.variant = variant_from_name(variant_override);
  if (deterministic_flag) cfg.train.deterministic = true;
  cfg.out = resolve_out(out_flag, cfg.out, "train");
  if (cfg.data_dir.empty()) throw ConfigError("config is missing data.dir");
  cfg.train.seed = Rng(cfg.seed).fork("train").seed();

  const auto train_paths = split_paths(cfg.data_dir, "train");
  const auto valid_paths = split_paths(cfg.data_dir, "valid");
  if (!fs::exists(train_paths.src))
    throw ConfigError("data path " + train_paths.src + " does not exist");
  LoadedSplit train_split =
      load_split(train_paths.src, train_paths.tgt, train_paths.manifest, train_paths.meta);
  LoadedSplit valid_split =
      load_split(valid_paths.src, valid_paths.tgt, valid_paths.manifest, valid_paths.meta);

  std::vector<std::vector<std::string>> src_corpus, tgt_corpus;
  for (const auto& r : train_split.records) {
    src_corpus.push_back(r.src_tokens);
    tgt_corpus.push_back(r.tgt_tokens);
  }
  Vocab src_vocab = build_vocab(src_corpus);
  Vocab tgt_vocab = build_vocab(tgt_corpus);

  cfg.model.src_vocab = static_cast<std::int64_t>(src_vocab.size());
  cfg.model.tgt_vocab = static_cast<std::int64_t>(tgt_vocab.size());
  if (cfg.model.train_class_embeddings && cfg.model.n_classes == 0) {
    const auto spec = load_taskspec((fs::path(cfg.data_dir) / "taskspec.json").string());
    cfg.model.n_classes = spec.n_classes;
  }
  Model model = Model::make(cfg.model, Rng(cfg.seed).fork("model_init").seed());

  fs::create_directories(cfg.out);
  {
    std::ofstream snap(fs::path(cfg.out) / "config.json");
    if (!snap) throw IoError("cannot write config snapshot");
    snap << run_config_json(cfg).dump(2) << '\n';
  }

  json embedded{{"model", model_config_json(cfg.model)},
                {"src_vocab", src_vocab.dump()},
                {"tgt_vocab", tgt_vocab.dump()},
                {"seed", cfg.seed}};
  TrainResult result = train_model(model, train_split.records, valid_split.records, src_vocab,
                                   tgt_vocab, cfg.train, cfg.out, embedded.dump());
  std::cout << "steps=" << result.steps << " train_loss=" << result.final_train_loss
            << " best_valid_loss=" << result.best_valid_loss
            << " valid_ambiguous_accuracy=" << result.final_valid_accuracy << "\n"
            << "checkpoints: " << result.best_checkpoint << ", " << result.final_checkpoint
            << "\n";
  return 0;
}

int cmd_translate(const std::string& checkpoint, const std::string& input,
                  const std::string& features_manifest, const std::string& out_path) {
  ModelBundle bundle = load_model_bundle(checkpoint);

  std::ifstream in(input);
  if (!in) throw IoError("cannot open " + input);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);

  std::vector<std::string> manifest;
  if (!features_manifest.empty()) {
    std::ifstream mf(features_manifest);
    if (!mf) throw IoError("cannot open " + features_manifest);
    while (std::getline(mf, line)) manifest.push_back(line);
    if (manifest.size() != lines.size())
      throw InputError("feature manifest has " + std::to_string(manifest.size()) +
                       " lines for " + std::to_string(lines.size()) + " sentences");
  } else if (variant_uses_features(bundle.model.cfg.variant)) {
    throw InputError("checkpoint variant '" + variant_name(bundle.model.cfg.variant) +
                     "' needs --features");
  }

  const fs::path manifest_dir =
      features_manifest.empty() ? fs::path() : fs::path(features_manifest).parent_path();
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write " + out_path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<int> src;
    for (const auto& tok : tokenize(lines[i])) src.push_back(bundle.src_vocab.id(tok));
    std::optional<FeatureInput> feats;
    if (!manifest.empty()) {
      const VisualFeatures vf = load_features((manifest_dir / manifest[i]).string());
      feats = bundle.model.feature_input(&vf);
    }
    const std::vector<int> ids = bundle.model.translate(src, feats);
    std::vector<std::string> tokens;
    for (int id : ids) tokens.push_back(bundle.tgt_vocab.token(id));
    out << detokenize(tokens) << '\n';
  }
  return 0;
}

int cmd_evaluate(const std::string& hyp_path, const std::string& ref_path,
                 const std::string& src_path, const std::string& meta_path,
                 const std::string& report_path, const std::string& csv_path) {
  auto read_lines = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
  };
  const auto hyp_lines = read_lines(hyp_path);
  const auto ref_lines = read_lines(ref_path);
  std::vector<std::vector<std::string>> hyps, refs;
  for (const auto& l : hyp_lines) hyps.push_back(tokenize(l));
  for (const auto& l : ref_lines) refs.push_back(tokenize(l));
  const double score = bleu(hyps, refs);

  json report{{"bleu", score}, {"sentences", hyps.size()}};
  std::vector<BucketRow> rows;
  if (!src_path.empty()) {
    const auto src_lines = read_lines(src_path);
    if (src_lines.size() != hyps.size())
      throw InputError("source file does not align with the hypotheses");
    std::vector<int> lens;
    for (const auto& l : src_lines) lens.push_back(static_cast<int>(tokenize(l).size()));
    rows = length_buckets(hyps, refs, lens);
    json buckets = json::array();
    for (const auto& row : rows)
      buckets.push_back(json{{"bucket", row.label}, {"count", row.count}, {"bleu", row.bleu}});
    report["buckets"] = buckets;
  }
  if (!meta_path.empty()) {
    const auto meta_lines = read_lines(meta_path);
    if (meta_lines.size() != hyps.size())
      throw InputError("metadata " + meta_path + " does not align with the hypotheses");
    std::vector<SentenceRecord> records(meta_lines.size());
    for (std::size_t i = 0; i < meta_lines.size(); ++i) {
      json m;
      try {
        m = json::parse(meta_lines[i]);
      } catch (const json::exception& e) {
        throw FormatError(meta_path + ": line " + std::to_string(i + 1) + ": " + e.what());
      }
      records[i].amb_pos = m.at("amb_pos").get<int>();
      records[i].gold_target = m.at("gold").get<std::string>();
    }
    report["ambiguous_accuracy"] = ambiguous_accuracy(hyps, records);
  }

  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::app);
    if (!out) throw IoError("cannot write " + report_path);
    out << report.dump() << '\n';
  }
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot write " + csv_path);
    out << "bucket,count,bleu\n";
    for (const auto& row : rows)
      out << row.label << ',' << row.count << ',' << row.bleu << '\n';
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_inspect(const std::string& checkpoint, const std::string& sentence,
                const std::string& features_path, std::string out_dir) {
  out_dir = resolve_out(out_dir, "", "inspect");
  ModelBundle bundle = load_model_bundle(checkpoint);
  if (!variant_uses_features(bundle.model.cfg.variant))
    throw InputError("checkpoint variant 'text-only' has no routing to inspect");

  const VisualFeatures vf = load_features(features_path);
  std::vector<int> src;
  for (const auto& tok : tokenize(sentence)) src.push_back(bundle.src_vocab.id(tok));
  if (src.empty()) throw InputError("empty sentence");

  InspectRecord record;
  const std::vector<int> ids =
      bundle.model.translate(src, bundle.model.feature_input(&vf), -1, &record);

  fs::create_directories(out_dir);
  {
    std::ofstream csv(fs::path(out_dir) / "trace.csv");
    if (!csv) throw IoError("cannot write trace.csv");
    csv << "timestep,granularity,iteration,low,high,logit,coupling,correlation,v_norm,m_norm\n";
    for (std::size_t t = 0; t < record.timesteps.size(); ++t) {
      auto dump_rows = [&](const char* granularity, const RoutingTrace& trace) {
        for (const auto& row : trace)
          csv << t << ',' << granularity << ',' << row.iteration << ',' << row.low << ','
              << row.high << ',' << row.logit << ',' << row.coupling << ',' << row.correlation
              << ',' << row.v_norm << ',' << row.m_norm << '\n';
      };
      dump_rows("global", record.timesteps[t].global);
      dump_rows("regional", record.timesteps[t].regional);
    }
  }
  {
    std::ofstream csv(fs::path(out_dir) / "gate.csv");
    if (!csv) throw IoError("cannot write gate.csv");
    csv << "timestep,dim,alpha\n";
    for (std::size_t t = 0; t < record.timesteps.size(); ++t)
      for (std::size_t d = 0; d < record.timesteps[t].alpha.size(); ++d)
        csv << t << ',' << d << ',' << record.timesteps[t].alpha[d] << '\n';
  }

  // Heatmaps: rows are (timestep, iteration, high capsule), columns low capsules.
  auto heatmap_of = [&](bool global, bool coupling) {
    std::vector<std::vector<double>> values;
    std::vector<std::string> labels;
    for (std::size_t t = 0; t < record.timesteps.size(); ++t) {
      const RoutingTrace& trace = global ? record.timesteps[t].global
                                         : record.timesteps[t].regional;
      if (trace.empty()) continue;
      int n_low = 0, n_high = 0, n_itr = 0;
      for (const auto& row : trace) {
        n_low = std::max(n_low, row.low + 1);
        n_high = std::max(n_high, row.high + 1);
        n_itr = std::max(n_itr, row.iteration);
      }
      for (int it = 1; it <= n_itr; ++it)
        for (int j = 0; j < n_high; ++j) {
          std::vector<double> line(static_cast<std::size_t>(n_low), 0.0);
          for (const auto& row : trace)
            if (row.iteration == it && row.high == j)
              line[static_cast<std::size_t>(row.low)] =
                  coupling ? row.coupling : row.correlation;
          values.push_back(std::move(line));
          labels.push_back("t" + std::to_string(t) + " i" + std::to_string(it) + " j" +
                           std::to_string(j));
        }
    }
    return std::pair(values, labels);
  };
  for (bool global : {true, false}) {
    for (bool coupling : {true, false}) {
      auto [values, labels] = heatmap_of(global, coupling);
      if (values.empty()) continue;
      const std::string name = std::string(global ? "global_" : "regional_") +
                               (coupling ? "coupling" : "correlation") + ".svg";
      write_heatmap_svg((fs::path(out_dir) / name).string(),
                        std::string(coupling ? "coupling " : "correlation ") +
                            (global ? "(global)" : "(regional)"),
                        values, labels, "low-level capsule", "");
    }
  }
  if (!record.timesteps.empty() && !record.timesteps[0].alpha.empty()) {
    std::vector<std::vector<double>> alpha;
    std::vector<std::string> labels;
    for (std::size_t t = 0; t < record.timesteps.size(); ++t) {
      alpha.push_back(record.timesteps[t].alpha);
      labels.push_back("t" + std::to_string(t));
    }
    write_heatmap_svg((fs::path(out_dir) / "gate.svg").string(), "gate alpha per timestep",
                      alpha, labels, "model dimension", "");
  }

  std::vector<std::string> tokens;
  for (int id : ids) tokens.push_back(bundle.tgt_vocab.token(id));
  std::cout << detokenize(tokens) << "\n";
  std::cout << "trace written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> argv_strings = args;
  std::vector<char*> argv;
  static std::string prog = "capmt";
  argv.push_back(prog.data());
  for (auto& s : argv_strings) argv.push_back(s.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

int run_cli(int argc, char** argv) {
  CLI::App app{"capsule-routing multimodal translation testbed"};
  app.require_subcommand(1);

  std::string spec_path, config_path, checkpoint, input, features, out, hyp, ref, src, meta,
      report, csv, sentence, variant;
  bool force = false, deterministic = false;
  std::uint64_t seed = 0;
  bool seed_set = false;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
      seed_set = true;
    });
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "task spec JSON")->required();
  gen->add_option("--out", out, "output directory");
  gen->add_flag("--force", force, "overwrite a non-empty output directory");
  add_seed(gen);

  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--out", out, "output directory override");
  train->add_option("--variant", variant, "variant override");
  train->add_flag("--deterministic", deterministic, "force deterministic mode");
  add_seed(train);

  CLI::App* translate = app.add_subcommand("translate", "greedy-decode a corpus");
  translate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  translate->add_option("--input", input, "source sentences, one per line")->required();
  translate->add_option("--features", features, "feature manifest aligned by line");
  translate->add_option("--out", out, "output hypothesis file")->required();

  CLI::App* evaluate = app.add_subcommand("evaluate", "score hypotheses");
  evaluate->add_option("--hyp", hyp, "hypothesis file")->required();
  evaluate->add_option("--ref", ref, "reference file")->required();
  evaluate->add_option("--src", src, "source file for length buckets");
  evaluate->add_option("--meta", meta, "metadata JSONL for ambiguous-token accuracy");
  evaluate->add_option("--report", report, "append JSONL report here");
  evaluate->add_option("--csv", csv, "write per-bucket CSV here");

  CLI::App* inspect = app.add_subcommand("inspect", "routing trace and heatmaps");
  inspect->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  inspect->add_option("--sentence", sentence, "source sentence (tokens)")->required();
  inspect->add_option("--features", features, "feature container")->required();
  inspect->add_option("--out", out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    std::optional<std::uint64_t> seed_opt;
    if (seed_set) seed_opt = seed;
    if (gen->parsed()) return cmd_gen(spec_path, out, force, seed_opt);
    if (train->parsed()) return cmd_train(config_path, out, seed_opt, variant, deterministic);
    if (translate->parsed()) return cmd_translate(checkpoint, input, features, out);
    if (evaluate->parsed()) return cmd_evaluate(hyp, ref, src, meta, report, csv);
    if (inspect->parsed()) return cmd_inspect(checkpoint, sentence, features, out);
  } catch (const Error& e) {
    std::cerr << "error:" << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error:E_INTERNAL: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace capmt
