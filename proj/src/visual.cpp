#include "capmt/visual.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "capmt/error.hpp"

namespace capmt {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'P', 'M', 'T', 'V', 'F', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kGlobalCount =
    static_cast<std::size_t>(VisualFeatures::kGlobalRows) * VisualFeatures::kDim;
constexpr std::size_t kRegionalCount =
    static_cast<std::size_t>(VisualFeatures::kRegionRows) * VisualFeatures::kDim;

[[noreturn]] void format_fail(const std::string& path, std::size_t offset, const std::string& why) {
  throw FormatError(path + ": " + why + " (byte offset " + std::to_string(offset) + ")");
}

}  // namespace

int VisualFeatures::n_regions() const {
  int n = 0;
  for (std::uint8_t m : mask) n += m != 0;
  return n;
}

void VisualFeatures::validate() const {
  if (global.size() != kGlobalCount)
    throw FormatError("global feature block has " + std::to_string(global.size()) +
                      " values, expected " + std::to_string(kGlobalCount));
  if (regional.size() != kRegionalCount)
    throw FormatError("regional feature block has " + std::to_string(regional.size()) +
                      " values, expected " + std::to_string(kRegionalCount));
  for (int r = 0; r < kRegionRows; ++r) {
    if (mask[static_cast<std::size_t>(r)] > 1)
      throw FormatError("region mask byte " + std::to_string(r) + " is not 0/1");
    if (!mask[static_cast<std::size_t>(r)]) {
      for (int k = 0; k < kDim; ++k)
        if (regional[static_cast<std::size_t>(r * kDim + k)] != 0.0)
          throw FormatError("padded region row " + std::to_string(r) + " is not all-zero");
    }
  }
}

Tensor VisualFeatures::global_tensor() const {
  return Tensor::constant({kGlobalRows, kDim}, global);
}

Tensor VisualFeatures::regional_active_tensor() const {
  const int n = n_regions();
  if (n == 0) throw InputError("no active regions in regional features");
  std::vector<double> rows;
  rows.reserve(static_cast<std::size_t>(n) * kDim);
  for (int r = 0; r < kRegionRows; ++r)
    if (mask[static_cast<std::size_t>(r)])
      rows.insert(rows.end(), regional.begin() + r * kDim, regional.begin() + (r + 1) * kDim);
  return Tensor::constant({n, kDim}, std::move(rows));
}

void build_region_vectors(const std::vector<RegionAnnotation>& annotations,
                          const std::vector<double>& class_embeddings, std::size_t n_classes,
                          std::vector<double>& regional_out,
                          std::array<std::uint8_t, VisualFeatures::kRegionRows>& mask_out) {
  if (annotations.size() > VisualFeatures::kRegionRows)
    throw InputError("at most " + std::to_string(VisualFeatures::kRegionRows) +
                     " regions are supported, got " + std::to_string(annotations.size()));
  if (class_embeddings.size() != n_classes * VisualFeatures::kDim)
    throw InputError("class embedding table size mismatch");

  regional_out.assign(kRegionalCount, 0.0);
  mask_out.fill(0);
  for (std::size_t r = 0; r < annotations.size(); ++r) {
    const auto& probs = annotations[r].class_probs;
    if (probs.size() != n_classes)
      throw InputError("region " + std::to_string(r) + " distribution covers " +
                       std::to_string(probs.size()) + " classes, expected " +
                       std::to_string(n_classes));
    double total = 0.0;
    for (double p : probs) total += p;
    if (std::fabs(total - 1.0) > 1e-6)
      throw InputError("region " + std::to_string(r) + " distribution sums to " +
                       std::to_string(total));
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double p = probs[c];
      if (p == 0.0) continue;
      for (int k = 0; k < VisualFeatures::kDim; ++k)
        regional_out[r * VisualFeatures::kDim + static_cast<std::size_t>(k)] +=
            p * class_embeddings[c * VisualFeatures::kDim + static_cast<std::size_t>(k)];
    }
    mask_out[r] = 1;
  }
}

std::vector<double> class_embedding_table(std::size_t n_classes, std::uint64_t seed) {
  Rng rng = Rng(seed).fork("class_embeddings");
  std::vector<double> table(n_classes * VisualFeatures::kDim);
  for (double& v : table) v = rng.normal();
  return table;
}

std::vector<double> synth_class_table(const SynthFeatureConfig& cfg) {
  std::vector<double> table =
      class_embedding_table(static_cast<std::size_t>(cfg.n_classes), cfg.embedding_seed);
  for (double& v : table) v *= cfg.class_scale;
  return table;
}

std::vector<double> synth_sense_table(const SynthFeatureConfig& cfg) {
  Rng rng = Rng(cfg.embedding_seed).fork("sense_embeddings");
  std::vector<double> table(static_cast<std::size_t>(cfg.n_senses) * VisualFeatures::kDim);
  for (double& v : table) v = cfg.global_scale * rng.normal();
  return table;
}

VisualFeatures synthesize_features(int sense_id, std::uint64_t rng_seed,
                                   const SynthFeatureConfig& cfg) {
  if (sense_id < 0 || sense_id >= cfg.n_senses)
    throw InputError("unknown sense id " + std::to_string(sense_id) + " for " +
                     std::to_string(cfg.n_senses) + " senses");
  if (cfg.n_regions < 1 || cfg.n_regions > VisualFeatures::kRegionRows)
    throw ConfigError("region count must be in [1, 10]");
  if (cfg.n_classes <= cfg.n_senses)
    throw ConfigError("class vocabulary must be larger than the sense vocabulary");
  if (cfg.noise < 0.0 || cfg.noise > 1.0) throw ConfigError("noise level must be in [0, 1]");
  if (cfg.class_scale <= 0.0 || cfg.global_scale <= 0.0)
    throw ConfigError("feature scales must be positive");

  const std::vector<double> table = synth_class_table(cfg);
  const std::vector<double> sense_table = synth_sense_table(cfg);
  Rng rng(rng_seed);
  Rng region_rng = rng.fork("regions");
  Rng noise_rng = rng.fork("global_noise");

  // Region 0 carries the sense-linked class; the rest are distractors.
  std::vector<RegionAnnotation> annotations;
  for (int r = 0; r < cfg.n_regions; ++r) {
    int cls;
    if (r == 0) {
      const bool corrupted = region_rng.uniform() < cfg.noise;
      cls = corrupted ? static_cast<int>(region_rng.below(static_cast<std::uint64_t>(cfg.n_classes)))
                      : sense_id;
    } else {
      cls = cfg.n_senses + static_cast<int>(region_rng.below(
                               static_cast<std::uint64_t>(cfg.n_classes - cfg.n_senses)));
    }
    RegionAnnotation ann;
    ann.class_probs.assign(static_cast<std::size_t>(cfg.n_classes), 0.0);
    ann.class_probs[static_cast<std::size_t>(cls)] = 1.0;
    annotations.push_back(std::move(ann));
  }

  VisualFeatures feats;
  feats.sentence_id = rng_seed;
  build_region_vectors(annotations, table, static_cast<std::size_t>(cfg.n_classes),
                       feats.regional, feats.mask);

  feats.global.resize(kGlobalCount);
  const double* sense_emb = sense_table.data() + sense_id * VisualFeatures::kDim;
  for (int row = 0; row < VisualFeatures::kGlobalRows; ++row) {
    for (int k = 0; k < VisualFeatures::kDim; ++k) {
      const double z = cfg.noise > 0.0 ? cfg.global_scale * noise_rng.normal() : 0.0;
      feats.global[static_cast<std::size_t>(row * VisualFeatures::kDim + k)] =
          (1.0 - cfg.noise) * sense_emb[k] + cfg.noise * z;
    }
  }
  feats.validate();
  return feats;
}

int probe_sense(const VisualFeatures& feats, const std::vector<double>& class_embeddings,
                int n_senses) {
  double best = std::numeric_limits<double>::infinity();
  int best_sense = 0;
  for (int r = 0; r < VisualFeatures::kRegionRows; ++r) {
    if (!feats.mask[static_cast<std::size_t>(r)]) continue;
    for (int s = 0; s < n_senses; ++s) {
      double dist = 0.0;
      for (int k = 0; k < VisualFeatures::kDim; ++k) {
        const double d = feats.regional[static_cast<std::size_t>(r * VisualFeatures::kDim + k)] -
                         class_embeddings[static_cast<std::size_t>(s * VisualFeatures::kDim + k)];
        dist += d * d;
      }
      if (dist < best) {
        best = dist;
        best_sense = s;
      }
    }
  }
  return best_sense;
}

namespace {

void write_bytes(std::ofstream& out, const void* data, std::size_t count) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(count));
}

void read_bytes(std::ifstream& in, const std::string& path, std::size_t offset, void* data,
                std::size_t count, const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count)
    format_fail(path, offset, std::string("truncated while reading ") + what);
}

}  // namespace

void save_features(const std::string& path, const VisualFeatures& feats) {
  feats.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_bytes(out, kMagic, sizeof(kMagic));
  write_bytes(out, &kVersion, sizeof(kVersion));
  write_bytes(out, &feats.sentence_id, sizeof(feats.sentence_id));
  write_bytes(out, feats.global.data(), kGlobalCount * sizeof(double));
  write_bytes(out, feats.regional.data(), kRegionalCount * sizeof(double));
  write_bytes(out, feats.mask.data(), feats.mask.size());
  if (!out) throw IoError("short write to " + path);
}

VisualFeatures load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);

  char magic[8];
  read_bytes(in, path, 0, magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    format_fail(path, 0, "bad magic, not a feature container");

  std::uint32_t version = 0;
  read_bytes(in, path, 8, &version, sizeof(version), "version");
  if (version != kVersion)
    format_fail(path, 8, "unsupported format version " + std::to_string(version));

  VisualFeatures feats;
  read_bytes(in, path, 12, &feats.sentence_id, sizeof(feats.sentence_id), "sentence id");
  feats.global.resize(kGlobalCount);
  read_bytes(in, path, 20, feats.global.data(), kGlobalCount * sizeof(double), "global block");
  feats.regional.resize(kRegionalCount);
  const std::size_t reg_off = 20 + kGlobalCount * sizeof(double);
  read_bytes(in, path, reg_off, feats.regional.data(), kRegionalCount * sizeof(double),
             "regional block");
  const std::size_t mask_off = reg_off + kRegionalCount * sizeof(double);
  read_bytes(in, path, mask_off, feats.mask.data(), feats.mask.size(), "mask block");

  char extra;
  in.read(&extra, 1);
  if (in.gcount() != 0)
    format_fail(path, mask_off + feats.mask.size(), "trailing bytes after mask block");

  try {
    feats.validate();
  } catch (const FormatError& e) {
    format_fail(path, 20, e.what());
  }
  return feats;
}

}  // namespace capmt
