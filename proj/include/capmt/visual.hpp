#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "capmt/rng.hpp"
#include "capmt/tensor.hpp"

namespace capmt {

// Two granularities of image features: a 196x256 grid-level matrix and up to
// ten 256-d region vectors, zero-padded to ten rows with a presence mask.
struct VisualFeatures {
  static constexpr int kGlobalRows = 196;
  static constexpr int kRegionRows = 10;
  static constexpr int kDim = 256;

  std::uint64_t sentence_id = 0;
  std::vector<double> global;    // kGlobalRows * kDim, row-major
  std::vector<double> regional;  // kRegionRows * kDim, row-major, padded rows all zero
  std::array<std::uint8_t, kRegionRows> mask{};

  int n_regions() const;
  void validate() const;  // shape, mask, and zero-padding invariants

  Tensor global_tensor() const;            // [196 x 256] leaf
  Tensor regional_active_tensor() const;   // [R x 256] leaf, masked rows dropped
};

struct RegionAnnotation {
  std::vector<double> class_probs;  // sums to 1
};

// Weighted sums of class-annotation embeddings, zero-padded to ten rows.
// Returns the padded matrix and the presence mask.
void build_region_vectors(const std::vector<RegionAnnotation>& annotations,
                          const std::vector<double>& class_embeddings,  // [n_classes * 256]
                          std::size_t n_classes, std::vector<double>& regional_out,
                          std::array<std::uint8_t, VisualFeatures::kRegionRows>& mask_out);

// Deterministic class-annotation embedding table (n_classes x 256).
std::vector<double> class_embedding_table(std::size_t n_classes, std::uint64_t seed);

struct SynthFeatureConfig {
  int n_classes = 64;
  int n_senses = 2;
  int n_regions = 3;     // one sense-linked region plus distractors
  double noise = 0.0;    // 0: exact encodings; 1: feature content unrelated to sense
  std::uint64_t embedding_seed = 7;
  // Feature magnitudes. Routing amplifies the global grid coherently (196
  // near-identical rows sum constructively) while regional rows add
  // incoherently, so the two tables carry scales that keep the multiplicative
  // context updates O(1) per iteration for either granularity.
  double class_scale = 0.5;
  double global_scale = 0.005;
};

// Class-annotation embedding table used for the regional granularity.
std::vector<double> synth_class_table(const SynthFeatureConfig& cfg);
// Per-sense embedding table broadcast over the global grid.
std::vector<double> synth_sense_table(const SynthFeatureConfig& cfg);

// Deterministic features whose regional annotations one-hot encode sense_id
// (classes [0, n_senses) are sense-linked) and whose global rows interpolate
// between the sense embedding and seeded noise.
VisualFeatures synthesize_features(int sense_id, std::uint64_t rng_seed,
                                   const SynthFeatureConfig& cfg);

// Nearest-sense-class probe over the active regional rows.
int probe_sense(const VisualFeatures& feats, const std::vector<double>& class_embeddings,
                int n_senses);

// Byte-exact container format (little-endian):
//   bytes 0..7    magic "CAPMTVF1"
//   bytes 8..11   u32 format version (1)
//   bytes 12..19  u64 sentence id
//   bytes 20..    196*256 f64 global block
//   then          10*256 f64 regional block
//   then          10 mask bytes (0 or 1)
void save_features(const std::string& path, const VisualFeatures& feats);
VisualFeatures load_features(const std::string& path);

}  // namespace capmt
