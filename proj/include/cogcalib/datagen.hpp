#pragma once

#include <string>

#include "cogcalib/knowledge.hpp"
#include "cogcalib/model.hpp"

namespace cogcalib {

// Synthetic two-domain classification task. Distribution A is the surrogate's
// pretraining domain; distribution B is A with rotated cluster centers and a
// partially permuted label map, so B samples land outside the pretrained
// model's knowledge.
struct SyntheticTaskSpec {
  int dim = 16;
  int k_classes = 16;
  std::uint64_t seed = 1;

  // pool sizes
  int pretrain_size = 12000;
  int pool_known = 2600;
  int pool_unknown = 2600;

  double label_noise = 0.0;           // pretrain pool label flip rate
  std::vector<double> class_weights;  // empty = uniform

  // distribution A; radius/sigma leave neighbouring clusters overlapping, so
  // the known domain keeps irreducible error for confidence to outrun
  double center_radius = 3.2;
  double cluster_sigma = 1.0;

  // distribution B = shifted A; the rotation moves shifted clusters into
  // their own territory, each permuted cluster acting as an independent
  // piece of new knowledge
  double shift_rotation = 1.2;        // radians, applied per coordinate plane
  double permute_fraction = 1.0 / 3;  // fraction of class labels permuted

  // finetune candidate generation
  double blend_unknown = 0.5;   // P(candidate drawn from B)
  int draw_budget_factor = 60;  // budget = factor * (pool_known + pool_unknown)

  // tagging
  int slick_perturbations = 10;
  int slick_samples = 16;
  double slick_temperature = 0.5;
  double noise_sigma = -1.0;  // < 0: default to noise_sigma_fraction * pretrain feature std
  double noise_sigma_fraction = 0.05;

  // derived evaluation sets
  int finetune_size = 4800;  // default mixed training set
  double train_unknown_fraction = 0.5;
  int val_size = 400;
  int test_size = 800;
  int cal_size = 150;
  int ood_size = 400;
  double ood_shift_level = 1.0;
  double ood_translation = 1.0;  // center displacement per unit shift level
  double ood_cov_scale = 0.5;    // sigma growth per unit shift level

  void validate() const;
};

// Cluster mixture with a label map; the sampling primitive behind every
// generated dataset.
struct GaussianMixture {
  std::vector<FeatureVector> centers;
  double sigma = 1.0;
  std::vector<int> label_map;
  std::vector<double> weights;
};

GaussianMixture dist_a(const SyntheticTaskSpec& spec);
GaussianMixture dist_b(const SyntheticTaskSpec& spec);
GaussianMixture dist_ood(const SyntheticTaskSpec& spec, double shift_level);

Dataset sample_mixture(const GaussianMixture& mix, int n, int k_classes, int dim,
                       double label_noise, Rng& rng, std::int64_t id_base);

Dataset make_pretrain_pool(const SyntheticTaskSpec& spec);

// Input-noise scale used by the tagging analog of prompt resampling.
double default_noise_sigma(const SyntheticTaskSpec& spec);
SlickConfig slick_config_for(const SyntheticTaskSpec& spec);

// Per-sample tagging stream; re-running with the same spec and id reproduces
// the stored tag.
Rng slick_rng(const SyntheticTaskSpec& spec, std::int64_t sample_id);

struct PoolPair {
  Dataset known_pool;    // every sample HighlyKnown
  Dataset unknown_pool;  // every sample Unknown
};

// Draws candidates from the A/B blend, tags each with the pretrained model,
// and keeps only the crisp HighlyKnown/Unknown samples until both pools
// reach their requested sizes.
PoolPair make_finetune_pools(const SyntheticTaskSpec& spec,
                             const ModelParams& pretrained);

// r+1 equal-size datasets D_{i:(r-i)} for i = 0..r, i counting unknown
// parts. Built incrementally: each step removes a random N/r of the retained
// known samples and adds N/r fresh unknown ones.
std::vector<Dataset> mix_ratio_series(const Dataset& known_pool,
                                      const Dataset& unknown_pool, int r, Rng& rng);

// Removes floor(fraction * #known) uniformly random known samples.
Dataset delete_known_fraction(const Dataset& data, double fraction, Rng& rng);

Dataset make_ood_set(const SyntheticTaskSpec& spec, double shift_level);

// Columnar text format: header id,label,tag,f0..f{d-1}; rows ordered by id;
// values round-trip exactly.
void write_dataset_csv(const Dataset& data, const std::string& path);
Dataset read_dataset_csv(const std::string& path, int k_classes = -1);

}  // namespace cogcalib
