#include "cogcalib/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cogcalib {

void SyntheticTaskSpec::validate() const {
  if (dim < 1) throw InvalidInputError("task: dim must be >= 1");
  if (k_classes < 2) throw InvalidInputError("task: classes must be >= 2");
  if (pretrain_size < 1 || pool_known < 1 || pool_unknown < 1)
    throw InvalidInputError("task: pool sizes must be > 0");
  if (label_noise < 0.0 || label_noise >= 1.0)
    throw InvalidInputError("task: label_noise must be in [0,1)");
  if (!class_weights.empty() &&
      static_cast<int>(class_weights.size()) != k_classes)
    throw InvalidInputError("task: class_weights size must equal classes");
  if (blend_unknown < 0.0 || blend_unknown > 1.0)
    throw InvalidInputError("task: blend_unknown must be in [0,1]");
  if (cluster_sigma <= 0.0) throw InvalidInputError("task: cluster_sigma must be > 0");
  if (permute_fraction < 0.0 || permute_fraction > 1.0)
    throw InvalidInputError("task: permute_fraction must be in [0,1]");
  if (train_unknown_fraction < 0.0 || train_unknown_fraction > 1.0)
    throw InvalidInputError("task: train_unknown_fraction must be in [0,1]");
}

namespace {

std::vector<double> cluster_weights(const SyntheticTaskSpec& spec) {
  if (spec.class_weights.empty())
    return std::vector<double>(spec.k_classes, 1.0 / spec.k_classes);
  double sum = 0.0;
  for (double w : spec.class_weights) {
    if (w < 0.0) throw InvalidInputError("task: class weights must be >= 0");
    sum += w;
  }
  if (sum <= 0.0) throw InvalidInputError("task: class weights sum to 0");
  std::vector<double> w = spec.class_weights;
  for (double& v : w) v /= sum;
  return w;
}

int pick_cluster(const std::vector<double>& weights, Rng& rng) {
  double u = rng.uniform();
  for (std::size_t c = 0; c + 1 < weights.size(); ++c) {
    u -= weights[c];
    if (u < 0.0) return static_cast<int>(c);
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace

GaussianMixture dist_a(const SyntheticTaskSpec& spec) {
  spec.validate();
  GaussianMixture mix;
  mix.sigma = spec.cluster_sigma;
  mix.weights = cluster_weights(spec);
  mix.label_map.resize(spec.k_classes);
  for (int c = 0; c < spec.k_classes; ++c) mix.label_map[c] = c;

  Rng rng(mix_seed(spec.seed, "centers"));
  mix.centers.resize(spec.k_classes);
  for (int c = 0; c < spec.k_classes; ++c) {
    FeatureVector v(spec.dim);
    double norm2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
    const double scale = spec.center_radius / std::sqrt(std::max(norm2, 1e-12));
    for (double& x : v) x *= scale;
    mix.centers[c] = std::move(v);
  }
  return mix;
}

GaussianMixture dist_b(const SyntheticTaskSpec& spec) {
  GaussianMixture mix = dist_a(spec);

  // rotate each coordinate plane (0,1), (2,3), ...
  const double cs = std::cos(spec.shift_rotation);
  const double sn = std::sin(spec.shift_rotation);
  for (FeatureVector& c : mix.centers)
    for (int j = 0; j + 1 < spec.dim; j += 2) {
      const double a = c[j], b = c[j + 1];
      c[j] = cs * a - sn * b;
      c[j + 1] = sn * a + cs * b;
    }

  // cyclically shift the labels of the first n_perm classes
  int n_perm = static_cast<int>(std::lround(spec.permute_fraction * spec.k_classes));
  if (spec.permute_fraction > 0.0 && n_perm < 2) n_perm = 2;
  if (n_perm > spec.k_classes) n_perm = spec.k_classes;
  if (n_perm >= 2)
    for (int c = 0; c < n_perm; ++c) mix.label_map[c] = (c + 1) % n_perm;
  return mix;
}

GaussianMixture dist_ood(const SyntheticTaskSpec& spec, double shift_level) {
  if (shift_level < 0.0) throw InvalidInputError("dist_ood: shift_level must be >= 0");
  GaussianMixture mix = dist_b(spec);

  Rng rng(mix_seed(spec.seed, "ood_direction"));
  FeatureVector dir(spec.dim);
  double norm2 = 0.0;
  for (double& x : dir) {
    x = rng.normal();
    norm2 += x * x;
  }
  const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-12));
  for (double& x : dir) x *= inv;

  const double shift = shift_level * spec.ood_translation;
  for (FeatureVector& c : mix.centers)
    for (int j = 0; j < spec.dim; ++j) c[j] += shift * dir[j];
  mix.sigma *= 1.0 + spec.ood_cov_scale * shift_level;
  return mix;
}

Dataset sample_mixture(const GaussianMixture& mix, int n, int k_classes, int dim,
                       double label_noise, Rng& rng, std::int64_t id_base) {
  Dataset data;
  data.k_classes = k_classes;
  data.dim = dim;
  data.samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.id = id_base + i;
    const int c = pick_cluster(mix.weights, rng);
    s.features.resize(dim);
    for (int j = 0; j < dim; ++j)
      s.features[j] = mix.centers[c][j] + mix.sigma * rng.normal();
    s.label = mix.label_map[c];
    data.samples.push_back(std::move(s));
  }
  // noise drawn after the feature pass, so the draws above are identical
  // across noise settings
  if (label_noise > 0.0)
    for (Sample& s : data.samples)
      if (rng.uniform() < label_noise) {
        const int shift = 1 + static_cast<int>(rng.uniform_int(k_classes - 1));
        s.label = (s.label + shift) % k_classes;
      }
  return data;
}

Dataset make_pretrain_pool(const SyntheticTaskSpec& spec) {
  const GaussianMixture mix = dist_a(spec);
  Rng rng(mix_seed(spec.seed, "pretrain"));
  return sample_mixture(mix, spec.pretrain_size, spec.k_classes, spec.dim,
                        spec.label_noise, rng, 0);
}

double default_noise_sigma(const SyntheticTaskSpec& spec) {
  if (spec.noise_sigma >= 0.0) return spec.noise_sigma;
  const Dataset pool = make_pretrain_pool(spec);
  // mean over features of the per-feature standard deviation
  double acc = 0.0;
  const double n = static_cast<double>(pool.size());
  for (int j = 0; j < spec.dim; ++j) {
    double mean = 0.0, sq = 0.0;
    for (const Sample& s : pool.samples) {
      mean += s.features[j];
      sq += s.features[j] * s.features[j];
    }
    mean /= n;
    acc += std::sqrt(std::max(sq / n - mean * mean, 0.0));
  }
  return spec.noise_sigma_fraction * acc / spec.dim;
}

SlickConfig slick_config_for(const SyntheticTaskSpec& spec) {
  SlickConfig cfg;
  cfg.n_perturbations = spec.slick_perturbations;
  cfg.n_samples = spec.slick_samples;
  cfg.temperature = spec.slick_temperature;
  cfg.noise_sigma = default_noise_sigma(spec);
  return cfg;
}

Rng slick_rng(const SyntheticTaskSpec& spec, std::int64_t sample_id) {
  return Rng(mix_seed(mix_seed(spec.seed, "slick"),
                      static_cast<std::uint64_t>(sample_id)));
}

PoolPair make_finetune_pools(const SyntheticTaskSpec& spec,
                             const ModelParams& pretrained) {
  spec.validate();
  if (pretrained.dim != spec.dim || pretrained.k_classes != spec.k_classes)
    throw ShapeError("make_finetune_pools: model does not match task dimensions");

  const GaussianMixture a = dist_a(spec);
  const GaussianMixture b = dist_b(spec);
  const SlickConfig slick = slick_config_for(spec);

  PoolPair pools;
  pools.known_pool.k_classes = pools.unknown_pool.k_classes = spec.k_classes;
  pools.known_pool.dim = pools.unknown_pool.dim = spec.dim;

  Rng rng(mix_seed(spec.seed, "candidates"));
  const std::int64_t id_base = std::int64_t{1} << 20;
  const long budget =
      static_cast<long>(spec.draw_budget_factor) * (spec.pool_known + spec.pool_unknown);

  for (long draw = 0; draw < budget; ++draw) {
    const bool need_known =
        static_cast<int>(pools.known_pool.size()) < spec.pool_known;
    const bool need_unknown =
        static_cast<int>(pools.unknown_pool.size()) < spec.pool_unknown;
    if (!need_known && !need_unknown) return pools;

    const bool from_b = rng.uniform() < spec.blend_unknown;
    Dataset one = sample_mixture(from_b ? b : a, 1, spec.k_classes, spec.dim, 0.0,
                                 rng, id_base + draw);
    Sample s = std::move(one.samples.front());

    Rng tag_rng = slick_rng(spec, s.id);
    const KnowledgeTag tag = slick_categorize(pretrained, s, slick, tag_rng);
    if (tag == KnowledgeTag::HighlyKnown && need_known) {
      s.oracle_tag = tag;
      pools.known_pool.samples.push_back(std::move(s));
    } else if (tag == KnowledgeTag::Unknown && need_unknown) {
      s.oracle_tag = tag;
      pools.unknown_pool.samples.push_back(std::move(s));
    }
  }

  if (static_cast<int>(pools.known_pool.size()) < spec.pool_known)
    throw ResourceError("make_finetune_pools: draw budget exhausted, known pool at " +
                        std::to_string(pools.known_pool.size()) + "/" +
                        std::to_string(spec.pool_known));
  if (static_cast<int>(pools.unknown_pool.size()) < spec.pool_unknown)
    throw ResourceError("make_finetune_pools: draw budget exhausted, unknown pool at " +
                        std::to_string(pools.unknown_pool.size()) + "/" +
                        std::to_string(spec.pool_unknown));
  return pools;
}

std::vector<Dataset> mix_ratio_series(const Dataset& known_pool,
                                      const Dataset& unknown_pool, int r, Rng& rng) {
  if (r < 1) throw InvalidInputError("mix_ratio_series: r must be >= 1");
  if (known_pool.k_classes != unknown_pool.k_classes ||
      known_pool.dim != unknown_pool.dim)
    throw ShapeError("mix_ratio_series: pool dimensions disagree");

  std::size_t n = std::min(known_pool.size(), unknown_pool.size());
  n -= n % static_cast<std::size_t>(r);  // keep all datasets equal-sized
  if (n == 0) throw InvalidInputError("mix_ratio_series: pools too small for r");
  const std::size_t chunk = n / static_cast<std::size_t>(r);

  std::vector<std::size_t> known_idx(known_pool.size());
  std::vector<std::size_t> unknown_idx(unknown_pool.size());
  for (std::size_t i = 0; i < known_idx.size(); ++i) known_idx[i] = i;
  for (std::size_t i = 0; i < unknown_idx.size(); ++i) unknown_idx[i] = i;
  rng.shuffle(known_idx);
  rng.shuffle(unknown_idx);

  std::vector<std::size_t> retained_known(known_idx.begin(), known_idx.begin() + n);
  std::vector<std::size_t> used_unknown;

  std::vector<Dataset> series;
  series.reserve(r + 1);
  for (int i = 0; i <= r; ++i) {
    if (i > 0) {
      for (std::size_t j = 0; j < chunk; ++j) {
        const std::size_t pick = rng.uniform_int(retained_known.size());
        std::swap(retained_known[pick], retained_known.back());
        retained_known.pop_back();
        used_unknown.push_back(unknown_idx[used_unknown.size()]);
      }
    }
    Dataset d;
    d.k_classes = known_pool.k_classes;
    d.dim = known_pool.dim;
    d.samples.reserve(n);
    for (std::size_t idx : retained_known) d.samples.push_back(known_pool.samples[idx]);
    for (std::size_t idx : used_unknown) d.samples.push_back(unknown_pool.samples[idx]);
    series.push_back(std::move(d));
  }
  return series;
}

Dataset delete_known_fraction(const Dataset& data, double fraction, Rng& rng) {
  if (fraction < 0.0 || fraction > 1.0)
    throw InvalidInputError("delete_known_fraction: fraction must be in [0,1]");
  std::vector<std::size_t> known_idx;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data.samples[i].oracle_tag)
      throw InvalidInputError("delete_known_fraction: sample " +
                              std::to_string(data.samples[i].id) + " has no oracle tag");
    if (*data.samples[i].oracle_tag == KnowledgeTag::HighlyKnown)
      known_idx.push_back(i);
  }
  const std::size_t n_delete =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(known_idx.size())));
  if (n_delete == 0) return data;

  rng.shuffle(known_idx);
  std::vector<char> drop(data.size(), 0);
  for (std::size_t i = 0; i < n_delete; ++i) drop[known_idx[i]] = 1;

  Dataset out;
  out.k_classes = data.k_classes;
  out.dim = data.dim;
  out.samples.reserve(data.size() - n_delete);
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!drop[i]) out.samples.push_back(data.samples[i]);
  return out;
}

Dataset make_ood_set(const SyntheticTaskSpec& spec, double shift_level) {
  const GaussianMixture mix = dist_ood(spec, shift_level);
  Rng rng(mix_seed(spec.seed, "ood"));
  return sample_mixture(mix, spec.ood_size, spec.k_classes, spec.dim, 0.0, rng,
                        std::int64_t{2} << 20);
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInputError("cannot open for writing: " + path);

  out << "id,label,tag";
  for (int j = 0; j < data.dim; ++j) out << ",f" << j;
  out << "\n";

  std::vector<const Sample*> rows;
  rows.reserve(data.size());
  for (const Sample& s : data.samples) rows.push_back(&s);
  std::sort(rows.begin(), rows.end(),
            [](const Sample* a, const Sample* b) { return a->id < b->id; });

  char buf[40];
  for (const Sample* s : rows) {
    out << s->id << ',' << s->label << ',';
    if (s->oracle_tag) out << to_string(*s->oracle_tag);
    for (int j = 0; j < data.dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", s->features[j]);
      out << ',' << buf;
    }
    out << "\n";
  }
}

Dataset read_dataset_csv(const std::string& path, int k_classes) {
  std::ifstream in(path);
  if (!in) throw InvalidInputError("cannot open for reading: " + path);

  std::string line;
  if (!std::getline(in, line))
    throw InvalidInputError("dataset file is empty: " + path);

  int dim = 0;
  {
    std::stringstream hs(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(hs, col, ',')) cols.push_back(col);
    if (cols.size() < 4 || cols[0] != "id" || cols[1] != "label" || cols[2] != "tag")
      throw InvalidInputError("bad dataset header in " + path);
    dim = static_cast<int>(cols.size()) - 3;
  }

  Dataset data;
  data.dim = dim;
  int max_label = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string field;
    Sample s;
    std::getline(ls, field, ',');
    s.id = std::stoll(field);
    std::getline(ls, field, ',');
    s.label = std::stoi(field);
    max_label = std::max(max_label, s.label);
    std::getline(ls, field, ',');
    if (!field.empty()) {
      const auto tag = tag_from_string(field);
      if (!tag) throw InvalidInputError("unknown tag '" + field + "' in " + path);
      s.oracle_tag = tag;
    }
    s.features.resize(dim);
    for (int j = 0; j < dim; ++j) {
      if (!std::getline(ls, field, ','))
        throw InvalidInputError("truncated row in " + path);
      s.features[j] = std::stod(field);
    }
    data.samples.push_back(std::move(s));
  }
  data.k_classes = k_classes > 0 ? k_classes : max_label + 1;
  data.validate();
  return data;
}

}  // namespace cogcalib
