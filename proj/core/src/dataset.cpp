#include "exdrop/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "exdrop/rng.hpp"

namespace exdrop {

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "synthetic_seq") return DatasetKind::synthetic_seq;
  if (s == "binary_image") return DatasetKind::binary_image;
  throw std::invalid_argument("unknown dataset kind '" + s + "'");
}

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::synthetic_seq ? "synthetic_seq" : "binary_image";
}

void DatasetSpec::validate() const {
  if (split <= 0.0 || split >= 1.0) {
    throw std::invalid_argument("dataset: split must be in (0,1)");
  }
  if (classes < 2) throw std::invalid_argument("dataset: classes must be >= 2");
  if (kind == DatasetKind::synthetic_seq) {
    if (tokens == 0 || token_dim == 0) {
      throw std::invalid_argument("dataset: tokens and token_dim must be positive");
    }
    if (classes > token_dim) {
      throw std::invalid_argument("dataset: need classes <= token_dim for separable means");
    }
    if (train_samples < 10 || test_samples < 1) {
      throw std::invalid_argument("dataset: too few samples");
    }
    if (snr <= 0.0) throw std::invalid_argument("dataset: snr must be positive");
  } else {
    if (path.empty()) throw std::invalid_argument("dataset: binary_image needs a path");
    if (image_h == 0 || image_w == 0 || patch == 0) {
      throw std::invalid_argument("dataset: image geometry must be positive");
    }
    if (image_h % patch != 0 || image_w % patch != 0) {
      throw std::invalid_argument("dataset: patch must divide image_h and image_w");
    }
    if (classes > 256) throw std::invalid_argument("dataset: label byte limits classes to 256");
  }
}

namespace {

// Mutually orthogonal unit directions, one per class, so the clusters are
// separated regardless of the draw.
std::vector<std::vector<double>> class_directions(std::size_t classes,
                                                  std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> dirs;
  dirs.reserve(classes);
  while (dirs.size() < classes) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    for (const auto& u : dirs) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * u[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;  // degenerate draw, try again
    for (auto& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }
  return dirs;
}

std::vector<Sample> draw_cluster_samples(const DatasetSpec& spec,
                                         const std::vector<std::vector<double>>& dirs,
                                         std::size_t count, Rng& rng) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    Sample sample;
    sample.label = static_cast<int>(rng.next_below(spec.classes));
    sample.tokens = Matrix(spec.tokens, spec.token_dim);
    const auto& mu = dirs[static_cast<std::size_t>(sample.label)];
    for (std::size_t t = 0; t < spec.tokens; ++t) {
      for (std::size_t j = 0; j < spec.token_dim; ++j) {
        sample.tokens(t, j) = spec.snr * mu[j] + rng.normal();
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

void shuffle_samples(std::vector<Sample>& samples, Rng& rng) {
  for (std::size_t i = samples.size(); i > 1; --i) {
    std::swap(samples[i - 1], samples[rng.next_below(i)]);
  }
}

Dataset load_synthetic(const DatasetSpec& spec, std::uint64_t seed) {
  Rng rng = Rng(seed).split(0x5e9);
  const auto dirs = class_directions(spec.classes, spec.token_dim, rng);

  Dataset data;
  data.tokens = spec.tokens;
  data.token_dim = spec.token_dim;
  data.classes = spec.classes;

  std::vector<Sample> pool = draw_cluster_samples(spec, dirs, spec.train_samples, rng);
  const std::size_t n_train =
      static_cast<std::size_t>(spec.split * static_cast<double>(pool.size()));
  data.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
  data.val.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end());
  data.test = draw_cluster_samples(spec, dirs, spec.test_samples, rng);
  return data;
}

Dataset load_binary_image(const DatasetSpec& spec, std::uint64_t seed) {
  std::ifstream in(spec.path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open '" + spec.path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  const std::size_t record = 1 + spec.image_h * spec.image_w;
  if (bytes.empty() || bytes.size() % record != 0) {
    throw std::runtime_error("dataset: '" + spec.path + "' holds " +
                             std::to_string(bytes.size()) +
                             " bytes, not a multiple of the " + std::to_string(record) +
                             "-byte record");
  }
  const std::size_t n = bytes.size() / record;
  const std::size_t rows = spec.image_h / spec.patch;
  const std::size_t cols = spec.image_w / spec.patch;

  Dataset data;
  data.tokens = rows * cols;
  data.token_dim = spec.patch * spec.patch;
  data.classes = spec.classes;

  std::vector<Sample> pool;
  pool.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + s * record);
    Sample sample;
    sample.label = static_cast<int>(rec[0]);
    if (sample.label >= static_cast<int>(spec.classes)) {
      throw std::runtime_error("dataset: record " + std::to_string(s) + " labeled " +
                               std::to_string(sample.label) + " with " +
                               std::to_string(spec.classes) + " classes");
    }
    sample.tokens = Matrix(data.tokens, data.token_dim);
    for (std::size_t pr = 0; pr < rows; ++pr) {
      for (std::size_t pc = 0; pc < cols; ++pc) {
        const std::size_t token = pr * cols + pc;
        for (std::size_t y = 0; y < spec.patch; ++y) {
          for (std::size_t x = 0; x < spec.patch; ++x) {
            const std::size_t pixel =
                (pr * spec.patch + y) * spec.image_w + pc * spec.patch + x;
            sample.tokens(token, y * spec.patch + x) = rec[1 + pixel] / 255.0;
          }
        }
      }
    }
    pool.push_back(std::move(sample));
  }

  Rng rng = Rng(seed).split(0x1a6);
  shuffle_samples(pool, rng);
  const std::size_t n_test = std::min(spec.test_samples, pool.size() / 3);
  const std::size_t n_rest = pool.size() - n_test;
  const std::size_t n_train =
      static_cast<std::size_t>(spec.split * static_cast<double>(n_rest));
  data.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
  data.val.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_train),
                  pool.begin() + static_cast<std::ptrdiff_t>(n_rest));
  data.test.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_rest), pool.end());
  return data;
}

}  // namespace

Dataset load_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  return spec.kind == DatasetKind::synthetic_seq ? load_synthetic(spec, seed)
                                                 : load_binary_image(spec, seed);
}

double linear_probe_accuracy(const std::vector<Sample>& train,
                             const std::vector<Sample>& eval, std::size_t classes) {
  if (train.empty() || eval.empty()) {
    throw std::invalid_argument("linear_probe_accuracy: empty split");
  }
  const std::size_t dim = train[0].tokens.cols();
  auto pooled = [dim](const Sample& s) {
    std::vector<double> mean(dim, 0.0);
    for (std::size_t t = 0; t < s.tokens.rows(); ++t) {
      for (std::size_t j = 0; j < dim; ++j) mean[j] += s.tokens(t, j);
    }
    for (auto& m : mean) m /= static_cast<double>(s.tokens.rows());
    return mean;
  };

  std::vector<std::vector<double>> centroids(classes, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(classes, 0);
  for (const auto& s : train) {
    const auto mean = pooled(s);
    auto& c = centroids[static_cast<std::size_t>(s.label)];
    for (std::size_t j = 0; j < dim; ++j) c[j] += mean[j];
    ++counts[static_cast<std::size_t>(s.label)];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) continue;
    for (auto& x : centroids[c]) x /= static_cast<double>(counts[c]);
  }

  std::size_t hits = 0;
  for (const auto& s : eval) {
    const auto mean = pooled(s);
    std::size_t best = 0;
    double best_dist = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = mean[j] - centroids[c][j];
        dist += d * d;
      }
      if (c == 0 || dist < best_dist) {
        best = c;
        best_dist = dist;
      }
    }
    if (static_cast<int>(best) == s.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(eval.size());
}

}  // namespace exdrop
