#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "exdrop/matrix.hpp"

namespace exdrop {

enum class DatasetKind { synthetic_seq, binary_image };

DatasetKind dataset_kind_from_string(const std::string& s);
std::string to_string(DatasetKind kind);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic_seq;

  // synthetic_seq: Gaussian token clusters around class-dependent means.
  std::size_t tokens = 8;
  std::size_t token_dim = 16;
  std::size_t classes = 2;
  std::size_t train_samples = 2000;  // pool split into train/val
  std::size_t test_samples = 600;
  double snr = 3.0;  // distance of each class mean from the origin
  double split = 0.7;

  // binary_image: records of one label byte plus image_h*image_w pixel
  // bytes, cut into non-overlapping patch x patch tokens.
  std::string path;
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::size_t patch = 0;

  void validate() const;
};

struct Sample {
  Matrix tokens;  // tokens x token_dim
  int label = 0;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  // Effective geometry, derived from the spec (or the image header math).
  std::size_t tokens = 0;
  std::size_t token_dim = 0;
  std::size_t classes = 0;
};

Dataset load_dataset(const DatasetSpec& spec, std::uint64_t seed);

// Nearest-class-centroid accuracy on mean-pooled tokens: the linear
// sanity probe for generated data.
double linear_probe_accuracy(const std::vector<Sample>& train,
                             const std::vector<Sample>& eval, std::size_t classes);

}  // namespace exdrop
