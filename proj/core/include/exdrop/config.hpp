#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "exdrop/dataset.hpp"
#include "exdrop/encoder.hpp"
#include "exdrop/regularizers.hpp"

namespace exdrop {

enum class OptKind { sgd, adam };
OptKind opt_kind_from_string(const std::string& s);
std::string to_string(OptKind kind);

struct OptimizerConfig {
  OptKind kind = OptKind::adam;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  void validate() const;
};

struct GridConfig {
  std::vector<double> lambdas;
  std::vector<double> lrs;
  std::vector<std::string> components;  // subset of {q, k, v, av}
  std::vector<std::uint64_t> seeds;
  bool enabled() const { return !lambdas.empty(); }
  void validate() const;
};

struct ModelConfig {
  std::size_t layers = 2;
  std::size_t dim = 32;
  std::size_t ff_dim = 64;
  std::size_t heads = 1;
  NormPlacement norm = NormPlacement::pre;
};

struct RunConfig {
  ModelConfig model;
  RegSpec reg;
  DropoutPlacement baseline;
  OptimizerConfig optim;
  DatasetSpec data;
  GridConfig grid;
  std::uint64_t seed = 1;
  std::string out_dir = "run";

  // Broadcasts single-entry lambda lists across layers and checks every
  // field, including that each path (attention, FFN) carries at most one
  // of {explicit regularizer, implicit placement}.
  void finalize();

  EncoderConfig encoder_config(const Dataset& data_loaded) const;
};

// Dispatches on extension: .json uses the JSON reader, anything else the
// line-oriented [section] key = value reader. Both accept one schema.
RunConfig load_config(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& name);
RunConfig parse_config_json_text(const std::string& text, const std::string& name);

// Full-precision echo of every field; parsing the dump reproduces the
// config exactly.
std::string dump_config(const RunConfig& cfg);

// Prefixes relative paths with $EXDROP_OUTPUT_ROOT when the variable is set.
std::string resolve_out_dir(const std::string& out_dir);

}  // namespace exdrop
