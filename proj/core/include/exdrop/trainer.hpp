#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "exdrop/config.hpp"
#include "exdrop/dataset.hpp"
#include "exdrop/encoder.hpp"
#include "exdrop/metrics.hpp"

namespace exdrop {

// Raised when any loss component goes non-finite or past the blow-up
// ceiling; carries which component it was and how large it got.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string component, double magnitude);
  const std::string& component() const { return component_; }
  double magnitude() const { return magnitude_; }

 private:
  std::string component_;
  double magnitude_;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  double best_val_acc = 0.0;
  std::size_t best_epoch = 0;   // 1-based, the epoch best_params comes from
  double test_acc = 0.0;        // of best_params, computed once at the end
  EncoderParams best_params;
  EncoderConfig model;
  double wall_seconds = 0.0;
};

// Loads the configured dataset and trains on it.
TrainResult train(const RunConfig& cfg);

// Trains against an already-loaded dataset; grid cells share one load so
// every cell sees identical splits.
TrainResult train_on(const RunConfig& cfg, const Dataset& data);

// Mask-free classification accuracy of a weight set.
double evaluate(const EncoderParams& params, const EncoderConfig& model,
                const std::vector<Sample>& samples);

// Writes metrics.csv, summary.json, best.ckpt, and a config echo under the
// resolved output directory; returns the directory used.
std::string persist_run(const RunConfig& cfg, const TrainResult& result);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t entries_checked = 0;
};

// Compares analytic gradients of the full objective (task loss plus every
// active regularizer) against central finite differences, entry by entry,
// on a batch of randomly drawn samples. The implicit placement is forced
// off so the objective is smooth and repeatable.
GradCheckReport gradient_check(const RunConfig& cfg, std::size_t batch, double h);

}  // namespace exdrop
