#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace exdrop {

struct MetricsRow {
  std::size_t epoch = 0;
  double task_loss = 0.0;
  double reg_q = 0.0, reg_k = 0.0, reg_v = 0.0, reg_av = 0.0, reg_ff = 0.0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  // Filled on the final row only; negative means not evaluated.
  double test_acc = -1.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

// Shortest decimal form that parses back to the identical double.
std::string format_full(double v);

inline constexpr const char* kMetricsHeader =
    "epoch,task_loss,reg_q,reg_k,reg_v,reg_av,reg_ff,train_loss,val_acc,seed";

// CSV with the fixed header above. test_acc and wall_seconds stay out of
// the file so reruns of the same config and seed are byte-identical.
void emit_metrics(const std::vector<MetricsRow>& rows, const std::string& path);
std::vector<MetricsRow> parse_metrics(const std::string& path);

// (x, y, series) triples covering the loss and accuracy curves.
void export_plotdata(const std::vector<MetricsRow>& rows, const std::string& path);

}  // namespace exdrop
