#include "exdrop/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "exdrop/checkpoint.hpp"
#include "exdrop/optimizer.hpp"
#include "exdrop/regularizers.hpp"
#include "exdrop/rng.hpp"

namespace exdrop {
namespace {

constexpr double kBlowupCeiling = 1e12;

void guard(const char* component, double v) {
  if (!std::isfinite(v) || std::abs(v) > kBlowupCeiling) {
    throw DivergenceError(component, v);
  }
}

std::size_t argmax_row(const Matrix& logits) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.cols(); ++j) {
    if (logits(0, j) > logits(0, best)) best = j;
  }
  return best;
}

// Fisher-Yates with our own rng so the visit order is seed-deterministic.
void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.next_below(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace

DivergenceError::DivergenceError(std::string component, double magnitude)
    : std::runtime_error("training diverged: " + component + " reached " +
                         std::to_string(magnitude)),
      component_(std::move(component)),
      magnitude_(magnitude) {}

double evaluate(const EncoderParams& params, const EncoderConfig& model,
                const std::vector<Sample>& samples) {
  if (samples.empty()) return 0.0;
  const DropoutPlacement off;
  std::size_t hits = 0;
  for (const auto& s : samples) {
    auto fwd = encoder_forward<Matrix>(s.tokens, params, model, off, false, nullptr);
    if (argmax_row(fwd.logits) == static_cast<std::size_t>(s.label)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

TrainResult train(const RunConfig& cfg) {
  return train_on(cfg, load_dataset(cfg.data, cfg.seed));
}

TrainResult train_on(const RunConfig& cfg, const Dataset& data) {
  const auto t0 = std::chrono::steady_clock::now();
  const EncoderConfig model = cfg.encoder_config(data);

  // Independent streams: weight init, dropout masks, and batch order stay
  // decoupled, so turning masks on or off does not reshuffle the data.
  Rng root(cfg.seed);
  Rng init_rng = root.split(1);
  Rng mask_rng = root.split(2);
  Rng shuffle_rng = root.split(3);

  EncoderParams params = init_encoder(model, init_rng);
  auto named = named_params(params);
  std::vector<Matrix*> slots;
  slots.reserve(named.size());
  for (auto& [name, m] : named) slots.push_back(m);
  Optimizer opt(cfg.optim, slots);

  const std::size_t n = data.train.size();
  if (n == 0) throw std::invalid_argument("train_on: empty training split");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.model = model;
  result.best_val_acc = -1.0;

  for (std::size_t epoch = 1; epoch <= cfg.optim.epochs; ++epoch) {
    shuffle_indices(order, shuffle_rng);

    double task_sum = 0.0, obj_sum = 0.0;
    RegBreakdown reg_sum;

    for (std::size_t start = 0; start < n; start += cfg.optim.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.optim.batch_size);
      const double bsz = static_cast<double>(stop - start);

      EncoderVars vars = lift_params(params);
      std::vector<ForwardResultT<Var>> fwd;
      std::vector<Var> logit_rows;
      std::vector<int> labels;
      fwd.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        const Sample& s = data.train[order[i]];
        fwd.push_back(encoder_forward<Var>(leaf(s.tokens), vars, model,
                                           cfg.baseline, true, &mask_rng));
        logit_rows.push_back(fwd.back().logits);
        labels.push_back(s.label);
      }

      Var task = softmax_cross_entropy(concat_rows(logit_rows), labels);
      RegBreakdown bd;
      Var objective = aggregate(task, fwd, vars, cfg.reg, &bd);

      const double task_v = value_of(task);
      guard("task_loss", task_v);
      guard("reg_q", bd.q);
      guard("reg_k", bd.k);
      guard("reg_v", bd.v);
      guard("reg_av", bd.av);
      guard("reg_ff", bd.ff);
      const double obj_v = value_of(objective);
      guard("train_loss", obj_v);

      backward(objective);
      std::vector<const Matrix*> grads;
      grads.reserve(slots.size());
      for (auto& [name, v] : named_vars(vars)) grads.push_back(&v.grad());
      opt.step(grads);

      task_sum += task_v * bsz;
      obj_sum += obj_v * bsz;
      reg_sum.q += bd.q * bsz;
      reg_sum.k += bd.k * bsz;
      reg_sum.v += bd.v * bsz;
      reg_sum.av += bd.av * bsz;
      reg_sum.ff += bd.ff * bsz;
    }

    MetricsRow row;
    row.epoch = epoch;
    row.seed = cfg.seed;
    row.task_loss = task_sum / static_cast<double>(n);
    row.reg_q = reg_sum.q / static_cast<double>(n);
    row.reg_k = reg_sum.k / static_cast<double>(n);
    row.reg_v = reg_sum.v / static_cast<double>(n);
    row.reg_av = reg_sum.av / static_cast<double>(n);
    row.reg_ff = reg_sum.ff / static_cast<double>(n);
    row.train_loss = obj_sum / static_cast<double>(n);

    // The logged objective must equal task + components; the breakdown is
    // accumulated separately from the graph value, so this is a live check
    // of the aggregation plumbing rather than a tautology.
    const double recomposed = row.task_loss + row.reg_q + row.reg_k + row.reg_v +
                              row.reg_av + row.reg_ff;
    if (std::abs(row.train_loss - recomposed) > 1e-9) {
      throw std::logic_error("train_on: loss decomposition off by " +
                             std::to_string(row.train_loss - recomposed) +
                             " at epoch " + std::to_string(epoch));
    }

    row.val_acc = evaluate(params, model, data.val);
    result.rows.push_back(row);

    if (row.val_acc > result.best_val_acc) {
      result.best_val_acc = row.val_acc;
      result.best_epoch = epoch;
      result.best_params = params;
    }
  }

  result.test_acc = evaluate(result.best_params, model, data.test);
  if (!result.rows.empty()) result.rows.back().test_acc = result.test_acc;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!result.rows.empty()) result.rows.back().wall_seconds = result.wall_seconds;
  return result;
}

std::string persist_run(const RunConfig& cfg, const TrainResult& result) {
  const std::string dir = resolve_out_dir(cfg.out_dir);
  std::filesystem::create_directories(dir);

  emit_metrics(result.rows, dir + "/metrics.csv");
  save_checkpoint(result.best_params, dir + "/best.ckpt");

  {
    std::ofstream echo(dir + "/config_echo.ini");
    if (!echo) throw std::runtime_error("persist_run: cannot write config echo");
    echo << dump_config(cfg);
  }

  nlohmann::json summary;
  summary["seed"] = cfg.seed;
  summary["epochs"] = cfg.optim.epochs;
  summary["best_epoch"] = result.best_epoch;
  summary["best_val_acc"] = result.best_val_acc;
  summary["test_acc"] = result.test_acc;
  summary["wall_seconds"] = result.wall_seconds;
  std::ofstream out(dir + "/summary.json");
  if (!out) throw std::runtime_error("persist_run: cannot write summary.json");
  out << summary.dump(2) << "\n";
  return dir;
}

GradCheckReport gradient_check(const RunConfig& cfg, std::size_t batch, double h) {
  Dataset data = load_dataset(cfg.data, cfg.seed);
  const EncoderConfig model = cfg.encoder_config(data);
  if (batch == 0 || batch > data.train.size()) {
    throw std::invalid_argument("gradient_check: batch out of range");
  }

  Rng init_rng = Rng(cfg.seed).split(1);
  EncoderParams params = init_encoder(model, init_rng);

  std::vector<Matrix> tokens;
  std::vector<int> labels;
  for (std::size_t i = 0; i < batch; ++i) {
    tokens.push_back(data.train[i].tokens);
    labels.push_back(data.train[i].label);
  }

  // Masks would make the objective a step function of the weights, so the
  // check always runs the deterministic path.
  const DropoutPlacement off;

  auto objective_value = [&](const EncoderParams& w) {
    EncoderVars vars = lift_params(w);
    std::vector<ForwardResultT<Var>> fwd;
    std::vector<Var> logit_rows;
    for (const auto& t : tokens) {
      fwd.push_back(encoder_forward<Var>(leaf(t), vars, model, off, false, nullptr));
      logit_rows.push_back(fwd.back().logits);
    }
    Var task = softmax_cross_entropy(concat_rows(logit_rows), labels);
    return aggregate(task, fwd, vars, cfg.reg, nullptr);
  };

  // Analytic pass.
  EncoderVars vars = lift_params(params);
  std::vector<ForwardResultT<Var>> fwd;
  std::vector<Var> logit_rows;
  for (const auto& t : tokens) {
    fwd.push_back(encoder_forward<Var>(leaf(t), vars, model, off, false, nullptr));
    logit_rows.push_back(fwd.back().logits);
  }
  Var task = softmax_cross_entropy(concat_rows(logit_rows), labels);
  Var objective = aggregate(task, fwd, vars, cfg.reg, nullptr);
  backward(objective);

  GradCheckReport report;
  auto named_p = named_params(params);
  auto named_v = named_vars(vars);
  for (std::size_t pi = 0; pi < named_p.size(); ++pi) {
    Matrix* target = named_p[pi].second;
    const Matrix& analytic = named_v[pi].second.grad();

    Matrix numeric = finite_diff_grad(
        [&](const Matrix& candidate) {
          Matrix saved = *target;
          *target = candidate;
          const double v = value_of(objective_value(params));
          *target = saved;
          return v;
        },
        *target, h);

    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double a = analytic.data()[i];
      const double f = numeric.data()[i];
      const double rel =
          std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-3});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = named_p[pi].first;
      }
      ++report.entries_checked;
    }
  }
  return report;
}

}  // namespace exdrop
