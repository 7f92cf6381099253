#include "exdrop/grid.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "exdrop/metrics.hpp"
#include "exdrop/trainer.hpp"

namespace exdrop {
namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
  return buf;
}

// The config one (component, lambda, lr, seed) unit actually trains with.
RunConfig cell_config(const RunConfig& base, const std::string& component,
                      double lambda, double lr, std::uint64_t seed) {
  RunConfig cfg = base;
  cfg.grid = GridConfig{};
  cfg.baseline = DropoutPlacement{};
  cfg.optim.lr = lr;
  cfg.seed = seed;
  cfg.reg.lambda_q.clear();
  cfg.reg.lambda_k.clear();
  cfg.reg.lambda_v.clear();
  cfg.reg.lambda_av.clear();
  cfg.reg.lambda_ff.clear();
  if (component == "q") cfg.reg.lambda_q = {lambda};
  else if (component == "k") cfg.reg.lambda_k = {lambda};
  else if (component == "v") cfg.reg.lambda_v = {lambda};
  else if (component == "av") cfg.reg.lambda_av = {lambda};
  else throw std::invalid_argument("grid: unknown component '" + component + "'");
  cfg.finalize();
  return cfg;
}

std::string cell_stem(const GridCellResult& cell, std::uint64_t seed) {
  return cell.component + "-lam" + fmt_g(cell.lambda) + "-lr" + fmt_g(cell.lr) +
         "-seed" + std::to_string(seed);
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.resize(width, ' ');
  return s;
}

// Rows are component x lr, columns are the lambda values; each cell holds
// mean +- std validation accuracy in percent. The selected cell gets a
// trailing asterisk.
std::string render_table(const GridResult& result, const RunConfig& base) {
  const auto& g = base.grid;
  constexpr std::size_t kColWidth = 18;
  std::ostringstream out;

  out << pad("component", 11) << pad("lr", 9);
  for (double lam : g.lambdas) out << pad("lambda=" + fmt_g(lam), kColWidth);
  out << "\n";

  // cells are laid out component-major, then lambda, then lr
  auto cell_index = [&](std::size_t comp_i, std::size_t lam_i, std::size_t lr_i) {
    return (comp_i * g.lambdas.size() + lam_i) * g.lrs.size() + lr_i;
  };

  for (std::size_t comp_i = 0; comp_i < g.components.size(); ++comp_i) {
    for (std::size_t lr_i = 0; lr_i < g.lrs.size(); ++lr_i) {
      out << pad(g.components[comp_i], 11) << pad(fmt_g(g.lrs[lr_i]), 9);
      for (std::size_t lam_i = 0; lam_i < g.lambdas.size(); ++lam_i) {
        const std::size_t idx = cell_index(comp_i, lam_i, lr_i);
        const auto& cell = result.cells[idx];
        std::string text;
        if (cell.usable()) {
          text = fmt_pct(cell.val_mean()) + " +- " + fmt_pct(cell.val_std());
          if (result.any_usable && idx == result.best_cell) text += " *";
        } else {
          text = "failed(" + std::to_string(cell.failures.size()) + ")";
        }
        out << pad(text, kColWidth);
      }
      out << "\n";
    }
  }

  if (result.any_usable) {
    const auto& best = result.cells[result.best_cell];
    out << "selected: component=" << best.component << " lambda=" << fmt_g(best.lambda)
        << " lr=" << fmt_g(best.lr) << "  val " << fmt_pct(best.val_mean()) << " +- "
        << fmt_pct(best.val_std()) << "  test " << fmt_pct(best.test_mean()) << " +- "
        << fmt_pct(best.test_std()) << "\n";
  } else {
    out << "selected: none (every cell failed)\n";
  }
  return out.str();
}

}  // namespace

double GridCellResult::val_mean() const { return mean_of(val_accs); }
double GridCellResult::val_std() const { return std_of(val_accs); }
double GridCellResult::test_mean() const { return mean_of(test_accs); }
double GridCellResult::test_std() const { return std_of(test_accs); }

std::string grid_results_csv(const GridResult& result) {
  std::ostringstream out;
  out << "component,lambda,lr,seeds_completed,seeds_failed,val_mean,val_std,test_mean,test_std\n";
  for (const auto& c : result.cells) {
    out << c.component << ',' << fmt_g(c.lambda) << ',' << fmt_g(c.lr) << ','
        << c.val_accs.size() << ',' << c.failures.size() << ','
        << format_full(c.val_mean()) << ',' << format_full(c.val_std()) << ','
        << format_full(c.test_mean()) << ',' << format_full(c.test_std()) << "\n";
  }
  return out.str();
}

GridResult grid_search(const RunConfig& base, bool persist) {
  const auto& g = base.grid;
  if (!g.enabled()) throw std::invalid_argument("grid_search: config has no grid block");
  g.validate();

  // One load shared by every cell: identical splits, only training varies.
  const Dataset data = load_dataset(base.data, base.seed);

  GridResult result;
  for (const auto& comp : g.components) {
    for (double lam : g.lambdas) {
      for (double lr : g.lrs) {
        GridCellResult cell;
        cell.component = comp;
        cell.lambda = lam;
        cell.lr = lr;
        result.cells.push_back(std::move(cell));
      }
    }
  }

  struct Unit {
    std::size_t cell;
    std::uint64_t seed;
  };
  std::vector<Unit> units;
  for (std::size_t ci = 0; ci < result.cells.size(); ++ci) {
    for (std::uint64_t seed : g.seeds) units.push_back({ci, seed});
  }

  // Slot per unit, filled by the workers; compacted in seed order after
  // the join so the output is independent of scheduling.
  struct UnitOutcome {
    bool ok = false;
    double val = 0.0, test = 0.0;
    std::string error;
    std::vector<MetricsRow> rows;
  };
  std::vector<UnitOutcome> outcomes(units.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t u = next.fetch_add(1);
      if (u >= units.size()) return;
      const auto& unit = units[u];
      const auto& cell = result.cells[unit.cell];
      try {
        RunConfig cfg = cell_config(base, cell.component, cell.lambda, cell.lr, unit.seed);
        TrainResult tr = train_on(cfg, data);
        outcomes[u].ok = true;
        outcomes[u].val = tr.best_val_acc;
        outcomes[u].test = tr.test_acc;
        outcomes[u].rows = std::move(tr.rows);
      } catch (const std::exception& e) {
        outcomes[u].error = e.what();
      }
    }
  };

  const std::size_t threads =
      std::min<std::size_t>(units.size(),
                            std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::string cells_dir;
  if (persist) {
    cells_dir = resolve_out_dir(base.out_dir) + "/cells";
    std::filesystem::create_directories(cells_dir);
  }

  for (std::size_t u = 0; u < units.size(); ++u) {
    auto& cell = result.cells[units[u].cell];
    auto& got = outcomes[u];
    if (got.ok) {
      cell.seeds_run.push_back(units[u].seed);
      cell.val_accs.push_back(got.val);
      cell.test_accs.push_back(got.test);
      if (persist) {
        emit_metrics(got.rows, cells_dir + "/" + cell_stem(cell, units[u].seed) + ".csv");
      }
    } else {
      cell.failures.push_back("seed " + std::to_string(units[u].seed) + ": " + got.error);
    }
  }

  for (std::size_t ci = 0; ci < result.cells.size(); ++ci) {
    const auto& c = result.cells[ci];
    if (!c.usable()) continue;
    if (!result.any_usable || c.val_mean() > result.cells[result.best_cell].val_mean()) {
      result.best_cell = ci;
      result.any_usable = true;
    }
  }

  result.table_text = render_table(result, base);

  if (persist) {
    const std::string dir = resolve_out_dir(base.out_dir);
    std::ofstream csv(dir + "/grid_results.csv");
    if (!csv) throw std::runtime_error("grid_search: cannot write grid_results.csv");
    csv << grid_results_csv(result);
    std::ofstream table(dir + "/table.txt");
    if (!table) throw std::runtime_error("grid_search: cannot write table.txt");
    table << result.table_text;
  }
  return result;
}

}  // namespace exdrop
