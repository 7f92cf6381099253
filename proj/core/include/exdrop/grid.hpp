#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "exdrop/config.hpp"

namespace exdrop {

// One (component, lambda, lr) cell, aggregated over the seed list.
struct GridCellResult {
  std::string component;
  double lambda = 0.0;
  double lr = 0.0;
  std::vector<std::uint64_t> seeds_run;   // seeds that completed
  std::vector<double> val_accs;           // aligned with seeds_run
  std::vector<double> test_accs;
  std::vector<std::string> failures;      // one message per failed seed

  bool usable() const { return !val_accs.empty(); }
  double val_mean() const;
  double val_std() const;
  double test_mean() const;
  double test_std() const;
};

struct GridResult {
  std::vector<GridCellResult> cells;  // components x lambdas x lrs order
  std::size_t best_cell = 0;          // index into cells; argmax mean val acc
  bool any_usable = false;
  std::string table_text;             // rows component x lr, columns lambda
};

// Trains every cell of base.grid on one shared dataset load, so all cells
// see identical splits and only the training stream varies. Cells run on a
// small thread pool; a cell's failure is recorded and the sweep continues.
// Selection looks at validation accuracy only. When persist is on, each
// cell's per-seed metrics plus grid_results.csv and table.txt land under
// the resolved output directory.
GridResult grid_search(const RunConfig& base, bool persist = true);

// The per-cell summary CSV used by grid_search when persisting.
std::string grid_results_csv(const GridResult& result);

}  // namespace exdrop
