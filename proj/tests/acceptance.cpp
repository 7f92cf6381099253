// Acceptance harness: verifies the ten shipping criteria end to end and
// prints one [PASS]/[FAIL] line each. Exit code 0 only when all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "exdrop/config.hpp"
#include "exdrop/dataset.hpp"
#include "exdrop/encoder.hpp"
#include "exdrop/grid.hpp"
#include "exdrop/matrix.hpp"
#include "exdrop/metrics.hpp"
#include "exdrop/oracle.hpp"
#include "exdrop/regularizers.hpp"
#include "exdrop/rng.hpp"
#include "exdrop/trainer.hpp"

using namespace exdrop;

namespace {

int g_failures = 0;

void report(int criterion, bool ok, const std::string& what) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion, what.c_str());
  if (!ok) ++g_failures;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// ---- independent index-sum oracles (raw loops only) ----

// B_ij = p^2 sum_r X_ri X_rj
Matrix sum_B(const Matrix& x, double p) {
  Matrix b(x.cols(), x.cols());
  for (std::size_t i = 0; i < x.cols(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < x.rows(); ++r) s += x(r, i) * x(r, j);
      b(i, j) = p * p * s;
    }
  }
  return b;
}

// P_ab = sum_m L(m,a) R(m,b)
Matrix sum_gram(const Matrix& l, const Matrix& r) {
  Matrix p(l.cols(), r.cols());
  for (std::size_t a = 0; a < l.cols(); ++a) {
    for (std::size_t b = 0; b < r.cols(); ++b) {
      double s = 0.0;
      for (std::size_t m = 0; m < l.rows(); ++m) s += l(m, a) * r(m, b);
      p(a, b) = s;
    }
  }
  return p;
}

// half the double sum of B_ij * Lam_ji
double half_sum(const Matrix& b, const Matrix& lam) {
  double s = 0.0;
  for (std::size_t i = 0; i < b.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) s += b(i, j) * lam(j, i);
  }
  return 0.5 * s;
}

double sum_J_query(const Matrix& x, const Matrix& wq, const Matrix& wk, double p) {
  const std::size_t d = x.cols();
  const Matrix proj = sum_gram(wq, wk);  // d x d
  const Matrix c = sum_gram(x, x);
  Matrix lam(d, d);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      double s = 0.0;
      for (std::size_t u = 0; u < d; ++u) {
        for (std::size_t v = 0; v < d; ++v) s += proj(a, u) * c(u, v) * proj(b, v);
      }
      lam(a, b) = s;
    }
  }
  return half_sum(sum_B(x, p), lam);
}

double sum_J_key(const Matrix& x, const Matrix& wq, const Matrix& wk, double p) {
  return sum_J_query(x, wk, wq, p);  // the key form swaps the projections
}

double sum_J_value(const Matrix& x, const Matrix& w, double p) {
  return half_sum(sum_B(x, p), sum_gram(w, w));
}

double sum_J_av(const Matrix& x, const Matrix& a, const Matrix& wv, double p) {
  const std::size_t d = x.cols();
  const std::size_t n = x.rows();
  Matrix psi(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t t = 0; t < n; ++t) {
          double y = 0.0;  // (A^T A)_rt
          for (std::size_t u = 0; u < n; ++u) y += a(u, r) * a(u, t);
          s += x(r, i) * y * x(t, j);
        }
      }
      psi(i, j) = p * p * s;
    }
  }
  return half_sum(psi, sum_gram(wv, wv));
}

// ---- criteria ----

void criterion_1() {
  Timer timer;
  double worst = 0.0;
  Rng rng(9001);
  const double ps[3] = {0.1, 0.2, 0.5};
  for (int t = 0; t < 20; ++t) {
    const double p = ps[t % 3];
    const Matrix x = random_matrix(4, 3, rng, 0.5);
    const Matrix wq = random_matrix(3, 3, rng, 0.5);
    const Matrix wk = random_matrix(3, 3, rng, 0.5);
    const Matrix wv = random_matrix(3, 3, rng, 0.5);
    const Matrix wff = random_matrix(5, 3, rng, 0.5);
    const Matrix a = row_softmax(random_matrix(4, 4, rng));

    const double gaps[5] = {
        std::abs(reg_query(x, wq, wk, p) - sum_J_query(x, wq, wk, p)),
        std::abs(reg_key(x, wq, wk, p) - sum_J_key(x, wq, wk, p)),
        std::abs(reg_value_token(x, wv, p) - sum_J_value(x, wv, p)),
        std::abs(reg_value_attention(x, a, wv, p) - sum_J_av(x, a, wv, p)),
        std::abs(reg_ff(x, wff, p) - sum_J_value(x, wff, p)),
    };
    for (double g : gaps) worst = std::max(worst, g);
  }
  const double secs = timer.seconds();
  report(1, worst <= 1e-10 && secs < 1.0,
         "closed forms vs index-sum oracle on 20 instances, max gap " + fmt(worst) +
             " (tol 1e-10), " + fmt(secs) + " s (limit 1)");
}

void criterion_2() {
  Timer timer;
  const Matrix x{{1.0, 2.0}, {3.0, 4.0}};
  const double p = 0.2;
  const std::size_t n_t = 200000;

  // exact expectation built by hand: p^2 off the diagonal, p on it
  Matrix target_m(2, 2);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double c = 0.0;
      for (std::size_t r = 0; r < 2; ++r) c += x(r, i) * x(r, j);
      target_m(i, j) = (i == j ? p : p * p) * c;
    }
  }
  MomentMatrix target;
  target.m = target_m;
  target.provenance = MomentMatrix::Provenance::closed_form_exact;

  int within = 0;
  for (std::uint64_t seed = 101; seed <= 105; ++seed) {
    Rng rng(seed);
    const ConvergenceReport r = convergence_report(empirical_B(x, p, n_t, rng), target, n_t);
    std::printf("  exact form, seed %llu: max_z = %.3f\n",
                static_cast<unsigned long long>(seed), r.max_z);
    if (r.max_z < 4.0) ++within;
  }

  // against the paper form the diagonal is biased, so its z grows with N_T
  MomentMatrix paper;
  paper.m = sum_B(x, p);
  paper.provenance = MomentMatrix::Provenance::closed_form_paper;
  std::vector<double> diag_z;
  for (std::size_t nt : {n_t / 16, n_t / 4, n_t}) {
    Rng rng(404);
    const ConvergenceReport r = convergence_report(empirical_B(x, p, nt, rng), paper, nt);
    double worst = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      const double se = r.std_error(i, i);
      if (se > 0.0) {
        worst = std::max(worst, std::abs(r.estimate(i, i) - r.target(i, i)) / se);
      }
    }
    diag_z.push_back(worst);
    std::printf("  paper-form diagonal, N_T = %zu: z = %.2f\n", nt, worst);
  }
  const bool grows = diag_z[0] < diag_z[1] && diag_z[1] < diag_z[2];

  const double secs = timer.seconds();
  report(2, within >= 4 && grows && secs < 10.0,
         "empirical moment max_z < 4 on " + std::to_string(within) +
             "/5 seeds at N_T = 2e5; paper-form diagonal z grows " + fmt(diag_z[0]) +
             " -> " + fmt(diag_z[1]) + " -> " + fmt(diag_z[2]) + "; " + fmt(secs) +
             " s (limit 10)");
}

void criterion_3() {
  Rng rng(9003);
  const Matrix x = random_matrix(4, 3, rng, 0.5);
  RegInputs w;
  w.w_q = random_matrix(3, 3, rng, 0.5);
  w.w_k = random_matrix(3, 3, rng, 0.5);
  w.w_v = random_matrix(3, 3, rng, 0.5);
  w.w_ff = random_matrix(5, 3, rng, 0.5);
  w.attn = row_softmax(random_matrix(4, 4, rng));

  const MaskBatch batch = sample_masks(4, 3, 0.2, 300, 2024);
  const Matrix b_emp = empirical_B_from(x, batch).m;
  const Matrix psi_emp = empirical_psi_from(x, w.attn, batch).m;
  const Matrix c = sum_gram(x, x);

  const Matrix proj = sum_gram(w.w_q, w.w_k);
  Matrix lam_q(3, 3), lam_k(3, 3);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      double sq = 0.0, sk = 0.0;
      for (std::size_t u = 0; u < 3; ++u) {
        for (std::size_t v = 0; v < 3; ++v) {
          sq += proj(a, u) * c(u, v) * proj(b, v);
          sk += proj(u, a) * c(u, v) * proj(v, b);
        }
      }
      lam_q(a, b) = sq;
      lam_k(a, b) = sk;
    }
  }

  const double gaps[5] = {
      std::abs(empirical_J_from(RegKind::q, x, w, batch) - half_sum(b_emp, lam_q)),
      std::abs(empirical_J_from(RegKind::k, x, w, batch) - half_sum(b_emp, lam_k)),
      std::abs(empirical_J_from(RegKind::v, x, w, batch) -
               half_sum(b_emp, sum_gram(w.w_v, w.w_v))),
      std::abs(empirical_J_from(RegKind::ff, x, w, batch) -
               half_sum(b_emp, sum_gram(w.w_ff, w.w_ff))),
      std::abs(empirical_J_from(RegKind::av, x, w, batch) -
               half_sum(psi_emp, sum_gram(w.w_v, w.w_v))),
  };
  double worst = 0.0;
  for (double g : gaps) worst = std::max(worst, g);
  report(3, worst <= 1e-10,
         "per-mask-batch identity for q, k, v, ff (and av), max gap " + fmt(worst) +
             " (tol 1e-10)");
}

void criterion_4() {
  Timer timer;
  RunConfig cfg;
  cfg.model.layers = 1;
  cfg.model.dim = 8;
  cfg.model.ff_dim = 16;
  cfg.model.heads = 2;
  cfg.data.tokens = 5;  // sequence length 6 with the CLS row
  cfg.data.token_dim = 6;
  cfg.data.classes = 2;
  cfg.data.train_samples = 40;
  cfg.data.test_samples = 10;
  cfg.reg.p = 0.2;
  cfg.reg.lambda_q = {0.01};
  cfg.reg.lambda_k = {0.01};
  cfg.reg.lambda_v = {0.01};
  cfg.reg.lambda_av = {0.01};
  cfg.reg.lambda_ff = {0.01};
  cfg.seed = 7;
  cfg.finalize();

  const GradCheckReport r = gradient_check(cfg, 3, 1e-5);
  const double secs = timer.seconds();
  report(4, r.max_rel_err <= 1e-4 && secs < 30.0,
         "analytic vs central finite-difference gradients over " +
             std::to_string(r.entries_checked) + " entries, max rel err " +
             fmt(r.max_rel_err) + " (tol 1e-4, worst " + r.worst_param + "), " +
             fmt(secs) + " s (limit 30)");
}

void criterion_5() {
  Rng rng(9005);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const double p = 0.05 + 0.02 * t;
    const Matrix x = random_matrix(6, 4, rng, 0.7);
    const Matrix w = random_matrix(5, 4, rng, 0.7);
    const Decomposition d = decompose(x, w, p);

    worst = std::max(worst, std::abs(d.r - (d.r_diag + d.r_cross)));

    // independent per-column oracle for the prior-work form
    double arora = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      double sigma2 = 0.0;
      for (std::size_t r = 0; r < 6; ++r) sigma2 += x(r, j) * x(r, j);
      sigma2 /= 6.0;
      double col = 0.0;
      for (std::size_t k = 0; k < 5; ++k) col += w(k, j) * w(k, j);
      arora += sigma2 * col;
    }
    arora *= p / (1.0 - p);
    worst = std::max(worst, std::abs(d.r_diag - (p * (1.0 - p) / 2.0) * arora));
  }
  report(5, worst <= 1e-10,
         "R == R_diag + R_cross and R_diag == (p(1-p)/2) * per-feature form on 20 "
         "instances, max gap " + fmt(worst) + " (tol 1e-10)");
}

void criterion_6() {
  Rng rng(9006);
  const Matrix x = random_matrix(5, 4, rng);
  const Matrix wq = random_matrix(4, 4, rng);
  const Matrix wk = random_matrix(4, 4, rng);
  const Matrix wv = random_matrix(4, 4, rng);
  const Matrix wff = random_matrix(7, 4, rng);
  const Matrix a = row_softmax(random_matrix(5, 5, rng));

  auto all_five = [&](double p) {
    return std::vector<double>{reg_query(x, wq, wk, p), reg_key(x, wq, wk, p),
                               reg_value_token(x, wv, p), reg_value_attention(x, a, wv, p),
                               reg_ff(x, wff, p)};
  };
  const auto low = all_five(0.2);
  const auto high = all_five(0.4);
  const auto zero = all_five(0.0);

  double worst_ratio = 0.0;
  bool zero_exact = true;
  for (std::size_t i = 0; i < 5; ++i) {
    worst_ratio = std::max(worst_ratio, std::abs(high[i] / low[i] - 4.0));
    zero_exact = zero_exact && zero[i] == 0.0;
  }
  report(6, worst_ratio <= 1e-9 && zero_exact,
         "J(0.4)/J(0.2) == 4 for all five regularizers (max dev " + fmt(worst_ratio) +
             ", tol 1e-9); J(0) == 0 exactly");
}

void criterion_7() {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.dim = 8;
  cfg.ff_dim = 12;
  cfg.heads = 2;
  cfg.tokens = 7;
  cfg.token_dim = 5;
  cfg.classes = 2;
  Rng init_rng(9007);
  const EncoderParams params = init_encoder(cfg, init_rng);
  Rng data_rng(9008);
  const Matrix tokens = random_matrix(cfg.tokens, cfg.token_dim, data_rng);

  const DropoutMode modes[5] = {DropoutMode::none, DropoutMode::input_tokens,
                                DropoutMode::attention_weights, DropoutMode::scores_prekey,
                                DropoutMode::ff_hidden};
  double worst = 0.0;
  for (const DropoutMode mode : modes) {
    DropoutPlacement placement;
    placement.mode = mode;
    placement.rate = mode == DropoutMode::none ? 0.0 : 0.3;
    Rng mask_rng(9009);
    const auto fwd = encoder_forward<Matrix>(tokens, params, cfg, placement,
                                             mode != DropoutMode::none, &mask_rng);
    for (const auto& layer : fwd.layers) {
      for (const Matrix& a : layer.attn) {
        const std::size_t n = a.rows();
        // D = diag(A * 1) must be the identity
        for (std::size_t i = 0; i < n; ++i) {
          double row_sum = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            row_sum += a(i, j);
            if (a(i, j) < 0.0) worst = std::max(worst, -a(i, j));
          }
          worst = std::max(worst, std::abs(row_sum - 1.0));
        }
      }
    }
  }
  report(7, worst <= 1e-12,
         "attention rows sum to 1 and diag(A*1) == I across all five placement modes, "
         "max deviation " + fmt(worst) + " (tol 1e-12)");
}

RunConfig desk_scale_base() {
  RunConfig cfg;
  cfg.model.layers = 2;
  cfg.model.dim = 32;
  cfg.model.ff_dim = 64;
  cfg.model.heads = 4;
  cfg.data.tokens = 4;
  cfg.data.token_dim = 8;
  cfg.data.classes = 2;
  cfg.data.train_samples = 2000;
  cfg.data.test_samples = 500;
  cfg.optim.kind = OptKind::adam;
  cfg.optim.lr = 0.005;
  cfg.optim.epochs = 30;
  cfg.optim.batch_size = 32;
  cfg.reg.p = 0.2;
  return cfg;
}

void criterion_8() {
  const std::uint64_t seeds[3] = {1, 2, 3};
  bool plain_ok = true, decomposition_ok = true, wall_ok = true;
  double explicit_mean = 0.0, implicit_mean = 0.0;
  double worst_wall = 0.0;

  auto run_arm = [&](const char* name, RunConfig cfg, std::uint64_t seed) {
    cfg.seed = seed;
    cfg.finalize();
    const TrainResult r = train(cfg);
    for (const auto& row : r.rows) {
      const double recomposed =
          row.task_loss + row.reg_q + row.reg_k + row.reg_v + row.reg_av + row.reg_ff;
      if (std::abs(row.train_loss - recomposed) > 1e-9) decomposition_ok = false;
    }
    worst_wall = std::max(worst_wall, r.wall_seconds);
    if (r.wall_seconds >= 300.0) wall_ok = false;
    std::printf("  %s arm, seed %llu: test acc %.4f (%.1f s)\n", name,
                static_cast<unsigned long long>(seed), r.test_acc, r.wall_seconds);
    return r.test_acc;
  };

  for (const std::uint64_t seed : seeds) {
    RunConfig plain = desk_scale_base();
    if (run_arm("plain", plain, seed) <= 0.90) plain_ok = false;

    RunConfig exp = desk_scale_base();
    exp.reg.lambda_v = {0.001};
    exp.reg.lambda_ff = {0.001};
    explicit_mean += run_arm("explicit v+ff", exp, seed) / 3.0;

    RunConfig imp = desk_scale_base();
    imp.baseline.mode = DropoutMode::ff_hidden;
    imp.baseline.rate = 0.2;
    implicit_mean += run_arm("implicit ff", imp, seed) / 3.0;
  }

  const double gap = std::abs(explicit_mean - implicit_mean);
  report(8,
         plain_ok && decomposition_ok && wall_ok && gap <= 0.02,
         "plain runs all > 90% test acc; explicit mean " + fmt(explicit_mean) +
             " vs implicit mean " + fmt(implicit_mean) + " (gap " + fmt(gap) +
             ", limit 0.02); loss decomposition held every epoch; slowest seed " +
             fmt(worst_wall) + " s (limit 300)");
}

void criterion_9() {
  RunConfig base;
  base.model.layers = 1;
  base.model.dim = 8;
  base.model.ff_dim = 12;
  base.model.heads = 2;
  base.data.tokens = 4;
  base.data.token_dim = 6;
  base.data.classes = 2;
  base.data.train_samples = 120;
  base.data.test_samples = 40;
  base.optim.kind = OptKind::adam;
  base.optim.epochs = 4;
  base.optim.batch_size = 16;
  base.reg.p = 0.2;
  base.grid.lambdas = {0.001, 0.005, 0.0001, 0.0005};
  base.grid.lrs = {0.001, 0.005, 0.0001, 0.0005};
  base.grid.components = {"k", "q", "v", "av"};
  base.grid.seeds = {1, 2};
  base.seed = 77;
  base.finalize();

  const GridResult g = grid_search(base, false);

  bool all_usable = g.cells.size() == 64;
  for (const auto& cell : g.cells) {
    if (!cell.usable() || cell.val_accs.size() != 2) all_usable = false;
  }
  std::size_t argmax = 0;
  for (std::size_t i = 1; i < g.cells.size(); ++i) {
    if (g.cells[i].val_mean() > g.cells[argmax].val_mean()) argmax = i;
  }
  const bool table_ok = g.table_text.find("lambda=0.005") != std::string::npos &&
                        g.table_text.find("+-") != std::string::npos &&
                        g.table_text.find("selected: component=") != std::string::npos;

  std::printf("%s", g.table_text.c_str());
  report(9,
         all_usable && g.any_usable && g.best_cell == argmax && table_ok,
         "grid sweep covers 4 lambdas x 4 lrs x {k,q,v,av} = " +
             std::to_string(g.cells.size()) +
             " cells, every cell completed per seed, mean +- std table emitted, "
             "argmax-validation cell selected");
}

void criterion_10(const std::string& cli) {
  if (cli.empty()) {
    report(10, false, "CLI path missing (pass --cli=<path to the exdrop binary>)");
    return;
  }

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "exdrop_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const std::string config =
      "[model]\nlayers = 1\ndim = 8\nff_dim = 12\nheads = 2\n"
      "[reg]\np = 0.2\nlambda_v = 0.01\n"
      "[optimizer]\nkind = adam\nlr = 0.005\nepochs = 3\nbatch_size = 8\n"
      "[dataset]\nkind = synthetic_seq\ntokens = 3\ntoken_dim = 4\nclasses = 2\n"
      "train_samples = 60\ntest_samples = 20\n"
      "[run]\nseed = 5\nout_dir = out\n";
  const std::string cfg_path = (dir / "run.ini").string();
  std::ofstream(cfg_path) << config;

  auto invoke = [&](const std::string& root) {
    const std::string cmd = "EXDROP_OUTPUT_ROOT='" + root + "' '" + cli + "' train '" +
                            cfg_path + "' > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  const int rc1 = invoke((dir / "a").string());
  const int rc2 = invoke((dir / "b").string());

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  const std::string csv_a = slurp(dir / "a" / "out" / "metrics.csv");
  const std::string csv_b = slurp(dir / "b" / "out" / "metrics.csv");

  const bool ok = rc1 == 0 && rc2 == 0 && !csv_a.empty() && csv_a == csv_b;
  report(10, ok,
         "two CLI train invocations with the same config and seed wrote byte-identical "
         "metrics CSVs (" + std::to_string(csv_a.size()) + " bytes)");
  fs::remove_all(dir);
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--cli=", 0) == 0) cli = arg.substr(6);
  }

  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10(cli);

  if (g_failures == 0) {
    std::printf("all 10 acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d acceptance criteria FAILED\n", g_failures);
  return 1;
}
