#include "exdrop/metrics.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace exdrop {

std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

// std::stod rejects subnormals as out of range; from_chars round-trips the
// whole double range.
double parse_cell(const std::string& cell, const std::string& path, std::size_t lineno) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec == std::errc::result_out_of_range) return v;  // beyond double range: clamp
  if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
    throw std::runtime_error("parse_metrics: " + path + ":" + std::to_string(lineno) +
                             ": bad number '" + cell + "'");
  }
  return v;
}

}  // namespace

void emit_metrics(const std::vector<MetricsRow>& rows, const std::string& path) {
  if (rows.empty()) throw std::invalid_argument("emit_metrics: no rows");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_metrics: cannot write '" + path + "'");
  out << kMetricsHeader << "\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << format_full(r.task_loss) << ',' << format_full(r.reg_q)
        << ',' << format_full(r.reg_k) << ',' << format_full(r.reg_v) << ','
        << format_full(r.reg_av) << ',' << format_full(r.reg_ff) << ','
        << format_full(r.train_loss) << ',' << format_full(r.val_acc) << ',' << r.seed
        << "\n";
  }
  if (!out) throw std::runtime_error("emit_metrics: write to '" + path + "' failed");
}

std::vector<MetricsRow> parse_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parse_metrics: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw std::runtime_error("parse_metrics: '" + path + "' lacks the metrics header");
  }
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string cell;
    std::vector<std::string> parts;
    while (std::getline(cells, cell, ',')) parts.push_back(cell);
    if (parts.size() != 10) {
      throw std::runtime_error("parse_metrics: " + path + ":" + std::to_string(lineno) +
                               ": expected 10 cells, got " + std::to_string(parts.size()));
    }
    MetricsRow r;
    r.epoch = std::stoul(parts[0]);
    r.task_loss = parse_cell(parts[1], path, lineno);
    r.reg_q = parse_cell(parts[2], path, lineno);
    r.reg_k = parse_cell(parts[3], path, lineno);
    r.reg_v = parse_cell(parts[4], path, lineno);
    r.reg_av = parse_cell(parts[5], path, lineno);
    r.reg_ff = parse_cell(parts[6], path, lineno);
    r.train_loss = parse_cell(parts[7], path, lineno);
    r.val_acc = parse_cell(parts[8], path, lineno);
    r.seed = std::stoull(parts[9]);
    rows.push_back(r);
  }
  return rows;
}

void export_plotdata(const std::vector<MetricsRow>& rows, const std::string& path) {
  if (rows.empty()) throw std::invalid_argument("export_plotdata: no rows");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_plotdata: cannot write '" + path + "'");
  out << "x,y,series\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << format_full(r.train_loss) << ",train_loss\n";
  }
  for (const auto& r : rows) {
    out << r.epoch << ',' << format_full(r.task_loss) << ",task_loss\n";
  }
  for (const auto& r : rows) {
    out << r.epoch << ','
        << format_full(r.reg_q + r.reg_k + r.reg_v + r.reg_av + r.reg_ff)
        << ",reg_total\n";
  }
  for (const auto& r : rows) {
    out << r.epoch << ',' << format_full(r.val_acc) << ",val_acc\n";
  }
  if (!out) throw std::runtime_error("export_plotdata: write to '" + path + "' failed");
}

}  // namespace exdrop
