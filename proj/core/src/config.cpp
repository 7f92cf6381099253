#include "exdrop/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace exdrop {

OptKind opt_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptKind::sgd;
  if (s == "adam") return OptKind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

std::string to_string(OptKind kind) { return kind == OptKind::sgd ? "sgd" : "adam"; }

void OptimizerConfig::validate() const {
  if (lr <= 0.0) throw std::invalid_argument("optimizer: lr must be > 0");
  if (epochs == 0) throw std::invalid_argument("optimizer: epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("optimizer: batch_size must be >= 1");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw std::invalid_argument("optimizer: betas must be in [0,1)");
  }
  if (eps <= 0.0) throw std::invalid_argument("optimizer: eps must be > 0");
}

void GridConfig::validate() const {
  if (!enabled()) return;
  if (lrs.empty() || components.empty() || seeds.empty()) {
    throw std::invalid_argument("grid: lambdas, lrs, components, seeds must all be non-empty");
  }
  for (double l : lambdas) {
    if (l <= 0.0) throw std::invalid_argument("grid: lambdas must be > 0");
  }
  for (double l : lrs) {
    if (l <= 0.0) throw std::invalid_argument("grid: lrs must be > 0");
  }
  for (const auto& c : components) {
    if (c != "q" && c != "k" && c != "v" && c != "av") {
      throw std::invalid_argument("grid: unknown component '" + c +
                                  "' (expected q, k, v, or av)");
    }
  }
}

void RunConfig::finalize() {
  if (model.layers == 0 || model.dim == 0 || model.ff_dim == 0) {
    throw std::invalid_argument("model: layers, dim, ff_dim must be positive");
  }
  if (model.heads == 0 || model.dim % model.heads != 0) {
    throw std::invalid_argument("model: heads must divide dim");
  }

  auto broadcast = [this](std::vector<double>& v) {
    if (v.empty()) {
      v.assign(model.layers, 0.0);
    } else if (v.size() == 1 && model.layers > 1) {
      v.assign(model.layers, v[0]);
    }
  };
  broadcast(reg.lambda_q);
  broadcast(reg.lambda_k);
  broadcast(reg.lambda_v);
  broadcast(reg.lambda_av);
  broadcast(reg.lambda_ff);
  reg.validate(model.layers);

  if (baseline.rate < 0.0 || baseline.rate >= 1.0) {
    throw std::invalid_argument("baseline: rate must be in [0,1)");
  }
  const bool implicit_on = baseline.mode != DropoutMode::none && baseline.rate > 0.0;
  auto any = [](const std::vector<double>& v) {
    for (double x : v) {
      if (x > 0.0) return true;
    }
    return false;
  };
  if (implicit_on && baseline.mode != DropoutMode::ff_hidden &&
      (any(reg.lambda_q) || any(reg.lambda_k) || any(reg.lambda_v) ||
       any(reg.lambda_av))) {
    throw std::invalid_argument(
        "config: attention-path placement '" + to_string(baseline.mode) +
        "' excludes the explicit q/k/v/av regularizers");
  }
  if (implicit_on && baseline.mode == DropoutMode::ff_hidden && any(reg.lambda_ff)) {
    throw std::invalid_argument(
        "config: ff_hidden placement excludes the explicit ff regularizer");
  }

  optim.validate();
  data.validate();
  grid.validate();
  if (out_dir.empty()) throw std::invalid_argument("run: out_dir must not be empty");
}

EncoderConfig RunConfig::encoder_config(const Dataset& data_loaded) const {
  EncoderConfig ec;
  ec.layers = model.layers;
  ec.dim = model.dim;
  ec.ff_dim = model.ff_dim;
  ec.heads = model.heads;
  ec.norm = model.norm;
  ec.tokens = data_loaded.tokens;
  ec.token_dim = data_loaded.token_dim;
  ec.classes = data_loaded.classes;
  ec.validate();
  return ec;
}

namespace {

[[noreturn]] void fail(const std::string& context, const std::string& message) {
  throw std::invalid_argument(context + ": " + message);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v, const std::string& context) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    fail(context, "expected a number, got '" + v + "'");
  }
}

std::size_t parse_count(const std::string& v, const std::string& context) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size() || n < 0) throw std::invalid_argument("");
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    fail(context, "expected a non-negative integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& context) {
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return n;
  } catch (const std::exception&) {
    fail(context, "expected an unsigned integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& context) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(context, "expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& v, const std::string& context) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(parse_double(item, context));
  return out;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& v, const std::string& context) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_u64(item, context));
  return out;
}

// One schema for both readers: every (section, key, value) lands here.
void set_key(RunConfig& cfg, const std::string& section, const std::string& key,
             const std::string& value, const std::string& context) {
  auto unknown = [&]() {
    fail(context, "unknown key '" + key + "' in [" + section + "]");
  };
  try {
    if (section == "model") {
      if (key == "layers") cfg.model.layers = parse_count(value, context);
      else if (key == "dim") cfg.model.dim = parse_count(value, context);
      else if (key == "ff_dim") cfg.model.ff_dim = parse_count(value, context);
      else if (key == "heads") cfg.model.heads = parse_count(value, context);
      else if (key == "norm") {
        if (value == "pre") cfg.model.norm = NormPlacement::pre;
        else if (value == "post") cfg.model.norm = NormPlacement::post;
        else fail(context, "norm must be 'pre' or 'post', got '" + value + "'");
      } else unknown();
    } else if (section == "reg") {
      if (key == "p") cfg.reg.p = parse_double(value, context);
      else if (key == "moment_form") cfg.reg.moment_form = moment_form_from_string(value);
      else if (key == "value_variant") cfg.reg.value_variant = value_variant_from_string(value);
      else if (key == "arora") cfg.reg.arora = parse_bool(value, context);
      else if (key == "lambda_q") cfg.reg.lambda_q = parse_double_list(value, context);
      else if (key == "lambda_k") cfg.reg.lambda_k = parse_double_list(value, context);
      else if (key == "lambda_v") cfg.reg.lambda_v = parse_double_list(value, context);
      else if (key == "lambda_av") cfg.reg.lambda_av = parse_double_list(value, context);
      else if (key == "lambda_ff") cfg.reg.lambda_ff = parse_double_list(value, context);
      else unknown();
    } else if (section == "baseline") {
      if (key == "placement") cfg.baseline.mode = dropout_mode_from_string(value);
      else if (key == "rate") cfg.baseline.rate = parse_double(value, context);
      else unknown();
    } else if (section == "optimizer") {
      if (key == "kind") cfg.optim.kind = opt_kind_from_string(value);
      else if (key == "lr") cfg.optim.lr = parse_double(value, context);
      else if (key == "beta1") cfg.optim.beta1 = parse_double(value, context);
      else if (key == "beta2") cfg.optim.beta2 = parse_double(value, context);
      else if (key == "eps") cfg.optim.eps = parse_double(value, context);
      else if (key == "epochs") cfg.optim.epochs = parse_count(value, context);
      else if (key == "batch_size") cfg.optim.batch_size = parse_count(value, context);
      else unknown();
    } else if (section == "dataset") {
      if (key == "kind") cfg.data.kind = dataset_kind_from_string(value);
      else if (key == "tokens") cfg.data.tokens = parse_count(value, context);
      else if (key == "token_dim") cfg.data.token_dim = parse_count(value, context);
      else if (key == "classes") cfg.data.classes = parse_count(value, context);
      else if (key == "train_samples") cfg.data.train_samples = parse_count(value, context);
      else if (key == "test_samples") cfg.data.test_samples = parse_count(value, context);
      else if (key == "snr") cfg.data.snr = parse_double(value, context);
      else if (key == "split") cfg.data.split = parse_double(value, context);
      else if (key == "path") cfg.data.path = value;
      else if (key == "image_h") cfg.data.image_h = parse_count(value, context);
      else if (key == "image_w") cfg.data.image_w = parse_count(value, context);
      else if (key == "patch") cfg.data.patch = parse_count(value, context);
      else unknown();
    } else if (section == "grid") {
      if (key == "lambdas") cfg.grid.lambdas = parse_double_list(value, context);
      else if (key == "lrs") cfg.grid.lrs = parse_double_list(value, context);
      else if (key == "components") cfg.grid.components = split_list(value);
      else if (key == "seeds") cfg.grid.seeds = parse_u64_list(value, context);
      else unknown();
    } else if (section == "run") {
      if (key == "seed") cfg.seed = parse_u64(value, context);
      else if (key == "out_dir") cfg.out_dir = value;
      else unknown();
    } else {
      fail(context, "unknown section [" + section + "]");
    }
  } catch (const std::invalid_argument& e) {
    // Re-tag enum conversion errors with the file position.
    const std::string msg = e.what();
    if (msg.rfind(context, 0) == 0) throw;
    fail(context, msg);
  }
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& name) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string context = name + ":" + std::to_string(lineno);
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) fail(context, "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(context, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(context, "empty key");
    if (section.empty()) fail(context, "key '" + key + "' appears before any [section]");
    set_key(cfg, section, key, value, context);
  }
  cfg.finalize();
  return cfg;
}

namespace {

std::string json_scalar_to_string(const nlohmann::json& v, const std::string& context) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number() || v.is_array()) {
    if (v.is_array()) {
      std::string joined;
      for (const auto& item : v) {
        if (!joined.empty()) joined += ",";
        joined += json_scalar_to_string(item, context);
      }
      return joined;
    }
    char buf[40];
    if (v.is_number_unsigned()) {
      std::snprintf(buf, sizeof buf, "%llu",
                    static_cast<unsigned long long>(v.get<std::uint64_t>()));
    } else if (v.is_number_integer()) {
      std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v.get<std::int64_t>()));
    } else {
      std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    }
    return buf;
  }
  fail(context, "unsupported value type " + std::string(v.type_name()));
}

}  // namespace

RunConfig parse_config_json_text(const std::string& text, const std::string& name) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(name + ": " + e.what());
  }
  if (!root.is_object()) throw std::invalid_argument(name + ": top level must be an object");
  RunConfig cfg;
  for (const auto& [section, body] : root.items()) {
    if (!body.is_object()) {
      fail(name, "section '" + section + "' must be an object");
    }
    for (const auto& [key, value] : body.items()) {
      const std::string context = name + " [" + section + "] " + key;
      set_key(cfg, section, key, json_scalar_to_string(value, context), context);
    }
  }
  cfg.finalize();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const bool json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
  return json ? parse_config_json_text(buf.str(), path)
              : parse_config_text(buf.str(), path);
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (double x : v) {
    if (!out.empty()) out += ",";
    out += fmt(x);
  }
  return out;
}

}  // namespace

std::string dump_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "[model]\n"
      << "layers = " << cfg.model.layers << "\n"
      << "dim = " << cfg.model.dim << "\n"
      << "ff_dim = " << cfg.model.ff_dim << "\n"
      << "heads = " << cfg.model.heads << "\n"
      << "norm = " << (cfg.model.norm == NormPlacement::pre ? "pre" : "post") << "\n\n";
  out << "[reg]\n"
      << "p = " << fmt(cfg.reg.p) << "\n"
      << "moment_form = "
      << (cfg.reg.moment_form == MomentForm::paper ? "paper" : "exact") << "\n"
      << "value_variant = "
      << (cfg.reg.value_variant == ValueVariant::token_level ? "token_level"
                                                             : "attention_conditioned")
      << "\n"
      << "arora = " << (cfg.reg.arora ? "true" : "false") << "\n"
      << "lambda_q = " << fmt_list(cfg.reg.lambda_q) << "\n"
      << "lambda_k = " << fmt_list(cfg.reg.lambda_k) << "\n"
      << "lambda_v = " << fmt_list(cfg.reg.lambda_v) << "\n"
      << "lambda_av = " << fmt_list(cfg.reg.lambda_av) << "\n"
      << "lambda_ff = " << fmt_list(cfg.reg.lambda_ff) << "\n\n";
  out << "[baseline]\n"
      << "placement = " << to_string(cfg.baseline.mode) << "\n"
      << "rate = " << fmt(cfg.baseline.rate) << "\n\n";
  out << "[optimizer]\n"
      << "kind = " << to_string(cfg.optim.kind) << "\n"
      << "lr = " << fmt(cfg.optim.lr) << "\n"
      << "beta1 = " << fmt(cfg.optim.beta1) << "\n"
      << "beta2 = " << fmt(cfg.optim.beta2) << "\n"
      << "eps = " << fmt(cfg.optim.eps) << "\n"
      << "epochs = " << cfg.optim.epochs << "\n"
      << "batch_size = " << cfg.optim.batch_size << "\n\n";
  out << "[dataset]\n"
      << "kind = " << to_string(cfg.data.kind) << "\n"
      << "tokens = " << cfg.data.tokens << "\n"
      << "token_dim = " << cfg.data.token_dim << "\n"
      << "classes = " << cfg.data.classes << "\n"
      << "train_samples = " << cfg.data.train_samples << "\n"
      << "test_samples = " << cfg.data.test_samples << "\n"
      << "snr = " << fmt(cfg.data.snr) << "\n"
      << "split = " << fmt(cfg.data.split) << "\n"
      << "path = " << cfg.data.path << "\n"
      << "image_h = " << cfg.data.image_h << "\n"
      << "image_w = " << cfg.data.image_w << "\n"
      << "patch = " << cfg.data.patch << "\n\n";
  if (cfg.grid.enabled()) {
    out << "[grid]\n"
        << "lambdas = " << fmt_list(cfg.grid.lambdas) << "\n"
        << "lrs = " << fmt_list(cfg.grid.lrs) << "\n"
        << "components = ";
    for (std::size_t i = 0; i < cfg.grid.components.size(); ++i) {
      if (i) out << ",";
      out << cfg.grid.components[i];
    }
    out << "\nseeds = ";
    for (std::size_t i = 0; i < cfg.grid.seeds.size(); ++i) {
      if (i) out << ",";
      out << cfg.grid.seeds[i];
    }
    out << "\n\n";
  }
  out << "[run]\n"
      << "seed = " << cfg.seed << "\n"
      << "out_dir = " << cfg.out_dir << "\n";
  return out.str();
}

std::string resolve_out_dir(const std::string& out_dir) {
  const char* root = std::getenv("EXDROP_OUTPUT_ROOT");
  if (root == nullptr || *root == '\0' || out_dir.empty() || out_dir.front() == '/') {
    return out_dir;
  }
  std::string r(root);
  if (r.back() != '/') r += '/';
  return r + out_dir;
}

}  // namespace exdrop
