#pragma once

// Flat key=value experiment configuration. Values resolve in three layers:
// command-line flag, then config file, then built-in default.

#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "cml/errors.hpp"
#include "cml/eval.hpp"
#include "cml/model.hpp"
#include "cml/samplers.hpp"

namespace cml {

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key=value");
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const auto key = strip(line.substr(0, eq));
    if (key.empty()) throw ParseError(lineno, "empty key");
    kv[key] = strip(line.substr(eq + 1));
  }
  return kv;
}

struct ExperimentConfig {
  std::string dataset;  // free-form tag; "book-crossing" changes the beta default
  SamplerConfig sampler;
  Hyper hyper;
  int num_folds = 4;
  int test_fold = 0;
  std::uint64_t split_seed = 0;
  EvalOptions eval;
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T out{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "on") return true;
  if (text == "0" || text == "false" || text == "off") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

/// lambda_g schedule: 0.01 for one or two negatives, 0.001 from five on.
inline double default_lambda_g(std::size_t n_negatives) { return n_negatives >= 5 ? 0.001 : 0.01; }

inline double default_beta(const std::string& dataset) {
  return dataset == "book-crossing" ? 0.8 : 1.0;
}

/// Merges `file` then `flags` over the defaults. Unknown keys are rejected.
inline ExperimentConfig resolve_config(const KeyValues& file, const KeyValues& flags) {
  KeyValues kv = file;
  for (const auto& [k, v] : flags) kv[k] = v;

  ExperimentConfig c;
  std::optional<double> lambda_g, beta;
  for (const auto& [key, value] : kv) {
    using detail::parse_number;
    if (key == "dataset") c.dataset = value;
    else if (key == "strategy") {
      auto s = parse_strategy(value);
      if (!s) throw ConfigError("unknown strategy '" + value + "'");
      c.sampler.strategy = *s;
    }
    else if (key == "n_negatives") c.sampler.n_negatives = parse_number<std::size_t>(key, value);
    else if (key == "candidates") c.sampler.candidates = parse_number<std::size_t>(key, value);
    else if (key == "beta") beta = parse_number<double>(key, value);
    else if (key == "s_clamp") c.sampler.s_clamp = parse_number<double>(key, value);
    else if (key == "dim") c.hyper.dim = parse_number<std::size_t>(key, value);
    else if (key == "alpha") c.hyper.alpha = parse_number<double>(key, value);
    else if (key == "lambda_g") lambda_g = parse_number<double>(key, value);
    else if (key == "lr") c.hyper.lr = parse_number<double>(key, value);
    else if (key == "adam_beta1") c.hyper.adam_beta1 = parse_number<double>(key, value);
    else if (key == "adam_beta2") c.hyper.adam_beta2 = parse_number<double>(key, value);
    else if (key == "adam_eps") c.hyper.adam_eps = parse_number<double>(key, value);
    else if (key == "batch_size") c.hyper.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "epochs") c.hyper.epochs = parse_number<std::size_t>(key, value);
    else if (key == "seed") c.hyper.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "num_folds") c.num_folds = parse_number<int>(key, value);
    else if (key == "test_fold") c.test_fold = parse_number<int>(key, value);
    else if (key == "split_seed") c.split_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "k_eval") c.eval.k = parse_number<std::size_t>(key, value);
    else if (key == "exclude_train") c.eval.exclude_train = detail::parse_bool(key, value);
    else throw ConfigError("unknown configuration key '" + key + "'");
  }
  c.hyper.lambda_g = lambda_g.value_or(default_lambda_g(c.sampler.n_negatives));
  c.sampler.beta = beta.value_or(default_beta(c.dataset));

  c.sampler.validate();
  c.hyper.validate();
  if (c.num_folds < 2) throw ConfigError("num_folds must be >= 2");
  if (c.test_fold < 0 || c.test_fold >= c.num_folds) throw ConfigError("test_fold out of range");
  if (c.eval.k < 1) throw ConfigError("k_eval must be >= 1");
  return c;
}

/// Fully resolved configuration as key=value pairs; resolve_config on the
/// result reproduces `c`.
inline KeyValues to_key_values(const ExperimentConfig& c) {
  using detail::format_double;
  KeyValues kv;
  if (!c.dataset.empty()) kv["dataset"] = c.dataset;
  kv["strategy"] = std::string(to_string(c.sampler.strategy));
  kv["n_negatives"] = std::to_string(c.sampler.n_negatives);
  kv["candidates"] = std::to_string(c.sampler.candidates);
  kv["beta"] = format_double(c.sampler.beta);
  kv["s_clamp"] = format_double(c.sampler.s_clamp);
  kv["dim"] = std::to_string(c.hyper.dim);
  kv["alpha"] = format_double(c.hyper.alpha);
  kv["lambda_g"] = format_double(c.hyper.lambda_g);
  kv["lr"] = format_double(c.hyper.lr);
  kv["adam_beta1"] = format_double(c.hyper.adam_beta1);
  kv["adam_beta2"] = format_double(c.hyper.adam_beta2);
  kv["adam_eps"] = format_double(c.hyper.adam_eps);
  kv["batch_size"] = std::to_string(c.hyper.batch_size);
  kv["epochs"] = std::to_string(c.hyper.epochs);
  kv["seed"] = std::to_string(c.hyper.seed);
  kv["num_folds"] = std::to_string(c.num_folds);
  kv["test_fold"] = std::to_string(c.test_fold);
  kv["split_seed"] = std::to_string(c.split_seed);
  kv["k_eval"] = std::to_string(c.eval.k);
  kv["exclude_train"] = c.eval.exclude_train ? "true" : "false";
  return kv;
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

}  // namespace cml
