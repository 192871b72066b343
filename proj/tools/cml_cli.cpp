// cml: preprocess / split / train / evaluate / recommend for collaborative
// metric learning on implicit feedback.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cml/config.hpp"
#include "cml/dataset.hpp"
#include "cml/eval.hpp"
#include "cml/io.hpp"
#include "cml/model.hpp"

namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

// Keys accepted both in config files and as --key flags.
const std::vector<std::string> kConfigKeys = {
    "dataset", "strategy", "n_negatives", "candidates", "beta", "s_clamp", "dim",
    "alpha", "lambda_g", "lr", "adam_beta1", "adam_beta2", "adam_eps", "batch_size",
    "epochs", "seed", "num_folds", "test_fold", "split_seed", "k_eval", "exclude_train"};

struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config_file, "key=value configuration file");
    for (const auto& key : kConfigKeys) {
      std::string names = "--" + key;
      if (key == "n_negatives") names += ",--negatives";
      if (key == "batch_size") names += ",--batch";
      cmd.add_option(names, values[key], "overrides config key " + key);
    }
  }

  cml::KeyValues flag_values(const CLI::App& cmd) const {
    cml::KeyValues kv;
    for (const auto& key : kConfigKeys) {
      if (cmd.count("--" + key) > 0) kv[key] = values.at(key);
    }
    return kv;
  }

  cml::KeyValues file_values() const {
    if (config_file.empty()) return {};
    std::ifstream in(config_file);
    if (!in) throw cml::ConfigError("cannot open config file " + config_file);
    try {
      return cml::parse_key_values(in);
    } catch (const cml::ParseError& e) {
      throw cml::ConfigError(config_file + ": " + e.what());
    }
  }
};

cml::Comparison parse_mode(const std::string& s) {
  if (s == "ge") return cml::Comparison::kGreaterEqual;
  if (s == "gt") return cml::Comparison::kGreater;
  throw cml::ConfigError("comparison mode must be 'ge' or 'gt', got '" + s + "'");
}

char parse_separator(const std::string& s) {
  if (s == "tab" || s == "\\t") return '\t';
  if (s == "comma") return ',';
  if (s == "semicolon") return ';';
  if (s.size() == 1) return s[0];
  throw cml::ConfigError("separator must be tab, comma, semicolon or a single character");
}

fs::path sidecar_config(const fs::path& model) { return fs::path(model.string() + ".cfg"); }

cml::FoldAssignment load_or_fail_folds(const fs::path& dir, const cml::InteractionSet& s) {
  if (!fs::exists(dir / "folds.tsv")) {
    throw cml::DataError("missing " + (dir / "folds.tsv").string() + "; run `cml split` first");
  }
  return cml::read_folds(dir / "folds.tsv", s.pairs.size());
}

// ---- subcommands -------------------------------------------------------------

struct PreprocessArgs {
  std::string input, out, preset, dataset, sep = "tab", threshold_mode = "ge", user_mode = "ge",
                                            item_mode = "ge";
  bool header = false;
  int user_col = 0, item_col = 1, value_col = 2;
  double threshold = 0.0;
  std::size_t min_user = 0, min_item_users = 0;
};

int run_preprocess(const PreprocessArgs& a, const CLI::App& cmd) {
  cml::FilterRules rules;
  std::string tag = a.dataset;
  if (!a.preset.empty()) {
    if (a.preset == "amazon-movies") rules = cml::FilterRules::amazon_movies();
    else if (a.preset == "book-crossing") rules = cml::FilterRules::book_crossing();
    else if (a.preset == "echonest") rules = cml::FilterRules::echonest();
    else throw cml::ConfigError("unknown preset '" + a.preset + "'");
    if (tag.empty()) tag = a.preset;
  }
  if (cmd.count("--threshold")) rules.binarize_threshold = a.threshold;
  if (cmd.count("--threshold-mode")) rules.binarize_mode = parse_mode(a.threshold_mode);
  if (cmd.count("--min-user")) rules.min_user_interactions = a.min_user;
  if (cmd.count("--min-user-mode")) rules.user_mode = parse_mode(a.user_mode);
  if (cmd.count("--min-item-users")) rules.min_item_users = a.min_item_users;
  if (cmd.count("--min-item-mode")) rules.item_mode = parse_mode(a.item_mode);

  cml::ParseSchema schema;
  schema.separator = parse_separator(a.sep);
  schema.has_header = a.header;
  schema.user_column = a.user_col;
  schema.item_column = a.item_col;
  schema.value_column = a.value_col;

  std::ifstream in(a.input);
  if (!in) throw cml::DataError("cannot open input " + a.input);
  const auto raw = cml::parse_interactions(in, schema);
  const auto s = cml::binarize_filter(raw, rules);
  cml::write_processed(a.out, s, tag);
  std::cout << cml::format_stats(cml::stats_of(s, tag));
  return kOk;
}

int run_split(const std::string& dir, int k, std::uint64_t seed) {
  const auto s = cml::read_processed(dir);
  const auto folds = cml::kfold_split(s, k, seed);
  cml::write_folds(fs::path(dir) / "folds.tsv", folds);
  std::cout << "wrote " << (fs::path(dir) / "folds.tsv").string() << " (" << k << " folds, "
            << s.pairs.size() << " pairs)\n";
  return kOk;
}

int run_train(const std::string& dir, std::string out, std::string log_path, const ConfigFlags& flags,
              const CLI::App& cmd) {
  auto file_kv = flags.file_values();
  auto flag_kv = flags.flag_values(cmd);
  // Dataset tag recorded at preprocessing feeds the beta default.
  if (!file_kv.count("dataset") && !flag_kv.count("dataset")) {
    if (auto tag = cml::read_stat(dir, "dataset")) file_kv["dataset"] = *tag;
  }
  const auto config = cml::resolve_config(file_kv, flag_kv);

  const auto s = cml::read_processed(dir);
  const auto folds = load_or_fail_folds(dir, s);
  if (config.test_fold >= folds.k) throw cml::ConfigError("test_fold exceeds the fold count in folds.tsv");
  if (out.empty()) out = (fs::path(dir) / "model.cmle").string();
  if (log_path.empty()) log_path = out + ".log.tsv";

  cml::Trainer trainer(s.num_users, s.num_items, folds.train_pairs(s.pairs, config.test_fold),
                       config.sampler, config.hyper);
  std::string log = "epoch\tmean_loss\tactive_fraction\n";
  trainer.run([&](std::size_t epoch, const cml::EpochStats& st) {
    char line[128];
    std::snprintf(line, sizeof line, "%zu\t%.6f\t%.6f\n", epoch, st.mean_loss, st.active_fraction);
    log += line;
    std::cerr << "epoch " << line;
  });
  cml::save_embeddings(out, trainer.params());
  std::ofstream(log_path) << log;
  std::ofstream(sidecar_config(out)) << cml::format_key_values(cml::to_key_values(config));
  std::cout << "wrote " << out << "\n";
  return kOk;
}

struct EvaluateArgs {
  std::string model, data, metrics, strategy;
  int test_fold = 0;
  std::size_t k = 50, n_negatives = 0, batch_size = 0;
};

int run_evaluate(const EvaluateArgs& a, const CLI::App& cmd) {
  cml::KeyValues trained;
  if (fs::exists(sidecar_config(a.model))) {
    std::ifstream in(sidecar_config(a.model));
    trained = cml::parse_key_values(in);
  }
  const auto params = cml::load_embeddings(a.model);
  const auto s = cml::read_processed(a.data);
  cml::check_embedding_shape(params, s);
  const auto folds = load_or_fail_folds(a.data, s);

  auto pick = [&](const char* flag, const char* key, auto value, auto fallback) {
    using T = decltype(value);
    if (cmd.count(flag)) return value;
    if (trained.count(key)) return cml::detail::parse_number<T>(key, trained.at(key));
    return static_cast<T>(fallback);
  };
  const int fold = pick("--test-fold", "test_fold", a.test_fold, 0);
  const std::size_t k = pick("--k", "k_eval", a.k, 50);
  if (fold < 0 || fold >= folds.k) throw cml::ConfigError("test fold out of range");

  cml::RunLabel label;
  label.strategy = cmd.count("--strategy") ? a.strategy
                                           : (trained.count("strategy") ? trained.at("strategy") : "unknown");
  label.n_negatives = pick("--negatives", "n_negatives", a.n_negatives, 0);
  label.batch_size = pick("--batch", "batch_size", a.batch_size, 0);

  cml::EvalOptions opts;
  opts.k = k;
  const auto m = cml::evaluate_fold(params, s, folds, fold, opts);

  cml::MetricsTable table(k);
  if (!a.metrics.empty() && fs::exists(a.metrics)) {
    table = cml::MetricsTable::parse(a.metrics);
    if (table.k() != k) throw cml::DataError("metrics file uses a different cutoff k");
  }
  table.upsert(label, m);
  const auto text = table.format();
  if (a.metrics.empty()) {
    std::cout << text;
  } else {
    std::ofstream(a.metrics) << text;
    std::cout << text;
  }
  return kOk;
}

int run_recommend(const std::string& model, const std::string& data, const std::string& user_key,
                  std::size_t k) {
  const auto params = cml::load_embeddings(model);
  const auto s = cml::read_processed(data);
  cml::check_embedding_shape(params, s);
  const auto user = s.find_user(user_key);
  if (!user) throw cml::DataError("unknown user key '" + user_key + "'");

  // Exclude the training positives: everything outside the evaluated fold when
  // folds and a trained config exist, otherwise all known positives.
  std::vector<cml::Pair> known = s.pairs;
  if (fs::exists(fs::path(data) / "folds.tsv") && fs::exists(sidecar_config(model))) {
    std::ifstream in(sidecar_config(model));
    const auto trained = cml::parse_key_values(in);
    if (trained.count("test_fold")) {
      const auto folds = cml::read_folds(fs::path(data) / "folds.tsv", s.pairs.size());
      known = folds.train_pairs(s.pairs, cml::detail::parse_number<int>("test_fold", trained.at("test_fold")));
    }
  }
  const cml::UserItemIndex index(s.num_users, known);
  const auto ranked = cml::rank_top_k(params, *user, k, index.positives(*user));
  for (std::size_t r = 0; r < ranked.items.size(); ++r) {
    std::printf("%zu\t%s\t%.6f\n", r + 1, s.item_keys[ranked.items[r]].c_str(), ranked.scores[r]);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Collaborative metric learning with two-stage negative sampling"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* preprocess = app.add_subcommand("preprocess", "binarize, filter and index a raw interaction log");
  preprocess->add_option("--input", pre.input, "raw user/item/value file")->required();
  preprocess->add_option("--out", pre.out, "output directory")->required();
  preprocess->add_option("--preset", pre.preset, "amazon-movies | book-crossing | echonest");
  preprocess->add_option("--dataset", pre.dataset, "dataset tag stored in stats.tsv");
  preprocess->add_option("--sep", pre.sep, "tab | comma | semicolon | <char>");
  preprocess->add_flag("--header", pre.header, "skip the first line");
  preprocess->add_option("--user-col", pre.user_col);
  preprocess->add_option("--item-col", pre.item_col);
  preprocess->add_option("--value-col", pre.value_col);
  preprocess->add_option("--threshold", pre.threshold, "binarization threshold");
  preprocess->add_option("--threshold-mode", pre.threshold_mode, "ge | gt");
  preprocess->add_option("--min-user", pre.min_user, "minimum interactions per user");
  preprocess->add_option("--min-user-mode", pre.user_mode, "ge | gt");
  preprocess->add_option("--min-item-users", pre.min_item_users, "minimum users per item (0 disables)");
  preprocess->add_option("--min-item-mode", pre.item_mode, "ge | gt");

  std::string split_dir;
  int split_k = 4;
  std::uint64_t split_seed = 0;
  auto* split = app.add_subcommand("split", "assign per-user k-fold cross-validation folds");
  split->add_option("--data", split_dir, "processed directory")->required();
  split->add_option("--folds", split_k, "fold count");
  split->add_option("--seed", split_seed, "shuffle seed");

  std::string train_dir, train_out, train_log;
  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train", "train embeddings on all folds but the test fold");
  train->add_option("--data", train_dir, "processed directory")->required();
  train->add_option("--out", train_out, "embedding file (default <data>/model.cmle)");
  train->add_option("--log", train_log, "per-epoch loss log (default <out>.log.tsv)");
  train_flags.attach(*train);

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "MAP@k, NDCG@k and MMR on one test fold");
  evaluate->add_option("--model", ev.model, "embedding file")->required();
  evaluate->add_option("--data", ev.data, "processed directory")->required();
  evaluate->add_option("--test-fold", ev.test_fold);
  evaluate->add_option("--k", ev.k, "ranking cutoff");
  evaluate->add_option("--metrics", ev.metrics, "metrics TSV to create or update");
  evaluate->add_option("--strategy", ev.strategy, "label (defaults to the training config)");
  evaluate->add_option("--negatives", ev.n_negatives, "label (defaults to the training config)");
  evaluate->add_option("--batch", ev.batch_size, "label (defaults to the training config)");

  std::string rec_model, rec_data, rec_user;
  std::size_t rec_k = 10;
  auto* recommend = app.add_subcommand("recommend", "top-k items for one user");
  recommend->add_option("--model", rec_model, "embedding file")->required();
  recommend->add_option("--data", rec_data, "processed directory")->required();
  recommend->add_option("--user", rec_user, "user key")->required();
  recommend->add_option("--k", rec_k, "list length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*preprocess) return run_preprocess(pre, *preprocess);
    if (*split) return run_split(split_dir, split_k, split_seed);
    if (*train) return run_train(train_dir, train_out, train_log, train_flags, *train);
    if (*evaluate) return run_evaluate(ev, *evaluate);
    if (*recommend) return run_recommend(rec_model, rec_data, rec_user, rec_k);
  } catch (const cml::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const cml::ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const cml::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
