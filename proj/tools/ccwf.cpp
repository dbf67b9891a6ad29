// ccwf: gen / fit / predict / bench / sweep over the ccwf library.
//
// Exit codes: 0 ok, 1 usage, 2 io, 3 numeric, 4 invalid config.
// Failures print one line to stderr:
//   error code=<n> kind=<usage|io|numeric|config> message="<text>"

#include "ccwf/ccwf.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace ccwf;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::vector<std::string> set;
};

void add_common(CLI::App* sub, Common& c, bool need_out = true) {
  auto* o = sub->add_option("--out", c.out, "output directory (or file for predict)");
  if (need_out) o->required();
  sub->add_option("--seed", c.seed, "root seed; overrides the config");
  sub->add_option("--threads", c.threads, "worker threads; never changes results")->check(CLI::PositiveNumber);
  sub->add_option("--set", c.set, "extra config entry key=value; overrides the config file (repeatable)");
}

// Config file (if any) overridden by --set entries, then by dedicated flags.
std::map<std::string, std::string> load_config(const Common& c) {
  std::map<std::string, std::string> kv;
  if (!c.config.empty()) {
    if (!fs::exists(c.config)) throw IoError("cannot open config " + c.config);
    try {
      kv = read_key_values(c.config);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
  }
  for (const auto& s : c.set) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    kv[std::string(trim(std::string_view(s).substr(0, eq)))] = std::string(trim(std::string_view(s).substr(eq + 1)));
  }
  if (c.seed) kv["seed"] = std::to_string(*c.seed);
  return kv;
}

std::string quote(std::string s) {
  for (auto& ch : s)
    if (ch == '"' || ch == '\n') ch = '\'';
  return '"' + s + '"';
}

bool has_column(const std::string& path, const std::string& name) {
  std::ifstream in(path);
  std::string header;
  if (!in || !std::getline(in, header)) return false;
  for (auto cell : split(header, ','))
    if (trim(cell) == name) return true;
  return false;
}

int fail(int code, const char* kind, const std::string& msg) {
  std::cerr << "error code=" << code << " kind=" << kind << " message=" << quote(msg) << '\n';
  return code;
}

int run_gen(const Common& c) {
  const BenchConfig cfg = bench_config_from(load_config(c));
  GenConfig g = cfg.spec.gen;
  g.seed = cfg.spec.seed;
  const Scenario sc = gen_scenario(g, cfg.spec.model);
  const fs::path out = c.out;
  fs::create_directories(out);
  save_csv((out / "train.csv").string(), sc.split.train);
  for (std::size_t t = 0; t < sc.split.tests.size(); ++t)
    save_csv((out / ("test_" + std::to_string(t) + ".csv")).string(), sc.split.tests[t]);
  write_manifest(out / "manifest.txt", "gen", to_key_values(cfg));
  std::cout << "wrote " << sc.split.train.rows() << " training rows and " << sc.split.tests.size() << " test sets to "
            << out.string() << '\n';
  return 0;
}

struct FitArgs {
  std::string train, outcome = "y", labels, variant = "cluster", k = "auto", weights = "stack_ridge", stack_rows;
  std::optional<std::size_t> k_ref;
  bool standardize = false;
};

int run_fit(const Common& c, const FitArgs& a) {
  const auto kv = load_config(c);
  const BenchConfig cfg = bench_config_from(kv);
  EnsembleOptions eo = cfg.spec.ensemble_options();
  eo.forest.threads = c.threads;
  eo.kmeans.threads = c.threads;
  eo.variant = parse_variant(a.variant);
  if (a.k != "auto") {
    std::size_t k = 0;
    if (!parse_int(a.k, k) || k < 1) throw UsageError("--k expects a positive integer or auto, got '" + a.k + "'");
    eo.k = k;
  } else if (eo.variant == VariantKind::merged) {
    eo.k = 1;
  }
  eo.k_ref = a.k_ref;
  eo.scheme = parse_weight_scheme(a.weights);
  if (a.standardize) eo.standardize = true;
  if (!a.stack_rows.empty()) eo.stack_rows = parse_stack_rows(a.stack_rows);
  std::optional<std::string> labels;
  if (!a.labels.empty()) labels = a.labels;
  else if (has_column(a.train, "label")) labels = "label";
  const Dataset d = load_csv(a.train, a.outcome, labels);
  const std::uint64_t seed = cfg.spec.seed;
  const CCWFModel m = fit(d, eo, seed);

  std::map<std::string, std::string> extra = to_key_values(cfg);
  std::map<std::string, std::string> manifest;
  for (auto& [key, value] : extra) manifest["config." + key] = value;
  manifest["command"] = "fit";
  manifest["train"] = a.train;
  manifest["outcome_column"] = a.outcome;
  manifest["label_column"] = labels.value_or("");
  manifest["seed"] = std::to_string(seed);
  manifest["arg.variant"] = a.variant;
  manifest["arg.k"] = a.k;
  manifest["arg.k_ref"] = a.k_ref ? std::to_string(*a.k_ref) : "";
  manifest["arg.weights"] = a.weights;
  manifest["arg.standardize"] = eo.standardize ? "true" : "false";
  manifest["arg.stack_rows"] = to_string(eo.stack_rows);
  std::string rerun = "ccwf fit --train " + a.train + " --outcome " + a.outcome + " --variant " + a.variant + " --k " +
                      a.k + " --weights " + a.weights + " --seed " + std::to_string(seed);
  if (labels) rerun += " --labels " + *labels;
  if (a.k_ref) rerun += " --k-ref " + std::to_string(*a.k_ref);
  if (!c.config.empty()) rerun += " --config " + c.config;
  for (const auto& s : c.set) rerun += " --set " + s;
  if (eo.standardize) rerun += " --standardize";
  if (!a.stack_rows.empty()) rerun += " --stack-rows " + a.stack_rows;
  manifest["rerun"] = rerun + " --out <dir>";
  write_model(c.out, m, manifest);
  std::cout << "fitted " << to_string(m.variant) << " with " << m.k() << " forests (" << m.total_trees()
            << " trees) to " << c.out << '\n';
  return 0;
}

int run_predict(const std::string& model_dir, const std::string& features, const std::string& out) {
  const CCWFModel m = read_model(model_dir);
  const Matrix X = load_feature_columns(features, m.feature_names);
  const Vector yhat = predict(m, X);
  const fs::path p = out;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream o(p, std::ios::binary);
  if (!o) throw IoError("cannot write " + out);
  o << "prediction\n";
  for (Eigen::Index i = 0; i < yhat.size(); ++i) o << format_double(yhat[i]) << '\n';
  if (!o) throw IoError("write failed: " + out);
  std::cout << "wrote " << yhat.size() << " predictions to " << out << '\n';
  return 0;
}

int run_bench_cmd(const Common& c, bool plot, bool check, const std::string& command, const std::string& parameter,
                  const std::string& values) {
  auto kv = load_config(c);
  if (!parameter.empty()) kv["sweep_parameter"] = parameter;
  if (!values.empty()) kv["sweep_values"] = values;
  BenchConfig cfg = bench_config_from(kv);
  if (command == "sweep" && !cfg.sweep_parameter)
    throw UsageError("sweep needs a parameter (--parameter or sweep_parameter in the config)");
  cfg.spec.threads = c.threads;
  if (check) {
    cfg.spec.validate(cfg.experiment == "scenario" || cfg.experiment == "multistudy");
    for (const auto& [key, value] : to_key_values(cfg)) std::cout << key << '=' << value << '\n';
    return 0;
  }
  run_bench(cfg, c.out, plot, command);
  std::cout << "wrote results to " << c.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-cluster weighted forests: data generation, fitting, prediction and simulation benchmarks"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Common gen_c, fit_c, bench_c, sweep_c;
  bool bench_plot = false, sweep_plot = false, bench_check = false, sweep_check = false;

  auto* gen = app.add_subcommand("gen", "simulate a training set and test sets from a config");
  gen->add_option("--config", gen_c.config, "key=value config (generator and outcome keys)");
  add_common(gen, gen_c);

  FitArgs fa;
  auto* fitc = app.add_subcommand("fit", "fit a cluster / random / multi / merged ensemble and write a model bundle");
  fitc->add_option("--train", fa.train, "training CSV with a header row")->required();
  fitc->add_option("--outcome", fa.outcome, "outcome column name")->capture_default_str();
  fitc->add_option("--labels", fa.labels, "true cluster label column, never used as a covariate (default: label, if present)");
  fitc->add_option("--variant", fa.variant, "cluster | random | multi | merged")->capture_default_str();
  fitc->add_option("--k", fa.k, "number of partitions or auto (silhouette choice)")->capture_default_str();
  fitc->add_option("--k-ref", fa.k_ref, "tree budget multiplier: k_ref * n_trees trees in total");
  fitc->add_option("--weights", fa.weights, "stack_ridge | stack_lasso | simple | sample_size")->capture_default_str();
  fitc->add_option("--stack-rows", fa.stack_rows, "in_sample | out_of_cluster | out_of_bag entries for each forest's own rows");
  fitc->add_flag("--standardize", fa.standardize, "z-score covariates before k-means");
  fitc->add_option("--config", fit_c.config, "key=value config (forest, stacking and k-means keys)");
  add_common(fitc, fit_c);

  std::string model_dir, features, preds_out;
  std::size_t predict_threads = 1;
  auto* pred = app.add_subcommand("predict", "predict with a model bundle");
  pred->add_option("--model", model_dir, "model bundle directory written by fit")->required();
  pred->add_option("--features", features, "CSV holding the model's feature columns")->required();
  pred->add_option("--out", preds_out, "prediction CSV to write")->required();
  pred->add_option("--threads", predict_threads, "worker threads; never changes results")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "run a replicated simulation experiment from a config");
  bench->add_option("--config", bench_c.config, "key=value scenario config")->required();
  add_common(bench, bench_c);
  bench->add_flag("--plot", bench_plot, "also write gnuplot data (plot.dat)");
  bench->add_flag("--check", bench_check, "validate the config, print it resolved and exit");

  std::string parameter, values;
  auto* sw = app.add_subcommand("sweep", "run a scenario once per value of one parameter");
  sw->add_option("--config", sweep_c.config, "key=value scenario config")->required();
  sw->add_option("--parameter", parameter, "k | coef_norm_scale | n_true_clusters | cluster_size");
  sw->add_option("--values", values, "comma-separated values");
  add_common(sw, sweep_c);
  sw->add_flag("--plot", sweep_plot, "also write gnuplot data (plot.dat)");
  sw->add_flag("--check", sweep_check, "validate the config, print it resolved and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(1, "usage", e.what());
  }

  try {
    if (*gen) return run_gen(gen_c);
    if (*fitc) return run_fit(fit_c, fa);
    if (*pred) return run_predict(model_dir, features, preds_out);
    if (*bench) return run_bench_cmd(bench_c, bench_plot, bench_check, "bench", "", "");
    if (*sw) return run_bench_cmd(sweep_c, sweep_plot, sweep_check, "sweep", parameter, values);
  } catch (const ConfigError& e) {
    return fail(4, "config", e.what());
  } catch (const UsageError& e) {
    return fail(1, "usage", e.what());
  } catch (const IoError& e) {
    return fail(2, "io", e.what());
  } catch (const NumericError& e) {
    return fail(3, "numeric", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(2, "io", e.what());
  } catch (const std::exception& e) {
    return fail(3, "numeric", e.what());
  }
  return 1;
}
