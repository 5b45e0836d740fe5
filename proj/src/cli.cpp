#include "oodscore/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "oodscore/calib.hpp"
#include "oodscore/container.hpp"
#include "oodscore/datastore.hpp"
#include "oodscore/error.hpp"
#include "oodscore/metrics.hpp"
#include "oodscore/report.hpp"
#include "oodscore/scores.hpp"
#include "oodscore/synth.hpp"

namespace oodscore {
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string dataset_name(const std::string& dir) {
  fs::path p = fs::path(dir).lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  std::string name = p.filename().string();
  std::replace(name.begin(), name.end(), ',', '_');
  return name.empty() ? "dataset" : name;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<double> parse_grid(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || end != item.c_str() + item.size() || !std::isfinite(v)) {
      throw ValidationError(std::string(what) + ": '" + item + "' is not a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError(std::string(what) + " is empty");
  return out;
}

unsigned resolve_threads(int flag_value) {
  if (flag_value > 0) return static_cast<unsigned>(flag_value);
  if (flag_value < 0) throw ValidationError("--threads must be positive");
  if (const char* env = std::getenv("OODSCORE_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v <= 0) throw ValidationError("OODSCORE_THREADS must be a positive integer");
    return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

ClassifierHead load_head(const std::string& dir) {
  auto loaded = read_dataset(dir);
  if (!loaded.head) throw ValidationError("'" + dir + "' has no classifier head (tensors 'W' and 'bias')");
  return std::move(*loaded.head);
}

void print_row_failures(const RowFailureError& e, std::ostream& err) {
  for (const auto& f : e.failures()) err << "row " << f.row << ": " << f.message << '\n';
}

// ---------------------------------------------------------------- calibrate

struct CalibrateOptions {
  std::string train;
  std::string head;
  std::string out;
  double temperature = 1.0;
  std::string grouping = "auto";
  double react_percentile = 90.0;
};

Grouping parse_grouping(const std::string& g) {
  if (g == "auto") return Grouping::automatic;
  if (g == "labels") return Grouping::labels;
  if (g == "predicted") return Grouping::predicted;
  throw ValidationError("unknown grouping '" + g + "' (expected auto|labels|predicted)");
}

int cmd_calibrate(const CalibrateOptions& o, std::ostream& out) {
  CalibrationConfig cfg;
  cfg.temperature = o.temperature;
  cfg.grouping = parse_grouping(o.grouping);
  cfg.react_percentile = o.react_percentile;
  if (!(cfg.temperature > 0.0) || !std::isfinite(cfg.temperature)) {
    throw ValidationError("temperature must be positive");
  }
  if (!(o.react_percentile > 0.0 && o.react_percentile <= 100.0)) {
    throw ValidationError("react-percentile must lie in (0, 100]");
  }

  auto train = read_dataset(o.train);
  ClassifierHead head;
  if (!o.head.empty()) {
    head = load_head(o.head);
  } else if (train.head) {
    head = *train.head;
  } else {
    throw ValidationError("no classifier head: '" + o.train + "' lacks 'W'/'bias' and --head was not given");
  }
  const auto stats = fit_calibration(train.dataset, head, cfg);
  write_stats(stats, o.out);
  out << "calibrated N=" << train.dataset.size() << " K=" << stats.num_classes() << " d=" << stats.dim()
      << " T=" << fmt_g(stats.temperature) << " s_global=" << fmt_g(stats.s_global) << " grouping="
      << (train.dataset.labels && cfg.grouping != Grouping::predicted ? "labels" : "predicted") << " -> "
      << o.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- score

struct ScoreOptions {
  std::string eval;
  std::string stats;
  std::string head;
  std::string out;
  std::string method = "gafd_cc";
  std::string name;
  double lambda = 0.5;
  double b = 1.0;
  std::optional<double> temperature;
  std::optional<double> clip;
  int threads = 0;
};

int cmd_score(const ScoreOptions& o, std::ostream& out, std::ostream& err) {
  MethodSpec spec;
  spec.method = parse_method(o.method);
  spec.gafd.lambda = o.lambda;
  spec.gafd.b_coef = o.b;
  spec.react_clip = o.clip;

  std::optional<CalibrationStats> stats;
  const bool needs_stats = spec.method == Method::gafd_cc || (spec.method == Method::react && !o.clip);
  if (needs_stats && o.stats.empty()) {
    throw ValidationError(std::string(method_name(spec.method)) + " requires --stats");
  }
  const double temperature = o.temperature.value_or(1.0);
  spec.temperature = temperature;
  spec.gafd.temperature = temperature;
  if (spec.method == Method::gafd_cc) spec.gafd.validate();
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValidationError("temperature must be positive");
  if (o.clip && !(*o.clip > 0.0)) throw ValidationError("clip must be positive");
  const unsigned threads = resolve_threads(o.threads);

  if (!o.stats.empty()) {
    stats = read_stats(o.stats);
    if (!o.temperature) {
      spec.temperature = stats->temperature;
      spec.gafd.temperature = stats->temperature;
    }
  }
  auto loaded = read_dataset(o.eval);
  std::optional<ClassifierHead> head = loaded.head;
  if (!o.head.empty()) head = load_head(o.head);

  ScoreVector scores;
  try {
    scores = score_batch(loaded.dataset, head ? &*head : nullptr, stats ? &*stats : nullptr, spec, threads);
  } catch (const RowFailureError& e) {
    print_row_failures(e, err);
    throw;
  }
  const std::string name = o.name.empty() ? dataset_name(o.eval) : o.name;
  write_scores(scores, name, o.out);
  out << "scored " << scores.values.size() << " rows of " << name << " with " << spec.label() << " -> "
      << o.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string id;
  std::string ood;
  double tpr = kDefaultTpr;
  bool header = false;
};

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  if (!(o.tpr > 0.0 && o.tpr <= 1.0)) throw ValidationError("tpr must lie in (0, 1]");
  const auto id = read_scores(o.id);
  const auto ood = read_scores(o.ood);
  const std::string method = id.scores.method.label();
  if (ood.scores.method.label() != method) {
    throw ValidationError("method mismatch: '" + method + "' vs '" + ood.scores.method.label() + "'");
  }
  const MetricRow row{method, id.dataset, ood.dataset, evaluate(id.scores.values, ood.scores.values, o.tpr)};
  if (o.header) out << csv_header();
  out << format_csv_row(row);
  return kExitOk;
}

// ---------------------------------------------------------------- sweep

struct SweepOptions {
  std::string eval;
  std::string ood;
  std::string stats;
  std::string head;
  std::string out;
  std::string lambda_grid = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
  std::string b_grid = "1";
  double tpr = kDefaultTpr;
  int threads = 0;
};

int cmd_sweep(const SweepOptions& o, std::ostream& out, std::ostream& err) {
  const auto lambdas = parse_grid(o.lambda_grid, "lambda-grid");
  const auto bs = parse_grid(o.b_grid, "b-grid");
  if (!(o.tpr > 0.0 && o.tpr <= 1.0)) throw ValidationError("tpr must lie in (0, 1]");
  for (double l : lambdas) GafdParams{l, 1.0, 1.0}.validate();
  for (double b : bs) GafdParams{0.5, b, 1.0}.validate();
  const unsigned threads = resolve_threads(o.threads);

  const auto stats = read_stats(o.stats);
  auto id = read_dataset(o.eval);
  auto ood = read_dataset(o.ood);
  std::optional<ClassifierHead> head;
  if (!o.head.empty()) head = load_head(o.head);
  const ClassifierHead* id_head = head ? &*head : id.head ? &*id.head : nullptr;
  const ClassifierHead* ood_head = head ? &*head : ood.head ? &*ood.head : nullptr;

  const std::string id_name = dataset_name(o.eval);
  const std::string ood_name = dataset_name(o.ood);
  std::string csv = csv_header();
  for (double b : bs) {
    for (double l : lambdas) {
      MethodSpec spec;
      spec.method = Method::gafd_cc;
      spec.gafd = {l, b, stats.temperature};
      spec.temperature = stats.temperature;
      try {
        const auto si = score_batch(id.dataset, id_head, &stats, spec, threads);
        const auto so = score_batch(ood.dataset, ood_head, &stats, spec, threads);
        csv += format_csv_row({spec.label(), id_name, ood_name, evaluate(si.values, so.values, o.tpr)});
      } catch (const RowFailureError& e) {
        err << spec.label() << ":\n";
        print_row_failures(e, err);
        throw;
      }
    }
  }
  if (o.out.empty()) {
    out << csv;
  } else {
    write_file_atomic(o.out, csv);
  }
  return kExitOk;
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
  SynthConfig cfg;
  std::string ood_kind = "prototype_free";
  std::string out;
};

int cmd_synth(SynthOptions o, std::ostream& out) {
  o.cfg.ood_kind = parse_ood_kind(o.ood_kind);
  o.cfg.validate();
  const fs::path root(o.out);
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create '" + o.out + "': " + ec.message());
  }
  const auto data = make_synthetic(o.cfg);
  write_dataset(data.train, &data.head, root / "train");
  write_dataset(data.test, &data.head, root / "test");
  write_dataset(data.ood, &data.head, root / "ood");
  out << "synthesized train=" << data.train.size() << " test=" << data.test.size() << " ood=" << data.ood.size()
      << " (" << ood_dataset_name(o.cfg) << ") -> " << o.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- report

struct ReportOptions {
  std::vector<std::string> inputs;
  std::string out;
  bool best_bold = false;
};

int cmd_report(const ReportOptions& o, std::ostream& out) {
  std::vector<MetricRow> rows;
  for (const auto& file : o.inputs) {
    if (!fs::is_regular_file(file)) throw IoError("'" + file + "' not found");
    auto parsed = parse_metrics_csv(read_text_file(file));
    rows.insert(rows.end(), parsed.begin(), parsed.end());
  }
  const std::string md = render_markdown_report(rows, o.best_bold);
  if (o.out.empty()) {
    out << md;
  } else {
    write_file_atomic(o.out, md);
  }
  return kExitOk;
}

// Pulls "--config FILE" / "--config=FILE" out of the arguments following the
// subcommand and splices the file's settings in ahead of the explicit flags.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty()) return args;
  std::vector<std::string> explicit_args;
  std::vector<std::string> from_file;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--config") {
      if (i + 1 >= args.size()) throw ValidationError("--config requires a file argument");
      auto more = config_file_args(args[++i]);
      from_file.insert(from_file.end(), more.begin(), more.end());
    } else if (a.rfind("--config=", 0) == 0) {
      auto more = config_file_args(a.substr(9));
      from_file.insert(from_file.end(), more.begin(), more.end());
    } else {
      explicit_args.push_back(a);
    }
  }
  std::vector<std::string> out{args[0]};
  out.insert(out.end(), from_file.begin(), from_file.end());
  out.insert(out.end(), explicit_args.begin(), explicit_args.end());
  return out;
}

}  // namespace

std::vector<std::string> config_file_args(const std::string& path) {
  if (!fs::is_regular_file(path)) throw IoError("config file '" + path + "' not found");
  std::istringstream in(read_text_file(path));
  std::vector<std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ValidationError(path + ":" + std::to_string(line_no) + ": empty key");
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "config") throw ValidationError(path + ": nested config files are not supported");
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Post-hoc out-of-distribution scoring and evaluation", "oodscore"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  const std::string config_help = "flat key=value file of flag defaults; explicit flags win";

  CalibrateOptions cal;
  auto* calibrate = app.add_subcommand("calibrate", "fit class means, weight sums and energy confidences");
  calibrate->add_option("--train", cal.train, "training-set container")->required();
  calibrate->add_option("--head", cal.head, "container holding W and bias (default: the train container)");
  calibrate->add_option("--out", cal.out, "output stats container")->required();
  calibrate->add_option("--temperature", cal.temperature, "energy temperature T")->capture_default_str();
  calibrate->add_option("--grouping", cal.grouping, "auto|labels|predicted")->capture_default_str();
  calibrate->add_option("--react-percentile", cal.react_percentile, "activation percentile for the ReAct clip")
      ->capture_default_str();
  calibrate->add_option("--config", config_help);

  ScoreOptions sc;
  double temperature_flag = 0.0;
  double clip_flag = 0.0;
  auto* score = app.add_subcommand("score", "score a dataset with one method");
  score->add_option("--eval", sc.eval, "dataset container to score")->required();
  score->add_option("--stats", sc.stats, "calibration stats container");
  score->add_option("--head", sc.head, "container holding W and bias");
  score->add_option("--out", sc.out, "output score container")->required();
  score->add_option("--method", sc.method, "msp|maxlogit|energy|react|gafd_cc")->capture_default_str();
  score->add_option("--lambda", sc.lambda, "positive-feature weight in [0, 1]")->capture_default_str();
  score->add_option("--b", sc.b, "class-confidence coefficient (0 gives GAFD-C)")->capture_default_str();
  auto* temp_opt = score->add_option("--temperature", temperature_flag, "energy temperature (default: stats, else 1)");
  auto* clip_opt = score->add_option("--clip", clip_flag, "ReAct clip threshold (default: stats)");
  score->add_option("--name", sc.name, "dataset name recorded with the scores (default: directory name)");
  score->add_option("--threads", sc.threads, "worker threads (default: OODSCORE_THREADS or all cores)");
  score->add_option("--config", config_help);

  EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "AUROC and FPR at a TPR target, as one CSV row");
  eval->add_option("--id", ev.id, "ID score container")->required();
  eval->add_option("--ood", ev.ood, "OOD score container")->required();
  eval->add_option("--tpr", ev.tpr, "TPR target")->capture_default_str();
  eval->add_flag("--header", ev.header, "print the CSV header first");
  eval->add_option("--config", config_help);

  SweepOptions sw;
  auto* sweep = app.add_subcommand("sweep", "evaluate gafd_cc over lambda and b grids");
  sweep->add_option("--eval", sw.eval, "ID test container")->required();
  sweep->add_option("--ood", sw.ood, "OOD container")->required();
  sweep->add_option("--stats", sw.stats, "calibration stats container")->required();
  sweep->add_option("--head", sw.head, "container holding W and bias");
  sweep->add_option("--lambda-grid", sw.lambda_grid, "comma-separated lambda values")->capture_default_str();
  sweep->add_option("--b-grid", sw.b_grid, "comma-separated b values")->capture_default_str();
  sweep->add_option("--tpr", sw.tpr, "TPR target")->capture_default_str();
  sweep->add_option("--out", sw.out, "CSV output file (default: standard output)");
  sweep->add_option("--threads", sw.threads, "worker threads (default: OODSCORE_THREADS or all cores)");
  sweep->add_option("--config", config_help);

  SynthOptions sy;
  std::uint64_t seed = sy.cfg.seed;
  auto* synth = app.add_subcommand("synth", "generate train/test/ood synthetic containers");
  synth->add_option("--K", sy.cfg.num_classes, "number of classes")->capture_default_str();
  synth->add_option("--d", sy.cfg.dim, "feature dimension")->capture_default_str();
  synth->add_option("--n-per-class", sy.cfg.n_per_class, "ID samples per class and split")->capture_default_str();
  synth->add_option("--n-ood", sy.cfg.n_ood, "OOD samples")->capture_default_str();
  synth->add_option("--proto-scale", sy.cfg.proto_scale, "class prototype magnitude")->capture_default_str();
  synth->add_option("--noise-sigma", sy.cfg.noise_sigma, "isotropic noise level")->capture_default_str();
  synth->add_option("--ood-kind", sy.ood_kind, "mean_shift|scale_shift|prototype_free")->capture_default_str();
  synth->add_option("--shift-mag", sy.cfg.shift_mag, "OOD shift magnitude")->capture_default_str();
  synth->add_option("--seed", seed, "generator seed")->capture_default_str();
  synth->add_option("--out", sy.out, "output root (train/, test/, ood/ are created inside)")->required();
  synth->add_option("--config", config_help);

  ReportOptions rp;
  auto* report = app.add_subcommand("report", "merge metric CSVs into a markdown table");
  report->add_option("inputs", rp.inputs, "metric CSV files")->required()->multi_option_policy(
      CLI::MultiOptionPolicy::TakeAll);
  report->add_flag("--best-bold", rp.best_bold, "embolden the best value per column");
  report->add_option("--out", rp.out, "markdown output file (default: standard output)");
  report->add_option("--config", config_help);

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }

  try {
    if (*calibrate) return cmd_calibrate(cal, out);
    if (*score) {
      if (*temp_opt) sc.temperature = temperature_flag;
      if (*clip_opt) sc.clip = clip_flag;
      return cmd_score(sc, out, err);
    }
    if (*eval) return cmd_eval(ev, out);
    if (*sweep) return cmd_sweep(sw, out, err);
    if (*synth) {
      sy.cfg.seed = seed;
      return cmd_synth(sy, out);
    }
    if (*report) return cmd_report(rp, out);
  } catch (const RowFailureError& e) {
    err << "error: " << e.what() << '\n';
    return kExitRowFailure;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
  err << "error: no command given\n";
  return kExitValidation;
}

}  // namespace oodscore
