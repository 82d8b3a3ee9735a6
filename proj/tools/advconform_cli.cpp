#include "advconform/errors.hpp"
#include "advconform/experiment.hpp"
#include "advconform/theory_check.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace advconform;

namespace {

enum ExitCode : int
{
  kSuccess = 0,
  kConfigError = 1,
  kPartialFailure = 2,
  kIoError = 3
};

struct GlobalOptions
{
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  std::optional<double> alpha;
  std::optional<double> beta;
};

struct DataOptions
{
  std::optional<fs::path> csv;
  std::optional<fs::path> images;
  std::optional<fs::path> labels;
  std::uint64_t replicate = 0;
};

SweepConfig resolve_config(const GlobalOptions& g)
{
  SweepConfig cfg = g.config ? load_sweep_config(*g.config) : default_sweep_config();
  if (g.seed)
    cfg.master_seed = *g.seed;
  if (g.alpha)
    cfg.alpha = *g.alpha;
  if (g.beta)
    cfg.beta = *g.beta;
  if (g.out)
    cfg.output_dir = *g.out;
  validate(cfg);
  return cfg;
}

void apply_data_options(SweepConfig& cfg, const DataOptions& d)
{
  if (d.csv) {
    cfg.data.source = DataSource::csv;
    cfg.data.csv = *d.csv;
  } else if (d.images || d.labels) {
    if (!d.images || !d.labels)
      throw ConfigError("--images and --labels must be given together");
    cfg.data.source = DataSource::idx;
    cfg.data.images = *d.images;
    cfg.data.labels = *d.labels;
  }
}

void add_data_options(CLI::App* cmd, DataOptions& d)
{
  cmd->add_option("--data", d.csv, "Dataset in CSV form (overrides the config)");
  cmd->add_option("--images", d.images, "IDX image file (with --labels)");
  cmd->add_option("--labels", d.labels, "IDX label file (with --images)");
  cmd->add_option("--replicate", d.replicate, "Replicate index selecting the split")->capture_default_str();
}

fs::path output_path(const GlobalOptions& g, const SweepConfig& cfg, const char* default_name)
{
  return g.out ? *g.out : cfg.output_dir / default_name;
}

void ensure_parent(const fs::path& path)
{
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text)
{
  ensure_parent(path);
  std::ofstream out(path);
  if (!out)
    throw IoError(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out)
    throw IoError(fmt::format("failed writing {}", path.string()));
}

struct Context
{
  SweepConfig cfg;
  LabeledDataset ds;
  SeedPlan plan;
  SplitIndices split;
};

Context load_context(const GlobalOptions& g, const DataOptions& d)
{
  SweepConfig cfg = resolve_config(g);
  apply_data_options(cfg, d);
  LabeledDataset ds = load_dataset(cfg.data);
  SeedPlan plan{ cfg.master_seed, d.replicate };
  SplitIndices split = replicate_split(cfg, ds, plan);
  return Context{ std::move(cfg), std::move(ds), plan, std::move(split) };
}

int run_gen_data(const GlobalOptions& g, const std::string& format, const std::optional<int>& classes,
                 const std::optional<int>& dim, const std::optional<std::size_t>& n,
                 const std::optional<double>& separation)
{
  SweepConfig cfg = resolve_config(g);
  DataConfig data = cfg.data;
  data.source = DataSource::mixture;
  if (classes)
    data.num_classes = *classes;
  if (dim)
    data.dim = *dim;
  if (n)
    data.n = *n;
  if (separation)
    data.separation = *separation;
  if (g.seed)
    data.seed = *g.seed;
  if (data.num_classes < 2 || data.dim < 1 || data.n < static_cast<std::size_t>(data.num_classes) ||
      !(data.separation > 0.0))
    throw ConfigError("invalid mixture parameters");
  const LabeledDataset ds = load_dataset(data);
  if (format == "idx") {
    const fs::path dir = g.out ? *g.out : cfg.output_dir;
    fs::create_directories(dir);
    write_idx(ds, dir / "images.idx", dir / "labels.idx");
    fmt::print("images: {}\nlabels: {}\n", (dir / "images.idx").string(), (dir / "labels.idx").string());
  } else {
    const fs::path path = output_path(g, cfg, "data.csv");
    ensure_parent(path);
    write_dataset_csv(ds, path);
    fmt::print("data: {}\n", path.string());
  }
  fmt::print("samples: {}\ndim: {}\nclasses: {}\n", ds.size(), ds.dim(), ds.num_classes());
  return kSuccess;
}

int run_train(const GlobalOptions& g, const DataOptions& d, double eps_train, const std::optional<int>& hidden,
              const std::optional<int>& epochs, const std::optional<double>& step_size,
              const std::optional<fs::path>& log_path)
{
  GlobalOptions gg = g;
  gg.out.reset();
  Context ctx = load_context(gg, d);
  if (hidden)
    ctx.cfg.hidden_width = *hidden;
  if (epochs)
    ctx.cfg.train.epochs = *epochs;
  if (step_size)
    ctx.cfg.train.step_size = *step_size;
  validate(ctx.cfg);
  validate(AttackSpec{ ctx.cfg.norm, eps_train });

  std::ofstream log_file;
  TrainHooks hooks;
  if (log_path) {
    ensure_parent(*log_path);
    log_file.open(*log_path);
    if (!log_file)
      throw IoError(fmt::format("cannot write {}", log_path->string()));
    hooks.on_epoch = csv_epoch_logger(log_file);
  }
  const Classifier model = train_replicate(ctx.cfg, ctx.ds, ctx.split, eps_train, ctx.plan, hooks);
  const fs::path path = g.out ? *g.out : ctx.cfg.output_dir / "model.txt";
  ensure_parent(path);
  save_checkpoint(model, path);
  const AttackSpec clean{ ctx.cfg.norm, 0.0 };
  const AttackSpec attacked{ ctx.cfg.norm, eps_train, ctx.cfg.clip_unit_box };
  fmt::print("model: {}\n", path.string());
  fmt::print("eps_train: {}\n", format_epsilon(eps_train));
  fmt::print("train_acc: {}\n", accuracy(model, ctx.ds, ctx.split.train, clean));
  fmt::print("test_acc: {}\n", accuracy(model, ctx.ds, ctx.split.test, clean));
  fmt::print("test_adv_acc: {}\n", accuracy(model, ctx.ds, ctx.split.test, attacked));
  return kSuccess;
}

int run_calibrate(const GlobalOptions& g, const DataOptions& d, const fs::path& model_path, double eps_cal,
                  const std::optional<std::string>& score)
{
  GlobalOptions gg = g;
  gg.out.reset();
  Context ctx = load_context(gg, d);
  if (score)
    ctx.cfg.score_kind = parse_score_kind(*score);
  const Classifier model = load_checkpoint(model_path);
  const CalibrationResult cal =
    calibrate(model, ctx.ds, ctx.split.cal, ctx.cfg.alpha, ctx.cfg.score_kind,
              AttackSpec{ ctx.cfg.norm, eps_cal, ctx.cfg.clip_unit_box }, ctx.plan.calibrate(eps_cal));
  const fs::path path = g.out ? *g.out : ctx.cfg.output_dir / "calibration.txt";
  ensure_parent(path);
  save_calibration(cal, path);
  fmt::print("calibration: {}\nscore_kind: {}\neps_cal: {}\nq_hat: {}\nn_scores: {}\n", path.string(),
             to_string(cal.score_kind), format_epsilon(cal.eps_cal), cal.q_hat, cal.cal_scores.size());
  return kSuccess;
}

int run_evaluate(const GlobalOptions& g, const DataOptions& d, const fs::path& model_path,
                 const fs::path& calibration_path, double eps_test)
{
  GlobalOptions gg = g;
  gg.out.reset();
  Context ctx = load_context(gg, d);
  const Classifier model = load_checkpoint(model_path);
  const CalibrationResult cal = load_calibration(calibration_path);
  const Evaluation ev = evaluate(model, ctx.ds, ctx.split.test, cal,
                                 AttackSpec{ ctx.cfg.norm, eps_test, ctx.cfg.clip_unit_box },
                                 ctx.plan.evaluate(cal.eps_cal, eps_test));
  const double lo = 1.0 - cal.alpha - ctx.cfg.beta;
  const double hi = 1.0 - cal.alpha + ctx.cfg.beta;
  const bool in_band = ev.coverage >= lo && ev.coverage <= hi;
  fmt::print("eps_cal: {}\neps_test: {}\ncoverage: {}\nmean_set_size: {}\nq_hat: {}\nin_band: {}\n",
             format_epsilon(cal.eps_cal), format_epsilon(eps_test), ev.coverage, ev.mean_set_size, cal.q_hat,
             in_band);
  if (g.out) {
    const nlohmann::json doc = { { "eps_cal", format_epsilon(cal.eps_cal) },
                                 { "eps_test", format_epsilon(eps_test) },
                                 { "coverage", ev.coverage },
                                 { "mean_set_size", ev.mean_set_size },
                                 { "q_hat", cal.q_hat },
                                 { "in_band", in_band } };
    write_text(*g.out, doc.dump(2) + "\n");
  }
  return kSuccess;
}

int run_sweep_command(const GlobalOptions& g, const std::optional<int>& workers)
{
  SweepConfig cfg = resolve_config(g);
  if (workers)
    cfg.workers = *workers;
  validate(cfg);
  fs::create_directories(cfg.output_dir);
  const std::vector<ExperimentRecord> records = run_sweep(cfg);
  const fs::path csv = cfg.output_dir / "results.csv";
  const fs::path json = cfg.output_dir / "summary.json";
  emit_csv(records, csv);
  emit_json(cfg, records, json);
  const auto failed = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.error.has_value(); });
  fmt::print("results: {}\nsummary: {}\nrows: {}\nfailed_rows: {}\n", csv.string(), json.string(), records.size(),
             failed);
  return failed > 0 ? kPartialFailure : kSuccess;
}

int run_check_band(const GlobalOptions& g, const std::optional<fs::path>& csv_path)
{
  SweepConfig cfg = resolve_config(g);
  const fs::path csv = csv_path ? *csv_path : cfg.output_dir / "results.csv";
  const std::vector<ExperimentRecord> records = read_csv(csv);
  const std::vector<BandReport> reports = check_band(records, cfg.alpha, cfg.beta);
  fmt::print("{}", band_report_text(reports));
  write_text(cfg.output_dir / "band.json", band_report_json(reports) + "\n");
  const bool failed = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.error.has_value(); });
  return failed ? kPartialFailure : kSuccess;
}

int run_check_theory(const GlobalOptions& g, const DataOptions& d, const fs::path& model_path,
                     const std::optional<std::string>& eps_cal, const std::optional<std::string>& eps_test,
                     const std::string& norm, const std::optional<double>& e_train,
                     const std::optional<double>& d_cal, const std::optional<double>& e_cal)
{
  Context ctx = load_context(g, d);
  const Classifier model = load_checkpoint(model_path);
  TheoryCheckConfig tc;
  tc.alpha = ctx.cfg.alpha;
  tc.beta = ctx.cfg.beta;
  tc.eps_cal = eps_cal ? parse_epsilon(*eps_cal) : ctx.cfg.calibration.front().eps_cal;
  tc.eps_test = eps_test ? parse_epsilon_grid(*eps_test) : ctx.cfg.calibration.front().eps_test;
  tc.norm = parse_norm(norm);
  tc.settings = ctx.cfg.theory;
  if (e_train)
    tc.settings.budget.e_train = *e_train;
  if (d_cal)
    tc.settings.budget.d_cal = *d_cal;
  if (e_cal)
    tc.settings.budget.e_cal = *e_cal;
  tc.seed = derive_seed(ctx.cfg.master_seed, { d.replicate });
  const TheoryCheckReport report = theory_check(model, ctx.ds, ctx.split, tc);
  fmt::print("{}", theory_check_text(report));
  write_text(ctx.cfg.output_dir / "theory.json", theory_check_json(report) + "\n");
  return kSuccess;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{ "Adversarially robust split conformal prediction experiments" };
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config, "INI config file (sections data, model, train, conformal, sweep, output)");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out, "Output file or directory, depending on the subcommand");
  app.add_option("--alpha", g.alpha, "Miscoverage level");
  app.add_option("--beta", g.beta, "Coverage tolerance");

  std::function<int()> action;

  auto* gen = app.add_subcommand("gen-data", "Generate a Gaussian mixture dataset");
  std::string gen_format = "csv";
  std::optional<int> gen_classes;
  std::optional<int> gen_dim;
  std::optional<std::size_t> gen_n;
  std::optional<double> gen_sep;
  gen->add_option("--format", gen_format, "csv or idx")->check(CLI::IsMember({ "csv", "idx" }))->capture_default_str();
  gen->add_option("--classes", gen_classes, "Number of classes");
  gen->add_option("--dim", gen_dim, "Feature dimension");
  gen->add_option("-n,--samples", gen_n, "Number of samples");
  gen->add_option("--separation", gen_sep, "Distance between adjacent class means");
  gen->callback([&] { action = [&] { return run_gen_data(g, gen_format, gen_classes, gen_dim, gen_n, gen_sep); }; });

  auto* tr = app.add_subcommand("train", "Train one model on the training split");
  DataOptions tr_data;
  std::string tr_eps = "0";
  std::optional<int> tr_hidden;
  std::optional<int> tr_epochs;
  std::optional<double> tr_step;
  std::optional<fs::path> tr_log;
  add_data_options(tr, tr_data);
  tr->add_option("--eps-train", tr_eps, "Training attack strength, e.g. 8/255")->capture_default_str();
  tr->add_option("--hidden", tr_hidden, "Hidden width (0 for a linear model)");
  tr->add_option("--epochs", tr_epochs, "Training epochs");
  tr->add_option("--step-size", tr_step, "Gradient step size");
  tr->add_option("--log", tr_log, "Per-epoch CSV log");
  tr->callback([&] {
    action = [&] { return run_train(g, tr_data, parse_epsilon(tr_eps), tr_hidden, tr_epochs, tr_step, tr_log); };
  });

  auto* cal = app.add_subcommand("calibrate", "Calibrate a trained model on the calibration split");
  DataOptions cal_data;
  fs::path cal_model;
  std::string cal_eps = "0";
  std::optional<std::string> cal_score;
  add_data_options(cal, cal_data);
  cal->add_option("--model", cal_model, "Model checkpoint")->required();
  cal->add_option("--eps-cal", cal_eps, "Calibration attack strength")->capture_default_str();
  cal->add_option("--score", cal_score, "hps or aps");
  cal->callback([&] {
    action = [&] { return run_calibrate(g, cal_data, cal_model, parse_epsilon(cal_eps), cal_score); };
  });

  auto* ev = app.add_subcommand("evaluate", "Measure coverage and set size on the test split");
  DataOptions ev_data;
  fs::path ev_model;
  fs::path ev_cal;
  std::string ev_eps = "0";
  add_data_options(ev, ev_data);
  ev->add_option("--model", ev_model, "Model checkpoint")->required();
  ev->add_option("--calibration", ev_cal, "Calibration record")->required();
  ev->add_option("--eps-test", ev_eps, "Test attack strength")->capture_default_str();
  ev->callback([&] {
    action = [&] { return run_evaluate(g, ev_data, ev_model, ev_cal, parse_epsilon(ev_eps)); };
  });

  auto* sw = app.add_subcommand("sweep", "Run the full (eps_train, eps_cal, eps_test, seed) grid");
  std::optional<int> sw_workers;
  sw->add_option("--workers", sw_workers, "Concurrent training jobs");
  sw->callback([&] { action = [&] { return run_sweep_command(g, sw_workers); }; });

  auto* band = app.add_subcommand("check-band", "Report the in-band eps_test runs of a sweep");
  std::optional<fs::path> band_csv;
  band->add_option("--csv", band_csv, "Sweep results (default <out>/results.csv)");
  band->callback([&] { action = [&] { return run_check_band(g, band_csv); }; });

  auto* theory = app.add_subcommand("check-theory", "Compare measured coverage with the first-order bounds");
  DataOptions th_data;
  fs::path th_model;
  std::optional<std::string> th_eps_cal;
  std::optional<std::string> th_eps_test;
  std::string th_norm = "l2";
  std::optional<double> th_e_train;
  std::optional<double> th_d_cal;
  std::optional<double> th_e_cal;
  add_data_options(theory, th_data);
  theory->add_option("--model", th_model, "Model checkpoint")->required();
  theory->add_option("--eps-cal", th_eps_cal, "Calibration attack strength");
  theory->add_option("--eps-test", th_eps_test, "Test strength grid, e.g. 2..14/255");
  theory->add_option("--norm", th_norm, "Attack norm (l2 or linf)")->capture_default_str();
  theory->add_option("--e-train", th_e_train, "Training error budget term");
  theory->add_option("--d-cal", th_d_cal, "Calibration error budget term");
  theory->add_option("--e-cal", th_e_cal, "Calibration estimation budget term");
  theory->callback([&] {
    action = [&] {
      return run_check_theory(g, th_data, th_model, th_eps_cal, th_eps_test, th_norm, th_e_train, th_d_cal, th_e_cal);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kConfigError;
  }

  try {
    return action();
  } catch (const ConfigError& e) {
    fmt::print(std::cerr, "config error: {}\n", e.what());
    return kConfigError;
  } catch (const ArgumentError& e) {
    fmt::print(std::cerr, "invalid argument: {}\n", e.what());
    return kConfigError;
  } catch (const TrainingDiverged& e) {
    fmt::print(std::cerr, "training failed: {}\n", e.what());
    return kPartialFailure;
  } catch (const IoError& e) {
    fmt::print(std::cerr, "i/o error: {}\n", e.what());
    return kIoError;
  } catch (const FormatError& e) {
    fmt::print(std::cerr, "format error: {}\n", e.what());
    return kIoError;
  } catch (const ConsistencyError& e) {
    fmt::print(std::cerr, "inconsistent input: {}\n", e.what());
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    fmt::print(std::cerr, "i/o error: {}\n", e.what());
    return kIoError;
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return kConfigError;
  }
}
