#include "advconform/experiment.hpp"

#include "advconform/errors.hpp"
#include "advconform/random.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>
#include <type_traits>

namespace advconform {

namespace {

enum Stage : std::uint64_t
{
  kSplit = 1,
  kInit = 2,
  kShuffle = 3,
  kCalibrate = 4,
  kEvaluate = 5
};

std::string trim(std::string s)
{
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos)
    return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_on(const std::string& text, char sep)
{
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, sep))
    parts.push_back(trim(part));
  return parts;
}

long long parse_integer(const std::string& text)
{
  long long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    throw ConfigError(fmt::format("expected an integer, found '{}'", text));
  return v;
}

double parse_real(const std::string& text)
{
  if (text == "inf")
    return std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    throw FormatError(fmt::format("expected a number, found '{}'", text));
  return v;
}

} // namespace

std::uint64_t SeedPlan::split() const noexcept
{
  return derive_seed(master, { replicate, kSplit });
}

std::uint64_t SeedPlan::init() const noexcept
{
  return derive_seed(master, { replicate, kInit });
}

std::uint64_t SeedPlan::shuffle() const noexcept
{
  return derive_seed(master, { replicate, kShuffle });
}

std::uint64_t SeedPlan::calibrate(double eps_cal) const noexcept
{
  return derive_seed(master, { replicate, kCalibrate, seed_coordinate(eps_cal) });
}

std::uint64_t SeedPlan::evaluate(double eps_cal, double eps_test) const noexcept
{
  return derive_seed(master, { replicate, kEvaluate, seed_coordinate(eps_cal), seed_coordinate(eps_test) });
}

std::vector<double> parse_epsilon_grid(const std::string& text)
{
  std::vector<double> grid;
  for (const std::string& item : split_on(text, ',')) {
    if (item.empty())
      continue;
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      grid.push_back(parse_epsilon(item));
      continue;
    }
    // a..b[:step][/den]
    std::string rest = item.substr(dots + 2);
    std::string den = "1";
    if (auto slash = rest.find('/'); slash != std::string::npos) {
      den = trim(rest.substr(slash + 1));
      rest = rest.substr(0, slash);
    }
    long long step = 1;
    if (auto colon = rest.find(':'); colon != std::string::npos) {
      step = parse_integer(trim(rest.substr(colon + 1)));
      rest = rest.substr(0, colon);
    }
    const long long lo = parse_integer(trim(item.substr(0, dots)));
    const long long hi = parse_integer(trim(rest));
    if (step < 1 || hi < lo)
      throw ConfigError(fmt::format("bad range '{}'", item));
    for (long long k = lo; k <= hi; k += step)
      grid.push_back(parse_epsilon(fmt::format("{}/{}", k, den)));
  }
  if (grid.empty())
    throw ConfigError(fmt::format("empty epsilon grid '{}'", text));
  return grid;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text)
{
  std::vector<std::uint64_t> seeds;
  for (const std::string& item : split_on(text, ',')) {
    if (item.empty())
      continue;
    if (const auto dots = item.find(".."); dots != std::string::npos) {
      const long long lo = parse_integer(trim(item.substr(0, dots)));
      const long long hi = parse_integer(trim(item.substr(dots + 2)));
      if (lo < 0 || hi < lo)
        throw ConfigError(fmt::format("bad seed range '{}'", item));
      for (long long s = lo; s <= hi; ++s)
        seeds.push_back(static_cast<std::uint64_t>(s));
    } else {
      const long long s = parse_integer(item);
      if (s < 0)
        throw ConfigError(fmt::format("negative seed '{}'", item));
      seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  if (seeds.empty())
    throw ConfigError(fmt::format("empty seed list '{}'", text));
  return seeds;
}

SweepConfig default_sweep_config()
{
  SweepConfig cfg;
  cfg.eps_train = parse_epsilon_grid("0..16:4/255");
  cfg.calibration = { { parse_epsilon("8/255"), parse_epsilon_grid("2..14/255") },
                      { parse_epsilon("16/255"), parse_epsilon_grid("10..22/255") } };
  cfg.seeds = parse_seed_list("0..9");
  return cfg;
}

void validate(const SweepConfig& cfg)
{
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
    fail(fmt::format("alpha must lie in (0, 1), got {}", cfg.alpha));
  if (!(cfg.beta > 0.0))
    fail(fmt::format("beta must be positive, got {}", cfg.beta));
  if (cfg.eps_train.empty() || cfg.calibration.empty() || cfg.seeds.empty())
    fail("eps_train, eps_cal and seeds grids must be non-empty");
  auto check_eps = [&](double e) {
    if (!(e >= 0.0) || !std::isfinite(e))
      fail(fmt::format("epsilon values must be finite and >= 0, got {}", e));
  };
  for (double e : cfg.eps_train)
    check_eps(e);
  for (const CalibrationGroup& g : cfg.calibration) {
    check_eps(g.eps_cal);
    if (g.eps_test.empty())
      fail(fmt::format("eps_cal {} has an empty eps_test grid", format_epsilon(g.eps_cal)));
    for (double e : g.eps_test)
      check_eps(e);
  }
  if (cfg.hidden_width < 0)
    fail("hidden_width must be >= 0");
  if (cfg.workers < 1)
    fail("workers must be >= 1");
  try {
    validate(cfg.train);
    validate(cfg.theory);
  } catch (const ArgumentError& e) {
    fail(e.what());
  }
  if (cfg.data.source == DataSource::mixture) {
    if (cfg.data.num_classes < 2 || cfg.data.dim < 1 || cfg.data.n < static_cast<std::size_t>(cfg.data.num_classes) ||
        !(cfg.data.separation > 0.0))
      fail("invalid mixture parameters");
  }
  double total = 0.0;
  for (double f : cfg.data.fractions) {
    if (!(f > 0.0))
      fail("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9)
    fail(fmt::format("split fractions sum to {}, expected 1", total));
}

SweepConfig load_sweep_config(const std::filesystem::path& path)
{
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("cannot read config {}: {}", path.string(), e.what()));
  }

  SweepConfig cfg = default_sweep_config();
  try {
    auto str = [&](const char* key) { return tree.get_optional<std::string>(key); };
    // strict conversion of present keys; absent keys keep the fallback
    auto value = [&]<typename T>(const char* key, T fallback) -> T {
      if (!tree.get_optional<std::string>(key))
        return fallback;
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        const auto v = tree.get<long long>(key);
        if (v < 0)
          throw ConfigError(fmt::format("{} must be >= 0, got {}", key, v));
        return static_cast<T>(v);
      } else {
        return tree.get<T>(key);
      }
    };

    if (auto v = str("data.source")) {
      if (*v == "mixture")
        cfg.data.source = DataSource::mixture;
      else if (*v == "idx")
        cfg.data.source = DataSource::idx;
      else if (*v == "csv")
        cfg.data.source = DataSource::csv;
      else
        throw ConfigError(fmt::format("unknown data.source '{}'", *v));
    }
    cfg.data.num_classes = value("data.num_classes", cfg.data.num_classes);
    cfg.data.dim = value("data.dim", cfg.data.dim);
    cfg.data.n = value("data.n", cfg.data.n);
    cfg.data.separation = value("data.separation", cfg.data.separation);
    cfg.data.seed = value("data.seed", cfg.data.seed);
    if (auto v = str("data.images"))
      cfg.data.images = *v;
    if (auto v = str("data.labels"))
      cfg.data.labels = *v;
    if (auto v = str("data.csv"))
      cfg.data.csv = *v;
    if (auto v = str("data.fractions")) {
      const auto parts = split_on(*v, ',');
      if (parts.size() != 3)
        throw ConfigError("data.fractions needs three values");
      for (std::size_t i = 0; i < 3; ++i)
        cfg.data.fractions[i] = parse_real(parts[i]);
    }

    cfg.hidden_width = value("model.hidden_width", cfg.hidden_width);

    cfg.train.epochs = value("train.epochs", cfg.train.epochs);
    cfg.train.step_size = value("train.step_size", cfg.train.step_size);
    cfg.train.batch_size = value("train.batch_size", cfg.train.batch_size);

    cfg.alpha = value("conformal.alpha", cfg.alpha);
    cfg.beta = value("conformal.beta", cfg.beta);
    if (auto v = str("conformal.score"))
      cfg.score_kind = parse_score_kind(*v);
    cfg.theory.budget.e_train = value("conformal.e_train", cfg.theory.budget.e_train);
    cfg.theory.budget.d_cal = value("conformal.d_cal", cfg.theory.budget.d_cal);
    cfg.theory.budget.e_cal = value("conformal.e_cal", cfg.theory.budget.e_cal);
    cfg.theory.c_window = value("conformal.c_window", cfg.theory.c_window);
    cfg.theory.kde_bandwidth = value("conformal.kde_bandwidth", cfg.theory.kde_bandwidth);
    cfg.theory.shift_mc = value("conformal.shift_mc", cfg.theory.shift_mc);

    if (auto v = str("sweep.norm"))
      cfg.norm = parse_norm(*v);
    cfg.clip_unit_box = value("sweep.clip", cfg.clip_unit_box);
    if (auto v = str("sweep.eps_train"))
      cfg.eps_train = parse_epsilon_grid(*v);
    if (auto v = str("sweep.eps_cal")) {
      const auto cal = parse_epsilon_grid(*v);
      std::vector<std::vector<double>> tests;
      if (auto t = str("sweep.eps_test")) {
        for (const std::string& group : split_on(*t, ';'))
          tests.push_back(parse_epsilon_grid(group));
      } else {
        for (const CalibrationGroup& g : cfg.calibration)
          tests.push_back(g.eps_test);
      }
      if (tests.size() != 1 && tests.size() != cal.size())
        throw ConfigError(fmt::format("{} eps_test groups for {} eps_cal values", tests.size(), cal.size()));
      cfg.calibration.clear();
      for (std::size_t i = 0; i < cal.size(); ++i)
        cfg.calibration.push_back({ cal[i], tests.size() == 1 ? tests[0] : tests[i] });
    } else if (auto t = str("sweep.eps_test")) {
      const auto groups = split_on(*t, ';');
      if (groups.size() != 1 && groups.size() != cfg.calibration.size())
        throw ConfigError("eps_test groups do not match the eps_cal grid");
      for (std::size_t i = 0; i < cfg.calibration.size(); ++i)
        cfg.calibration[i].eps_test = parse_epsilon_grid(groups.size() == 1 ? groups[0] : groups[i]);
    }
    if (auto v = str("sweep.seeds"))
      cfg.seeds = parse_seed_list(*v);
    cfg.master_seed = value("sweep.master_seed", cfg.master_seed);
    cfg.workers = value("sweep.workers", cfg.workers);

    if (auto v = str("output.dir"))
      cfg.output_dir = *v;
  } catch (const pt::ptree_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const ArgumentError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const FormatError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  validate(cfg);
  return cfg;
}

namespace {

nlohmann::json eps_list(const std::vector<double>& grid)
{
  nlohmann::json out = nlohmann::json::array();
  for (double e : grid)
    out.push_back(format_epsilon(e));
  return out;
}

nlohmann::json config_json(const SweepConfig& cfg)
{
  nlohmann::json data;
  switch (cfg.data.source) {
    case DataSource::mixture:
      data = { { "source", "mixture" },       { "num_classes", cfg.data.num_classes },
               { "dim", cfg.data.dim },        { "n", cfg.data.n },
               { "separation", cfg.data.separation }, { "seed", cfg.data.seed } };
      break;
    case DataSource::idx:
      data = { { "source", "idx" }, { "images", cfg.data.images.string() }, { "labels", cfg.data.labels.string() } };
      break;
    case DataSource::csv:
      data = { { "source", "csv" }, { "csv", cfg.data.csv.string() } };
      break;
  }
  data["fractions"] = cfg.data.fractions;

  nlohmann::json groups = nlohmann::json::array();
  for (const CalibrationGroup& g : cfg.calibration)
    groups.push_back({ { "eps_cal", format_epsilon(g.eps_cal) }, { "eps_test", eps_list(g.eps_test) } });

  return {
    { "data", data },
    { "model", { { "hidden_width", cfg.hidden_width } } },
    { "train",
      { { "epochs", cfg.train.epochs }, { "step_size", cfg.train.step_size }, { "batch_size", cfg.train.batch_size } } },
    { "conformal",
      { { "alpha", cfg.alpha },
        { "beta", cfg.beta },
        { "score", to_string(cfg.score_kind) },
        { "e_train", cfg.theory.budget.e_train },
        { "d_cal", cfg.theory.budget.d_cal },
        { "e_cal", cfg.theory.budget.e_cal },
        { "c_window", cfg.theory.c_window },
        { "kde_bandwidth", cfg.theory.kde_bandwidth },
        { "shift_mc", cfg.theory.shift_mc } } },
    { "sweep",
      { { "norm", to_string(cfg.norm) },
        { "clip", cfg.clip_unit_box },
        { "eps_train", eps_list(cfg.eps_train) },
        { "calibration", groups },
        { "seeds", cfg.seeds },
        { "master_seed", cfg.master_seed },
        { "workers", cfg.workers } } },
    { "output", { { "dir", cfg.output_dir.string() } } },
  };
}

} // namespace

std::string config_to_json(const SweepConfig& cfg)
{
  return config_json(cfg).dump(2);
}

LabeledDataset load_dataset(const DataConfig& cfg)
{
  switch (cfg.source) {
    case DataSource::idx:
      return load_idx(cfg.images, cfg.labels);
    case DataSource::csv:
      return load_dataset_csv(cfg.csv);
    case DataSource::mixture:
      break;
  }
  return generate_gaussian_mixture(cfg.num_classes, cfg.dim, cfg.n, cfg.separation, cfg.seed);
}

std::string dataset_id(const DataConfig& cfg)
{
  switch (cfg.source) {
    case DataSource::idx:
      return cfg.images.stem().string();
    case DataSource::csv:
      return cfg.csv.stem().string();
    case DataSource::mixture:
      break;
  }
  return fmt::format("mixture-k{}-d{}-n{}-sep{}-s{}", cfg.num_classes, cfg.dim, cfg.n, cfg.separation, cfg.seed);
}

SplitIndices replicate_split(const SweepConfig& cfg, const LabeledDataset& ds, const SeedPlan& plan)
{
  return split_dataset(ds, cfg.data.fractions, plan.split());
}

Classifier train_replicate(const SweepConfig& cfg,
                           const LabeledDataset& ds,
                           const SplitIndices& split,
                           double eps_train,
                           const SeedPlan& plan,
                           const TrainHooks& hooks)
{
  TrainConfig tc = cfg.train;
  tc.attack = AttackSpec{ cfg.norm, eps_train, cfg.clip_unit_box };
  tc.seed = plan.shuffle();
  const Classifier init =
    Classifier::create(static_cast<int>(ds.dim()), cfg.hidden_width, ds.num_classes(), plan.init());
  return train(init, ds, split.train, tc, hooks);
}

void sort_records(std::vector<ExperimentRecord>& records)
{
  std::stable_sort(records.begin(), records.end(), [](const ExperimentRecord& a, const ExperimentRecord& b) {
    return std::tie(a.eps_train, a.eps_cal, a.eps_test, a.seed) < std::tie(b.eps_train, b.eps_cal, b.eps_test, b.seed);
  });
}

namespace {

std::vector<ExperimentRecord> run_job(const SweepConfig& cfg,
                                      const LabeledDataset& ds,
                                      const std::string& id,
                                      double eps_train,
                                      std::uint64_t replicate)
{
  const SeedPlan plan{ cfg.master_seed, replicate };
  const SplitIndices split = replicate_split(cfg, ds, plan);
  auto attack = [&](double eps) { return AttackSpec{ cfg.norm, eps, cfg.clip_unit_box }; };

  std::vector<ExperimentRecord> rows;
  auto blank = [&](double eps_cal, double eps_test) {
    ExperimentRecord r;
    r.dataset = id;
    r.eps_train = eps_train;
    r.eps_cal = eps_cal;
    r.eps_test = eps_test;
    r.seed = replicate;
    return r;
  };

  std::optional<Classifier> model;
  std::string failure;
  try {
    model = train_replicate(cfg, ds, split, eps_train, plan);
  } catch (const TrainingDiverged&) {
    failure = "training-diverged";
  }
  if (!model) {
    for (const CalibrationGroup& g : cfg.calibration)
      for (double eps_test : g.eps_test) {
        ExperimentRecord r = blank(g.eps_cal, eps_test);
        r.error = failure;
        rows.push_back(std::move(r));
      }
    return rows;
  }

  const double clean_acc = accuracy(*model, ds, split.test, AttackSpec{});
  std::map<double, double> adv_acc;
  for (const CalibrationGroup& g : cfg.calibration) {
    const CalibrationResult cal =
      calibrate(*model, ds, split.cal, cfg.alpha, cfg.score_kind, attack(g.eps_cal), plan.calibrate(g.eps_cal));
    for (double eps_test : g.eps_test) {
      const Evaluation ev = evaluate(*model, ds, split.test, cal, attack(eps_test), plan.evaluate(g.eps_cal, eps_test));
      if (!adv_acc.contains(eps_test))
        adv_acc[eps_test] = accuracy(*model, ds, split.test, attack(eps_test));
      ExperimentRecord r = blank(g.eps_cal, eps_test);
      r.coverage = ev.coverage;
      r.mean_set_size = ev.mean_set_size;
      r.q_hat = cal.q_hat;
      r.clean_acc = clean_acc;
      r.adv_acc = adv_acc[eps_test];
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

} // namespace

std::vector<ExperimentRecord> run_sweep(const SweepConfig& cfg, const LabeledDataset& ds)
{
  validate(cfg);
  const std::string id = dataset_id(cfg.data);
  std::vector<std::pair<double, std::uint64_t>> jobs;
  for (double eps_train : cfg.eps_train)
    for (std::uint64_t seed : cfg.seeds)
      jobs.emplace_back(eps_train, seed);

  std::vector<std::vector<ExperimentRecord>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{ 0 };
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        results[j] = run_job(cfg, ds, id, jobs[j].first, jobs[j].second);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), jobs.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e)
      std::rethrow_exception(e);

  std::vector<ExperimentRecord> records;
  for (auto& rows : results)
    records.insert(records.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
  sort_records(records);
  return records;
}

std::vector<ExperimentRecord> run_sweep(const SweepConfig& cfg)
{
  validate(cfg);
  return run_sweep(cfg, load_dataset(cfg.data));
}

std::string format_record(const ExperimentRecord& r)
{
  const std::string head = fmt::format("{},{},{},{},{}", r.dataset, format_epsilon(r.eps_train),
                                       format_epsilon(r.eps_cal), format_epsilon(r.eps_test), r.seed);
  if (r.error)
    return fmt::format("{},error:{},,,,", head, *r.error);
  return fmt::format("{},{},{},{},{},{}", head, r.coverage, r.mean_set_size, r.q_hat, r.clean_acc, r.adv_acc);
}

ExperimentRecord parse_record(const std::string& line)
{
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ','))
    cells.push_back(cell);
  if (!line.empty() && line.back() == ',')
    cells.emplace_back();
  if (cells.size() != 10)
    throw FormatError(fmt::format("expected 10 fields, found {} in '{}'", cells.size(), line));

  ExperimentRecord r;
  r.dataset = cells[0];
  try {
    r.eps_train = parse_epsilon(cells[1]);
    r.eps_cal = parse_epsilon(cells[2]);
    r.eps_test = parse_epsilon(cells[3]);
  } catch (const ArgumentError& e) {
    throw FormatError(e.what());
  }
  try {
    r.seed = static_cast<std::uint64_t>(parse_integer(cells[4]));
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  if (cells[5].rfind("error:", 0) == 0) {
    r.error = cells[5].substr(6);
    return r;
  }
  r.coverage = parse_real(cells[5]);
  r.mean_set_size = parse_real(cells[6]);
  r.q_hat = parse_real(cells[7]);
  r.clean_acc = parse_real(cells[8]);
  r.adv_acc = parse_real(cells[9]);
  return r;
}

void emit_csv(const std::vector<ExperimentRecord>& records, const std::filesystem::path& path)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError(fmt::format("cannot write {}", path.string()));
  out << kCsvHeader << '\n';
  for (const ExperimentRecord& r : records)
    out << format_record(r) << '\n';
  if (!out)
    throw IoError(fmt::format("failed writing {}", path.string()));
}

std::vector<ExperimentRecord> read_csv(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw IoError(fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw FormatError(fmt::format("{}: unexpected CSV header", path.string()));
  std::vector<ExperimentRecord> records;
  while (std::getline(in, line))
    if (!line.empty())
      records.push_back(parse_record(line));
  return records;
}

std::vector<ConfigSummary> summarize(const std::vector<ExperimentRecord>& records)
{
  std::map<std::tuple<double, double, double>, std::vector<const ExperimentRecord*>> groups;
  for (const ExperimentRecord& r : records)
    if (!r.error)
      groups[{ r.eps_train, r.eps_cal, r.eps_test }].push_back(&r);

  auto mean_se = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v)
      mean += x;
    mean /= n;
    if (v.size() < 2)
      return std::pair{ mean, 0.0 };
    double ss = 0.0;
    for (double x : v)
      ss += (x - mean) * (x - mean);
    return std::pair{ mean, std::sqrt(ss / (n - 1.0) / n) };
  };

  std::vector<ConfigSummary> out;
  for (const auto& [key, rows] : groups) {
    std::vector<double> cov;
    std::vector<double> size;
    for (const ExperimentRecord* r : rows) {
      cov.push_back(r->coverage);
      size.push_back(r->mean_set_size);
    }
    ConfigSummary s;
    std::tie(s.eps_train, s.eps_cal, s.eps_test) = key;
    s.runs = rows.size();
    std::tie(s.mean_coverage, s.se_coverage) = mean_se(cov);
    std::tie(s.mean_set_size, s.se_set_size) = mean_se(size);
    out.push_back(s);
  }
  return out;
}

void emit_json(const SweepConfig& cfg, const std::vector<ExperimentRecord>& records, const std::filesystem::path& path)
{
  nlohmann::json per_config = nlohmann::json::array();
  for (const ConfigSummary& s : summarize(records)) {
    per_config.push_back({ { "eps_train", format_epsilon(s.eps_train) },
                           { "eps_cal", format_epsilon(s.eps_cal) },
                           { "eps_test", format_epsilon(s.eps_test) },
                           { "runs", s.runs },
                           { "mean_coverage", s.mean_coverage },
                           { "se_coverage", s.se_coverage },
                           { "mean_set_size", s.mean_set_size },
                           { "se_set_size", s.se_set_size } });
  }
  const auto failures = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.error.has_value(); });
  const nlohmann::json doc = { { "config_echo", config_json(cfg) },
                               { "per_config", per_config },
                               { "failed_rows", failures } };
  std::ofstream out(path);
  if (!out)
    throw IoError(fmt::format("cannot write {}", path.string()));
  out << doc.dump(2) << '\n';
  if (!out)
    throw IoError(fmt::format("failed writing {}", path.string()));
}

BandReport band_run(std::vector<double> eps_test, std::vector<double> coverage, double alpha, double beta)
{
  if (eps_test.size() != coverage.size())
    throw ArgumentError("eps_test and coverage lengths differ");
  BandReport rep;
  rep.band_lo = 1.0 - alpha - beta;
  rep.band_hi = 1.0 - alpha + beta;
  rep.eps_test = std::move(eps_test);
  rep.mean_coverage = std::move(coverage);
  constexpr double slack = 1e-12;
  std::size_t inside = 0;
  std::size_t current = 0;
  for (std::size_t i = 0; i < rep.mean_coverage.size(); ++i) {
    const double c = rep.mean_coverage[i];
    const bool in = c >= rep.band_lo - slack && c <= rep.band_hi + slack;
    rep.in_band.push_back(in);
    if (in) {
      ++inside;
      ++current;
      if (current > rep.run_length) {
        rep.run_length = current;
        rep.run_begin = i + 1 - current;
      }
    } else {
      current = 0;
    }
  }
  rep.contiguous = inside > 0 && inside == rep.run_length;
  return rep;
}

std::vector<BandReport> check_band(const std::vector<ExperimentRecord>& records, double alpha, double beta)
{
  std::map<std::pair<double, double>, std::vector<std::pair<double, double>>> curves;
  for (const ConfigSummary& s : summarize(records))
    curves[{ s.eps_train, s.eps_cal }].emplace_back(s.eps_test, s.mean_coverage);

  std::vector<BandReport> reports;
  for (auto& [key, points] : curves) {
    std::sort(points.begin(), points.end());
    std::vector<double> eps;
    std::vector<double> cov;
    for (const auto& [e, c] : points) {
      eps.push_back(e);
      cov.push_back(c);
    }
    BandReport rep = band_run(std::move(eps), std::move(cov), alpha, beta);
    rep.eps_train = key.first;
    rep.eps_cal = key.second;
    reports.push_back(std::move(rep));
  }
  return reports;
}

std::string band_report_text(const std::vector<BandReport>& reports)
{
  std::string out;
  for (const BandReport& r : reports) {
    out += fmt::format("eps_train: {}\neps_cal: {}\nband: [{}, {}]\n", format_epsilon(r.eps_train),
                       format_epsilon(r.eps_cal), r.band_lo, r.band_hi);
    for (std::size_t i = 0; i < r.eps_test.size(); ++i)
      out += fmt::format("  eps_test {:>8}  coverage {:.4f}{}\n", format_epsilon(r.eps_test[i]), r.mean_coverage[i],
                         r.in_band[i] ? "  *" : "");
    if (r.empty())
      out += "run: none\n";
    else
      out += fmt::format("run: {} .. {} ({} points)\n", format_epsilon(r.run_eps_lo()), format_epsilon(r.run_eps_hi()),
                         r.run_length);
    out += fmt::format("contiguous: {}\n\n", r.contiguous ? "yes" : "no");
  }
  return out;
}

std::string band_report_json(const std::vector<BandReport>& reports)
{
  nlohmann::json arr = nlohmann::json::array();
  for (const BandReport& r : reports) {
    nlohmann::json j = { { "eps_train", format_epsilon(r.eps_train) },
                         { "eps_cal", format_epsilon(r.eps_cal) },
                         { "band", { r.band_lo, r.band_hi } },
                         { "eps_test", eps_list(r.eps_test) },
                         { "mean_coverage", r.mean_coverage },
                         { "in_band", r.in_band },
                         { "run_length", r.run_length },
                         { "contiguous", r.contiguous } };
    if (!r.empty()) {
      j["run_eps_lo"] = format_epsilon(r.run_eps_lo());
      j["run_eps_hi"] = format_epsilon(r.run_eps_hi());
    }
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

} // namespace advconform
