#include "advconform/errors.hpp"
#include "advconform/experiment.hpp"

#include "support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <set>

using namespace advconform;
using namespace testsupport;

namespace {

SweepConfig small_config()
{
  SweepConfig cfg;
  cfg.data.num_classes = 3;
  cfg.data.dim = 4;
  cfg.data.n = 600;
  cfg.data.separation = 2.5;
  cfg.data.seed = 5;
  cfg.train.epochs = 3;
  cfg.eps_train = { 0.0, 8.0 / 255.0 };
  cfg.calibration = { { 0.0, { 0.0, 4.0 / 255.0 } }, { 8.0 / 255.0, { 8.0 / 255.0 } } };
  cfg.seeds = { 0, 1 };
  cfg.master_seed = 17;
  return cfg;
}

std::string write_ini(const TempDir& dir, const std::string& name, const std::string& text)
{
  const auto path = dir / name;
  std::ofstream(path) << text;
  return path.string();
}

ExperimentRecord record(double eps_train, double eps_cal, double eps_test, std::uint64_t seed, double coverage)
{
  ExperimentRecord r;
  r.dataset = "d";
  r.eps_train = eps_train;
  r.eps_cal = eps_cal;
  r.eps_test = eps_test;
  r.seed = seed;
  r.coverage = coverage;
  r.mean_set_size = 1.0 + coverage;
  return r;
}

} // namespace

TEST_SUITE("experiment")
{
  TEST_CASE("epsilon grids parse single values and inclusive ranges")
  {
    const auto grid = parse_epsilon_grid("0, 4/255, 8..16:4/255");
    REQUIRE(grid.size() == 5);
    for (int i = 0; i < 5; ++i)
      CHECK(grid[static_cast<std::size_t>(i)] == (4 * i) / 255.0);
    CHECK(parse_epsilon_grid("2..14/255").size() == 13);
    CHECK(parse_epsilon_grid("0.5, 0.25") == std::vector<double>{ 0.5, 0.25 });
    CHECK(parse_epsilon_grid("1..3") == std::vector<double>{ 1.0, 2.0, 3.0 });
    CHECK_THROWS_AS(parse_epsilon_grid("5..2/255"), ConfigError);
    CHECK_THROWS_AS(parse_epsilon_grid("1..4:0/255"), ConfigError);
    CHECK_THROWS_AS(parse_epsilon_grid(" , "), ConfigError);
    CHECK_THROWS(parse_epsilon_grid("abc"));
  }

  TEST_CASE("seed lists parse ranges and enumerations")
  {
    CHECK(parse_seed_list("0..3") == std::vector<std::uint64_t>{ 0, 1, 2, 3 });
    CHECK(parse_seed_list("1, 5, 7") == std::vector<std::uint64_t>{ 1, 5, 7 });
    CHECK_THROWS_AS(parse_seed_list("-1"), ConfigError);
    CHECK_THROWS_AS(parse_seed_list("3..1"), ConfigError);
    CHECK_THROWS_AS(parse_seed_list("x"), ConfigError);
    CHECK_THROWS_AS(parse_seed_list(""), ConfigError);
  }

  TEST_CASE("default grids")
  {
    const SweepConfig cfg = default_sweep_config();
    CHECK(cfg.eps_train == std::vector<double>{ 0.0, 4 / 255.0, 8 / 255.0, 12 / 255.0, 16 / 255.0 });
    REQUIRE(cfg.calibration.size() == 2);
    CHECK(cfg.calibration[0].eps_cal == 8 / 255.0);
    CHECK(cfg.calibration[1].eps_cal == 16 / 255.0);
    REQUIRE(cfg.calibration[0].eps_test.size() == 13);
    REQUIRE(cfg.calibration[1].eps_test.size() == 13);
    for (int k = 0; k < 13; ++k) {
      CHECK(cfg.calibration[0].eps_test[static_cast<std::size_t>(k)] == (2 + k) / 255.0);
      CHECK(cfg.calibration[1].eps_test[static_cast<std::size_t>(k)] == (10 + k) / 255.0);
    }
    CHECK(cfg.seeds.size() == 10);
    CHECK(cfg.alpha == 0.1);
    CHECK(cfg.beta == 0.02);
    CHECK(1.0 - cfg.alpha - cfg.beta == doctest::Approx(0.88).epsilon(1e-15));
    CHECK(1.0 - cfg.alpha + cfg.beta == doctest::Approx(0.92).epsilon(1e-15));
    CHECK(cfg.norm == Norm::linf);
    CHECK(cfg.data.num_classes == 5);
    CHECK(cfg.data.dim == 16);
    CHECK(cfg.data.n == 5000);
    CHECK_NOTHROW(validate(cfg));
  }

  TEST_CASE("the shipped default config file matches the built-in defaults")
  {
    const SweepConfig loaded = load_sweep_config(std::filesystem::path(ADVCONFORM_SOURCE_DIR) / "configs" / "default.ini");
    CHECK(config_to_json(loaded) == config_to_json(default_sweep_config()));
  }

  TEST_CASE("INI config overrides and keeps defaults")
  {
    TempDir dir("ini");
    const auto path = write_ini(dir, "c.ini",
                                "[data]\nnum_classes = 4\ndim = 3\nn = 400\nseparation = 2\nfractions = 0.5, 0.25, 0.25\n"
                                "[model]\nhidden_width = 8\n"
                                "[train]\nepochs = 2\nstep_size = 0.05\n"
                                "[conformal]\nalpha = 0.2\nscore = aps\ne_train = 0.01\nc_window = 0.1\n"
                                "[sweep]\nnorm = l2\neps_train = 0, 8/255\neps_cal = 0, 8/255\n"
                                "eps_test = 0..2/255; 8/255\nseeds = 3..4\nmaster_seed = 9\nworkers = 2\n"
                                "[output]\ndir = out\n");
    const SweepConfig cfg = load_sweep_config(path);
    CHECK(cfg.data.num_classes == 4);
    CHECK(cfg.data.dim == 3);
    CHECK(cfg.data.n == 400);
    CHECK(cfg.data.fractions == std::array<double, 3>{ 0.5, 0.25, 0.25 });
    CHECK(cfg.hidden_width == 8);
    CHECK(cfg.train.epochs == 2);
    CHECK(cfg.train.step_size == 0.05);
    CHECK(cfg.train.batch_size == 64);
    CHECK(cfg.alpha == 0.2);
    CHECK(cfg.beta == 0.02);
    CHECK(cfg.score_kind == ScoreKind::aps);
    CHECK(cfg.theory.budget.e_train == 0.01);
    CHECK(cfg.theory.c_window == 0.1);
    CHECK(cfg.norm == Norm::l2);
    REQUIRE(cfg.calibration.size() == 2);
    CHECK(cfg.calibration[0].eps_test.size() == 3);
    CHECK(cfg.calibration[1].eps_test == std::vector<double>{ 8 / 255.0 });
    CHECK(cfg.seeds == std::vector<std::uint64_t>{ 3, 4 });
    CHECK(cfg.master_seed == 9);
    CHECK(cfg.workers == 2);
    CHECK(cfg.output_dir == "out");
  }

  TEST_CASE("config errors")
  {
    TempDir dir("ini-bad");
    CHECK_THROWS_AS(load_sweep_config(dir / "missing.ini"), ConfigError);
    CHECK_THROWS_AS(load_sweep_config(write_ini(dir, "a.ini", "[data]\nsource = hdf5\n")), ConfigError);
    CHECK_THROWS_AS(load_sweep_config(write_ini(dir, "b.ini", "[train]\nepochs = many\n")), ConfigError);
    CHECK_THROWS_AS(load_sweep_config(write_ini(dir, "c.ini", "[conformal]\nalpha = 1.5\n")), ConfigError);
    CHECK_THROWS_AS(load_sweep_config(write_ini(dir, "d.ini", "[sweep]\neps_cal = 0, 1/255, 2/255\neps_test = 0; 1/255\n")),
                    ConfigError);
    CHECK_THROWS_AS(load_sweep_config(write_ini(dir, "e.ini", "[conformal]\nscore = raps\n")), ConfigError);
    CHECK_THROWS_AS(load_sweep_config(write_ini(dir, "f.ini", "[data]\nfractions = 0.5, 0.5\n")), ConfigError);
    CHECK_THROWS_AS(load_sweep_config(write_ini(dir, "g.ini", "not an ini [\n")), ConfigError);
    CHECK_THROWS_AS(load_sweep_config(write_ini(dir, "h.ini", "[sweep]\nworkers = 0\n")), ConfigError);
    CHECK_THROWS_AS(load_sweep_config(write_ini(dir, "i.ini", "[data]\nn = -5\n")), ConfigError);
    CHECK_THROWS_AS(load_sweep_config(write_ini(dir, "j.ini", "[sweep]\nclip = maybe\n")), ConfigError);
    CHECK_THROWS_AS(load_sweep_config(write_ini(dir, "k.ini", "[conformal]\nalpha = 0.1x\n")), ConfigError);
  }

  TEST_CASE("config JSON echoes every section")
  {
    const auto j = nlohmann::json::parse(config_to_json(small_config()));
    for (const char* key : { "data", "model", "train", "conformal", "sweep", "output" })
      CHECK(j.contains(key));
    CHECK(j["sweep"]["eps_train"] == nlohmann::json::array({ "0/255", "8/255" }));
    CHECK(j["sweep"]["calibration"][1]["eps_cal"] == "8/255");
    CHECK(j["conformal"]["alpha"] == 0.1);
  }

  TEST_CASE("seed plan streams are distinct and depend only on their coordinates")
  {
    const SeedPlan a{ 3, 0 };
    const SeedPlan b{ 3, 1 };
    std::set<std::uint64_t> seen{ a.split(), a.init(), a.shuffle(), a.calibrate(0.1), a.evaluate(0.1, 0.2),
                                  b.split(), b.init(), b.shuffle(), b.calibrate(0.1), b.evaluate(0.1, 0.2) };
    CHECK(seen.size() == 10);
    CHECK(a.calibrate(0.0) == a.calibrate(-0.0));
    CHECK(a.evaluate(0.1, 0.2) != a.evaluate(0.2, 0.1));
    CHECK(SeedPlan{ 4, 0 }.split() != a.split());
  }

  TEST_CASE("a one-point sweep equals the direct pipeline")
  {
    SweepConfig cfg = small_config();
    cfg.eps_train = { 0.0 };
    cfg.calibration = { { 0.0, { 0.0 } } };
    cfg.seeds = { 0 };
    const LabeledDataset ds = load_dataset(cfg.data);
    const auto rows = run_sweep(cfg, ds);
    REQUIRE(rows.size() == 1);

    const SeedPlan plan{ cfg.master_seed, 0 };
    const SplitIndices split = split_dataset(ds, cfg.data.fractions, plan.split());
    TrainConfig tc = cfg.train;
    tc.seed = plan.shuffle();
    const Classifier model = train(Classifier::create(4, 0, 3, plan.init()), ds, split.train, tc);
    const CalibrationResult cal = calibrate(model, ds, split.cal, 0.1, ScoreKind::hps, AttackSpec{}, plan.calibrate(0.0));
    const Evaluation ev = evaluate(model, ds, split.test, cal, AttackSpec{}, plan.evaluate(0.0, 0.0));

    const ExperimentRecord& r = rows[0];
    CHECK(r.coverage == ev.coverage);
    CHECK(r.mean_set_size == ev.mean_set_size);
    CHECK(r.q_hat == cal.q_hat);
    CHECK(r.clean_acc == accuracy(model, ds, split.test, AttackSpec{}));
    CHECK(r.adv_acc == r.clean_acc);
    CHECK(r.dataset == dataset_id(cfg.data));
    CHECK_FALSE(r.error.has_value());
  }

  TEST_CASE("sweep grid is complete, sorted and reuses models")
  {
    const SweepConfig cfg = small_config();
    const auto rows = run_sweep(cfg);
    CHECK(rows.size() == 2 * 3 * 2);
    auto sorted = rows;
    sort_records(sorted);
    CHECK(sorted == rows);
    std::set<std::tuple<double, double, double, std::uint64_t>> keys;
    for (const ExperimentRecord& r : rows) {
      keys.insert({ r.eps_train, r.eps_cal, r.eps_test, r.seed });
      CHECK(r.coverage >= 0.0);
      CHECK(r.coverage <= 1.0);
      CHECK(r.mean_set_size >= 0.0);
      CHECK(r.mean_set_size <= 3.0);
      for (const ExperimentRecord& o : rows) {
        if (o.eps_train == r.eps_train && o.seed == r.seed)
          CHECK(o.clean_acc == r.clean_acc);
        if (o.eps_train == r.eps_train && o.seed == r.seed && o.eps_cal == r.eps_cal)
          CHECK(o.q_hat == r.q_hat);
        if (o.eps_train == r.eps_train && o.seed == r.seed && o.eps_test == r.eps_test)
          CHECK(o.adv_acc == r.adv_acc);
      }
    }
    CHECK(keys.size() == rows.size());
  }

  TEST_CASE("sweeps are byte-identical across runs and worker counts")
  {
    TempDir dir("sweep");
    SweepConfig cfg = small_config();
    emit_csv(run_sweep(cfg), dir / "a.csv");
    emit_csv(run_sweep(cfg), dir / "b.csv");
    cfg.workers = 3;
    emit_csv(run_sweep(cfg), dir / "c.csv");
    CHECK(read_all(dir / "a.csv") == read_all(dir / "b.csv"));
    CHECK(read_all(dir / "a.csv") == read_all(dir / "c.csv"));
  }

  TEST_CASE("adding a grid point leaves the other rows unchanged")
  {
    SweepConfig cfg = small_config();
    const auto base = run_sweep(cfg);
    cfg.calibration[0].eps_test.push_back(12.0 / 255.0);
    cfg.seeds.push_back(2);
    const auto grown = run_sweep(cfg);
    for (const ExperimentRecord& r : base)
      CHECK(std::find(grown.begin(), grown.end(), r) != grown.end());
  }

  TEST_CASE("diverged training becomes tagged rows and the sweep continues")
  {
    SweepConfig cfg = small_config();
    cfg.train.step_size = 1e8;
    cfg.data.separation = 1.0;
    const auto rows = run_sweep(cfg);
    CHECK(rows.size() == 12);
    std::size_t failed = 0;
    for (const ExperimentRecord& r : rows)
      if (r.error) {
        ++failed;
        CHECK(*r.error == "training-diverged");
        CHECK(format_record(r).find(",error:training-diverged,,,,") != std::string::npos);
        CHECK(parse_record(format_record(r)) == r);
      }
    CHECK(failed > 0);
    TempDir dir("failed");
    emit_json(cfg, rows, dir / "s.json");
    const auto j = nlohmann::json::parse(read_all(dir / "s.json"));
    CHECK(j["failed_rows"] == failed);
    std::size_t runs = 0;
    for (const auto& c : j["per_config"])
      runs += c["runs"].get<std::size_t>();
    CHECK(runs == rows.size() - failed);
  }

  TEST_CASE("CSV header, epsilon formatting and round trip")
  {
    TempDir dir("csv");
    ExperimentRecord r = record(8.0 / 255.0, 16.0 / 255.0, 0.0123, 4, 0.9012345678901234);
    r.q_hat = std::numeric_limits<double>::infinity();
    r.clean_acc = 0.75;
    r.adv_acc = 1.0 / 3.0;
    const std::string line = format_record(r);
    CHECK(line.rfind("d,8/255,16/255,0.0123,4,", 0) == 0);
    CHECK(parse_record(line) == r);
    emit_csv({ r, record(0.0, 0.0, 0.0, 1, 0.5) }, dir / "r.csv");
    const std::string text = read_all(dir / "r.csv");
    CHECK(text.substr(0, text.find('\n')) ==
          "dataset,eps_train,eps_cal,eps_test,seed,coverage,mean_set_size,q_hat,clean_acc,adv_acc");
    CHECK(read_csv(dir / "r.csv") == std::vector<ExperimentRecord>{ r, record(0.0, 0.0, 0.0, 1, 0.5) });
    CHECK(text.find("0/255,0/255,0/255,1,") != std::string::npos);
  }

  TEST_CASE("CSV parse errors")
  {
    TempDir dir("csv-bad");
    CHECK_THROWS_AS(parse_record("a,b,c"), FormatError);
    CHECK_THROWS_AS(parse_record("d,x/255,0,0,1,0.5,1,0.1,1,1"), FormatError);
    CHECK_THROWS_AS(parse_record("d,0,0,0,one,0.5,1,0.1,1,1"), FormatError);
    CHECK_THROWS_AS(parse_record("d,0,0,0,1,half,1,0.1,1,1"), FormatError);
    write_bytes(dir / "h.csv", { 'x', '\n' });
    CHECK_THROWS_AS(read_csv(dir / "h.csv"), FormatError);
    CHECK_THROWS_AS(read_csv(dir / "none.csv"), IoError);
    CHECK_THROWS_AS(emit_csv({}, dir / "no" / "such" / "dir.csv"), IoError);
  }

  TEST_CASE("summaries carry means and standard errors over seeds")
  {
    const std::vector<ExperimentRecord> rows{ record(0, 0, 0, 0, 0.8), record(0, 0, 0, 1, 0.9), record(0, 0, 0, 2, 1.0),
                                              record(0, 0, 1, 0, 0.5) };
    const auto s = summarize(rows);
    REQUIRE(s.size() == 2);
    CHECK(s[0].runs == 3);
    CHECK(s[0].mean_coverage == doctest::Approx(0.9).epsilon(1e-14));
    CHECK(s[0].se_coverage == doctest::Approx(0.1 / std::sqrt(3.0)).epsilon(1e-12));
    CHECK(s[0].mean_set_size == doctest::Approx(1.9).epsilon(1e-14));
    CHECK(s[1].runs == 1);
    CHECK(s[1].se_coverage == 0.0);

    TempDir dir("json");
    emit_json(small_config(), rows, dir / "s.json");
    const auto j = nlohmann::json::parse(read_all(dir / "s.json"));
    CHECK(j.contains("config_echo"));
    REQUIRE(j["per_config"].size() == 2);
    for (const char* key : { "eps_train", "eps_cal", "eps_test", "mean_coverage", "se_coverage", "mean_set_size", "se_set_size" })
      CHECK(j["per_config"][0].contains(key));
    CHECK(j["per_config"][1]["eps_test"] == "255/255");
    CHECK(j["failed_rows"] == 0);
  }

  TEST_CASE("band run worked examples")
  {
    const BandReport middle = band_run({ 1, 2, 3, 4 }, { 0.95, 0.91, 0.89, 0.84 }, 0.1, 0.02);
    CHECK(middle.run_begin == 1);
    CHECK(middle.run_length == 2);
    CHECK(middle.run_eps_lo() == 2.0);
    CHECK(middle.run_eps_hi() == 3.0);
    CHECK(middle.contiguous);
    CHECK(middle.in_band == std::vector<bool>{ false, true, true, false });

    const BandReport all = band_run({ 1, 2, 3 }, { 0.9, 0.88, 0.92 }, 0.1, 0.02);
    CHECK(all.run_begin == 0);
    CHECK(all.run_length == 3);

    const BandReport none = band_run({ 1, 2 }, { 0.5, 0.99 }, 0.1, 0.02);
    CHECK(none.empty());
    CHECK_FALSE(none.contiguous);

    const BandReport split = band_run({ 1, 2, 3, 4, 5 }, { 0.9, 0.95, 0.9, 0.91, 0.5 }, 0.1, 0.02);
    CHECK(split.run_begin == 2);
    CHECK(split.run_length == 2);
    CHECK_FALSE(split.contiguous);
    CHECK_THROWS_AS(band_run({ 1 }, {}, 0.1, 0.02), ArgumentError);
  }

  TEST_CASE("longest run is found on random curves")
  {
    Rng rng(501);
    for (int trial = 0; trial < 1000; ++trial) {
      const int n = random_int(rng, 1, 15);
      std::vector<double> eps;
      std::vector<double> cov;
      for (int i = 0; i < n; ++i) {
        eps.push_back(i);
        cov.push_back(0.85 + 0.1 * rng.uniform());
      }
      const BandReport r = band_run(eps, cov, 0.1, 0.02);
      std::size_t best = 0;
      for (std::size_t i = 0; i < cov.size(); ++i)
        for (std::size_t j = i; j < cov.size() && cov[j] >= 0.88 && cov[j] <= 0.92; ++j)
          best = std::max(best, j - i + 1);
      CHECK(r.run_length == best);
      for (std::size_t k = r.run_begin; k < r.run_begin + r.run_length; ++k)
        CHECK(r.in_band[k]);
    }
  }

  TEST_CASE("check_band averages seeds per configuration and sorts eps_test")
  {
    std::vector<ExperimentRecord> rows;
    const double cov[4] = { 0.95, 0.91, 0.89, 0.84 };
    for (int i = 3; i >= 0; --i)
      for (std::uint64_t s = 0; s < 2; ++s)
        rows.push_back(record(0, 8 / 255.0, (2 + i) / 255.0, s, cov[i] + (s == 0 ? 0.005 : -0.005)));
    for (int i = 0; i < 4; ++i)
      rows.push_back(record(0, 16 / 255.0, (10 + i) / 255.0, 0, 0.9));
    ExperimentRecord failed = record(0, 16 / 255.0, 10 / 255.0, 1, 0.0);
    failed.error = "training-diverged";
    rows.push_back(failed);

    const auto reports = check_band(rows, 0.1, 0.02);
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].eps_cal == 8 / 255.0);
    CHECK(reports[0].eps_test.front() == 2 / 255.0);
    CHECK(reports[0].mean_coverage[1] == doctest::Approx(0.91).epsilon(1e-12));
    CHECK(reports[0].run_eps_lo() == 3 / 255.0);
    CHECK(reports[0].run_eps_hi() == 4 / 255.0);
    CHECK(reports[1].run_length == 4);
    CHECK(reports[1].run_eps_lo() > reports[0].run_eps_hi());

    const auto j = nlohmann::json::parse(band_report_json(reports));
    CHECK(j[0]["run_eps_lo"] == "3/255");
    CHECK(j[1]["contiguous"] == true);
    CHECK(band_report_text(reports).find("run: 3/255 .. 4/255 (2 points)") != std::string::npos);
  }

  TEST_CASE("dataset loading follows the configured source")
  {
    TempDir dir("data");
    SweepConfig cfg = small_config();
    const LabeledDataset mix = load_dataset(cfg.data);
    CHECK(mix.size() == 600);
    CHECK(dataset_id(cfg.data) == "mixture-k3-d4-n600-sep2.5-s5");
    write_dataset_csv(mix, dir / "mine.csv");
    cfg.data.source = DataSource::csv;
    cfg.data.csv = dir / "mine.csv";
    CHECK(load_dataset(cfg.data).size() == 600);
    CHECK(dataset_id(cfg.data) == "mine");
    cfg.data.csv = dir / "absent.csv";
    CHECK_THROWS_AS(run_sweep(cfg), IoError);
  }

  TEST_CASE("invalid sweep configs are rejected")
  {
    SweepConfig cfg = small_config();
    cfg.eps_train.clear();
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = small_config();
    cfg.calibration[0].eps_test = { -1.0 };
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = small_config();
    cfg.beta = 0.0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = small_config();
    cfg.train.epochs = 0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = small_config();
    cfg.data.fractions = { 0.6, 0.3, 0.2 };
    CHECK_THROWS_AS(validate(cfg), ConfigError);
  }
}
