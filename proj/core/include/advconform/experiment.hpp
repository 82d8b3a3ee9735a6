#pragma once

#include "advconform/attack.hpp"
#include "advconform/conformal.hpp"
#include "advconform/dataio.hpp"
#include "advconform/theory_check.hpp"
#include "advconform/train.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace advconform {

enum class DataSource
{
  mixture,
  idx,
  csv
};

struct DataConfig
{
  DataSource source = DataSource::mixture;
  int num_classes = 5;
  int dim = 16;
  std::size_t n = 5000;
  double separation = 3.0;
  std::uint64_t seed = 0;
  std::filesystem::path images;
  std::filesystem::path labels;
  std::filesystem::path csv;
  std::array<double, 3> fractions{ 0.6, 0.2, 0.2 };
};

//! One calibration strength and the test strengths evaluated against it.
struct CalibrationGroup
{
  double eps_cal = 0.0;
  std::vector<double> eps_test;
};

struct SweepConfig
{
  DataConfig data;
  int hidden_width = 0;
  TrainConfig train;
  double alpha = 0.1;
  double beta = 0.02;
  ScoreKind score_kind = ScoreKind::hps;
  Norm norm = Norm::linf;
  bool clip_unit_box = false;
  std::vector<double> eps_train;
  std::vector<CalibrationGroup> calibration;
  std::vector<std::uint64_t> seeds;
  std::uint64_t master_seed = 0;
  int workers = 1;
  TheorySettings theory;
  std::filesystem::path output_dir = "results";
};

//! Default grids: eps_train {0,4,8,12,16}/255,
//! eps_cal 8/255 with tests {2..14}/255 and 16/255 with tests {10..22}/255,
//! ten seeds, alpha 0.1, beta 0.02, linf attacks.
SweepConfig default_sweep_config();

void validate(const SweepConfig& cfg);

//! INI file with sections data, model, train, conformal, sweep, output.
//! Missing keys keep their defaults. Throws ConfigError.
SweepConfig load_sweep_config(const std::filesystem::path& path);

//! Echo of every setting, as written to the JSON summary.
std::string config_to_json(const SweepConfig& cfg);

//! Parses a grid such as "0, 4/255, 8..16:4/255" (ranges are inclusive
//! integer numerators over the trailing denominator).
std::vector<double> parse_epsilon_grid(const std::string& text);

//! "0..9" or "1, 5, 7".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

//! Seed derivation for the pipeline stages of one replicate. Each stage
//! stream depends only on the master seed and the coordinates it is
//! computed from.
struct SeedPlan
{
  std::uint64_t master = 0;
  std::uint64_t replicate = 0;

  std::uint64_t split() const noexcept;
  std::uint64_t init() const noexcept;
  std::uint64_t shuffle() const noexcept;
  std::uint64_t calibrate(double eps_cal) const noexcept;
  std::uint64_t evaluate(double eps_cal, double eps_test) const noexcept;
};


LabeledDataset load_dataset(const DataConfig& cfg);

//! The split used by replicate `plan.replicate`.
SplitIndices replicate_split(const SweepConfig& cfg, const LabeledDataset& ds, const SeedPlan& plan);

//! Trains the configured architecture for one replicate with attack
//! strength eps_train. Initialization and shuffling depend only on the
//! replicate, so clean and adversarial models share them.
Classifier train_replicate(const SweepConfig& cfg,
                           const LabeledDataset& ds,
                           const SplitIndices& split,
                           double eps_train,
                           const SeedPlan& plan,
                           const TrainHooks& hooks = {});
std::string dataset_id(const DataConfig& cfg);

struct ExperimentRecord
{
  std::string dataset;
  double eps_train = 0.0;
  double eps_cal = 0.0;
  double eps_test = 0.0;
  std::uint64_t seed = 0;
  double coverage = 0.0;
  double mean_set_size = 0.0;
  double q_hat = 0.0;
  double clean_acc = 0.0;
  double adv_acc = 0.0;
  std::optional<std::string> error; // set on failed rows

  bool operator==(const ExperimentRecord&) const = default;
};

//! Trains once per (eps_train, seed), calibrates once per eps_cal and
//! evaluates once per eps_test. A diverged training run yields one tagged
//! row per grid point it would have produced. Rows are sorted by
//! (eps_train, eps_cal, eps_test, seed).
std::vector<ExperimentRecord> run_sweep(const SweepConfig& cfg);
std::vector<ExperimentRecord> run_sweep(const SweepConfig& cfg, const LabeledDataset& ds);

void sort_records(std::vector<ExperimentRecord>& records);

inline constexpr const char* kCsvHeader =
  "dataset,eps_train,eps_cal,eps_test,seed,coverage,mean_set_size,q_hat,clean_acc,adv_acc";

std::string format_record(const ExperimentRecord& r);
ExperimentRecord parse_record(const std::string& line);

void emit_csv(const std::vector<ExperimentRecord>& records, const std::filesystem::path& path);
std::vector<ExperimentRecord> read_csv(const std::filesystem::path& path);

struct ConfigSummary
{
  double eps_train = 0.0;
  double eps_cal = 0.0;
  double eps_test = 0.0;
  std::size_t runs = 0;
  double mean_coverage = 0.0;
  double se_coverage = 0.0;
  double mean_set_size = 0.0;
  double se_set_size = 0.0;
};

//! Per-(eps_train, eps_cal, eps_test) means and standard errors over seeds,
//! skipping failed rows.
std::vector<ConfigSummary> summarize(const std::vector<ExperimentRecord>& records);

void emit_json(const SweepConfig& cfg,
               const std::vector<ExperimentRecord>& records,
               const std::filesystem::path& path);

struct BandReport
{
  double eps_train = 0.0;
  double eps_cal = 0.0;
  std::vector<double> eps_test;      // ascending
  std::vector<double> mean_coverage; // per eps_test
  std::vector<bool> in_band;
  std::size_t run_begin = 0;  // first index of the longest in-band run
  std::size_t run_length = 0; // 0 when no point is in band
  bool contiguous = false;    // every in-band point lies in that run
  double band_lo = 0.0;
  double band_hi = 0.0;

  bool empty() const noexcept { return run_length == 0; }
  double run_eps_lo() const { return eps_test.at(run_begin); }
  double run_eps_hi() const { return eps_test.at(run_begin + run_length - 1); }
};

//! Longest contiguous eps_test run with mean coverage inside
//! [1 - alpha - beta, 1 - alpha + beta], per (eps_train, eps_cal).
std::vector<BandReport> check_band(const std::vector<ExperimentRecord>& records, double alpha, double beta);

//! Band search on one already-averaged coverage curve.
BandReport band_run(std::vector<double> eps_test, std::vector<double> coverage, double alpha, double beta);

std::string band_report_text(const std::vector<BandReport>& reports);
std::string band_report_json(const std::vector<BandReport>& reports);

} // namespace advconform
