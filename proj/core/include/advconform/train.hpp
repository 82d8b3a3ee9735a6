#pragma once

#include "advconform/attack.hpp"
#include "advconform/dataio.hpp"
#include "advconform/model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>

namespace advconform {

struct TrainConfig
{
  int epochs = 30;
  double step_size = 0.1;
  int batch_size = 64;
  AttackSpec attack{}; // epsilon == 0 is clean training
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

class TrainingDiverged : public std::runtime_error
{
public:
  TrainingDiverged(int epoch, int batch, double loss);

  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }
  double loss() const noexcept { return loss_; }

private:
  int epoch_;
  int batch_;
  double loss_;
};

struct EpochStats
{
  int epoch;
  double loss;      // mean loss over the (perturbed) minibatches of the epoch
  double clean_acc; // accuracy on the unperturbed training samples afterwards
};

//! One minibatch as seen by the update: raw rows and the rows actually used.
struct BatchView
{
  int epoch;
  int batch;
  const Matrix& raw;
  const Matrix& perturbed;
};

struct TrainHooks
{
  std::function<void(const EpochStats&)> on_epoch;
  std::function<void(const BatchView&)> on_batch;
};

//! Minibatch gradient descent on the attacked loss. Every step re-attacks
//! the batch against the current parameters, then takes one step on the
//! mean loss of the perturbed batch. Throws TrainingDiverged when a batch
//! loss is non-finite or exceeds 1e6.
Classifier train(Classifier model,
                 const LabeledDataset& ds,
                 std::span<const std::size_t> train_idx,
                 const TrainConfig& cfg,
                 const TrainHooks& hooks = {});

//! Top-1 accuracy on attacked inputs; ties go to the lowest class index.
double accuracy(const Classifier& model,
                const LabeledDataset& ds,
                std::span<const std::size_t> idx,
                const AttackSpec& attack);

//! Mean cross-entropy on attacked inputs.
double mean_loss(const Classifier& model,
                 const LabeledDataset& ds,
                 std::span<const std::size_t> idx,
                 const AttackSpec& attack);

//! Writes `epoch,loss,clean_acc` lines (with header) as epochs complete.
std::function<void(const EpochStats&)> csv_epoch_logger(std::ostream& out);

} // namespace advconform
