#include "advconform/train.hpp"

#include "advconform/errors.hpp"
#include "advconform/random.hpp"

#include <fmt/format.h>

#include <cmath>
#include <ostream>

namespace advconform {

void validate(const TrainConfig& cfg)
{
  if (cfg.epochs < 1)
    throw ArgumentError(fmt::format("epochs must be >= 1, got {}", cfg.epochs));
  if (!(cfg.step_size > 0.0) || !std::isfinite(cfg.step_size))
    throw ArgumentError(fmt::format("step size must be positive, got {}", cfg.step_size));
  if (cfg.batch_size < 1)
    throw ArgumentError(fmt::format("batch size must be >= 1, got {}", cfg.batch_size));
  validate(cfg.attack);
}

TrainingDiverged::TrainingDiverged(int epoch, int batch, double loss)
  : std::runtime_error(fmt::format("training diverged at epoch {}, batch {} (loss {})", epoch, batch, loss))
  , epoch_(epoch)
  , batch_(batch)
  , loss_(loss)
{
}

Classifier train(Classifier model,
                 const LabeledDataset& ds,
                 std::span<const std::size_t> train_idx,
                 const TrainConfig& cfg,
                 const TrainHooks& hooks)
{
  validate(cfg);
  if (train_idx.empty())
    throw ArgumentError("empty training index list");
  if (static_cast<std::size_t>(model.input_dim()) != ds.dim())
    throw ArgumentError(fmt::format("model expects {} features, dataset has {}", model.input_dim(), ds.dim()));
  for (std::size_t i : train_idx)
    if (i >= ds.size())
      throw ArgumentError(fmt::format("training index {} out of range for {} samples", i, ds.size()));

  IndexList order(train_idx.begin(), train_idx.end());
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // order is reshuffled from its previous state with a per-epoch stream
    Rng rng(derive_seed(cfg.seed, { static_cast<std::uint64_t>(epoch) }));
    rng.shuffle(order);

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const std::span<const std::size_t> members(order.data() + start, stop - start);
      const Matrix raw = ds.gather(members);
      const std::vector<int> labels = ds.gather_labels(members);
      const Matrix attacked = perturb_batch(model, raw, labels, cfg.attack);
      if (hooks.on_batch)
        hooks.on_batch(BatchView{ epoch, batches, raw, attacked });

      LossAndGradient step = mean_loss_and_gradient(model, attacked, labels);
      if (!std::isfinite(step.mean_loss) || step.mean_loss > 1e6)
        throw TrainingDiverged(epoch, batches, step.mean_loss);
      model.apply_update(step.gradient, cfg.step_size);
      for (const Layer& layer : model.layers())
        if (!layer.weights.allFinite() || !layer.bias.allFinite())
          throw TrainingDiverged(epoch, batches, step.mean_loss);

      loss_sum += step.mean_loss;
      ++batches;
    }
    if (hooks.on_epoch)
      hooks.on_epoch(EpochStats{ epoch, loss_sum / batches, accuracy(model, ds, train_idx, AttackSpec{}) });
  }
  return model;
}

double accuracy(const Classifier& model,
                const LabeledDataset& ds,
                std::span<const std::size_t> idx,
                const AttackSpec& attack)
{
  if (idx.empty())
    throw ArgumentError("accuracy needs a non-empty index list");
  const Matrix x = ds.gather(idx);
  const std::vector<int> y = ds.gather_labels(idx);
  const Matrix probs = model.predict_proba(perturb_batch(model, x, y, attack));
  std::size_t hits = 0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c)
      if (probs(r, c) > probs(r, best))
        best = c;
    if (best == y[static_cast<std::size_t>(r)])
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

double mean_loss(const Classifier& model,
                 const LabeledDataset& ds,
                 std::span<const std::size_t> idx,
                 const AttackSpec& attack)
{
  if (idx.empty())
    throw ArgumentError("mean_loss needs a non-empty index list");
  const Matrix x = ds.gather(idx);
  const std::vector<int> y = ds.gather_labels(idx);
  return batch_losses(model, perturb_batch(model, x, y, attack), y).mean();
}

std::function<void(const EpochStats&)> csv_epoch_logger(std::ostream& out)
{
  out << "epoch,loss,clean_acc\n";
  return [&out](const EpochStats& s) { out << fmt::format("{},{},{}\n", s.epoch, s.loss, s.clean_acc); };
}

} // namespace advconform
