#pragma once

// Optimization step, epoch loop with validation, and dataset evaluation.

#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "rsca/checkpoint.hpp"
#include "rsca/data.hpp"
#include "rsca/loss.hpp"
#include "rsca/metrics.hpp"
#include "rsca/optimizer.hpp"

namespace rsca {

/// Stacks samples into (n, 3, H, W) images and (n, 1, H, W) masks.
inline std::pair<Tensor<float>, Tensor<float>> stack(std::span<const Sample> samples) {
  if (samples.empty()) throw ValidationError("stack: no samples");
  const Shape is = samples.front().image.shape();
  const Shape ms = samples.front().mask.shape();
  std::vector<float> images, masks;
  images.reserve(is.size() * samples.size());
  masks.reserve(ms.size() * samples.size());
  for (const auto& s : samples) {
    require_same_shape(s.image.shape(), is, "stack");
    require_same_shape(s.mask.shape(), ms, "stack");
    images.insert(images.end(), s.image.data().begin(), s.image.data().end());
    masks.insert(masks.end(), s.mask.data().begin(), s.mask.data().end());
  }
  return {Tensor<float>(Shape{samples.size(), is.c, is.h, is.w}, std::move(images)),
          Tensor<float>(Shape{samples.size(), 1, ms.h, ms.w}, std::move(masks))};
}

/// One forward, combined loss, backward and optimizer update. Returns the loss before the update.
template <class T>
double train_step(Model<T>& model, const Tensor<T>& images, const Tensor<T>& masks, Optimizer<T>& opt) {
  require_binary(masks, "train_step");
  const Shape is = images.shape(), ms = masks.shape();
  if (ms.n != is.n || ms.c != 1 || ms.h != is.h || ms.w != is.w) {
    throw DimensionError("train_step: masks " + ms.str() + " do not match images " + is.str());
  }
  model.parameters().zero_grad();
  Tensor<T> loss = combined_loss(model.forward(images), masks);
  const double value = loss.item();
  loss.backward();
  opt.step(model.parameters());
  return value;
}

struct Evaluation {
  double loss = 0.0;  // mean combined loss over images
  std::vector<ImageEvaluation> images;
  std::vector<Mask> predictions;

  double lesion_dice() const { return aggregate(images).lesion.dsc; }
};

/// Runs the model on each sample separately (no autograd) and scores binarized predictions.
template <class T>
Evaluation evaluate(const Model<T>& model, std::span<const Sample> samples, bool keep_predictions = false) {
  NoGradGuard no_grad;
  Evaluation ev;
  for (const auto& s : samples) {
    Tensor<T> probs = model.forward(cast<T>(s.image));
    ev.loss += combined_loss(probs, cast<T>(s.mask)).item();
    Mask pred = binarize(probs);
    ev.images.push_back(evaluate_image(pred, mask_from_tensor(s.mask), s.id));
    if (keep_predictions) ev.predictions.push_back(std::move(pred));
  }
  if (!samples.empty()) ev.loss /= static_cast<double>(samples.size());
  return ev;
}

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  bool augment = true;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_dice = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  CheckpointFile best;
};

/// Epoch loop: per-epoch shuffled minibatches with on-the-fly augmentation, validation after each
/// epoch, and an in-memory snapshot of the epoch with the highest validation Dice (first wins ties).
/// Without a validation set the training samples are scored instead.
template <class T>
TrainResult train(Model<T>& model, Optimizer<T>& opt, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const TrainOptions& options,
                  const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (train_set.empty()) throw ValidationError("train: empty training set");
  if (options.batch == 0) throw ValidationError("train: batch must be >= 1");
  TrainResult result;
  double best_dice = -1.0;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    opt.set_epoch(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(mix_seed(options.seed, "epoch/" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch) {
      const std::size_t end = std::min(order.size(), start + options.batch);
      std::vector<Sample> batch;
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = train_set[order[i]];
        if (options.augment) {
          auto rng = sample_rng(options.seed, epoch, s.id);
          batch.push_back(augment(s, rng));
        } else {
          batch.push_back(s);
        }
      }
      auto [images, masks] = stack(batch);
      loss_sum += train_step(model, cast<T>(images), cast<T>(masks), opt) * static_cast<double>(end - start);
    }

    const Evaluation ev = evaluate(model, val_set.empty() ? train_set : val_set);
    EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(order.size()), ev.loss, ev.lesion_dice()};
    result.log.push_back(rec);
    if (rec.val_dice > best_dice) {
      best_dice = rec.val_dice;
      result.best_epoch = rec.epoch;
      result.best = snapshot(model);
    }
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

inline constexpr const char* kLossLogHeader = "epoch,train_loss,val_loss,val_dice";

inline std::string loss_log_csv(std::span<const EpochRecord> log) {
  std::string out = std::string(kLossLogHeader) + "\n";
  char line[128];
  for (const auto& r : log) {
    std::snprintf(line, sizeof line, "%zu,%.8f,%.8f,%.8f\n", r.epoch, r.train_loss, r.val_loss, r.val_dice);
    out += line;
  }
  return out;
}

}  // namespace rsca
