#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ksac/checkpoint.hpp"
#include "ksac/data_synth.hpp"
#include "ksac/model.hpp"

namespace ksac {

/// K x K pixel counts; entry (g, p) counts ground truth g predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t classes = 2);

  std::int64_t classes() const { return k_; }
  std::int64_t at(std::int64_t gt, std::int64_t pred) const { return counts_[static_cast<std::size_t>(gt * k_ + pred)]; }
  void add(std::int64_t gt, std::int64_t pred, std::int64_t count = 1);
  /// Skips pixels whose ground truth equals ignore_label.
  void accumulate(const LabelMap& gt, const LabelMap& pred, std::int32_t ignore_label = kDefaultIgnoreLabel);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  std::int64_t total() const;
  /// TP / (TP + FP + FN); nullopt when the class is absent from both
  /// ground truth and prediction.
  std::optional<double> iou(std::int64_t k) const;
  std::vector<std::optional<double>> per_class_iou() const;
  /// Mean over defined classes; 0 when no class is defined.
  double miou() const;

  static ConfusionMatrix from_counts(std::int64_t classes, std::vector<std::int64_t> counts);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::int64_t k_;
  std::vector<std::int64_t> counts_;
};

enum class EvalStrategy { single, flip, ms, ms_flip };

std::string to_string(EvalStrategy s);
EvalStrategy parse_eval_strategy(const std::string& text);

struct EvalOptions {
  EvalStrategy strategy = EvalStrategy::single;
  /// Multi-scale set used by ms and ms_flip.
  std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
  int threads = 1;
  std::int32_t ignore_label = kDefaultIgnoreLabel;
};

struct EvalResult {
  std::vector<std::optional<double>> iou;
  double miou = 0;
  ConfusionMatrix confusion;
};

/// Eval-mode logits for one (1,3,H,W) image averaged over the strategy's
/// scales and mirrorings, each resized back to H x W.
Tensor predict_logits(Model& model, const Tensor& image, EvalStrategy strategy, std::span<const double> scales);
/// Per-pixel argmax; ties go to the lowest class index.
LabelMap argmax_labels(const Tensor& logits);

/// Never mutates parameters or BN statistics. Samples are sharded over
/// `threads` workers with private matrices merged by addition.
EvalResult evaluate(Model& model, std::span<const SceneSample> samples, const EvalOptions& options);

// ---------------------------------------------------------------------------

/// v <- momentum * v + g (+ weight_decay * p); p <- p - lr * v.
/// Throws DivergenceError if any gradient is non-finite.
void sgd_step(std::span<Tensor> params, std::vector<std::vector<Real>>& velocity, Real lr, Real momentum,
              std::int64_t iteration = 0, Real weight_decay = 0);

struct TrainConfig {
  /// Piecewise-constant (start iteration, lr); first entry starts at 0.
  std::vector<std::pair<std::int64_t, double>> lr_schedule{{0, 2e-3}};
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::int64_t batch_size = 8;
  std::int64_t max_iterations = 1000;
  std::uint64_t seed = 0;
  /// 0 disables periodic evaluation.
  std::int64_t eval_every = 0;
  AugmentSpec augment;
  bool use_augmentation = true;
  std::int32_t ignore_label = kDefaultIgnoreLabel;

  void validate() const;
  double lr_at(std::int64_t iteration) const;
};

struct TrainLogRow {
  std::int64_t iteration = 0;
  double loss = 0;
  double lr = 0;
  std::optional<double> miou;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  std::optional<double> best_miou;
  std::int64_t best_iteration = -1;
  /// Parameters at the best evaluation, or the final ones without evaluation.
  std::vector<NamedTensor> best_state;

  /// iteration,loss,lr,miou
  std::string to_csv() const;
};

/// Mini-batch SGD with momentum. Deterministic for a given seed.
TrainLog train(Model& model, std::span<const SceneSample> train_set, std::span<const SceneSample> eval_set,
               const TrainConfig& cfg, const EvalOptions& eval_options = {});

}  // namespace ksac
