#include "ksac/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#include "ksac/autograd.hpp"
#include "ksac/errors.hpp"
#include "ksac/random.hpp"
#include "ksac/tensor_ops.hpp"

namespace ksac {

// ---------------------------------------------------------------------------
// ConfusionMatrix

ConfusionMatrix::ConfusionMatrix(std::int64_t classes) : k_(classes), counts_(static_cast<std::size_t>(classes * classes), 0) {
  if (classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_counts(std::int64_t classes, std::vector<std::int64_t> counts) {
  ConfusionMatrix cm(classes);
  if (static_cast<std::int64_t>(counts.size()) != classes * classes) {
    throw ShapeError("confusion matrix: expected " + std::to_string(classes * classes) + " counts");
  }
  for (std::int64_t c : counts) {
    if (c < 0) throw ContractError("confusion matrix: negative count");
  }
  cm.counts_ = std::move(counts);
  return cm;
}

void ConfusionMatrix::add(std::int64_t gt, std::int64_t pred, std::int64_t count) {
  if (gt < 0 || gt >= k_ || pred < 0 || pred >= k_) {
    throw ContractError("confusion matrix: class index out of range (" + std::to_string(gt) + "," +
                        std::to_string(pred) + ")");
  }
  counts_[static_cast<std::size_t>(gt * k_ + pred)] += count;
}

void ConfusionMatrix::accumulate(const LabelMap& gt, const LabelMap& pred, std::int32_t ignore_label) {
  if (gt.n != pred.n || gt.h != pred.h || gt.w != pred.w) throw ShapeError("confusion matrix: label maps differ in size");
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    if (gt.values[i] == ignore_label) continue;
    add(gt.values[i], pred.values[i]);
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("confusion matrix: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (std::int64_t c : counts_) t += c;
  return t;
}

std::optional<double> ConfusionMatrix::iou(std::int64_t k) const {
  std::int64_t row = 0;
  std::int64_t col = 0;
  for (std::int64_t j = 0; j < k_; ++j) {
    row += at(k, j);
    col += at(j, k);
  }
  const std::int64_t tp = at(k, k);
  const std::int64_t denom = row + col - tp;
  if (denom == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(denom);
}

std::vector<std::optional<double>> ConfusionMatrix::per_class_iou() const {
  std::vector<std::optional<double>> out;
  for (std::int64_t k = 0; k < k_; ++k) out.push_back(iou(k));
  return out;
}

double ConfusionMatrix::miou() const {
  double sum = 0;
  int defined = 0;
  for (std::int64_t k = 0; k < k_; ++k) {
    if (auto v = iou(k)) {
      sum += *v;
      ++defined;
    }
  }
  return defined == 0 ? 0.0 : sum / defined;
}

// ---------------------------------------------------------------------------
// Evaluation

std::string to_string(EvalStrategy s) {
  switch (s) {
    case EvalStrategy::single: return "single";
    case EvalStrategy::flip: return "flip";
    case EvalStrategy::ms: return "ms";
    case EvalStrategy::ms_flip: return "ms+flip";
  }
  return "single";
}

EvalStrategy parse_eval_strategy(const std::string& text) {
  if (text == "single") return EvalStrategy::single;
  if (text == "flip") return EvalStrategy::flip;
  if (text == "ms") return EvalStrategy::ms;
  if (text == "ms+flip" || text == "ms_flip") return EvalStrategy::ms_flip;
  throw ConfigError("unknown eval strategy '" + text + "' (single, flip, ms, ms+flip)");
}

Tensor predict_logits(Model& model, const Tensor& image, EvalStrategy strategy, std::span<const double> scales) {
  NoGradGuard no_grad;
  const std::int64_t h = image.shape().h;
  const std::int64_t w = image.shape().w;
  const bool multi = strategy == EvalStrategy::ms || strategy == EvalStrategy::ms_flip;
  const bool flip = strategy == EvalStrategy::flip || strategy == EvalStrategy::ms_flip;
  const std::vector<double> unit{1.0};
  const std::span<const double> use = multi ? scales : std::span<const double>(unit);
  if (use.empty()) throw ConfigError("multi-scale evaluation needs at least one scale");

  Tensor sum;
  int passes = 0;
  auto accumulate = [&](const Tensor& logits) {
    sum = sum.defined() ? add(sum, logits) : logits;
    ++passes;
  };
  for (double s : use) {
    const std::int64_t sh = std::max<std::int64_t>(1, std::llround(static_cast<double>(h) * s));
    const std::int64_t sw = std::max<std::int64_t>(1, std::llround(static_cast<double>(w) * s));
    const Tensor input = (sh == h && sw == w) ? image : bilinear_resize(image, sh, sw);
    Tensor logits = model.forward(input, Mode::eval);
    accumulate((sh == h && sw == w) ? logits : bilinear_resize(logits, h, w));
    if (flip) {
      Tensor mirrored = flip_horizontal(model.forward(flip_horizontal(input), Mode::eval));
      accumulate((sh == h && sw == w) ? mirrored : bilinear_resize(mirrored, h, w));
    }
  }
  return passes == 1 ? sum : scalar_mul(sum, Real(1) / static_cast<Real>(passes));
}

LabelMap argmax_labels(const Tensor& logits) {
  const Shape s = logits.shape();
  LabelMap out(s.n, s.h, s.w);
  const auto d = logits.data();
  const std::int64_t plane = s.plane();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t p = 0; p < plane; ++p) {
      std::int32_t best = 0;
      Real best_v = d[static_cast<std::size_t>(n * s.c * plane + p)];
      for (std::int64_t c = 1; c < s.c; ++c) {
        const Real v = d[static_cast<std::size_t>((n * s.c + c) * plane + p)];
        if (v > best_v) {
          best_v = v;
          best = static_cast<std::int32_t>(c);
        }
      }
      out.values[static_cast<std::size_t>(n * plane + p)] = best;
    }
  }
  return out;
}

EvalResult evaluate(Model& model, std::span<const SceneSample> samples, const EvalOptions& options) {
  const std::int64_t k = model.config().num_classes;
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(1, options.threads)), samples.size()));
  std::vector<ConfusionMatrix> partial(workers, ConfusionMatrix(k));
  auto shard = [&](std::size_t worker) {
    for (std::size_t i = worker; i < samples.size(); i += workers) {
      const SceneSample& s = samples[i];
      const Tensor logits = predict_logits(model, s.image, options.strategy, options.scales);
      partial[worker].accumulate(s.labels, argmax_labels(logits), options.ignore_label);
    }
  };
  if (workers == 1) {
    shard(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(shard, w);
  }
  EvalResult result{{}, 0.0, ConfusionMatrix(k)};
  for (const ConfusionMatrix& cm : partial) result.confusion += cm;
  result.iou = result.confusion.per_class_iou();
  result.miou = result.confusion.miou();
  return result;
}

// ---------------------------------------------------------------------------
// Optimization

void sgd_step(std::span<Tensor> params, std::vector<std::vector<Real>>& velocity, Real lr, Real momentum,
              std::int64_t iteration, Real weight_decay) {
  if (velocity.size() != params.size()) velocity.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& v = velocity[i];
    if (v.size() != static_cast<std::size_t>(p.numel())) v.assign(static_cast<std::size_t>(p.numel()), Real(0));
    const auto g = p.grad();
    for (Real x : g) {
      if (!std::isfinite(x)) {
        throw DivergenceError(iteration, "non-finite gradient at iteration " + std::to_string(iteration));
      }
    }
    auto data = p.mutable_data();
    for (std::size_t j = 0; j < v.size(); ++j) {
      const Real gj = (g.empty() ? Real(0) : g[j]) + weight_decay * data[j];
      v[j] = momentum * v[j] + gj;
      data[j] -= lr * v[j];
    }
  }
}

void TrainConfig::validate() const {
  if (lr_schedule.empty() || lr_schedule.front().first != 0) {
    throw ConfigError("lr schedule must start at iteration 0");
  }
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (!(lr_schedule[i].second >= 0.0)) throw ConfigError("learning rates must be non-negative");
    if (i > 0 && lr_schedule[i].first <= lr_schedule[i - 1].first) {
      throw ConfigError("lr schedule iterations must be strictly increasing");
    }
  }
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (max_iterations < 0) throw ConfigError("max_iterations must be non-negative");
  if (eval_every < 0) throw ConfigError("eval_every must be non-negative");
  augment.validate();
}

double TrainConfig::lr_at(std::int64_t iteration) const {
  double lr = lr_schedule.front().second;
  for (const auto& [start, value] : lr_schedule) {
    if (start <= iteration) lr = value;
  }
  return lr;
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "iteration,loss,lr,miou\n" << std::setprecision(17);
  for (const TrainLogRow& r : rows) {
    os << r.iteration << ',' << r.loss << ',' << r.lr << ',';
    if (r.miou) os << *r.miou;
    os << '\n';
  }
  return os.str();
}

TrainLog train(Model& model, std::span<const SceneSample> train_set, std::span<const SceneSample> eval_set,
               const TrainConfig& cfg, const EvalOptions& eval_options) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  TrainLog log;
  std::vector<Tensor> params = model.trainable_tensors();
  std::vector<std::vector<Real>> velocity;
  model.zero_grad();
  Tape::current().clear();

  auto maybe_evaluate = [&](std::int64_t iteration, TrainLogRow& row) {
    if (cfg.eval_every == 0 || eval_set.empty()) return;
    const bool due = (iteration + 1) % cfg.eval_every == 0 || iteration + 1 == cfg.max_iterations;
    if (!due) return;
    const double miou = evaluate(model, eval_set, eval_options).miou;
    row.miou = miou;
    if (!log.best_miou || miou > *log.best_miou) {
      log.best_miou = miou;
      log.best_iteration = iteration;
      log.best_state = model.state_dict();
    }
  };

  for (std::int64_t it = 0; it < cfg.max_iterations; ++it) {
    Rng pick(derive_seed(cfg.seed, static_cast<std::uint64_t>(it)));
    std::vector<SceneSample> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
      const auto idx = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(train_set.size()) - 1));
      const SceneSample& src = train_set[idx];
      if (cfg.use_augmentation) {
        batch.push_back(augment(src, cfg.augment, pick.next_u64()));
      } else {
        batch.push_back({src.image, src.labels, {}});
      }
    }
    const Batch stacked = stack_samples(batch);
    const Tensor logits = model.forward(stacked.images, Mode::train);
    const XentResult xent = softmax_xent(logits, stacked.labels, cfg.ignore_label);
    const double loss = xent.loss.item();
    backward(xent.loss);
    const double lr = cfg.lr_at(it);
    sgd_step(params, velocity, static_cast<Real>(lr), static_cast<Real>(cfg.momentum), it,
             static_cast<Real>(cfg.weight_decay));
    model.zero_grad();

    TrainLogRow row{it, loss, lr, std::nullopt};
    maybe_evaluate(it, row);
    log.rows.push_back(row);
  }
  if (log.best_state.empty()) log.best_state = model.state_dict();
  return log;
}

}  // namespace ksac
