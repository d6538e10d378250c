#include "sdpoint/train.hpp"

#include <cmath>

namespace sdpoint {

namespace {
// Stream tags under the training seed.
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kAugmentStream = 2;
constexpr std::uint64_t kInstanceStream = 3;
constexpr std::uint64_t kInitStream = 4;
}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw UsageError("epochs must be >= 1");
  if (batch_size == 0) throw UsageError("batch_size must be >= 1");
  if (!(base_lr >= 0.0)) throw UsageError("base_lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw UsageError("weight_decay must be >= 0");
  for (double d : lr_drops)
    if (!(d > 0.0 && d < 1.0)) throw UsageError("learning-rate drop points must lie in (0, 1)");
  if (ratios.empty()) throw UsageError("ratio set must not be empty");
  for (double r : ratios)
    if (!(r > 0.0 && r <= 1.0)) throw UsageError("ratios must lie in (0, 1]");
  if (multiscale_min == 0 || multiscale_min > multiscale_max)
    throw UsageError("multiscale size range must satisfy 1 <= min <= max");
}

double learning_rate(const TrainConfig& config, std::size_t epoch) {
  int drops = 0;
  for (double d : config.lr_drops)
    if (static_cast<double>(epoch) >= d * static_cast<double>(config.epochs)) ++drops;
  return config.base_lr * std::pow(10.0, -drops);
}

std::uint64_t init_seed(std::uint64_t training_seed) { return Rng(training_seed).derive(kInitStream).seed(); }

void Sgd::step(std::vector<ParamRef<float>>& params, double lr) {
  if (velocity_.empty()) {
    for (const ParamRef<float>& p : params) velocity_.emplace_back(p.value->size(), 0.0f);
  }
  if (velocity_.size() != params.size()) throw UsageError("parameter list changed between optimizer steps");
  const float mu = static_cast<float>(momentum_);
  const float wd = static_cast<float>(weight_decay_);
  const float rate = static_cast<float>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value->data();
    auto g = params[i].grad->data();
    std::vector<float>& v = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = mu * v[j] - rate * (g[j] + wd * w[j]);
      w[j] += v[j];
    }
  }
}

TrainHistory train(const TrainConfig& config, Network<float>& net, const Dataset& train_data,
                   const EpochCallback& on_epoch) {
  config.validate();
  const Rng root(config.seed);
  BatchIterator batches(train_data, config.batch_size, root.derive(kShuffleStream).seed());
  Rng augment_rng = root.derive(kAugmentStream);
  Rng draw_rng = root.derive(kInstanceStream);
  const InstanceCatalog catalog = enumerate_instances(net.num_blocks(), config.ratios);
  Sgd sgd(config.momentum, config.weight_decay);
  std::vector<ParamRef<float>> params = net.parameters();

  TrainHistory history;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = learning_rate(config, epoch);
    batches.start_epoch(epoch);
    Batch batch;
    double loss_sum = 0.0;
    std::size_t iterations = 0;
    while (batches.next(batch, config.augment, augment_rng)) {
      Instance inst;
      Tensor4 input = std::move(batch.images);
      switch (config.mode) {
        case TrainMode::kSdpoint:
          inst = sample_instance(catalog, draw_rng);
          history.draws.push_back(inst.id());
          break;
        case TrainMode::kBaseline:
          history.draws.push_back(inst.id());
          break;
        case TrainMode::kMultiscale: {
          const std::size_t size =
              config.multiscale_min + draw_rng.uniform_choice(config.multiscale_max - config.multiscale_min + 1);
          if (size != input.shape().h || size != input.shape().w) input = bilinear_resize(input, size, size);
          history.draws.push_back("s" + std::to_string(size));
          break;
        }
      }
      net.zero_grad();
      ForwardContext ctx;
      ctx.bn_mode = BnMode::kTrain;
      ctx.keep_cache = true;
      SDPointTrace trace;
      Tensor4 logits = sdpoint_forward(net, input, inst, ctx, &trace);
      LossResult<float> loss = softmax_cross_entropy(logits, batch.labels);
      if (!std::isfinite(loss.loss))
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", iteration " +
                             std::to_string(iterations));
      sdpoint_backward(net, loss.grad_logits, trace);
      sgd.step(params, lr);
      history.iteration_losses.push_back(loss.loss);
      loss_sum += loss.loss;
      ++iterations;
    }
    EpochRecord record{epoch, lr, loss_sum / static_cast<double>(iterations)};
    history.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return history;
}

}  // namespace sdpoint
