#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "cartvis/error.hpp"
#include "cartvis/predictor.hpp"

namespace cartvis {

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorKind::Config, "predictor.batch_size must be >= 1");
  if (epochs < 0) throw Error(ErrorKind::Config, "predictor.epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::Config, "predictor.learning_rate must be > 0");
}

PredictorTrainer::PredictorTrainer(const DatasetReader& data, Split split, TrainConfig config, const PredictorArch& arch)
    : data_(data),
      split_(std::move(split)),
      config_(config),
      state_{PredictorModel<float>::random(arch, config.seed),
             nn::Adam<float>({config.learning_rate, config.beta1, config.beta2, config.adam_epsilon})} {
  config_.validate();
  if (arch.frame_height != kFrameSize || arch.frame_width != kFrameSize || arch.frame_channels != kFrameChannels ||
      arch.window != kWindow)
    throw Error(ErrorKind::Dimension, "predictor input dimensions must match the dataset frames");
  if (split_.train.empty()) throw Error(ErrorKind::InvalidArgument, "training split is empty");
}

EpochLoss PredictorTrainer::run_epoch() {
  const int epoch = state_.epoch + 1;
  std::vector<std::size_t> ids = split_.train;
  // Seeded per epoch so a resumed run replays the same order.
  std::mt19937_64 rng(config_.seed * 0x9E3779B97F4A7C15ull + std::uint64_t(epoch));
  std::shuffle(ids.begin(), ids.end(), rng);

  auto& model = state_.model;
  PredictorParams<float> grad = PredictorParams<float>::zeros(model.arch());
  nn::Matrix<float> frames, actions, targets;
  double total = 0.0;
  const std::size_t bs = static_cast<std::size_t>(config_.batch_size);
  for (std::size_t start = 0; start < ids.size(); start += bs) {
    const std::size_t count = std::min(bs, ids.size() - start);
    const std::span<const std::size_t> batch(ids.data() + start, count);
    data_.load_batch(batch, frames, actions, targets);
    const float loss = model.loss_and_gradient(frames, actions, targets, grad);
    if (!std::isfinite(loss)) {
      std::ostringstream os;
      os << "predictor loss became " << loss << " at epoch " << epoch << ", batch " << start / bs
         << " (learning rate " << config_.learning_rate << "); lower the learning rate or check the dataset";
      throw Error(ErrorKind::NonFinite, os.str());
    }
    total += double(loss) * double(count);
    auto params = model.params().tensors();
    const auto grads = std::as_const(grad).tensors();
    state_.adam.step(params, grads);
  }

  EpochLoss e;
  e.epoch = epoch;
  e.train = total / double(ids.size());
  const double score = split_.val.empty() ? e.train : (e.val = evaluate(split_.val));
  state_.epoch = epoch;
  improved_ = score < state_.best_val;
  if (improved_) {
    state_.best_val = score;
    state_.best_epoch = epoch;
  }
  return e;
}

double PredictorTrainer::evaluate(std::span<const std::size_t> ids) const {
  if (ids.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto est = predict_dataset(state_.model, data_, ids);
  double total = 0.0;
  for (std::size_t j = 0; j < ids.size(); ++j) total += state_loss(est.col(j), data_.target(ids[j]).vec());
  return total / double(ids.size());
}

nn::Matrix<double> predict_dataset(const PredictorModel<float>& model, const DatasetReader& data,
                                   std::span<const std::size_t> ids, int batch_size) {
  nn::Matrix<double> out(4, ids.size());
  nn::Matrix<float> frames, actions, targets;
  const std::size_t bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < ids.size(); start += bs) {
    const std::size_t count = std::min(bs, ids.size() - start);
    data.load_batch(ids.subspan(start, count), frames, actions, targets);
    out.middleCols(start, count) = model.predict_batch(frames, actions).cast<double>();
  }
  return out;
}

}  // namespace cartvis
