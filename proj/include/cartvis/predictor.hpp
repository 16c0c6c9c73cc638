#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "cartvis/dataset.hpp"
#include "cartvis/env.hpp"
#include "cartvis/layers.hpp"

namespace cartvis {

struct PredictorArch {
  int frame_height = kFrameSize;
  int frame_width = kFrameSize;
  int frame_channels = kFrameChannels;
  int conv1_channels = 16;
  int conv2_channels = 32;
  int kernel = 3;
  int feature_width = 128;
  int hidden_width = 128;
  int head_hidden = 64;
  int window = kWindow;
  /// Encoder sees 1 - pixel, so the white background is zero.
  bool invert_input = true;
  static constexpr int kStateDim = 4;

  // Stride-2, pad-1 convolutions halve each spatial side.
  nn::ConvShape conv1() const { return {frame_height, frame_width, frame_channels, conv1_channels, kernel, 2, kernel / 2}; }
  nn::ConvShape conv2() const {
    const auto c1 = conv1();
    return {c1.out_height(), c1.out_width(), conv1_channels, conv2_channels, kernel, 2, kernel / 2};
  }
  int frame_size() const { return frame_height * frame_width * frame_channels; }
  int flat_width() const { return conv2().out_size(); }
  /// Feature plus the scalar action.
  int gru_input() const { return feature_width + 1; }

  void validate() const;
  bool operator==(const PredictorArch&) const = default;
};

template <typename Scalar>
struct PredictorParams {
  using Mat = nn::Matrix<Scalar>;
  static constexpr std::size_t kCount = 16;

  Mat conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b;
  Mat gru_wz, gru_bz, gru_wr, gru_br, gru_wh, gru_bh;
  Mat head1_w, head1_b, head2_w, head2_b;

  static const std::array<const char*, kCount>& names();
  std::array<Mat*, kCount> tensors();
  std::array<const Mat*, kCount> tensors() const;

  static PredictorParams zeros(const PredictorArch& arch);
  void set_zero();
};

/// Frame encoder (2 conv + fc), GRU over the window of [feature; action]
/// inputs and an MLP head producing (x, x_dot, theta, theta_dot).
template <typename Scalar>
class PredictorModel {
 public:
  using Mat = nn::Matrix<Scalar>;
  using Vec = nn::Vector<Scalar>;

  explicit PredictorModel(const PredictorArch& arch = {});
  /// Fan-in uniform initialization.
  static PredictorModel random(const PredictorArch& arch, std::uint64_t seed);

  const PredictorArch& arch() const { return arch_; }
  PredictorParams<Scalar>& params() { return params_; }
  const PredictorParams<Scalar>& params() const { return params_; }

  Vec encode_frame(const Eigen::Ref<const Vec>& frame) const;
  /// frames: frame_size x N, one HWC frame per column. Returns feature_width x N.
  Mat encode_frames(const Mat& frames) const;

  Vec gru_step(const Eigen::Ref<const Vec>& h_prev, const Eigen::Ref<const Vec>& input) const;
  /// Gate values for one step, exposed for property tests.
  struct GruGates {
    Vec z, r, candidate, h;
  };
  GruGates gru_gates(const Eigen::Ref<const Vec>& h_prev, const Eigen::Ref<const Vec>& input) const;

  /// frames: frame_size x window, oldest first.
  StateVec predict(const Mat& frames, std::span<const Action> actions) const;
  /// Same as predict with the encoder outputs precomputed (feature_width x window).
  StateVec predict_from_features(const Mat& features, std::span<const Action> actions) const;
  /// Time-major batch: frames frame_size x (window*B), column t*B+b; actions window x B.
  Mat predict_batch(const Mat& frames, const Mat& actions) const;

  /// Mean squared-norm loss of a batch and its gradient w.r.t. every parameter.
  Scalar loss_and_gradient(const Mat& frames, const Mat& actions, const Mat& targets,
                           PredictorParams<Scalar>& grad) const;

  template <typename Other>
  PredictorModel<Other> cast() const {
    PredictorModel<Other> out(arch_);
    auto dst = out.params().tensors();
    auto src = params_.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<Other>();
    return out;
  }

 private:
  struct Cache;
  Mat forward(const Mat& frames, const Mat& actions, Cache* cache) const;

  PredictorArch arch_;
  PredictorParams<Scalar> params_;
};

/// Squared Euclidean distance of one estimate from the truth.
template <typename Derived1, typename Derived2>
auto state_loss(const Eigen::MatrixBase<Derived1>& estimate, const Eigen::MatrixBase<Derived2>& truth) {
  return (estimate - truth).squaredNorm();
}

/// Per-sample state_loss averaged over the columns of a batch.
template <typename Derived1, typename Derived2>
auto batch_loss(const Eigen::MatrixBase<Derived1>& estimate, const Eigen::MatrixBase<Derived2>& truth) {
  using Scalar = typename Derived1::Scalar;
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols() || estimate.cols() == 0)
    throw Error(ErrorKind::Dimension, "batch_loss: shape mismatch");
  return (estimate - truth).colwise().squaredNorm().sum() / Scalar(estimate.cols());
}

template <typename Scalar>
void save_predictor(const PredictorModel<Scalar>& model, const std::filesystem::path& path);
/// Rejects files whose architecture differs from `expected` (when given),
/// naming each mismatching dimension.
template <typename Scalar>
PredictorModel<Scalar> load_predictor(const std::filesystem::path& path, const PredictorArch* expected = nullptr);

// Training ------------------------------------------------------------------

struct TrainConfig {
  int batch_size = 32;
  int epochs = 100;
  double learning_rate = 1e-3;
  std::uint64_t seed = 3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

struct EpochLoss {
  int epoch = 0;
  double train = 0.0;
  double val = std::numeric_limits<double>::quiet_NaN();
};

/// Everything needed to continue training where it stopped.
struct TrainerState {
  PredictorModel<float> model;
  nn::Adam<float> adam;
  int epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
};

void save_trainer_state(const TrainerState& state, const std::filesystem::path& path);
TrainerState load_trainer_state(const std::filesystem::path& path, const TrainConfig& config);

/// Mini-batch Adam on the mean squared state error.
class PredictorTrainer {
 public:
  PredictorTrainer(const DatasetReader& data, Split split, TrainConfig config, const PredictorArch& arch = {});

  void resume(TrainerState state) { state_ = std::move(state); }
  /// One pass over the shuffled training ids, then a validation pass.
  /// Throws NonFinite when a batch loss is NaN or infinite.
  EpochLoss run_epoch();
  /// Mean per-sample loss over `ids` with the current parameters.
  double evaluate(std::span<const std::size_t> ids) const;

  const TrainerState& state() const { return state_; }
  /// True when the last epoch improved the best validation loss.
  bool improved() const { return improved_; }

 private:
  const DatasetReader& data_;
  Split split_;
  TrainConfig config_;
  TrainerState state_;
  bool improved_ = false;
};

/// Per-sample predictions for `ids`, 4 x ids.size().
nn::Matrix<double> predict_dataset(const PredictorModel<float>& model, const DatasetReader& data,
                                   std::span<const std::size_t> ids, int batch_size = 64);

}  // namespace cartvis
