#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cartvis/env.hpp"
#include "cartvis/layers.hpp"
#include "cartvis/predictor.hpp"

namespace cartvis {

enum class ObservationMode { Full, Predicted };

std::string_view to_string(ObservationMode mode);
ObservationMode observation_mode_from(std::string_view name);

struct ShapingWeights {
  double position = 0.1;
  double angle = 1.0;
  double action_switch = 0.35;
};

struct RLConfig {
  double gamma = 0.99;
  double learning_rate = 1e-4;
  int batch_size = 64;
  long long total_timesteps = 100000;
  std::size_t buffer_capacity = 100000;
  double epsilon_initial = 0.02;
  double epsilon_decay = 0.9;  // per episode, multiplicative
  double epsilon_floor = 0.001;
  int target_update_period = 500;  // environment steps
  int learning_starts = 1000;
  int hidden_width = 128;
  double max_grad_norm = 10.0;
  ShapingWeights shaping;
  std::uint64_t seed = 5;

  void validate() const;
};

/// 1 - w_x |x| - w_theta |theta| - w_u [action != previous].
double shaped_reward(const State& state, std::optional<Action> previous, Action action,
                     const ShapingWeights& weights = {});

/// Exploration rate at the start of `episode`.
double epsilon_at(long long episode, const RLConfig& config);

/// Epsilon-greedy over two action values; ties go to Action::Left.
Action select_action(const Eigen::Vector2d& q_values, double epsilon, std::mt19937_64& rng);

struct Transition {
  StateVec state = StateVec::Zero();
  Action action = Action::Left;
  double reward = 0.0;
  StateVec next_state = StateVec::Zero();
  /// True only for environment termination; truncated steps still bootstrap.
  bool done = false;
};

/// Fixed-capacity ring with oldest-first eviction and uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(const Transition& t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// Logical index: 0 is the oldest live transition.
  const Transition& at(std::size_t i) const;
  /// Uniform indices with replacement.
  std::vector<std::size_t> sample(std::size_t batch, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
};

/// MLP from a 4-vector state to two action values.
template <typename Scalar>
class QNetwork {
 public:
  using Mat = nn::Matrix<Scalar>;
  using Vec = nn::Vector<Scalar>;
  static constexpr std::size_t kTensors = 6;

  explicit QNetwork(int hidden_width = 128);
  static QNetwork random(int hidden_width, std::uint64_t seed);

  int hidden_width() const { return hidden_; }
  /// Fixed elementwise factor applied to states before the first layer.
  const StateVec& input_scale() const { return scale_; }
  void set_input_scale(const StateVec& scale) { scale_ = scale; }

  /// states: 4 x B. Returns 2 x B.
  Mat forward(const Mat& states) const;
  Eigen::Vector2d q_values(const StateVec& state) const;

  /// Mean Huber loss of (targets - Q(s, a)) with its gradient w.r.t. the parameters.
  Scalar huber_gradient(const Mat& states, std::span<const Action> actions, const Vec& targets,
                        std::array<Mat, kTensors>& grad) const;

  static const std::array<const char*, kTensors>& names();
  std::array<Mat*, kTensors> tensors();
  std::array<const Mat*, kTensors> tensors() const;

  bool operator==(const QNetwork& other) const;

 private:
  int hidden_;
  StateVec scale_ = StateVec(1.0 / 2.4, 1.0 / 3.0, 1.0 / 0.21, 1.0 / 3.0);
  Mat w1_, b1_, w2_, b2_, w3_, b3_;
};

using QNet = QNetwork<double>;

/// Bootstrapped targets r + gamma * max_a' Q(s', a'; target) * (1 - done).
Eigen::VectorXd td_targets(std::span<const Transition> batch, const QNet& target, double gamma);
/// delta_i = target_i - Q(s_i, a_i; online).
Eigen::VectorXd td_error(std::span<const Transition> batch, const QNet& online, const QNet& target, double gamma);
/// Mean of 0.5 d^2 for |d| <= 1 and |d| - 0.5 otherwise.
double huber_loss(const Eigen::Ref<const Eigen::VectorXd>& delta);

void save_qnetwork(const QNet& net, ObservationMode mode, const std::filesystem::path& path);
QNet load_qnetwork(const std::filesystem::path& path, ObservationMode* mode = nullptr);

/// Predictor-backed observation: keeps the last `window` (frame, action)
/// pairs and estimates the state reached after the newest action. The window
/// starts as copies of the first frame paired with Action::Left.
class FrameWindowEstimator {
 public:
  explicit FrameWindowEstimator(const PredictorModel<float>& model);

  StateVec reset(const Image& first_frame);
  /// `applied` was taken at the current frame; `next_frame` is what followed.
  StateVec advance(Action applied, const Image& next_frame);

  int window() const { return window_; }
  /// Stored (quantized) bytes of window slot t, oldest first.
  const std::vector<std::uint8_t>& frame_bytes(int t) const { return frames_[t]; }
  Action action(int t) const { return actions_[t]; }

 private:
  StateVec estimate() const;
  nn::Vector<float> encode(const std::vector<std::uint8_t>& bytes) const;

  const PredictorModel<float>& model_;
  int window_;
  std::deque<std::vector<std::uint8_t>> frames_;
  std::deque<Action> actions_;
  nn::Matrix<float> features_;
  std::vector<std::uint8_t> current_;
  nn::Vector<float> current_feature_;
};

struct EpisodeLog {
  long long episode = 0;
  int steps = 0;
  double shaped_return = 0.0;
  double raw_return = 0.0;
  double epsilon = 0.0;
};

struct DqnHooks {
  /// Sees exactly what action selection sees, every step.
  std::function<void(const StateVec& observation)> on_observation;
  std::function<void(const EpisodeLog&)> on_episode;
};

struct DqnResult {
  QNet online;
  QNet target;
  std::vector<EpisodeLog> episodes;
};

/// Online DQN with replay, a hard-synced target network and shaped reward.
/// In Predicted mode the agent only ever sees FrameWindowEstimator outputs;
/// `predictor` is required. Throws NonFinite if a TD loss diverges.
DqnResult train_dqn(ObservationMode mode, const RLConfig& config, const EnvParams& env,
                    const PredictorModel<float>* predictor = nullptr, const DqnHooks& hooks = {});

}  // namespace cartvis
