#include "cartvis/rl.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "cartvis/checkpoint.hpp"
#include "cartvis/error.hpp"

namespace cartvis {

std::string_view to_string(ObservationMode mode) { return mode == ObservationMode::Full ? "full" : "predicted"; }

ObservationMode observation_mode_from(std::string_view name) {
  if (name == "full") return ObservationMode::Full;
  if (name == "predicted" || name == "pred") return ObservationMode::Predicted;
  throw Error(ErrorKind::InvalidArgument, "observation mode must be 'full' or 'predicted', got '" + std::string(name) + "'");
}

void RLConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error(ErrorKind::Config, "rl.gamma must be in (0, 1)");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::Config, "rl.learning_rate must be > 0");
  if (batch_size < 1) throw Error(ErrorKind::Config, "rl.batch_size must be >= 1");
  if (total_timesteps < 0) throw Error(ErrorKind::Config, "rl.total_timesteps must be >= 0");
  if (buffer_capacity < 1) throw Error(ErrorKind::Config, "rl.buffer_capacity must be >= 1");
  if (!(epsilon_initial >= 0.0 && epsilon_initial <= 1.0) || !(epsilon_floor >= 0.0 && epsilon_floor <= 1.0))
    throw Error(ErrorKind::Config, "rl epsilon values must be in [0, 1]");
  if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0)) throw Error(ErrorKind::Config, "rl.epsilon_decay must be in (0, 1]");
  if (target_update_period < 1) throw Error(ErrorKind::Config, "rl.target_update_period must be >= 1");
  if (learning_starts < 0) throw Error(ErrorKind::Config, "rl.learning_starts must be >= 0");
  if (hidden_width < 1) throw Error(ErrorKind::Config, "rl.hidden_width must be >= 1");
  if (shaping.position < 0.0 || shaping.angle < 0.0 || shaping.action_switch < 0.0)
    throw Error(ErrorKind::Config, "rl shaping weights must be nonnegative");
}

double shaped_reward(const State& s, std::optional<Action> previous, Action action, const ShapingWeights& w) {
  const double switched = previous && *previous != action ? 1.0 : 0.0;
  return (1.0 - w.action_switch * switched) - (w.position * std::abs(s.x) + w.angle * std::abs(s.theta));
}

double epsilon_at(long long episode, const RLConfig& c) {
  if (episode < 0) throw Error(ErrorKind::InvalidArgument, "episode index must be >= 0");
  return std::max(c.epsilon_floor, c.epsilon_initial * std::pow(c.epsilon_decay, double(episode)));
}

Action select_action(const Eigen::Vector2d& q, double epsilon, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < epsilon) return std::bernoulli_distribution(0.5)(rng) ? Action::Right : Action::Left;
  return q(1) > q(0) ? Action::Right : Action::Left;
}

// Replay ---------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity < 1) throw Error(ErrorKind::InvalidArgument, "replay capacity must be >= 1");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(const Transition& t) {
  if (!std::isfinite(t.reward)) throw Error(ErrorKind::NonFinite, "transition reward is not finite");
  if (items_.size() < capacity_) {
    items_.push_back(t);
  } else {
    items_[next_] = t;
  }
  next_ = (next_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw Error(ErrorKind::InvalidArgument, "replay index out of range");
  const std::size_t oldest = items_.size() < capacity_ ? 0 : next_;
  return items_[(oldest + i) % items_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t batch, std::mt19937_64& rng) const {
  if (items_.empty()) throw Error(ErrorKind::InvalidArgument, "cannot sample an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

// Q network ------------------------------------------------------------------

template <typename Scalar>
QNetwork<Scalar>::QNetwork(int hidden)
    : hidden_(hidden),
      w1_(Mat::Zero(hidden, 4)),
      b1_(Mat::Zero(hidden, 1)),
      w2_(Mat::Zero(hidden, hidden)),
      b2_(Mat::Zero(hidden, 1)),
      w3_(Mat::Zero(2, hidden)),
      b3_(Mat::Zero(2, 1)) {
  if (hidden < 1) throw Error(ErrorKind::InvalidArgument, "q-network hidden width must be >= 1");
}

template <typename Scalar>
QNetwork<Scalar> QNetwork<Scalar>::random(int hidden, std::uint64_t seed) {
  QNetwork q(hidden);
  std::mt19937_64 rng(seed);
  const int fan_in[kTensors] = {4, 4, hidden, hidden, hidden, hidden};
  auto t = q.tensors();
  for (std::size_t i = 0; i < kTensors; ++i) nn::init_fan_in(*t[i], fan_in[i], rng);
  return q;
}

template <typename Scalar>
const std::array<const char*, QNetwork<Scalar>::kTensors>& QNetwork<Scalar>::names() {
  static const std::array<const char*, kTensors> n = {"fc1.weight", "fc1.bias", "fc2.weight",
                                                      "fc2.bias",   "out.weight", "out.bias"};
  return n;
}

template <typename Scalar>
auto QNetwork<Scalar>::tensors() -> std::array<Mat*, kTensors> {
  return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_};
}

template <typename Scalar>
auto QNetwork<Scalar>::tensors() const -> std::array<const Mat*, kTensors> {
  return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_};
}

template <typename Scalar>
bool QNetwork<Scalar>::operator==(const QNetwork& o) const {
  return hidden_ == o.hidden_ && scale_ == o.scale_ && w1_ == o.w1_ && b1_ == o.b1_ && w2_ == o.w2_ && b2_ == o.b2_ && w3_ == o.w3_ &&
         b3_ == o.b3_;
}

template <typename Scalar>
auto QNetwork<Scalar>::forward(const Mat& s) const -> Mat {
  if (s.rows() != 4) throw Error(ErrorKind::Dimension, "q-network input must have 4 rows");
  const Mat x = scale_.cast<Scalar>().asDiagonal() * s;
  Mat h1 = ((w1_ * x).colwise() + b1_.col(0)).cwiseMax(Scalar(0));
  Mat h2 = ((w2_ * h1).colwise() + b2_.col(0)).cwiseMax(Scalar(0));
  Mat q = w3_ * h2;
  q.colwise() += b3_.col(0);
  return q;
}

template <typename Scalar>
Eigen::Vector2d QNetwork<Scalar>::q_values(const StateVec& state) const {
  return forward(state.cast<Scalar>()).col(0).template cast<double>();
}

template <typename Scalar>
Scalar QNetwork<Scalar>::huber_gradient(const Mat& s, std::span<const Action> actions, const Vec& targets,
                                        std::array<Mat, kTensors>& g) const {
  const Eigen::Index b = s.cols();
  if (s.rows() != 4 || Eigen::Index(actions.size()) != b || targets.size() != b || b == 0)
    throw Error(ErrorKind::Dimension, "q-network batch shapes disagree");
  const Mat x = scale_.cast<Scalar>().asDiagonal() * s;
  const Mat h1 = ((w1_ * x).colwise() + b1_.col(0)).cwiseMax(Scalar(0));
  const Mat h2 = ((w2_ * h1).colwise() + b2_.col(0)).cwiseMax(Scalar(0));
  Mat q = w3_ * h2;
  q.colwise() += b3_.col(0);

  Mat dq = Mat::Zero(2, b);
  Scalar loss = 0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const int a = to_int(actions[j]);
    const Scalar delta = targets(j) - q(a, j);
    const Scalar ad = std::abs(delta);
    loss += ad <= Scalar(1) ? Scalar(0.5) * delta * delta : ad - Scalar(0.5);
    dq(a, j) = -std::clamp(delta, Scalar(-1), Scalar(1)) / Scalar(b);
  }
  loss /= Scalar(b);

  g[4].noalias() = dq * h2.transpose();
  g[5] = dq.rowwise().sum();
  Mat d2 = (w3_.transpose() * dq).cwiseProduct((h2.array() > Scalar(0)).matrix().template cast<Scalar>());
  g[2].noalias() = d2 * h1.transpose();
  g[3] = d2.rowwise().sum();
  Mat d1 = (w2_.transpose() * d2).cwiseProduct((h1.array() > Scalar(0)).matrix().template cast<Scalar>());
  g[0].noalias() = d1 * x.transpose();
  g[1] = d1.rowwise().sum();
  return loss;
}

template class QNetwork<float>;
template class QNetwork<double>;

// TD -------------------------------------------------------------------------

Eigen::VectorXd td_targets(std::span<const Transition> batch, const QNet& target, double gamma) {
  if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "td batch is empty");
  Eigen::MatrixXd next(4, batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) next.col(j) = batch[j].next_state;
  const Eigen::MatrixXd qn = target.forward(next);
  Eigen::VectorXd y(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j)
    y(j) = batch[j].reward + (batch[j].done ? 0.0 : gamma * qn.col(j).maxCoeff());
  return y;
}

Eigen::VectorXd td_error(std::span<const Transition> batch, const QNet& online, const QNet& target, double gamma) {
  Eigen::VectorXd delta = td_targets(batch, target, gamma);
  Eigen::MatrixXd s(4, batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) s.col(j) = batch[j].state;
  const Eigen::MatrixXd q = online.forward(s);
  for (std::size_t j = 0; j < batch.size(); ++j) delta(j) -= q(to_int(batch[j].action), j);
  return delta;
}

double huber_loss(const Eigen::Ref<const Eigen::VectorXd>& delta) {
  if (delta.size() == 0) throw Error(ErrorKind::InvalidArgument, "huber_loss of an empty batch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < delta.size(); ++i) {
    const double ad = std::abs(delta(i));
    total += ad <= 1.0 ? 0.5 * delta(i) * delta(i) : ad - 0.5;
  }
  return total / double(delta.size());
}

// Checkpoints ----------------------------------------------------------------

void save_qnetwork(const QNet& net, ObservationMode mode, const std::filesystem::path& path) {
  Checkpoint ck("qnetwork");
  ck.set_meta("hidden_width", net.hidden_width());
  ck.set_meta("observation", std::string(to_string(mode)));
  const auto& names = QNet::names();
  const auto t = net.tensors();
  for (std::size_t i = 0; i < t.size(); ++i) ck.add(names[i], *t[i]);
  ck.add("input.scale", Eigen::MatrixXd(net.input_scale()));
  ck.save(path);
}

QNet load_qnetwork(const std::filesystem::path& path, ObservationMode* mode) {
  const Checkpoint ck = Checkpoint::load(path, "qnetwork");
  QNet net(int(ck.meta_int("hidden_width")));
  if (mode) *mode = observation_mode_from(ck.meta("observation"));
  const auto& names = QNet::names();
  auto t = net.tensors();
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto m = ck.get<double>(names[i]);
    if (m.rows() != t[i]->rows() || m.cols() != t[i]->cols())
      throw Error(ErrorKind::Dimension, std::string("q-network tensor ") + names[i] + " has the wrong shape");
    *t[i] = std::move(m);
  }
  const auto scale = ck.get<double>("input.scale");
  if (scale.rows() != 4 || scale.cols() != 1) throw Error(ErrorKind::Dimension, "q-network input scale must be 4 x 1");
  net.set_input_scale(scale.col(0));
  return net;
}

// Predicted observations -----------------------------------------------------

FrameWindowEstimator::FrameWindowEstimator(const PredictorModel<float>& model)
    : model_(model), window_(model.arch().window) {
  if (model.arch().frame_height != kFrameSize || model.arch().frame_width != kFrameSize ||
      model.arch().frame_channels != kFrameChannels)
    throw Error(ErrorKind::Dimension, "predictor does not take 64x64x3 frames");
}

nn::Vector<float> FrameWindowEstimator::encode(const std::vector<std::uint8_t>& bytes) const {
  nn::Vector<float> frame(bytes.size());
  normalize_bytes(std::span<const std::uint8_t>(bytes), frame.data());
  return model_.encode_frame(frame);
}

StateVec FrameWindowEstimator::estimate() const {
  const std::vector<Action> acts(actions_.begin(), actions_.end());
  return model_.predict_from_features(features_, acts);
}

StateVec FrameWindowEstimator::reset(const Image& first_frame) {
  current_ = downsample_bytes(first_frame);
  current_feature_ = encode(current_);
  frames_.assign(window_, current_);
  actions_.assign(window_, Action::Left);
  features_ = current_feature_.replicate(1, window_);
  return estimate();
}

StateVec FrameWindowEstimator::advance(Action applied, const Image& next_frame) {
  if (frames_.empty()) throw Error(ErrorKind::InvalidArgument, "estimator advanced before reset");
  frames_.pop_front();
  frames_.push_back(current_);
  actions_.pop_front();
  actions_.push_back(applied);
  for (int t = 0; t + 1 < window_; ++t) features_.col(t) = features_.col(t + 1);
  features_.col(window_ - 1) = current_feature_;
  current_ = downsample_bytes(next_frame);
  current_feature_ = encode(current_);
  return estimate();
}

// Training -------------------------------------------------------------------

DqnResult train_dqn(ObservationMode mode, const RLConfig& config, const EnvParams& env_params,
                    const PredictorModel<float>* predictor, const DqnHooks& hooks) {
  config.validate();
  if (mode == ObservationMode::Predicted && predictor == nullptr)
    throw Error(ErrorKind::InvalidArgument, "predicted observations require a trained predictor model");

  std::mt19937_64 episode_rng(config.seed);
  std::mt19937_64 action_rng(config.seed ^ 0xA5A5A5A5A5A5A5A5ull);
  std::mt19937_64 replay_rng(config.seed ^ 0x5A5A5A5A5A5A5A5Aull);

  DqnResult result{QNet::random(config.hidden_width, config.seed + 1), QNet(config.hidden_width), {}};
  QNet& online = result.online;
  QNet& target = result.target;
  target = online;
  nn::Adam<double> adam({config.learning_rate});
  ReplayBuffer buffer(config.buffer_capacity);
  CartPole env(env_params);

  std::optional<FrameWindowEstimator> estimator;
  if (mode == ObservationMode::Predicted) estimator.emplace(*predictor);

  auto begin_episode = [&]() -> StateVec {
    const State s = env.reset(episode_rng());
    return estimator ? estimator->reset(render(s, env_params)) : s.vec();
  };

  std::array<QNet::Mat, QNet::kTensors> grad;
  std::vector<Transition> batch(config.batch_size);
  std::vector<Action> batch_actions(config.batch_size);
  QNet::Mat states(4, config.batch_size);

  StateVec obs = begin_episode();
  std::optional<Action> previous;
  EpisodeLog log;
  log.epsilon = epsilon_at(0, config);

  for (long long t = 0; t < config.total_timesteps; ++t) {
    if (hooks.on_observation) hooks.on_observation(obs);
    // Warm-up transitions are uniformly random so both actions are represented.
    const double eps = t < config.learning_starts ? 1.0 : log.epsilon;
    const Action a = select_action(online.q_values(obs), eps, action_rng);
    const StepResult r = env.step(a);
    const double reward = shaped_reward(r.next_state, previous, a, config.shaping);
    const StateVec next_obs = estimator ? estimator->advance(a, render(r.next_state, env_params)) : r.next_state.vec();
    buffer.push({obs, a, reward, next_obs, r.terminated});
    ++log.steps;
    log.shaped_return += reward;
    log.raw_return += r.reward;
    previous = a;
    obs = next_obs;

    if (buffer.size() >= std::size_t(std::max(config.learning_starts, config.batch_size))) {
      const auto idx = buffer.sample(batch.size(), replay_rng);
      for (std::size_t j = 0; j < idx.size(); ++j) {
        batch[j] = buffer.at(idx[j]);
        states.col(j) = batch[j].state;
        batch_actions[j] = batch[j].action;
      }
      const Eigen::VectorXd y = td_targets(batch, target, config.gamma);
      const double loss = online.huber_gradient(states, batch_actions, y, grad);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "TD loss became " << loss << " at timestep " << t << " (learning rate " << config.learning_rate << ")";
        throw Error(ErrorKind::NonFinite, os.str());
      }
      std::array<const QNet::Mat*, QNet::kTensors> gptr;
      for (std::size_t i = 0; i < grad.size(); ++i) gptr[i] = &grad[i];
      if (config.max_grad_norm > 0.0) {
        const double norm = nn::global_norm<double>(gptr);
        if (norm > config.max_grad_norm)
          for (auto& g : grad) g *= config.max_grad_norm / norm;
      }
      auto params = online.tensors();
      adam.step(params, gptr);
    }
    if ((t + 1) % config.target_update_period == 0) target = online;

    if (env.done()) {
      log.episode = static_cast<long long>(result.episodes.size());
      result.episodes.push_back(log);
      if (hooks.on_episode) hooks.on_episode(log);
      log = EpisodeLog{};
      log.epsilon = epsilon_at(static_cast<long long>(result.episodes.size()), config);
      obs = begin_episode();
      previous.reset();
    }
  }
  return result;
}

}  // namespace cartvis
