#include "cartvis/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "cartvis/checkpoint.hpp"
#include "cartvis/error.hpp"

namespace cartvis {

void PredictorArch::validate() const {
  const int dims[] = {frame_height, frame_width, frame_channels, conv1_channels, conv2_channels, kernel,
                      feature_width, hidden_width, head_hidden, window};
  for (int d : dims)
    if (d < 1) throw Error(ErrorKind::Config, "predictor architecture dimensions must be >= 1");
}

// Parameters -----------------------------------------------------------------

template <typename Scalar>
const std::array<const char*, PredictorParams<Scalar>::kCount>& PredictorParams<Scalar>::names() {
  static const std::array<const char*, kCount> n = {
      "encoder.conv1.weight", "encoder.conv1.bias", "encoder.conv2.weight", "encoder.conv2.bias",
      "encoder.fc.weight",    "encoder.fc.bias",    "gru.update.weight",    "gru.update.bias",
      "gru.reset.weight",     "gru.reset.bias",     "gru.candidate.weight", "gru.candidate.bias",
      "head.hidden.weight",   "head.hidden.bias",   "head.out.weight",      "head.out.bias"};
  return n;
}

template <typename Scalar>
auto PredictorParams<Scalar>::tensors() -> std::array<Mat*, kCount> {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc_w,    &fc_b,    &gru_wz,  &gru_bz,
          &gru_wr,  &gru_br,  &gru_wh,  &gru_bh,  &head1_w, &head1_b, &head2_w, &head2_b};
}

template <typename Scalar>
auto PredictorParams<Scalar>::tensors() const -> std::array<const Mat*, kCount> {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc_w,    &fc_b,    &gru_wz,  &gru_bz,
          &gru_wr,  &gru_br,  &gru_wh,  &gru_bh,  &head1_w, &head1_b, &head2_w, &head2_b};
}

template <typename Scalar>
PredictorParams<Scalar> PredictorParams<Scalar>::zeros(const PredictorArch& a) {
  a.validate();
  const auto c1 = a.conv1(), c2 = a.conv2();
  const int gate_in = a.hidden_width + a.gru_input();
  PredictorParams p;
  p.conv1_w = Mat::Zero(c1.out_channels, c1.patch_size());
  p.conv1_b = Mat::Zero(c1.out_channels, 1);
  p.conv2_w = Mat::Zero(c2.out_channels, c2.patch_size());
  p.conv2_b = Mat::Zero(c2.out_channels, 1);
  p.fc_w = Mat::Zero(a.feature_width, a.flat_width());
  p.fc_b = Mat::Zero(a.feature_width, 1);
  p.gru_wz = Mat::Zero(a.hidden_width, gate_in);
  p.gru_bz = Mat::Zero(a.hidden_width, 1);
  p.gru_wr = Mat::Zero(a.hidden_width, gate_in);
  p.gru_br = Mat::Zero(a.hidden_width, 1);
  p.gru_wh = Mat::Zero(a.hidden_width, gate_in);
  p.gru_bh = Mat::Zero(a.hidden_width, 1);
  p.head1_w = Mat::Zero(a.head_hidden, a.hidden_width);
  p.head1_b = Mat::Zero(a.head_hidden, 1);
  p.head2_w = Mat::Zero(PredictorArch::kStateDim, a.head_hidden);
  p.head2_b = Mat::Zero(PredictorArch::kStateDim, 1);
  return p;
}

template <typename Scalar>
void PredictorParams<Scalar>::set_zero() {
  for (auto* t : tensors()) t->setZero();
}

// Model ----------------------------------------------------------------------

template <typename Scalar>
PredictorModel<Scalar>::PredictorModel(const PredictorArch& arch)
    : arch_(arch), params_(PredictorParams<Scalar>::zeros(arch)) {}

template <typename Scalar>
PredictorModel<Scalar> PredictorModel<Scalar>::random(const PredictorArch& arch, std::uint64_t seed) {
  PredictorModel m(arch);
  std::mt19937_64 rng(seed);
  auto& p = m.params_;
  const int gate_in = arch.hidden_width + arch.gru_input();
  const int fan_in[PredictorParams<Scalar>::kCount] = {
      arch.conv1().patch_size(), arch.conv1().patch_size(), arch.conv2().patch_size(), arch.conv2().patch_size(),
      arch.flat_width(),         arch.flat_width(),         gate_in,                   gate_in,
      gate_in,                   gate_in,                   gate_in,                   gate_in,
      arch.hidden_width,         arch.hidden_width,         arch.head_hidden,          arch.head_hidden};
  auto tensors = p.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) nn::init_fan_in(*tensors[i], fan_in[i], rng);
  return m;
}

/// Activations retained for the backward pass.
template <typename Scalar>
struct PredictorModel<Scalar>::Cache {
  int batch = 0;
  Mat cols1, act1, cols2, act2, feat;
  std::vector<Mat> h;  // h[0] = 0, h[t+1] after step t
  std::vector<Mat> z, r, cand, gate_in, cand_in;
  Mat head_hidden;
};

template <typename Scalar>
typename PredictorModel<Scalar>::Mat PredictorModel<Scalar>::forward(const Mat& frames, const Mat& actions,
                                                                      Cache* cache) const {
  const auto& a = arch_;
  const auto& p = params_;
  const int w = a.window;
  if (frames.rows() != a.frame_size() || actions.rows() != w || frames.cols() != w * actions.cols() ||
      actions.cols() < 1) {
    std::ostringstream os;
    os << "predictor input shape mismatch: frames " << frames.rows() << "x" << frames.cols() << ", actions "
       << actions.rows() << "x" << actions.cols() << " (expected " << a.frame_size() << "x(" << w << "*B), " << w
       << "xB)";
    throw Error(ErrorKind::Dimension, os.str());
  }
  const int b = static_cast<int>(actions.cols());
  const int n = w * b;
  const auto c1 = a.conv1(), c2 = a.conv2();

  Cache local;
  Cache& c = cache ? *cache : local;
  c.batch = b;

  if (a.invert_input) {
    const Mat ink = Scalar(1) - frames.array();
    nn::im2col(c1, ink.data(), n, c.cols1);
  } else {
    nn::im2col(c1, frames.data(), n, c.cols1);
  }
  c.act1.noalias() = p.conv1_w * c.cols1;
  c.act1.colwise() += p.conv1_b.col(0);
  c.act1 = c.act1.cwiseMax(Scalar(0));

  nn::im2col(c2, c.act1.data(), n, c.cols2);
  c.act2.noalias() = p.conv2_w * c.cols2;
  c.act2.colwise() += p.conv2_b.col(0);
  c.act2 = c.act2.cwiseMax(Scalar(0));

  const Eigen::Map<const Mat> flat(c.act2.data(), a.flat_width(), n);
  c.feat.noalias() = p.fc_w * flat;
  c.feat.colwise() += p.fc_b.col(0);
  c.feat = c.feat.cwiseMax(Scalar(0));

  const int hd = a.hidden_width, in = a.gru_input();
  c.h.assign(1, Mat::Zero(hd, b));
  c.z.clear();
  c.r.clear();
  c.cand.clear();
  c.gate_in.clear();
  c.cand_in.clear();
  for (int t = 0; t < w; ++t) {
    const Mat& h = c.h.back();
    Mat x(hd + in, b);
    x.topRows(hd) = h;
    x.middleRows(hd, a.feature_width) = c.feat.middleCols(t * b, b);
    x.bottomRows(1) = actions.row(t);
    Mat z = nn::sigmoid(((p.gru_wz * x).colwise() + p.gru_bz.col(0)).array()).matrix();
    Mat r = nn::sigmoid(((p.gru_wr * x).colwise() + p.gru_br.col(0)).array()).matrix();
    Mat xc = x;
    xc.topRows(hd) = r.cwiseProduct(h);
    Mat cand = ((p.gru_wh * xc).colwise() + p.gru_bh.col(0)).array().tanh();
    Mat next = (Scalar(1) - z.array()) * h.array() + z.array() * cand.array();
    c.gate_in.push_back(std::move(x));
    c.cand_in.push_back(std::move(xc));
    c.z.push_back(std::move(z));
    c.r.push_back(std::move(r));
    c.cand.push_back(std::move(cand));
    c.h.push_back(std::move(next));
  }

  c.head_hidden.noalias() = p.head1_w * c.h.back();
  c.head_hidden.colwise() += p.head1_b.col(0);
  c.head_hidden = c.head_hidden.cwiseMax(Scalar(0));
  Mat out = p.head2_w * c.head_hidden;
  out.colwise() += p.head2_b.col(0);
  return out;
}

template <typename Scalar>
typename PredictorModel<Scalar>::Mat PredictorModel<Scalar>::predict_batch(const Mat& frames,
                                                                            const Mat& actions) const {
  return forward(frames, actions, nullptr);
}

template <typename Scalar>
Scalar PredictorModel<Scalar>::loss_and_gradient(const Mat& frames, const Mat& actions, const Mat& targets,
                                                 PredictorParams<Scalar>& g) const {
  Cache c;
  const Mat out = forward(frames, actions, &c);
  if (targets.rows() != PredictorArch::kStateDim || targets.cols() != out.cols())
    throw Error(ErrorKind::Dimension, "predictor targets must be 4 x B");
  const auto& a = arch_;
  const auto& p = params_;
  const int b = c.batch, w = a.window, n = w * b, hd = a.hidden_width;
  if (g.conv1_w.size() != p.conv1_w.size()) g = PredictorParams<Scalar>::zeros(a);

  const Mat diff = out - targets;
  const Scalar loss = diff.colwise().squaredNorm().sum() / Scalar(b);
  const Mat d_out = diff * (Scalar(2) / Scalar(b));

  // Head.
  g.head2_w.noalias() = d_out * c.head_hidden.transpose();
  g.head2_b = d_out.rowwise().sum();
  Mat d_hid = (p.head2_w.transpose() * d_out).cwiseProduct((c.head_hidden.array() > Scalar(0)).matrix().template cast<Scalar>());
  g.head1_w.noalias() = d_hid * c.h.back().transpose();
  g.head1_b = d_hid.rowwise().sum();
  Mat d_h = p.head1_w.transpose() * d_hid;

  // GRU, back through time.
  g.gru_wz.setZero();
  g.gru_bz.setZero();
  g.gru_wr.setZero();
  g.gru_br.setZero();
  g.gru_wh.setZero();
  g.gru_bh.setZero();
  Mat d_feat = Mat::Zero(a.feature_width, n);
  for (int t = w - 1; t >= 0; --t) {
    const Mat& h = c.h[t];
    const auto z = c.z[t].array();
    const auto r = c.r[t].array();
    const auto cand = c.cand[t].array();

    const Mat d_cand_pre = (d_h.array() * z * (Scalar(1) - cand.square())).matrix();
    const Mat d_z_pre = (d_h.array() * (cand - h.array()) * z * (Scalar(1) - z)).matrix();
    Mat d_h_prev = (d_h.array() * (Scalar(1) - z)).matrix();

    g.gru_wh.noalias() += d_cand_pre * c.cand_in[t].transpose();
    g.gru_bh += d_cand_pre.rowwise().sum();
    const Mat d_cand_in = p.gru_wh.transpose() * d_cand_pre;
    const Mat d_rh = d_cand_in.topRows(hd);
    d_h_prev.array() += d_rh.array() * r;
    const Mat d_r_pre = (d_rh.array() * h.array() * r * (Scalar(1) - r)).matrix();

    g.gru_wz.noalias() += d_z_pre * c.gate_in[t].transpose();
    g.gru_bz += d_z_pre.rowwise().sum();
    g.gru_wr.noalias() += d_r_pre * c.gate_in[t].transpose();
    g.gru_br += d_r_pre.rowwise().sum();
    Mat d_x = p.gru_wz.transpose() * d_z_pre;
    d_x.noalias() += p.gru_wr.transpose() * d_r_pre;

    d_h_prev += d_x.topRows(hd);
    d_feat.middleCols(t * b, b) = d_x.middleRows(hd, a.feature_width) + d_cand_in.middleRows(hd, a.feature_width);
    d_h = std::move(d_h_prev);
  }

  // Encoder.
  const Eigen::Map<const Mat> flat(c.act2.data(), a.flat_width(), n);
  d_feat.array() *= (c.feat.array() > Scalar(0)).template cast<Scalar>();
  g.fc_w.noalias() = d_feat * flat.transpose();
  g.fc_b = d_feat.rowwise().sum();
  Mat d_act2(c.act2.rows(), c.act2.cols());
  Eigen::Map<Mat>(d_act2.data(), a.flat_width(), n).noalias() = p.fc_w.transpose() * d_feat;
  d_act2.array() *= (c.act2.array() > Scalar(0)).template cast<Scalar>();
  g.conv2_w.noalias() = d_act2 * c.cols2.transpose();
  g.conv2_b = d_act2.rowwise().sum();

  Mat d_cols2 = p.conv2_w.transpose() * d_act2;
  Mat d_act1(c.act1.rows(), c.act1.cols());
  nn::col2im(a.conv2(), d_cols2, n, d_act1.data());
  d_act1.array() *= (c.act1.array() > Scalar(0)).template cast<Scalar>();
  g.conv1_w.noalias() = d_act1 * c.cols1.transpose();
  g.conv1_b = d_act1.rowwise().sum();
  return loss;
}

template <typename Scalar>
typename PredictorModel<Scalar>::Mat PredictorModel<Scalar>::encode_frames(const Mat& frames) const {
  const auto& a = arch_;
  const auto& p = params_;
  if (frames.rows() != a.frame_size())
    throw Error(ErrorKind::Dimension, "encode: frame has " + std::to_string(frames.rows()) + " values, expected " +
                                          std::to_string(a.frame_size()));
  const int n = static_cast<int>(frames.cols());
  Mat cols, act1, act2;
  if (a.invert_input) {
    const Mat ink = Scalar(1) - frames.array();
    nn::im2col(a.conv1(), ink.data(), n, cols);
  } else {
    nn::im2col(a.conv1(), frames.data(), n, cols);
  }
  act1.noalias() = p.conv1_w * cols;
  act1.colwise() += p.conv1_b.col(0);
  act1 = act1.cwiseMax(Scalar(0));
  nn::im2col(a.conv2(), act1.data(), n, cols);
  act2.noalias() = p.conv2_w * cols;
  act2.colwise() += p.conv2_b.col(0);
  act2 = act2.cwiseMax(Scalar(0));
  Mat feat = p.fc_w * Eigen::Map<const Mat>(act2.data(), a.flat_width(), n);
  feat.colwise() += p.fc_b.col(0);
  return feat.cwiseMax(Scalar(0));
}

template <typename Scalar>
typename PredictorModel<Scalar>::Vec PredictorModel<Scalar>::encode_frame(const Eigen::Ref<const Vec>& frame) const {
  return encode_frames(Mat(frame)).col(0);
}

template <typename Scalar>
typename PredictorModel<Scalar>::GruGates PredictorModel<Scalar>::gru_gates(const Eigen::Ref<const Vec>& h_prev,
                                                                             const Eigen::Ref<const Vec>& input) const {
  const auto& p = params_;
  const int hd = arch_.hidden_width;
  if (h_prev.size() != hd || input.size() != arch_.gru_input())
    throw Error(ErrorKind::Dimension, "gru_step: expected hidden " + std::to_string(hd) + " and input " +
                                          std::to_string(arch_.gru_input()) + ", got " +
                                          std::to_string(h_prev.size()) + " and " + std::to_string(input.size()));
  Vec x(hd + input.size());
  x << h_prev, input;
  GruGates gates;
  gates.z = nn::sigmoid((p.gru_wz * x + p.gru_bz.col(0)).array()).matrix();
  gates.r = nn::sigmoid((p.gru_wr * x + p.gru_br.col(0)).array()).matrix();
  x.head(hd) = gates.r.cwiseProduct(h_prev);
  gates.candidate = (p.gru_wh * x + p.gru_bh.col(0)).array().tanh();
  gates.h = ((Scalar(1) - gates.z.array()) * h_prev.array() + gates.z.array() * gates.candidate.array()).matrix();
  return gates;
}

template <typename Scalar>
typename PredictorModel<Scalar>::Vec PredictorModel<Scalar>::gru_step(const Eigen::Ref<const Vec>& h_prev,
                                                                      const Eigen::Ref<const Vec>& input) const {
  return gru_gates(h_prev, input).h;
}

template <typename Scalar>
StateVec PredictorModel<Scalar>::predict_from_features(const Mat& features, std::span<const Action> actions) const {
  const auto& a = arch_;
  const auto& p = params_;
  if (features.rows() != a.feature_width || features.cols() != a.window ||
      actions.size() != static_cast<std::size_t>(a.window))
    throw Error(ErrorKind::Dimension, "predict: expected " + std::to_string(a.window) + " features of width " +
                                          std::to_string(a.feature_width) + " and as many actions");
  Vec h = Vec::Zero(a.hidden_width);
  Vec in(a.gru_input());
  for (int t = 0; t < a.window; ++t) {
    in << features.col(t), Scalar(to_int(actions[t]));
    h = gru_step(h, in);
  }
  Vec hid = (p.head1_w * h + p.head1_b.col(0)).cwiseMax(Scalar(0));
  Vec out = p.head2_w * hid + p.head2_b.col(0);
  return out.template cast<double>();
}

template <typename Scalar>
StateVec PredictorModel<Scalar>::predict(const Mat& frames, std::span<const Action> actions) const {
  return predict_from_features(encode_frames(frames), actions);
}

template struct PredictorParams<float>;
template struct PredictorParams<double>;
template class PredictorModel<float>;
template class PredictorModel<double>;

// Checkpoints ----------------------------------------------------------------

namespace {

void write_arch(Checkpoint& ck, const PredictorArch& a) {
  ck.set_meta("frame_height", a.frame_height);
  ck.set_meta("frame_width", a.frame_width);
  ck.set_meta("frame_channels", a.frame_channels);
  ck.set_meta("conv1_channels", a.conv1_channels);
  ck.set_meta("conv2_channels", a.conv2_channels);
  ck.set_meta("kernel", a.kernel);
  ck.set_meta("feature_width", a.feature_width);
  ck.set_meta("hidden_width", a.hidden_width);
  ck.set_meta("head_hidden", a.head_hidden);
  ck.set_meta("window", a.window);
  ck.set_meta("invert_input", a.invert_input ? 1 : 0);
}

PredictorArch read_arch(const Checkpoint& ck) {
  PredictorArch a;
  a.frame_height = int(ck.meta_int("frame_height"));
  a.frame_width = int(ck.meta_int("frame_width"));
  a.frame_channels = int(ck.meta_int("frame_channels"));
  a.conv1_channels = int(ck.meta_int("conv1_channels"));
  a.conv2_channels = int(ck.meta_int("conv2_channels"));
  a.kernel = int(ck.meta_int("kernel"));
  a.feature_width = int(ck.meta_int("feature_width"));
  a.hidden_width = int(ck.meta_int("hidden_width"));
  a.head_hidden = int(ck.meta_int("head_hidden"));
  a.window = int(ck.meta_int("window"));
  a.invert_input = ck.meta_int("invert_input") != 0;
  a.validate();
  return a;
}

void check_arch(const PredictorArch& got, const PredictorArch& want) {
  std::ostringstream os;
  auto cmp = [&](const char* name, int g, int w) {
    if (g != w) os << ' ' << name << ": checkpoint " << g << ", expected " << w << ';';
  };
  cmp("frame_height", got.frame_height, want.frame_height);
  cmp("frame_width", got.frame_width, want.frame_width);
  cmp("frame_channels", got.frame_channels, want.frame_channels);
  cmp("conv1_channels", got.conv1_channels, want.conv1_channels);
  cmp("conv2_channels", got.conv2_channels, want.conv2_channels);
  cmp("kernel", got.kernel, want.kernel);
  cmp("feature_width", got.feature_width, want.feature_width);
  cmp("hidden_width", got.hidden_width, want.hidden_width);
  cmp("head_hidden", got.head_hidden, want.head_hidden);
  cmp("window", got.window, want.window);
  cmp("invert_input", got.invert_input, want.invert_input);
  if (!os.str().empty()) throw Error(ErrorKind::Dimension, "predictor architecture mismatch:" + os.str());
}

template <typename Scalar>
void add_params(Checkpoint& ck, const PredictorParams<Scalar>& p, const std::string& prefix = {}) {
  const auto& names = PredictorParams<Scalar>::names();
  const auto tensors = p.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) ck.add(prefix + names[i], *tensors[i]);
}

template <typename Scalar>
void read_params(const Checkpoint& ck, PredictorParams<Scalar>& p, const std::string& prefix = {}) {
  const auto& names = PredictorParams<Scalar>::names();
  auto tensors = p.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto m = ck.template get<Scalar>(prefix + names[i]);
    if (m.rows() != tensors[i]->rows() || m.cols() != tensors[i]->cols())
      throw Error(ErrorKind::Dimension, std::string("tensor ") + names[i] + " has shape " + std::to_string(m.rows()) +
                                            "x" + std::to_string(m.cols()) + ", expected " +
                                            std::to_string(tensors[i]->rows()) + "x" +
                                            std::to_string(tensors[i]->cols()));
    *tensors[i] = std::move(m);
  }
}

}  // namespace

template <typename Scalar>
void save_predictor(const PredictorModel<Scalar>& model, const std::filesystem::path& path) {
  Checkpoint ck("predictor");
  write_arch(ck, model.arch());
  add_params(ck, model.params());
  ck.save(path);
}

template <typename Scalar>
PredictorModel<Scalar> load_predictor(const std::filesystem::path& path, const PredictorArch* expected) {
  const Checkpoint ck = Checkpoint::load(path, "predictor");
  const PredictorArch arch = read_arch(ck);
  if (expected) check_arch(arch, *expected);
  PredictorModel<Scalar> model(arch);
  read_params(ck, model.params());
  return model;
}

template void save_predictor(const PredictorModel<float>&, const std::filesystem::path&);
template void save_predictor(const PredictorModel<double>&, const std::filesystem::path&);
template PredictorModel<float> load_predictor(const std::filesystem::path&, const PredictorArch*);
template PredictorModel<double> load_predictor(const std::filesystem::path&, const PredictorArch*);

void save_trainer_state(const TrainerState& state, const std::filesystem::path& path) {
  Checkpoint ck("predictor");
  write_arch(ck, state.model.arch());
  add_params(ck, state.model.params());
  ck.set_meta("epoch", state.epoch);
  ck.set_meta("best_epoch", state.best_epoch);
  std::ostringstream best;
  best.precision(17);
  best << state.best_val;
  ck.set_meta("best_val", best.str());
  auto& adam = const_cast<nn::Adam<float>&>(state.adam);
  ck.set_meta("adam.steps", adam.steps());
  const auto& names = PredictorParams<float>::names();
  for (std::size_t i = 0; i < adam.first_moments().size(); ++i) {
    ck.add(std::string("adam.m.") + names[i], adam.first_moments()[i]);
    ck.add(std::string("adam.v.") + names[i], adam.second_moments()[i]);
  }
  ck.save(path);
}

TrainerState load_trainer_state(const std::filesystem::path& path, const TrainConfig& config) {
  const Checkpoint ck = Checkpoint::load(path, "predictor");
  if (!ck.has_meta("epoch")) throw Error(ErrorKind::Corrupt, "checkpoint has no training state: " + path.string());
  TrainerState s{PredictorModel<float>(read_arch(ck)),
                 nn::Adam<float>({config.learning_rate, config.beta1, config.beta2, config.adam_epsilon})};
  read_params(ck, s.model.params());
  s.epoch = int(ck.meta_int("epoch"));
  s.best_epoch = int(ck.meta_int("best_epoch"));
  s.best_val = std::stod(ck.meta("best_val"));
  const auto& names = PredictorParams<float>::names();
  std::vector<nn::Matrix<float>> m, v;
  if (ck.has(std::string("adam.m.") + names[0])) {
    for (const char* name : names) {
      m.push_back(ck.get<float>(std::string("adam.m.") + name));
      v.push_back(ck.get<float>(std::string("adam.v.") + name));
    }
  }
  s.adam.restore(ck.meta_int("adam.steps"), std::move(m), std::move(v));
  return s;
}

}  // namespace cartvis
