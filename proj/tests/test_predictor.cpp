#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "cartvis/checkpoint.hpp"
#include "cartvis/error.hpp"
#include "cartvis/predictor.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace cartvis;
using Mat = nn::Matrix<double>;
using Vec = nn::Vector<double>;

namespace {

PredictorArch gru_arch(int hidden) {
  PredictorArch a;
  a.hidden_width = hidden;
  return a;
}

oracle::Gru to_oracle(const PredictorParams<double>& p) {
  auto rows = [](const Mat& m) {
    std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
    return out;
  };
  auto col = [](const Mat& m) { return std::vector<double>(m.data(), m.data() + m.size()); };
  return {rows(p.gru_wz), rows(p.gru_wr), rows(p.gru_wh), col(p.gru_bz), col(p.gru_br), col(p.gru_bh)};
}

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

Vec random_vec(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

}  // namespace

TEST_CASE("zero encoder maps any frame to zero; width is 128") {
  const PredictorModel<double> zero;
  const Vec f = zero.encode_frame(Vec::Zero(64 * 64 * 3));
  CHECK(f.size() == 128);
  CHECK(f.cwiseAbs().maxCoeff() == 0.0);
  const auto m = PredictorModel<double>::random(PredictorArch{}, 3);
  std::mt19937_64 rng(1);
  CHECK(m.encode_frame(random_vec(64 * 64 * 3, rng).cwiseAbs()).size() == 128);
  CHECK(m.arch().gru_input() == 129);
  CHECK_THROWS_AS(m.encode_frame(Vec::Zero(10)), Error);
}

TEST_CASE("impulse response matches a direct convolution") {
  auto arch = test::reduced_arch();
  arch.frame_channels = 1;
  arch.invert_input = false;
  auto model = PredictorModel<double>::random(arch, 8);
  auto& p = model.params();
  p.conv1_w = p.conv1_w.cwiseAbs();
  p.conv2_w = p.conv2_w.cwiseAbs();
  p.fc_w = p.fc_w.cwiseAbs();
  for (int pixel = 0; pixel < 16; ++pixel) {
    std::vector<double> img(16, 0.0);
    img[pixel] = 1.0;
    std::vector<std::vector<double>> w1{{p.conv1_w.data(), p.conv1_w.data() + 9}};
    std::vector<std::vector<double>> w2{{p.conv2_w.data(), p.conv2_w.data() + 9}};
    int h1, wd1, h2, wd2;
    auto a1 = oracle::conv2d(img, 4, 4, 1, w1, {p.conv1_b(0)}, 3, 2, 1, h1, wd1);
    for (auto& v : a1) v = std::max(v, 0.0);
    auto a2 = oracle::conv2d(a1, h1, wd1, 1, w2, {p.conv2_b(0)}, 3, 2, 1, h2, wd2);
    REQUIRE(a2.size() == 1);
    const double flat = std::max(a2[0], 0.0);
    const Vec got = model.encode_frame(Eigen::Map<const Vec>(img.data(), 16));
    for (int i = 0; i < arch.feature_width; ++i)
      CHECK(got(i) == doctest::Approx(std::max(p.fc_w(i, 0) * flat + p.fc_b(i), 0.0)).epsilon(1e-14));
  }
}

TEST_CASE("inverting encoder equals a plain encoder on 1 - frame") {
  const auto inverting = PredictorModel<double>::random(PredictorArch{}, 9);
  PredictorArch plain_arch;
  plain_arch.invert_input = false;
  PredictorModel<double> plain(plain_arch);
  plain.params() = inverting.params();
  std::mt19937_64 rng(3);
  const Vec frame = random_vec(64 * 64 * 3, rng).cwiseAbs();
  const Vec ink = (1.0 - frame.array()).matrix();
  CHECK(inverting.encode_frame(frame) == plain.encode_frame(ink));
  CHECK(inverting.encode_frame(Vec::Ones(64 * 64 * 3)) == plain.encode_frame(Vec::Zero(64 * 64 * 3)));
}

TEST_CASE("full-size first convolution matches the direct oracle") {
  const auto model = PredictorModel<double>::random(PredictorArch{}, 4);
  const auto& p = model.params();
  std::mt19937_64 rng(2);
  const Vec frame = random_vec(64 * 64 * 3, rng).cwiseAbs();
  std::vector<std::vector<double>> w(16);
  for (int oc = 0; oc < 16; ++oc)
    for (int k = 0; k < 27; ++k) w[oc].push_back(p.conv1_w(oc, k));
  int oh, ow;
  const auto ref = oracle::conv2d(to_std(frame), 64, 64, 3, w, to_std(p.conv1_b.col(0)), 3, 2, 1, oh, ow);
  Mat cols;
  nn::im2col(PredictorArch{}.conv1(), frame.data(), 1, cols);
  const Mat out = (p.conv1_w * cols).colwise() + p.conv1_b.col(0);
  REQUIRE(oh * ow * 16 == out.size());
  for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(out.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("col2im is the adjoint of im2col") {
  const nn::ConvShape s{6, 5, 2, 3, 3, 2, 1};
  std::mt19937_64 rng(3);
  const Vec x = random_vec(2 * s.in_size(), rng);
  Mat cols;
  nn::im2col(s, x.data(), 2, cols);
  Mat y(cols.rows(), cols.cols());
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = random_vec(1, rng)(0);
  Vec back = Vec::Zero(x.size());
  nn::col2im(s, y, 2, back.data());
  CHECK(cols.cwiseProduct(y).sum() == doctest::Approx(x.dot(back)).epsilon(1e-12));
}

TEST_CASE("gru with a closed update gate keeps the previous state") {
  auto model = PredictorModel<double>::random(gru_arch(5), 1);
  std::mt19937_64 rng(4);
  model.params().gru_bz.setConstant(-1e3);
  const Vec h = random_vec(5, rng, 0.9), in = random_vec(129, rng);
  CHECK(model.gru_step(h, in) == h);

  model.params().gru_bz.setConstant(1e3);
  const auto g = model.gru_gates(h, in);
  Vec x(5 + 129);
  x << g.r.cwiseProduct(h), in;
  const Vec expected = (model.params().gru_wh * x + model.params().gru_bh.col(0)).array().tanh();
  CHECK((g.h - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gru step matches the elementwise oracle") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto model = PredictorModel<double>::random(gru_arch(3), 100 + trial);
    const Vec h = random_vec(3, rng, 0.9), in = random_vec(129, rng);
    const auto ref = oracle::gru_step(to_oracle(model.params()), to_std(h), to_std(in));
    const Vec got = model.gru_step(h, in);
    for (int i = 0; i < 3; ++i) REQUIRE(std::fabs(got(i) - ref[i]) <= 1e-12);
  }
  const auto model = PredictorModel<double>::random(gru_arch(3), 1);
  CHECK_THROWS_AS(model.gru_step(Vec::Zero(4), Vec::Zero(129)), Error);
  CHECK_THROWS_AS(model.gru_step(Vec::Zero(3), Vec::Zero(128)), Error);
}

TEST_CASE("gates stay open-interval bounded and hidden states stay in (-1, 1)") {
  std::mt19937_64 rng(6);
  auto model = PredictorModel<double>::random(gru_arch(8), 2);
  for (auto* t : {&model.params().gru_wz, &model.params().gru_wr, &model.params().gru_wh}) *t *= 3.0;
  for (int trial = 0; trial < 50; ++trial) {
    Vec h = Vec::Zero(8);
    for (int k = 0; k < 4; ++k) {
      const auto g = model.gru_gates(h, random_vec(129, rng, 2.0));
      CHECK((g.z.array() > 0.0).all());
      CHECK((g.z.array() < 1.0).all());
      CHECK((g.r.array() > 0.0).all());
      CHECK((g.r.array() < 1.0).all());
      CHECK((g.candidate.array().abs() < 1.0).all());
      CHECK((g.h.array().abs() < 1.0).all());
      h = g.h;
    }
  }
}

TEST_CASE("zero model predicts its head bias") {
  PredictorModel<double> model;
  model.params().head2_b.col(0) << 0.5, -1.0, 0.25, 2.0;
  std::mt19937_64 rng(7);
  const Mat frames = random_vec(64 * 64 * 3 * 4, rng).cwiseAbs().reshaped(64 * 64 * 3, 4);
  const std::array<Action, 4> acts{Action::Left, Action::Right, Action::Right, Action::Left};
  CHECK(model.predict(frames, acts) == model.params().head2_b.col(0));
}

TEST_CASE("state loss examples") {
  const StateVec s(0.3, -0.1, 0.02, 0.5);
  CHECK(state_loss(s, s) == 0.0);
  CHECK(state_loss(StateVec(s + StateVec(1, 0, 0, 0)), s) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(state_loss(StateVec(0.1, -0.2, 0.3, 0.0), StateVec::Zero()) == doctest::Approx(0.14).epsilon(1e-15));
}

TEST_CASE("batch loss is the mean of per-sample losses and order-free") {
  auto p = test::reduced_problem(11);
  PredictorParams<double> g;
  const double batch = p.model.loss_and_gradient(p.frames, p.actions, p.targets, g);
  const Mat out = p.model.predict_batch(p.frames, p.actions);
  double mean = 0.0;
  for (int b = 0; b < 3; ++b) mean += state_loss(out.col(b), p.targets.col(b)) / 3.0;
  CHECK(std::fabs(batch - mean) <= 1e-10);
  CHECK(std::fabs(batch_loss(out, p.targets) - mean) <= 1e-10);

  // Reverse the sample order; columns are time-major, t * B + b.
  Mat frames(p.frames.rows(), p.frames.cols()), actions(p.actions.rows(), 3), targets(4, 3);
  for (int b = 0; b < 3; ++b) {
    for (int t = 0; t < 4; ++t) frames.col(t * 3 + b) = p.frames.col(t * 3 + (2 - b));
    actions.col(b) = p.actions.col(2 - b);
    targets.col(b) = p.targets.col(2 - b);
  }
  CHECK(std::fabs(p.model.loss_and_gradient(frames, actions, targets, g) - batch) <= 1e-10);
}

TEST_CASE("analytic gradient matches central differences on every parameter") {
  auto p = test::reduced_problem(21);
  PredictorParams<double> grad;
  p.model.loss_and_gradient(p.frames, p.actions, p.targets, grad);
  const auto& names = PredictorParams<double>::names();
  for (std::size_t t = 0; t < PredictorParams<double>::kCount; ++t) {
    const Eigen::Index n = p.model.params().tensors()[t]->size();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double err = test::probe_relative_error(p, grad, t, i);
      INFO(names[t] << "[" << i << "]");
      REQUIRE(err <= 1e-4);
    }
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  const test::ScratchDir dir("pred_ckpt");
  const auto model = PredictorModel<float>::random(PredictorArch{}, 5);
  save_predictor(model, dir.path / "m.ckpt");
  const auto loaded = load_predictor<float>(dir.path / "m.ckpt");
  CHECK(loaded.arch() == model.arch());
  for (std::size_t t = 0; t < PredictorParams<float>::kCount; ++t)
    CHECK(*loaded.params().tensors()[t] == *model.params().tensors()[t]);
  std::mt19937_64 rng(1);
  nn::Matrix<float> frames = random_vec(64 * 64 * 3 * 4, rng).cwiseAbs().cast<float>().reshaped(64 * 64 * 3, 4);
  const std::array<Action, 4> acts{Action::Right, Action::Right, Action::Left, Action::Left};
  CHECK(model.predict(frames, acts) == loaded.predict(frames, acts));
}

TEST_CASE("checkpoint corruption, version and dimension errors") {
  const test::ScratchDir dir("pred_ckpt_neg");
  const auto path = dir.path / "m.ckpt";
  save_predictor(PredictorModel<float>::random(gru_arch(16), 5), path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(dir.path / name, std::ios::binary);
    out.write(content.data(), std::streamsize(content.size()));
    return dir.path / name;
  };
  auto kind_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::InvalidArgument;
  };

  const auto truncated = write("short.ckpt", bytes.substr(0, bytes.size() / 2));
  CHECK(kind_of([&] { load_predictor<float>(truncated); }) == ErrorKind::Corrupt);

  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x40;
  const auto damaged = write("flip.ckpt", flipped);
  CHECK(kind_of([&] { load_predictor<float>(damaged); }) == ErrorKind::Corrupt);

  std::string future = bytes;
  future[4] = 9;
  const auto versioned = write("v9.ckpt", future);
  CHECK(kind_of([&] { load_predictor<float>(versioned); }) == ErrorKind::Version);

  const PredictorArch expected = gru_arch(128);
  try {
    load_predictor<float>(path, &expected);
    FAIL("mismatched hidden width accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Dimension);
    CHECK(std::string(e.what()).find("hidden_width") != std::string::npos);
    CHECK(std::string(e.what()).find("16") != std::string::npos);
  }
  CHECK(kind_of([&] { load_predictor<float>(dir.path / "absent.ckpt"); }) == ErrorKind::MissingArtifact);
}
