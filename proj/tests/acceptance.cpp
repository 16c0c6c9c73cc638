// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance [work_dir] [--reuse]
//
// The desk-scale stages (20k samples, 30 predictor epochs, two 50k-step DQN
// runs) take tens of minutes on one core. --reuse keeps artifacts already in
// work_dir instead of regenerating them.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "cartvis/config.hpp"
#include "cartvis/error.hpp"
#include "cartvis/eval.hpp"
#include "cartvis/pipeline.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace cartvis;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

// 1 ---------------------------------------------------------------------------

void gru_oracle() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PredictorArch arch;
  arch.hidden_width = 3;
  const int in_width = arch.feature_width + 1;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto model = PredictorModel<double>::random(arch, 100 + trial);
    const auto& p = model.params();
    auto rows = [](const nn::Matrix<double>& m) {
      std::vector<std::vector<double>> out(m.rows(), std::vector<double>(m.cols()));
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
      return out;
    };
    auto flat = [](const nn::Matrix<double>& m) { return std::vector<double>(m.data(), m.data() + m.size()); };
    const oracle::Gru g{rows(p.gru_wz), rows(p.gru_wr), rows(p.gru_wh), flat(p.gru_bz), flat(p.gru_br), flat(p.gru_bh)};

    nn::Vector<double> h(3), in(in_width);
    for (int i = 0; i < 3; ++i) h(i) = 0.9 * u(rng);
    for (int i = 0; i < in_width; ++i) in(i) = u(rng);
    const auto ref = oracle::gru_step(g, {h.data(), h.data() + 3}, {in.data(), in.data() + in_width});
    const nn::Vector<double> got = model.gru_step(h, in);
    for (int i = 0; i < 3; ++i) worst = std::max(worst, std::fabs(got(i) - ref[i]));
  }
  report(1, worst <= 1e-12, "GRU vs elementwise oracle, 100 instances, d_h=3, max |diff| = " + fmt(worst));
}

// 2 ---------------------------------------------------------------------------

void gradient_check() {
  auto p = test::reduced_problem(77);
  PredictorParams<double> grad;
  p.model.loss_and_gradient(p.frames, p.actions, p.targets, grad);
  std::mt19937_64 rng(8);
  double worst = 0.0;
  for (int probe = 0; probe < 20; ++probe) {
    const std::size_t t = rng() % PredictorParams<double>::kCount;
    const Eigen::Index n = p.model.params().tensors()[t]->size();
    const Eigen::Index i = Eigen::Index(rng() % std::uint64_t(n));
    worst = std::max(worst, test::probe_relative_error(p, grad, t, i, 1e-5));
  }
  report(2, worst <= 1e-4, "reduced-model central differences, 20 probes, max relative error = " + fmt(worst));
}

// 3 ---------------------------------------------------------------------------

void physics_oracle() {
  const EnvParams params;
  double worst = 0.0;
  bool mirrored = true;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed * 7919 + 1);
    State s = CartPole(params).reset(seed);
    State m = -s;
    for (int k = 0; k < 100; ++k) {
      const Action a = (rng() & 1) ? Action::Right : Action::Left;
      const auto o = oracle::cartpole_step({s.x, s.x_dot, s.theta, s.theta_dot}, a == Action::Right ? 1 : 0);
      const State next = step(params, s, a).next_state;
      const State mnext = step(params, m, mirror(a)).next_state;
      worst = std::max({worst, std::fabs(next.x - o.x), std::fabs(next.x_dot - o.x_dot),
                        std::fabs(next.theta - o.theta), std::fabs(next.theta_dot - o.theta_dot)});
      mirrored = mirrored && mnext == -next;
      s = next;
      m = mnext;
    }
  }
  report(3, worst <= 1e-12 && mirrored,
         "50 seeds x 100 random steps, max |diff| = " + fmt(worst) + ", mirror exact = " + (mirrored ? "yes" : "no"));
}

// 4 ---------------------------------------------------------------------------

void metric_oracles() {
  const std::vector<std::array<double, 4>> truth = {{0.10, -0.30, 0.020, 0.50},
                                                    {-0.25, 0.75, -0.041, -1.25},
                                                    {1.30, 0.05, 0.110, 0.00},
                                                    {-2.10, -1.90, -0.007, 2.20},
                                                    {0.00, 0.40, 0.190, -0.35}};
  const std::vector<std::array<double, 4>> est = {{0.12, -0.10, 0.025, 0.40},
                                                  {-0.20, 0.95, -0.030, -1.00},
                                                  {1.25, -0.30, 0.100, 0.20},
                                                  {-2.15, -1.60, 0.004, 2.00},
                                                  {0.03, 0.10, 0.170, -0.10}};
  Trajectory tr;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    tr.truth.push_back({truth[k][0], truth[k][1], truth[k][2], truth[k][3]});
    tr.estimates.push_back(StateVec(est[k][0], est[k][1], est[k][2], est[k][3]));
  }
  const Bounds bounds;
  const std::array<double, 4> b{2.4, 3.0, 0.21, 3.0};
  const StateVec rmse = rmse_percent(tr, bounds), mae = mae_percent(tr, bounds);
  const auto rmse_ref = oracle::rmse_percent(truth, est, b), mae_ref = oracle::mae_percent(truth, b);
  double worst = 0.0;
  for (int d = 0; d < 4; ++d) worst = std::max({worst, std::fabs(rmse(d) - rmse_ref[d]), std::fabs(mae(d) - mae_ref[d])});

  const double r = shaped_reward(State{1.0, 0.0, 0.1, 0.0}, Action::Left, Action::Right, ShapingWeights{0.1, 1.0, 0.35});
  report(4, worst <= 1e-12 && r == 0.45,
         "5-step metrics max |diff| = " + fmt(worst) + ", shaped_reward worked example = " + fmt(r, 17));
}

// 5-8 -------------------------------------------------------------------------

RunConfig desk_config() {
  RunConfig c;
  c.dataset.samples = 20000;
  c.predictor.epochs = 30;
  c.rl.total_timesteps = 50000;
  return c;
}

void predictor_desk(const RunConfig& config, const RunLayout& run, bool reuse) {
  if (!(reuse && fs::exists(run.dataset() / "dataset.bin"))) cmd_collect(config, run);
  const auto loss_csv = run.predictor() / "loss.csv";
  if (!(reuse && fs::exists(loss_csv) && csv_rows(loss_csv).size() == std::size_t(config.predictor.epochs)))
    cmd_train_predictor(config, run);

  std::vector<double> val;
  for (const auto& row : csv_rows(loss_csv)) val.push_back(std::stod(row.at(2)));
  constexpr int kWindowEpochs = 5;
  std::vector<double> windows;
  for (std::size_t s = 0; s + kWindowEpochs <= val.size(); s += kWindowEpochs) {
    double sum = 0.0;
    for (int k = 0; k < kWindowEpochs; ++k) sum += val[s + k];
    windows.push_back(sum / kWindowEpochs);
  }
  bool monotone = windows.size() >= 2;
  for (std::size_t k = 1; k < windows.size(); ++k) monotone = monotone && windows[k] < windows[k - 1];

  const DatasetReader data(run.dataset() / "dataset.bin");
  const Split sp = split(data.size(), config.dataset.split_ratio, config.dataset.split_seed);
  const auto model = load_predictor<float>(run.predictor() / "best.ckpt", &config.predictor_arch);
  const auto pred = predict_dataset(model, data, sp.val);
  Eigen::Matrix<double, 4, Eigen::Dynamic> truth(4, sp.val.size());
  for (std::size_t k = 0; k < sp.val.size(); ++k) truth.col(Eigen::Index(k)) = data.target(sp.val[k]).vec();
  const StateVec rmse = rmse_percent(truth, pred, config.bounds());

  std::string w;
  for (double v : windows) w += (w.empty() ? "" : " > ") + fmt(v);
  report(5, monotone && (rmse.array() < 10.0).all(),
         "5-epoch mean val loss " + w + "; val RMSE% x " + fmt(rmse(0)) + ", x_dot " + fmt(rmse(1)) + ", theta " +
             fmt(rmse(2)) + ", theta_dot " + fmt(rmse(3)));
}

void agents_desk(const RunConfig& config, const RunLayout& run, bool reuse) {
  for (ObservationMode m : {ObservationMode::Full, ObservationMode::Predicted})
    if (!(reuse && fs::exists(run.rl(m) / "agent.ckpt"))) cmd_train_rl(config, run, m);
  cmd_eval(config, run, {});

  std::map<std::string, std::vector<double>> rows;
  for (const auto& row : csv_rows(run.eval() / "metrics_mae.csv")) {
    std::vector<double> v;
    for (std::size_t i = 1; i < row.size(); ++i) v.push_back(std::stod(row[i]));
    rows[row.at(0)] = v;
  }
  const auto& full = rows.at("full_state_rl");
  const auto& pred = rows.at("pred_state_rl");
  auto summary = [](const std::vector<double>& v) {
    return "length " + fmt(v[4]) + ", MAE% x " + fmt(v[0]) + ", theta " + fmt(v[2]);
  };
  report(6, full[4] >= 450.0, "full-state DQN, 50k steps, 10 greedy seeds: " + summary(full));
  report(7, pred[4] >= 400.0 && pred[2] <= 5.0 && pred[0] <= 15.0,
         "predicted-state DQN, 50k steps, 10 greedy seeds: " + summary(pred));
  report(8, pred[0] > full[0] && pred[2] <= 2.0 * full[2],
         "x-MAE% pred " + fmt(pred[0]) + " vs full " + fmt(full[0]) + "; theta-MAE% pred " + fmt(pred[2]) +
             " vs 2 x full " + fmt(2.0 * full[2]));
}

// 9 ---------------------------------------------------------------------------

std::map<fs::path, std::string> csv_snapshot(const fs::path& root) {
  std::map<fs::path, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.path().extension() == ".csv") out[fs::relative(e.path(), root)] = slurp(e.path());
  return out;
}

void determinism(const fs::path& work) {
  RunConfig c;
  c.dataset.samples = 1500;
  c.predictor.epochs = 2;
  c.rl.total_timesteps = 3000;
  c.eval.seeds = 3;
  const RunLayout run{work / "determinism"};
  fs::remove_all(run.root);

  std::vector<std::string> differing;
  std::size_t files = 0;
  std::map<fs::path, std::string> before;
  for (int pass = 0; pass < 2; ++pass) {
    cmd_collect(c, run);
    cmd_train_predictor(c, run);
    cmd_train_rl(c, run, ObservationMode::Full);
    cmd_train_rl(c, run, ObservationMode::Predicted);
    cmd_eval(c, run, {});
    const auto snap = csv_snapshot(run.root);
    if (pass == 0) {
      before = snap;
      continue;
    }
    files = snap.size();
    for (const auto& [path, text] : snap)
      if (before.count(path) == 0 || before.at(path) != text) differing.push_back(path.string());
    if (before.size() != snap.size()) differing.push_back("(file set)");
  }
  std::string detail = "reran collect, train-predictor, train-rl x2, eval; " + std::to_string(files) + " CSVs compared";
  for (const auto& d : differing) detail += ", differs: " + d;
  report(9, differing.empty() && files >= 6, detail);
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = "acceptance_run";
  bool reuse = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--reuse")
      reuse = true;
    else
      work = a;
  }

  try {
    gru_oracle();
    gradient_check();
    physics_oracle();
    metric_oracles();

    const RunConfig config = desk_config();
    const RunLayout run{work / "desk"};
    if (!reuse) fs::remove_all(run.root);
    fs::create_directories(run.root);
    predictor_desk(config, run, reuse);
    agents_desk(config, run, reuse);
    determinism(work);
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
