#include "cartvis/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include "cartvis/error.hpp"

namespace cartvis {

void Bounds::validate() const {
  for (int d = 0; d < 4; ++d)
    if (!(scale(d) > 0.0) || !std::isfinite(scale(d))) throw Error(ErrorKind::InvalidArgument, "bounds must be strictly positive");
}

Trajectory rollout(const QNet& policy, ObservationMode mode, const EnvParams& params, std::uint64_t seed,
                   const PredictorModel<float>* predictor, int max_steps) {
  if (mode == ObservationMode::Predicted && predictor == nullptr)
    throw Error(ErrorKind::InvalidArgument, "predicted-observation rollout requires a predictor");
  CartPole env(params);
  std::optional<FrameWindowEstimator> estimator;
  if (mode == ObservationMode::Predicted) estimator.emplace(*predictor);

  const State s0 = env.reset(seed);
  StateVec obs = estimator ? estimator->reset(render(s0, params)) : s0.vec();
  Trajectory tr;
  while (!env.done() && int(tr.size()) < max_steps) {
    tr.truth.push_back(env.state());
    if (estimator) tr.estimates.push_back(obs);
    const Eigen::Vector2d q = policy.q_values(obs);
    const Action a = q(1) > q(0) ? Action::Right : Action::Left;
    const StepResult r = env.step(a);
    tr.actions.push_back(a);
    tr.rewards.push_back(r.reward);
    obs = estimator ? estimator->advance(a, render(r.next_state, params)) : r.next_state.vec();
    if (r.terminated) tr.cause = Termination::Terminated;
  }
  return tr;
}

Trajectory random_rollout(const PredictorModel<float>& predictor, const EnvParams& params, std::uint64_t seed,
                          int max_steps) {
  CartPole env(params);
  FrameWindowEstimator estimator(predictor);
  std::mt19937_64 rng(seed ^ 0x3C3C3C3C3C3C3C3Cull);
  std::bernoulli_distribution coin(0.5);
  StateVec obs = estimator.reset(render(env.reset(seed), params));
  Trajectory tr;
  while (!env.done() && int(tr.size()) < max_steps) {
    tr.truth.push_back(env.state());
    tr.estimates.push_back(obs);
    const Action a = coin(rng) ? Action::Right : Action::Left;
    const StepResult r = env.step(a);
    tr.actions.push_back(a);
    tr.rewards.push_back(r.reward);
    obs = estimator.advance(a, render(r.next_state, params));
    if (r.terminated) tr.cause = Termination::Terminated;
  }
  return tr;
}

StateVec rmse_percent(const Eigen::Ref<const Eigen::Matrix<double, 4, Eigen::Dynamic>>& truth,
                      const Eigen::Ref<const Eigen::Matrix<double, 4, Eigen::Dynamic>>& estimates,
                      const Bounds& bounds) {
  bounds.validate();
  if (truth.cols() != estimates.cols() || truth.cols() == 0)
    throw Error(ErrorKind::Dimension, "rmse needs equally many (>= 1) true and estimated states");
  const StateVec mse = (truth - estimates).array().square().rowwise().mean();
  return (mse.array().sqrt() / bounds.scale.array() * 100.0).matrix();
}

StateVec rmse_percent(const Trajectory& tr, const Bounds& bounds) {
  if (!tr.has_estimates()) throw Error(ErrorKind::InvalidArgument, "trajectory has no state estimates");
  if (tr.estimates.size() != tr.truth.size()) throw Error(ErrorKind::Dimension, "trajectory lists differ in length");
  Eigen::Matrix<double, 4, Eigen::Dynamic> truth(4, tr.size()), est(4, tr.size());
  for (std::size_t k = 0; k < tr.size(); ++k) {
    truth.col(k) = tr.truth[k].vec();
    est.col(k) = tr.estimates[k];
  }
  return rmse_percent(truth, est, bounds);
}

StateVec mae_percent(const Trajectory& tr, const Bounds& bounds) {
  bounds.validate();
  if (tr.size() == 0) throw Error(ErrorKind::InvalidArgument, "mae of an empty trajectory");
  StateVec total = StateVec::Zero();
  for (const State& s : tr.truth) total += s.vec().cwiseAbs();
  return (total.array() / double(tr.size()) / bounds.scale.array() * 100.0).matrix();
}

// Reports --------------------------------------------------------------------

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

const char* kDimNames[4] = {"x", "x_dot", "theta", "theta_dot"};

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

std::string table_row(const std::string& label, const StateVec& v, int width) {
  std::ostringstream os;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%-*s", width, label.c_str());
  os << buf;
  for (int d = 0; d < 4; ++d) {
    std::snprintf(buf, sizeof buf, " %10.2f", v(d));
    os << buf;
  }
  os << '\n';
  return os.str();
}

std::string table_header(const std::string& first, int width) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-*s %10s %10s %10s %10s\n", width, first.c_str(), "x", "x_dot", "theta",
                "theta_dot");
  return buf;
}

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? char(std::tolower(c)) : '_';
  return out;
}

}  // namespace

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::vector<double>& x,
                          const std::vector<PlotSeries>& series) {
  constexpr double W = 720, H = 360, left = 70, right = 160, top = 40, bottom = 50;
  double x0 = x.empty() ? 0.0 : x.front(), x1 = x.empty() ? 1.0 : x.back();
  if (x1 <= x0) x1 = x0 + 1.0;
  double y0 = 0.0, y1 = 0.0;
  bool first = true;
  for (const auto& s : series)
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      if (first) y0 = y1 = v, first = false;
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  if (y1 - y0 < 1e-12) y0 -= 1.0, y1 += 1.0;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto sx = [&](double v) { return left + (v - x0) / (x1 - x0) * (W - left - right); };
  auto sy = [&](double v) { return top + (y1 - v) / (y1 - y0) * (H - top - bottom); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << W - left - right << "\" height=\"" << H - top - bottom
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << fixed(sy(yv) + 4, 2) << "\" text-anchor=\"end\">" << fixed(yv, 3) << "</text>\n";
    os << "<text x=\"" << fixed(sx(xv), 2) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">" << fixed(xv, 1) << "</text>\n";
  }
  os << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    const std::size_t n = std::min(s.y.size(), x.size());
    for (std::size_t i = 0; i < n; ++i)
      if (std::isfinite(s.y[i])) os << fixed(sx(x[i]), 2) << ',' << fixed(sy(s.y[i]), 2) << ' ';
    os << "\"/>\n";
    const double ly = top + 16 + 18 * double(k);
    os << "<line x1=\"" << W - right + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 36 << "\" y2=\"" << ly
       << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - right + 42 << "\" y=\"" << ly + 4 << "\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_report(const std::filesystem::path& dir, const ReportInputs& in) {
  bool any_rmse = in.predictor_rmse.has_value();
  for (const auto& a : in.agents) any_rmse = any_rmse || a.rmse.has_value();
  if (in.agents.empty() && !any_rmse)
    throw Error(ErrorKind::MissingArtifact, "nothing to report: missing agent metrics and predictor RMSE");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string());

  std::ostringstream rmse_csv, mae_csv, text;
  rmse_csv << "source,x,x_dot,theta,theta_dot\n";
  if (in.predictor_rmse) {
    rmse_csv << "predictor";
    for (int d = 0; d < 4; ++d) rmse_csv << ',' << fixed((*in.predictor_rmse)(d));
    rmse_csv << '\n';
  }
  for (const auto& a : in.agents)
    if (a.rmse) {
      rmse_csv << a.label;
      for (int d = 0; d < 4; ++d) rmse_csv << ',' << fixed((*a.rmse)(d));
      rmse_csv << '\n';
    }
  mae_csv << "agent,x,x_dot,theta,theta_dot,mean_episode_length\n";
  for (const auto& a : in.agents) {
    mae_csv << a.label;
    for (int d = 0; d < 4; ++d) mae_csv << ',' << fixed(a.mae(d));
    mae_csv << ',' << fixed(a.mean_length, 3) << '\n';
  }

  if (any_rmse) {
    text << "State prediction error (RMSE %)\n" << table_header("source", 16);
    if (in.predictor_rmse) text << table_row("predictor", *in.predictor_rmse, 16);
    for (const auto& a : in.agents)
      if (a.rmse) text << table_row(a.label, *a.rmse, 16);
    text << '\n';
  }
  if (!in.agents.empty()) {
    text << "Tracking error (MAE %) by agent\n" << table_header("agent", 16);
    for (const auto& a : in.agents) text << table_row(a.label, a.mae, 16);
    text << "\nMean episode length\n";
    for (const auto& a : in.agents) text << "  " << a.label << ": " << fixed(a.mean_length, 1) << '\n';
  }

  if (any_rmse) write_file(dir / "metrics_rmse.csv", rmse_csv.str());
  if (!in.agents.empty()) write_file(dir / "metrics_mae.csv", mae_csv.str());
  write_file(dir / "report.txt", text.str());

  if (!in.predictor_curve.empty()) {
    std::vector<double> x, tr, va;
    for (const auto& e : in.predictor_curve) {
      x.push_back(e.epoch);
      tr.push_back(e.train);
      va.push_back(e.val);
    }
    write_file(dir / "predictor_loss.svg",
               svg_line_plot("Predictor training and validation loss", "epoch", x,
                             {{"train", tr, "#1f77b4"}, {"validation", va, "#d62728"}}));
  }
  for (const auto& [label, log] : in.reward_curves) {
    if (log.empty()) continue;
    std::vector<double> x, raw, shaped;
    for (const auto& e : log) {
      x.push_back(double(e.episode));
      raw.push_back(e.raw_return);
      shaped.push_back(e.shaped_return);
    }
    write_file(dir / ("reward_" + slug(label) + ".svg"),
               svg_line_plot("DQN training return (" + label + ")", "episode", x,
                             {{"raw", raw, "#1f77b4"}, {"shaped", shaped, "#2ca02c"}}));
  }
  for (const auto& [label, tr] : in.traces) {
    if (tr.size() == 0) continue;
    std::vector<double> t(tr.size());
    for (std::size_t k = 0; k < tr.size(); ++k) t[k] = double(k);
    for (int d = 0; d < 4; ++d) {
      std::vector<PlotSeries> s;
      PlotSeries truth{"true", {}, "#1f77b4"}, ref{"reference", std::vector<double>(tr.size(), 0.0), "#7f7f7f"};
      for (const auto& st : tr.truth) truth.y.push_back(st.vec()(d));
      s.push_back(std::move(truth));
      if (tr.has_estimates()) {
        PlotSeries est{"predicted", {}, "#d62728"};
        for (const auto& e : tr.estimates) est.y.push_back(e(d));
        s.push_back(std::move(est));
      }
      s.push_back(std::move(ref));
      write_file(dir / ("trace_" + slug(label) + "_" + kDimNames[d] + ".svg"),
                 svg_line_plot(std::string(kDimNames[d]) + " (" + label + ")", "step", t, s));
    }
  }
}

}  // namespace cartvis
