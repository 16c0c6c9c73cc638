#include "cartvis/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "cartvis/error.hpp"

namespace cartvis {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
template <typename Int>
std::string format(Int v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::string& v) { return v; }

template <typename T>
void parse_into(const std::string& text, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true") out = true;
    else if (text == "false") out = false;
    else throw std::invalid_argument("expected true or false");
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = text;
  } else {
    T v{};
    const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size()) throw std::invalid_argument("not a number");
    out = v;
  }
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Access>
Field field(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](const RunConfig& c) { return format(access(const_cast<RunConfig&>(c))); },
          [access](RunConfig& c, const std::string& v) { parse_into(v, access(c)); }};
}

#define CV_FIELD(section, key, expr) field(section, key, [](RunConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      CV_FIELD("env", "gravity", c.env.gravity),
      CV_FIELD("env", "cart_mass", c.env.cart_mass),
      CV_FIELD("env", "pole_mass", c.env.pole_mass),
      CV_FIELD("env", "pole_half_length", c.env.pole_half_length),
      CV_FIELD("env", "force_magnitude", c.env.force_magnitude),
      CV_FIELD("env", "time_step", c.env.time_step),
      CV_FIELD("env", "position_bound", c.env.position_bound),
      CV_FIELD("env", "angle_bound", c.env.angle_bound),
      CV_FIELD("env", "max_steps", c.env.max_steps),

      CV_FIELD("dataset", "samples", c.dataset.samples),
      CV_FIELD("dataset", "bins_per_dim", c.dataset.bins_per_dim),
      CV_FIELD("dataset", "velocity_cap", c.dataset.velocity_cap),
      CV_FIELD("dataset", "angular_velocity_cap", c.dataset.angular_velocity_cap),
      CV_FIELD("dataset", "seed", c.dataset.seed),
      CV_FIELD("dataset", "split_ratio", c.dataset.split_ratio),
      CV_FIELD("dataset", "split_seed", c.dataset.split_seed),
      CV_FIELD("dataset", "binned_resets", c.dataset.binned_resets),
      CV_FIELD("dataset", "max_barren_resets", c.dataset.max_barren_resets),

      CV_FIELD("predictor", "conv1_channels", c.predictor_arch.conv1_channels),
      CV_FIELD("predictor", "conv2_channels", c.predictor_arch.conv2_channels),
      CV_FIELD("predictor", "kernel", c.predictor_arch.kernel),
      CV_FIELD("predictor", "feature_width", c.predictor_arch.feature_width),
      CV_FIELD("predictor", "hidden_width", c.predictor_arch.hidden_width),
      CV_FIELD("predictor", "head_hidden", c.predictor_arch.head_hidden),
      CV_FIELD("predictor", "invert_input", c.predictor_arch.invert_input),
      CV_FIELD("predictor", "batch_size", c.predictor.batch_size),
      CV_FIELD("predictor", "epochs", c.predictor.epochs),
      CV_FIELD("predictor", "learning_rate", c.predictor.learning_rate),
      CV_FIELD("predictor", "seed", c.predictor.seed),
      CV_FIELD("predictor", "beta1", c.predictor.beta1),
      CV_FIELD("predictor", "beta2", c.predictor.beta2),
      CV_FIELD("predictor", "adam_epsilon", c.predictor.adam_epsilon),

      CV_FIELD("rl", "gamma", c.rl.gamma),
      CV_FIELD("rl", "learning_rate", c.rl.learning_rate),
      CV_FIELD("rl", "batch_size", c.rl.batch_size),
      CV_FIELD("rl", "total_timesteps", c.rl.total_timesteps),
      CV_FIELD("rl", "buffer_capacity", c.rl.buffer_capacity),
      CV_FIELD("rl", "epsilon_initial", c.rl.epsilon_initial),
      CV_FIELD("rl", "epsilon_decay", c.rl.epsilon_decay),
      CV_FIELD("rl", "epsilon_floor", c.rl.epsilon_floor),
      CV_FIELD("rl", "target_update_period", c.rl.target_update_period),
      CV_FIELD("rl", "learning_starts", c.rl.learning_starts),
      CV_FIELD("rl", "hidden_width", c.rl.hidden_width),
      CV_FIELD("rl", "max_grad_norm", c.rl.max_grad_norm),
      CV_FIELD("rl", "lambda_position", c.rl.shaping.position),
      CV_FIELD("rl", "lambda_angle", c.rl.shaping.angle),
      CV_FIELD("rl", "lambda_switch", c.rl.shaping.action_switch),
      CV_FIELD("rl", "seed", c.rl.seed),

      CV_FIELD("eval", "seeds", c.eval.seeds),
      CV_FIELD("eval", "seed_base", c.eval.seed_base),
      CV_FIELD("eval", "max_steps", c.eval.max_steps),

      CV_FIELD("output", "root", c.output_root),
  };
  return f;
}

#undef CV_FIELD

}  // namespace

Bounds RunConfig::bounds() const {
  return Bounds::from(env, dataset.velocity_cap, dataset.angular_velocity_cap);
}

void RunConfig::validate() const {
  env.validate();
  if (dataset.samples < 1) throw Error(ErrorKind::Config, "dataset.samples must be >= 1");
  if (dataset.bins_per_dim < 1) throw Error(ErrorKind::Config, "dataset.bins_per_dim must be >= 1");
  if (!(dataset.velocity_cap > 0.0) || !(dataset.angular_velocity_cap > 0.0))
    throw Error(ErrorKind::Config, "dataset velocity caps must be > 0");
  if (!(dataset.split_ratio > 0.0 && dataset.split_ratio <= 1.0))
    throw Error(ErrorKind::Config, "dataset.split_ratio must be in (0, 1]");
  predictor_arch.validate();
  predictor.validate();
  rl.validate();
  if (eval.seeds < 1) throw Error(ErrorKind::Config, "eval.seeds must be >= 1");
  if (eval.max_steps < 1) throw Error(ErrorKind::Config, "eval.max_steps must be >= 1");
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(*this) << '\n';
  }
  return os.str();
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw Error(ErrorKind::Config, "config line " + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : fields()) known = known || f.section == section;
      if (!known) fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    if (section.empty()) fail("key outside of a section");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const Field* match = nullptr;
    for (const auto& f : fields())
      if (f.section == section && f.key == key) match = &f;
    if (!match) fail("unknown key '" + key + "' in [" + section + "]");
    try {
      match->set(c, value);
    } catch (const std::invalid_argument& e) {
      fail("bad value for " + section + "." + key + " ('" + value + "'): " + e.what());
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingArtifact, "config not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << serialize();
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace cartvis
