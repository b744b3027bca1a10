#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "fnp/error.hpp"
#include "fnp/harness.hpp"
#include "fnp/rng.hpp"

namespace fnp {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = std::min(s.find(sep, start), s.size());
    std::string item = trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    start = end + 1;
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, std::string_view text) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size())
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + std::string(text) + "'");
  return v;
}

double parse_real(const std::string& key, std::string_view text) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    throw ConfigError("config key '" + key + "': expected a finite number, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + std::string(text) + "'");
}

GridShape parse_grid(const std::string& key, std::string_view text) {
  const auto x = text.find('x');
  if (x == std::string_view::npos) throw ConfigError("config key '" + key + "': expected HxW, got '" + std::string(text) + "'");
  return {parse_uint(key, trim(text.substr(0, x))), parse_uint(key, trim(text.substr(x + 1)))};
}

std::string real_text(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string grid_text(GridShape g) { return std::to_string(g.lat) + "x" + std::to_string(g.lon); }

template <class T, class F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + fmt(items[i]);
  return out;
}

struct Key {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define FNP_UINT(key, member)                                                                            \
  Key{key, [](ExperimentConfig& c, const std::string& v) { c.member = parse_uint(key, v); },            \
      [](const ExperimentConfig& c) { return std::to_string(c.member); }}
#define FNP_REAL(key, member)                                                                            \
  Key{key, [](ExperimentConfig& c, const std::string& v) { c.member = parse_real(key, v); },            \
      [](const ExperimentConfig& c) { return real_text(c.member); }}
#define FNP_BOOL(key, member)                                                                            \
  Key{key, [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(key, v); },            \
      [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }}
#define FNP_PATH(key, member)                                                                            \
  Key{key, [](ExperimentConfig& c, const std::string& v) { c.member = v; },                              \
      [](const ExperimentConfig& c) { return c.member.string(); }}
#define FNP_GRID(key, member)                                                                            \
  Key{key, [](ExperimentConfig& c, const std::string& v) { c.member = parse_grid(key, v); },            \
      [](const ExperimentConfig& c) { return grid_text(c.member); }}
#define FNP_REALS(key, member)                                                                           \
  Key{key,                                                                                               \
      [](ExperimentConfig& c, const std::string& v) {                                                    \
        c.member.clear();                                                                                \
        for (const auto& item : split_list(v)) c.member.push_back(parse_real(key, item));                \
      },                                                                                                 \
      [](const ExperimentConfig& c) { return join(c.member, real_text); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"experiment_id", [](ExperimentConfig& c, const std::string& v) { c.experiment_id = v; },
          [](const ExperimentConfig& c) { return c.experiment_id; }},
      Key{"variant", [](ExperimentConfig& c, const std::string& v) { c.variant = parse_variant(v); },
          [](const ExperimentConfig& c) { return variant_name(c.variant); }},
      Key{"channels",
          [](ExperimentConfig& c, const std::string& v) {
            c.channels.clear();
            for (const auto& item : split_list(v)) {
              const auto colon = item.find(':');
              if (colon == std::string::npos) throw ConfigError("config key 'channels': expected name:group, got '" + item + "'");
              c.channels.push_back({trim(item.substr(0, colon)),
                                    static_cast<std::uint32_t>(parse_uint("channels", trim(item.substr(colon + 1))))});
            }
          },
          [](const ExperimentConfig& c) {
            return join(c.channels, [](const ChannelInfo& ch) { return ch.name + ":" + std::to_string(ch.group); });
          }},
      FNP_GRID("background_grid", background_grid),
      FNP_GRID("obs_grid", obs_grid),
      Key{"eval_obs_grids",
          [](ExperimentConfig& c, const std::string& v) {
            c.eval_obs_grids.clear();
            for (const auto& item : split_list(v)) c.eval_obs_grids.push_back(parse_grid("eval_obs_grids", item));
          },
          [](const ExperimentConfig& c) { return join(c.eval_obs_grids, grid_text); }},
      FNP_GRID("truth_grid", truth_grid),
      FNP_REAL("ratio", ratio),
      FNP_REAL("lead_time_h", lead_time_h),
      FNP_UINT("epochs", epochs),
      FNP_REAL("learning_rate", learning_rate),
      FNP_REAL("weight_decay", weight_decay),
      FNP_REAL("clip_norm", clip_norm),
      FNP_UINT("batch_size", batch_size),
      FNP_REAL("background_dropout", background_dropout),
      FNP_UINT("seed", seed),
      FNP_UINT("data_seed", data_seed),
      FNP_UINT("embed_dim", embed_dim),
      FNP_UINT("n_layers", n_layers),
      FNP_UINT("modes_lat", modes_lat),
      FNP_UINT("modes_lon", modes_lon),
      FNP_UINT("conv_kernel", conv_kernel),
      FNP_UINT("stack_width", stack_width),
      FNP_UINT("decoder_hidden", decoder_hidden),
      FNP_UINT("decoder_layers", decoder_layers),
      Key{"residual_form", [](ExperimentConfig& c, const std::string& v) { c.residual_form = parse_residual_form(v); },
          [](const ExperimentConfig& c) { return residual_form_name(c.residual_form); }},
      Key{"retain_rule", [](ExperimentConfig& c, const std::string& v) { c.retain = parse_retain_rule(v); },
          [](const ExperimentConfig& c) { return retain_rule_name(c.retain); }},
      Key{"selection", [](ExperimentConfig& c, const std::string& v) { c.selection = parse_selection_mode(v); },
          [](const ExperimentConfig& c) { return selection_mode_name(c.selection); }},
      FNP_REAL("soft_temperature", soft_temperature),
      FNP_BOOL("background_skip", background_skip),
      FNP_BOOL("match_parameters", match_parameters),
      FNP_UINT("train_samples", train_samples),
      FNP_UINT("val_samples", val_samples),
      FNP_UINT("test_samples", test_samples),
      FNP_REALS("amplitudes", amplitudes),
      FNP_REAL("spectral_slope", spectral_slope),
      FNP_REAL("cross_channel_corr", cross_channel_corr),
      FNP_REAL("smoothing_scale", smoothing_scale),
      FNP_REAL("noise_amplitude", noise_amplitude),
      FNP_REAL("noise_correlation", noise_correlation),
      FNP_REALS("data_lead_times", data_lead_times),
      FNP_PATH("data_dir", data_dir),
      FNP_PATH("output_dir", output_dir),
      FNP_PATH("checkpoint", checkpoint),
      FNP_BOOL("fine_tune", fine_tune),
      FNP_REAL("fine_tune_fraction", fine_tune_fraction),
      FNP_BOOL("drop_background", drop_background),
      Key{"variants",
          [](ExperimentConfig& c, const std::string& v) {
            c.variants.clear();
            for (const auto& item : split_list(v)) c.variants.push_back(parse_variant(item));
          },
          [](const ExperimentConfig& c) { return join(c.variants, variant_name); }},
      FNP_REALS("ratios", ratios),
      FNP_REALS("lead_times", lead_times),
      Key{"plot_channels",
          [](ExperimentConfig& c, const std::string& v) {
            c.plot_channels.clear();
            for (const auto& item : split_list(v)) c.plot_channels.push_back(parse_uint("plot_channels", item));
          },
          [](const ExperimentConfig& c) {
            return join(c.plot_channels, [](std::size_t k) { return std::to_string(k); });
          }},
  };
  return table;
}

#undef FNP_UINT
#undef FNP_REAL
#undef FNP_BOOL
#undef FNP_PATH
#undef FNP_GRID
#undef FNP_REALS

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid configuration: " + what);
}

void check_grid(GridShape g, const char* name) {
  require(g.lat >= 2 && g.lon >= 2, std::string(name) + " must be at least 2x2");
  require(g.lat <= 2048 && g.lon <= 4096, std::string(name) + " is too large");
}

}  // namespace

std::vector<ChannelInfo> default_channels() { return {{"z500", 0}, {"z850", 0}, {"t2m", 1}, {"u10", 1}}; }

void ExperimentConfig::validate() const {
  require(!experiment_id.empty(), "experiment_id is empty");
  require(experiment_id.find_first_of("/\\ \t,") == std::string::npos,
          "experiment_id may not contain separators or spaces");
  require(!channels.empty(), "no channels");
  std::set<std::string> names;
  for (const auto& ch : channels) require(names.insert(ch.name).second && !ch.name.empty(), "channel names must be unique");
  check_grid(background_grid, "background_grid");
  check_grid(obs_grid, "obs_grid");
  for (GridShape g : eval_obs_grids) check_grid(g, "eval_obs_grids entry");
  if (truth_grid.lat || truth_grid.lon) check_grid(truth_grid, "truth_grid");
  require(ratio > 0.0 && ratio <= 1.0, "ratio must lie in (0, 1]");
  require(lead_time_h >= 0.0 && lead_time_h <= 240.0, "lead_time_h must lie in [0, 240]");
  require(epochs <= 10000, "epochs must be at most 10000");
  require(learning_rate > 0.0 && learning_rate < 1.0, "learning_rate must lie in (0, 1)");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(clip_norm >= 0.0, "clip_norm must be non-negative");
  require(batch_size >= 1, "batch_size must be positive");
  require(background_dropout >= 0.0 && background_dropout <= 1.0, "background_dropout must lie in [0, 1]");
  require(embed_dim >= 1 && embed_dim <= 1024, "embed_dim must lie in [1, 1024]");
  require(n_layers >= 1 && n_layers <= 64, "n_layers must lie in [1, 64]");
  require(conv_kernel % 2 == 1, "conv_kernel must be odd");
  require(decoder_hidden >= 1 && decoder_layers <= 16, "decoder sizes out of range");
  require(soft_temperature > 0.0, "soft_temperature must be positive");
  require(train_samples >= 1 && val_samples >= 1 && test_samples >= 1, "every split needs at least one sample");
  require(amplitudes.empty() || amplitudes.size() == channels.size(), "amplitudes must list one value per channel");
  for (double a : amplitudes) require(a > 0.0, "amplitudes must be positive");
  require(noise_amplitude >= 0.0 && smoothing_scale >= 0.0 && noise_correlation > 0.0, "background noise settings out of range");
  require(cross_channel_corr > -1.0 && cross_channel_corr < 1.0, "cross_channel_corr must lie in (-1, 1)");
  for (double l : data_lead_times) require(l >= 0.0 && l <= 240.0, "data_lead_times entries must lie in [0, 240]");
  for (double l : lead_times) require(l >= 0.0 && l <= 240.0, "lead_times entries must lie in [0, 240]");
  for (double r : ratios) require(r > 0.0 && r <= 1.0, "ratios entries must lie in (0, 1]");
  require(fine_tune_fraction > 0.0 && fine_tune_fraction <= 1.0, "fine_tune_fraction must lie in (0, 1]");
  for (std::size_t k : plot_channels) require(k < channels.size(), "plot_channels entry out of range");
}

LatLonGrid ExperimentConfig::background_lat_lon() const {
  return make_equiangular_grid(background_grid.lat, background_grid.lon);
}

LatLonGrid ExperimentConfig::obs_lat_lon() const { return make_equiangular_grid(obs_grid.lat, obs_grid.lon); }

GridShape ExperimentConfig::resolved_truth_grid() const {
  if (truth_grid.lat && truth_grid.lon) return truth_grid;
  GridShape g = obs_grid;
  for (GridShape e : eval_obs_grids)
    if (e.lat * e.lon > g.lat * g.lon) g = e;
  if (background_grid.lat * background_grid.lon > g.lat * g.lon) g = background_grid;
  return g;
}

std::filesystem::path ExperimentConfig::checkpoint_path() const {
  return checkpoint.empty() ? output_dir / (experiment_id + ".ckpt") : checkpoint;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto it = std::find_if(keys().begin(), keys().end(), [&](const Key& k) { return k.name == key; });
    if (it == keys().end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    it->set(c, value);
  }
  c.validate();
  return c;
}

std::string format_config(const ExperimentConfig& config) {
  std::string out;
  for (const Key& k : keys()) {
    const std::string v = k.get(config);
    if (!v.empty()) out += k.name + " = " + v + "\n";
  }
  return out;
}

std::filesystem::path resolve_data_path(const std::filesystem::path& path) {
  if (path.empty() || path.is_absolute()) return path;
  const char* root = std::getenv("FNP_DATA_DIR");
  return (root && *root) ? std::filesystem::path(root) / path : std::filesystem::current_path() / path;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  ExperimentConfig c = parse_config(ss.str());
  c.data_dir = resolve_data_path(c.data_dir);
  c.output_dir = resolve_data_path(c.output_dir);
  c.checkpoint = resolve_data_path(c.checkpoint);
  return c;
}

ModelConfig model_config_for(const ExperimentConfig& c) {
  ModelConfig m;
  m.variant = c.variant;
  m.channels = c.channels;
  m.grid_lat = c.background_grid.lat;
  m.grid_lon = c.background_grid.lon;
  m.embed_dim = c.embed_dim;
  m.n_layers = c.n_layers;
  m.modes_lat = c.modes_lat;
  m.modes_lon = c.modes_lon;
  m.conv_kernel = c.conv_kernel;
  m.stack_width = c.stack_width;
  m.decoder_hidden = c.decoder_hidden;
  m.decoder_layers = c.decoder_layers;
  m.residual_form = c.residual_form;
  m.retain = c.retain;
  m.selection = c.selection;
  m.soft_temperature = c.soft_temperature;
  m.background_skip = c.background_skip;
  m.match_parameters = c.match_parameters;
  m.seed = sub_seed(c.seed, "model");
  return resolve_config(m);
}

}  // namespace fnp
