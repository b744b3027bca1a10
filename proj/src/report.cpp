#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "fnp/error.hpp"
#include "fnp/harness.hpp"
#include "fnp/io.hpp"

namespace fnp {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kReportSuffix = ".report.json";
constexpr const char* kExampleKinds[] = {"truth", "background", "analysis", "variance"};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

fs::path example_path(const fs::path& dir, const std::string& id, const char* kind) {
  return dir / (id + ".example." + kind + ".fnpgrid");
}

struct Rgb {
  unsigned char r, g, b;
};

Rgb lerp(Rgb a, Rgb b, double t) {
  auto mix = [t](unsigned char x, unsigned char y) {
    return static_cast<unsigned char>(std::lround(x + t * (static_cast<double>(y) - x)));
  };
  return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

Rgb ramp(const std::vector<Rgb>& stops, double t) {
  t = std::clamp(t, 0.0, 1.0) * static_cast<double>(stops.size() - 1);
  const auto k = std::min(static_cast<std::size_t>(t), stops.size() - 2);
  return lerp(stops[k], stops[k + 1], t - static_cast<double>(k));
}

const std::vector<Rgb> kSequential = {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
const std::vector<Rgb> kDiverging = {{33, 102, 172}, {247, 247, 247}, {178, 24, 43}};

void write_ppm(const std::vector<double>& values, std::size_t h, std::size_t w, bool diverging, const fs::path& path) {
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (diverging) {
    hi = std::max(std::abs(lo), std::abs(hi));
    lo = -hi;
  }
  const double span = hi > lo ? hi - lo : 1.0;
  const std::size_t scale = std::max<std::size_t>(1, 256 / w);
  const std::size_t ph = h * scale, pw = w * scale;
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot open '" + path.string() + "' for writing");
  os << "P6\n" << pw << " " << ph << "\n255\n";
  for (std::size_t y = 0; y < ph; ++y) {
    const std::size_t i = h - 1 - y / scale;  // north up
    for (std::size_t x = 0; x < pw; ++x) {
      const double v = values[i * w + x / scale];
      const Rgb c = ramp(diverging ? kDiverging : kSequential, (v - lo) / span);
      os.put(static_cast<char>(c.r)).put(static_cast<char>(c.g)).put(static_cast<char>(c.b));
    }
  }
  if (!os) throw ConfigError("failed writing '" + path.string() + "'");
}

std::vector<double> channel_values(const Field& f, std::size_t c) {
  const auto span = f.channel(c);
  return {span.begin(), span.end()};
}

}  // namespace

void write_report_json(const MetricsReport& r, const fs::path& path) {
  r.validate();
  json rmse = json::object();
  for (std::size_t c = 0; c < r.channel_names.size(); ++c) rmse[r.channel_names[c]] = r.rmse_per_channel[c];
  const json j = {{"experiment_id", r.experiment_id},
                  {"variant", r.variant},
                  {"obs_resolution_deg", r.obs_resolution_deg},
                  {"ratio", r.ratio},
                  {"lead_time_h", r.lead_time_h},
                  {"fine_tuned", r.fine_tuned},
                  {"seed", r.seed},
                  {"mse", r.mse},
                  {"mae", r.mae},
                  {"channels", r.channel_names},
                  {"rmse", rmse},
                  {"sample_count", r.sample_count}};
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot open '" + path.string() + "' for writing");
  os << j.dump(2) << "\n";
}

MetricsReport read_report_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open report '" + path.string() + "'");
  MetricsReport r;
  try {
    const json j = json::parse(is);
    r.experiment_id = j.at("experiment_id");
    r.variant = j.at("variant");
    r.obs_resolution_deg = j.at("obs_resolution_deg");
    r.ratio = j.at("ratio");
    r.lead_time_h = j.at("lead_time_h");
    r.fine_tuned = j.at("fine_tuned");
    r.seed = j.at("seed");
    r.mse = j.at("mse");
    r.mae = j.at("mae");
    r.channel_names = j.at("channels").get<std::vector<std::string>>();
    for (const auto& name : r.channel_names) r.rmse_per_channel.push_back(j.at("rmse").at(name));
    r.sample_count = j.at("sample_count");
  } catch (const json::exception& e) {
    throw FormatError("report", std::string(e.what()) + " in '" + path.string() + "'");
  }
  r.validate();
  return r;
}

void save_evaluation(const Evaluation& eval, const fs::path& dir) {
  fs::create_directories(dir);
  for (const MetricsReport* r : {&eval.analysis, &eval.background, &eval.climatology})
    write_report_json(*r, dir / (r->experiment_id + kReportSuffix));
  if (eval.example) {
    const std::string& id = eval.analysis.experiment_id;
    write_field(eval.example->truth, example_path(dir, id, "truth"), false);
    write_field(eval.example->background, example_path(dir, id, "background"), false);
    write_field(eval.example->analysis, example_path(dir, id, "analysis"), false);
    write_field(eval.example->variance, example_path(dir, id, "variance"), false);
  }
}

std::vector<MetricsReport> load_reports(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("report input '" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && ends_with(entry.path().filename().string(), kReportSuffix))
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<MetricsReport> out;
  for (const auto& f : files) out.push_back(read_report_json(f));
  return out;
}

void write_metrics_csv(const std::vector<MetricsReport>& reports, const fs::path& path) {
  if (reports.empty()) throw ConfigError("report: no metrics to write");
  std::set<std::string> ids;
  for (const auto& r : reports)
    if (!ids.insert(r.experiment_id).second) throw ConfigError("report: duplicate experiment id '" + r.experiment_id + "'");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot open '" + path.string() + "' for writing");
  os << "experiment_id,variant,obs_resolution_deg,ratio,lead_time_h,fine_tuned,channel,rmse,mse,mae,seed\n";
  char buf[512];
  for (const auto& r : reports) {
    r.validate();
    for (std::size_t c = 0; c < r.channel_names.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%s,%s,%.10g,%.10g,%.10g,%s,%s,%.10g,%.10g,%.10g,%llu\n", r.experiment_id.c_str(),
                    r.variant.c_str(), r.obs_resolution_deg, r.ratio, r.lead_time_h, r.fine_tuned ? "true" : "false",
                    r.channel_names[c].c_str(), r.rmse_per_channel[c], r.mse, r.mae,
                    static_cast<unsigned long long>(r.seed));
      os << buf;
    }
  }
}

void write_summary(const std::vector<MetricsReport>& reports, const fs::path& path) {
  if (reports.empty()) throw ConfigError("report: no metrics to summarize");
  std::map<std::string, const MetricsReport*> by_id;
  for (const auto& r : reports) by_id[r.experiment_id] = &r;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot open '" + path.string() + "' for writing");
  char buf[512];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-48s %-14s res %.4g ratio %.4g lead %.4gh%s  MSE %.6g  MAE %.6g",
                  r.experiment_id.c_str(), r.variant.c_str(), r.obs_resolution_deg, r.ratio, r.lead_time_h,
                  r.fine_tuned ? " ft" : "", r.mse, r.mae);
    os << buf;
    for (std::size_t c = 0; c < r.channel_names.size(); ++c) {
      std::snprintf(buf, sizeof buf, "  %s %.6g", r.channel_names[c].c_str(), r.rmse_per_channel[c]);
      os << buf;
    }
    const auto bg = by_id.find(r.experiment_id + ".background");
    if (bg != by_id.end() && bg->second->mse > 0.0) {
      std::snprintf(buf, sizeof buf, "  (%.1f%% MSE vs background)", 100.0 * (r.mse / bg->second->mse - 1.0));
      os << buf;
    }
    os << "\n";
  }
}

std::vector<fs::path> write_plots(const ExampleFields& ex, std::size_t channel, const fs::path& dir,
                                  const std::string& prefix) {
  if (channel >= ex.analysis.n_channels()) throw ConfigError("plot channel out of range");
  fs::create_directories(dir);
  const std::size_t h = ex.analysis.grid.n_lat(), w = ex.analysis.grid.n_lon();
  const std::string name = prefix + "." + ex.analysis.channels[channel].name;
  std::vector<fs::path> out;
  auto emit = [&](const char* kind, const std::vector<double>& v, bool diverging) {
    out.push_back(dir / (name + "." + kind + ".ppm"));
    write_ppm(v, h, w, diverging, out.back());
  };
  const auto analysis = channel_values(ex.analysis, channel);
  emit("analysis", analysis, false);
  emit("variance", channel_values(ex.variance, channel), false);
  if (!ex.truth.values.empty()) {
    const auto truth = channel_values(ex.truth, channel);
    emit("truth", truth, false);
    std::vector<double> err(analysis.size());
    for (std::size_t i = 0; i < err.size(); ++i) err[i] = analysis[i] - truth[i];
    emit("error", err, true);
  }
  if (!ex.background.values.empty()) {
    const auto bg = channel_values(ex.background, channel);
    emit("background", bg, false);
    std::vector<double> inc(analysis.size());
    for (std::size_t i = 0; i < inc.size(); ++i) inc[i] = analysis[i] - bg[i];
    emit("increment", inc, true);
  }
  return out;
}

void build_report(const fs::path& in_dir, const fs::path& out_dir, const std::vector<std::size_t>& plot_channels) {
  const std::vector<MetricsReport> reports = load_reports(in_dir);
  if (reports.empty()) throw ConfigError("report: no '*" + std::string(kReportSuffix) + "' files in '" + in_dir.string() + "'");
  fs::create_directories(out_dir);
  write_metrics_csv(reports, out_dir / "metrics.csv");
  write_summary(reports, out_dir / "summary.txt");
  for (const auto& r : reports) {
    if (!fs::exists(example_path(in_dir, r.experiment_id, "analysis"))) continue;
    ExampleFields ex;
    for (const char* kind : kExampleKinds) {
      const fs::path p = example_path(in_dir, r.experiment_id, kind);
      if (!fs::exists(p)) continue;
      Field f = read_field(p);
      if (std::string(kind) == "truth") ex.truth = std::move(f);
      else if (std::string(kind) == "background") ex.background = std::move(f);
      else if (std::string(kind) == "analysis") ex.analysis = std::move(f);
      else ex.variance = std::move(f);
    }
    if (ex.variance.values.empty()) ex.variance = Field(ex.analysis.grid, ex.analysis.channels);
    for (std::size_t c : plot_channels)
      if (c < ex.analysis.n_channels()) write_plots(ex, c, out_dir / "plots", r.experiment_id);
  }
}

}  // namespace fnp
