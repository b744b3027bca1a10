#include <cmath>
#include <cstdio>
#include <ostream>

#include "fnp/error.hpp"
#include "fnp/harness.hpp"
#include "fnp/io.hpp"
#include "fnp/rng.hpp"
#include "fnp/synth.hpp"

namespace fnp {

namespace {

std::string lead_tag(double lead_h) {
  char buf[32];
  if (lead_h == std::floor(lead_h)) {
    std::snprintf(buf, sizeof buf, "%.0fh", lead_h);
  } else {
    std::snprintf(buf, sizeof buf, "%gh", lead_h);
    for (char* p = buf; *p; ++p)
      if (*p == '.') *p = 'p';
  }
  return buf;
}

std::string index_tag(std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

std::size_t split_size(const ExperimentConfig& c, Split s) {
  switch (s) {
    case Split::Train:
      return c.train_samples;
    case Split::Val:
      return c.val_samples;
    case Split::Test:
      return c.test_samples;
  }
  return 0;
}

FieldSpec field_spec(const ExperimentConfig& c) {
  FieldSpec spec;
  spec.channels = c.channels;
  spec.spectral_slope = c.spectral_slope;
  spec.amplitude = c.amplitudes.empty() ? std::vector<double>(c.channels.size(), 1.0) : c.amplitudes;
  spec.cross_channel_corr = c.cross_channel_corr;
  return spec;
}

BackgroundSpec background_spec(const ExperimentConfig& c, double lead_time_h) {
  BackgroundSpec spec;
  spec.lead_time_h = lead_time_h;
  spec.smoothing_scale = c.smoothing_scale;
  spec.noise_amplitude = c.noise_amplitude;
  spec.noise_correlation_length = c.noise_correlation;
  return spec;
}

std::vector<double> data_leads(const ExperimentConfig& c) {
  return c.data_lead_times.empty() ? std::vector<double>{c.lead_time_h} : c.data_lead_times;
}

Sample make_sample(const ExperimentConfig& c, Split split, std::size_t i, double lead_time_h) {
  const GridShape tg = c.resolved_truth_grid();
  const std::string name = split_name(split);
  Sample s;
  s.seed = sub_seed(c.data_seed, "sample." + name, i);
  s.truth_fine = generate_truth(field_spec(c), make_equiangular_grid(tg.lat, tg.lon), sub_seed(s.seed, "truth"));
  s.truth = resample_bilinear(s.truth_fine, c.background_lat_lon());
  s.background = generate_background(s.truth, background_spec(c, lead_time_h), sub_seed(s.seed, "background"));
  return s;
}

}  // namespace

std::string split_name(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  throw ConfigError("unknown split");
}

Dataset synthesize_split(const ExperimentConfig& config, Split split, double lead_time_h) {
  config.validate();
  Dataset out;
  const std::size_t n = split_size(config, split);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_sample(config, split, i, lead_time_h));
  return out;
}

std::filesystem::path manifest_path(const ExperimentConfig& config, Split split, double lead_time_h) {
  return config.data_dir / (split_name(split) + "_" + lead_tag(lead_time_h) + ".manifest");
}

void generate_data(const ExperimentConfig& config, std::ostream* log) {
  config.validate();
  namespace fs = std::filesystem;
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    const std::string name = split_name(split);
    fs::create_directories(config.data_dir / name);
    const std::size_t n = split_size(config, split);
    std::vector<std::vector<SampleRecord>> records(data_leads(config).size());
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<double> leads = data_leads(config);
      for (std::size_t l = 0; l < leads.size(); ++l) {
        const Sample s = make_sample(config, split, i, leads[l]);
        const std::string truth_rel = name + "/truth_" + index_tag(i) + ".fnpgrid";
        const std::string bg_rel = name + "/background_" + lead_tag(leads[l]) + "_" + index_tag(i) + ".fnpgrid";
        if (l == 0) {
          write_field(s.truth_fine, config.data_dir / truth_rel);
          // Test observations use the evaluation draw, so `assimilate` on
          // them reproduces `evaluate`.
          if (split == Split::Test)
            write_obs(observe(s, config, sub_seed(config.seed, "test.obs", i)),
                      config.data_dir / (name + "/obs_" + index_tag(i) + ".fnpobs"));
        }
        write_field(s.background, config.data_dir / bg_rel);
        records[l].push_back({truth_rel, bg_rel, leads[l], s.seed});
      }
    }
    for (std::size_t l = 0; l < records.size(); ++l) {
      const fs::path mp = manifest_path(config, split, data_leads(config)[l]);
      write_manifest(records[l], mp);
      if (log) *log << "wrote " << records[l].size() << " samples to " << mp.string() << "\n";
    }
  }
}

Dataset load_split(const ExperimentConfig& config, Split split, double lead_time_h) {
  const auto path = manifest_path(config, split, lead_time_h);
  const auto records = read_manifest(path);
  const GridShape tg = config.resolved_truth_grid();
  const LatLonGrid bg_grid = config.background_lat_lon();
  Dataset out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Sample s;
    s.seed = r.seed;
    s.truth_fine = read_field(config.data_dir / r.truth_path);
    s.background = read_field(config.data_dir / r.background_path);
    if (s.truth_fine.grid.n_lat() != tg.lat || s.truth_fine.grid.n_lon() != tg.lon)
      throw ConfigError("dataset '" + path.string() + "': truth grid does not match truth_grid");
    if (!s.background.grid.same_as(bg_grid))
      throw ConfigError("dataset '" + path.string() + "': background grid does not match background_grid");
    if (s.truth_fine.channels != config.channels || s.background.channels != config.channels)
      throw ConfigError("dataset '" + path.string() + "': channels do not match the configuration");
    if (std::abs(r.lead_time_h - lead_time_h) > 1e-9)
      throw ConfigError("dataset '" + path.string() + "': lead time does not match");
    s.truth = resample_bilinear(s.truth_fine, bg_grid);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw ConfigError("dataset '" + path.string() + "' is empty");
  return out;
}

ObservationSet observe(const Sample& sample, const ExperimentConfig& config, std::uint64_t seed) {
  return sample_observations(sample.truth_fine, config.obs_lat_lon(), config.ratio, seed);
}

}  // namespace fnp
