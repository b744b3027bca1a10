#pragma once

// Experiment harness: configuration, synthetic datasets, training,
// evaluation, the cross-resolution and ablation sweeps, and reports.
//
// Config files are flat `key = value` text; `#` starts a comment. Relative
// paths resolve against $FNP_DATA_DIR (or the working directory when unset).
// Lists are comma separated; grid lists use `HxW` entries.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fnp/checkpoint.hpp"
#include "fnp/metrics.hpp"
#include "fnp/model.hpp"

namespace fnp {

struct GridShape {
  std::size_t lat = 0;
  std::size_t lon = 0;

  bool operator==(const GridShape&) const = default;
};

std::vector<ChannelInfo> default_channels();

struct ExperimentConfig {
  std::string experiment_id = "experiment";
  VariantTag variant = VariantTag::Fnp;
  std::vector<ChannelInfo> channels = default_channels();

  GridShape background_grid{32, 64};
  GridShape obs_grid{32, 64};
  std::vector<GridShape> eval_obs_grids;  // cross-resolution sweep; empty: obs_grid only
  GridShape truth_grid{0, 0};             // 0: finest of obs_grid / eval_obs_grids
  double ratio = 0.1;
  double lead_time_h = 24.0;

  std::size_t epochs = 20;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double clip_norm = 0.0;
  std::size_t batch_size = 1;
  double background_dropout = 0.0;  // chance of training a sample without its background
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;

  std::size_t embed_dim = 128;
  std::size_t n_layers = 4;
  std::size_t modes_lat = 0;
  std::size_t modes_lon = 0;
  std::size_t conv_kernel = 3;
  std::size_t stack_width = 0;
  std::size_t decoder_hidden = 64;
  std::size_t decoder_layers = 2;
  ResidualForm residual_form = ResidualForm::PostSum;
  RetainRule retain = RetainRule::Verbatim;
  SelectionMode selection = SelectionMode::Hard;
  double soft_temperature = 1.0;
  bool background_skip = false;
  bool match_parameters = true;

  std::size_t train_samples = 500;
  std::size_t val_samples = 100;
  std::size_t test_samples = 100;
  std::vector<double> amplitudes;  // per-channel truth std; empty: 1 each
  double spectral_slope = -3.0;
  double cross_channel_corr = 0.5;
  double smoothing_scale = 1.0;
  double noise_amplitude = 0.3;
  double noise_correlation = 3.0;
  std::vector<double> data_lead_times;  // backgrounds written by generate-data; empty: lead_time_h

  std::filesystem::path data_dir = "data";
  std::filesystem::path output_dir = "runs";
  std::filesystem::path checkpoint;  // empty: <output_dir>/<experiment_id>.ckpt

  bool fine_tune = false;
  double fine_tune_fraction = 0.2;
  bool drop_background = false;

  std::vector<VariantTag> variants;  // ablate; empty: the ablation set
  std::vector<double> ratios;        // ablate; empty: {0.01, 0.1}
  std::vector<double> lead_times;    // ablate; empty: {24, 48}
  std::vector<std::size_t> plot_channels{0};

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  LatLonGrid background_lat_lon() const;
  LatLonGrid obs_lat_lon() const;
  GridShape resolved_truth_grid() const;
  std::filesystem::path checkpoint_path() const;
};

/// Throws ConfigError on unknown keys or malformed values. Relative paths
/// are left as written.
ExperimentConfig parse_config(std::string_view text);
/// Reads and parses `path`, then resolves relative paths.
ExperimentConfig load_config(const std::filesystem::path& path);
/// Key/value text that parses back to the same configuration.
std::string format_config(const ExperimentConfig& config);
/// Path under $FNP_DATA_DIR (absolute paths are returned unchanged).
std::filesystem::path resolve_data_path(const std::filesystem::path& path);

ModelConfig model_config_for(const ExperimentConfig& config);

enum class Split { Train, Val, Test };
std::string split_name(Split split);

struct Sample {
  Field truth_fine;  // on the truth grid; observations are read from it
  Field truth;       // on the background grid; the evaluation target
  Field background;
  std::uint64_t seed = 0;
};

using Dataset = std::vector<Sample>;

/// Deterministic synthetic split (no disk access).
Dataset synthesize_split(const ExperimentConfig& config, Split split, double lead_time_h);
/// Writes every split for every configured lead time under data_dir, with
/// one manifest per split and lead: `<split>_<lead>h.manifest`. The test
/// split also gets the evaluation observations, `test/obs_<index>.fnpobs`.
void generate_data(const ExperimentConfig& config, std::ostream* log = nullptr);
std::filesystem::path manifest_path(const ExperimentConfig& config, Split split, double lead_time_h);
/// Loads a split written by generate_data; throws ConfigError when its grids
/// disagree with the configuration.
Dataset load_split(const ExperimentConfig& config, Split split, double lead_time_h);

/// Observations of one sample; ratio and grid come from the configuration.
ObservationSet observe(const Sample& sample, const ExperimentConfig& config, std::uint64_t seed);

/// AdamW on the Gaussian NLL. Observations are redrawn every epoch from
/// named sub-seeds; the returned checkpoint holds the best-validation
/// parameters (the initialization when epochs = 0). `start` continues from
/// a checkpoint (fine-tuning) and keeps its normalization. Throws
/// NumericError on a non-finite loss.
Checkpoint train(const ExperimentConfig& config, const Dataset& train_set, const Dataset& val_set,
                 const Checkpoint* start = nullptr, std::ostream* log = nullptr);

/// Mean validation NLL of a model on a dataset (fixed observation draws).
double validation_nll(AssimilationModel& model, const Normalizer& norm, const ExperimentConfig& config,
                      const Dataset& data);

/// Fields of one test sample for plotting (physical units).
struct ExampleFields {
  Field truth;
  Field background;
  Field analysis;
  Field variance;
};

struct Evaluation {
  MetricsReport analysis;
  MetricsReport background;   // the background's own scores
  MetricsReport climatology;  // the training-mean predictor
  std::optional<ExampleFields> example;
};

/// Assimilation over the test set. Throws ConfigError for interp_first at an
/// observation grid it was not trained or fine-tuned on.
Evaluation evaluate(const Checkpoint& ckpt, const ExperimentConfig& config, const Dataset& test_set);

/// Analysis of one background/observation pair in physical units; `background`
/// may be null (reconstruction on `target`).
ExampleFields assimilate(const Checkpoint& ckpt, const LatLonGrid& target, const Field* background,
                         const ObservationSet& obs);

/// Evaluates at every grid of config.eval_obs_grids; with config.fine_tune,
/// first trains for fine_tune_fraction of the epochs at that grid.
std::vector<Evaluation> cross_resolution_eval(const Checkpoint& ckpt, const ExperimentConfig& config,
                                              const Dataset& train_set, const Dataset& val_set,
                                              const Dataset& test_set, std::ostream* log = nullptr);

/// Trains and evaluates every variant x ratio x lead combination on shared
/// data and seeds. Datasets come from disk when manifests exist, otherwise
/// they are synthesized.
std::vector<Evaluation> ablate(const ExperimentConfig& config, std::ostream* log = nullptr);

/// Report files: `<dir>/<experiment_id>.report.json` per report plus example
/// fields for plotting.
void save_evaluation(const Evaluation& eval, const std::filesystem::path& dir);
std::vector<MetricsReport> load_reports(const std::filesystem::path& dir);
void write_report_json(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport read_report_json(const std::filesystem::path& path);

/// CSV columns: experiment_id, variant, obs_resolution_deg, ratio,
/// lead_time_h, fine_tuned, channel, rmse, mse, mae, seed. Throws
/// ConfigError on an empty list or duplicate experiment ids.
void write_metrics_csv(const std::vector<MetricsReport>& reports, const std::filesystem::path& path);
void write_summary(const std::vector<MetricsReport>& reports, const std::filesystem::path& path);
/// Binary PPM rasters of truth, background, analysis, increment, error and
/// variance for `channel`; returns the written paths.
std::vector<std::filesystem::path> write_plots(const ExampleFields& example, std::size_t channel,
                                               const std::filesystem::path& dir, const std::string& prefix);
/// Collects reports and example fields from `in_dir` and writes the CSV,
/// summary and plots to `out_dir`.
void build_report(const std::filesystem::path& in_dir, const std::filesystem::path& out_dir,
                  const std::vector<std::size_t>& plot_channels);

}  // namespace fnp
