#pragma once

// Assimilation models: the Fourier neural process and its comparison
// variants behind one forward/backward contract. All inputs and outputs are
// in standardized (z-scored) units.

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fnp/dam.hpp"
#include "fnp/decoder.hpp"
#include "fnp/encoder.hpp"
#include "fnp/nfl.hpp"

namespace fnp {

enum class VariantTag { Fnp, FnpNoNfl, FnpNoDam, FnpNoSvd, ConvCnp, InterpFirst };

std::string variant_name(VariantTag tag);
/// Throws ConfigError for an unknown tag.
VariantTag parse_variant(std::string_view name);
const std::vector<VariantTag>& all_variants();

/// Config-file spellings of the architecture switches; parsers throw
/// ConfigError on unknown names.
std::string residual_form_name(ResidualForm form);
ResidualForm parse_residual_form(std::string_view name);
std::string retain_rule_name(RetainRule rule);
RetainRule parse_retain_rule(std::string_view name);
std::string selection_mode_name(SelectionMode mode);
SelectionMode parse_selection_mode(std::string_view name);

struct ModelConfig {
  VariantTag variant = VariantTag::Fnp;
  std::vector<ChannelInfo> channels;
  std::size_t grid_lat = 32;  // background grid the model is sized for
  std::size_t grid_lon = 64;
  std::size_t embed_dim = 128;
  std::size_t n_layers = 4;
  std::size_t modes_lat = 0;  // 0: a quarter of the grid
  std::size_t modes_lon = 0;
  std::size_t conv_kernel = 3;   // local branch of each feature layer
  std::size_t stack_width = 0;   // ConvCNP only; 0: matched
  std::size_t decoder_hidden = 64;
  std::size_t decoder_layers = 2;
  bool share_encoders = false;
  ResidualForm residual_form = ResidualForm::PostSum;
  RetainRule retain = RetainRule::Verbatim;
  SelectionMode selection = SelectionMode::Hard;
  double soft_temperature = 1.0;
  bool background_skip = false;
  bool match_parameters = true;
  std::uint64_t seed = 0;
};

/// Fills defaults (mode counts) and, when `match_parameters`, adjusts the
/// variant's free size knob (stack kernel, embed dim or stack width) so its
/// parameter count is as close as possible to the full model's.
ModelConfig resolve_config(const ModelConfig& config);

/// Parameter count of the model `config` describes, without building it.
std::size_t expected_parameter_count(const ModelConfig& config);

/// Cell-average of observations onto `grid`: each present value joins the
/// cell containing its point; cells without data are omitted.
ObservationSet aggregate_to_grid(const ObservationSet& obs, const LatLonGrid& grid);

/// Grid on which an observation set is embedded: the global grid of its
/// source resolution when the target is a global grid, else the target.
LatLonGrid observation_reference_grid(const ObservationSet& obs, const LatLonGrid& target);

class AssimilationModel {
 public:
  struct Cache;

  /// `config` must already be resolved. Parameters are initialized from
  /// sub-seeds of config.seed.
  explicit AssimilationModel(const ModelConfig& config);
  ~AssimilationModel();
  AssimilationModel(AssimilationModel&&) noexcept;
  AssimilationModel& operator=(AssimilationModel&&) noexcept;

  const ModelConfig& config() const { return config_; }
  VariantTag variant() const { return config_.variant; }

  /// Analysis at every point of `target`. `background` may be null
  /// (reconstruction: the background set is empty). Channel-major output.
  AnalysisDistribution forward(const LatLonGrid& target, const Field* background, const ObservationSet& obs,
                               Cache* cache = nullptr) const;
  void backward(const Cache& cache, const NllGradients& grad);

  ParamList parameters();
  std::size_t parameter_count();
  /// Width of the feature maps entering the stacks.
  std::size_t feature_width() const;

 private:
  ModelConfig config_;
  std::unique_ptr<SvdEncoder> enc_bg_, enc_obs_;
  std::unique_ptr<FeatureStack> stack_bg_, stack_obs_;
  std::unique_ptr<Dam> dam_;
  std::unique_ptr<Conv2d> merge_;          // without DAM: conv over [bg, aligned obs]
  std::unique_ptr<PointwiseLinear> lift_;  // ConvCNP: [bg, obs] -> stack width
  std::unique_ptr<Decoder> decoder_;

  SvdEncoder& obs_encoder() { return config_.share_encoders ? *enc_bg_ : *enc_obs_; }
  const SvdEncoder& obs_encoder() const { return config_.share_encoders ? *enc_bg_ : *enc_obs_; }
};

struct AssimilationModel::Cache {
  LatLonGrid target, obs_ref;
  ConditionalSet bg_set, obs_set;
  SvdEncoder::Cache enc_bg, enc_obs;
  FeatureMap e_bg, e_obs;
  FeatureStack::Cache st_bg, st_obs;
  FeatureMap f_bg, f_obs;
  Dam::Cache dam;
  Tensor3 merge_in;  // without DAM / ConvCNP lift input
  FeatureMap lifted;
  FeatureMap rep;
  NormalizedCoords targets;
  Decoder::Cache dec;
  Tensor3 raw;
};

}  // namespace fnp
