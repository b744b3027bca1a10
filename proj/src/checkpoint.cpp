#include "fnp/checkpoint.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "byte_io.hpp"
#include "fnp/error.hpp"

namespace fnp {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'F', 'N', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint64_t kMaxHeader = 1ull << 30;

json model_to_json(const ModelConfig& c) {
  json ch = json::array();
  for (const auto& info : c.channels) ch.push_back({{"name", info.name}, {"group", info.group}});
  return {{"variant", variant_name(c.variant)},
          {"channels", ch},
          {"grid_lat", c.grid_lat},
          {"grid_lon", c.grid_lon},
          {"embed_dim", c.embed_dim},
          {"n_layers", c.n_layers},
          {"modes_lat", c.modes_lat},
          {"modes_lon", c.modes_lon},
          {"conv_kernel", c.conv_kernel},
          {"stack_width", c.stack_width},
          {"decoder_hidden", c.decoder_hidden},
          {"decoder_layers", c.decoder_layers},
          {"share_encoders", c.share_encoders},
          {"residual_form", residual_form_name(c.residual_form)},
          {"retain", retain_rule_name(c.retain)},
          {"selection", selection_mode_name(c.selection)},
          {"soft_temperature", c.soft_temperature},
          {"background_skip", c.background_skip},
          {"match_parameters", c.match_parameters},
          {"seed", c.seed}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  for (const auto& ch : j.at("channels"))
    c.channels.push_back({ch.at("name").get<std::string>(), ch.at("group").get<std::uint32_t>()});
  c.grid_lat = j.at("grid_lat");
  c.grid_lon = j.at("grid_lon");
  c.embed_dim = j.at("embed_dim");
  c.n_layers = j.at("n_layers");
  c.modes_lat = j.at("modes_lat");
  c.modes_lon = j.at("modes_lon");
  c.conv_kernel = j.at("conv_kernel");
  c.stack_width = j.at("stack_width");
  c.decoder_hidden = j.at("decoder_hidden");
  c.decoder_layers = j.at("decoder_layers");
  c.share_encoders = j.at("share_encoders");
  c.residual_form = parse_residual_form(j.at("residual_form").get<std::string>());
  c.retain = parse_retain_rule(j.at("retain").get<std::string>());
  c.selection = parse_selection_mode(j.at("selection").get<std::string>());
  c.soft_temperature = j.at("soft_temperature");
  c.background_skip = j.at("background_skip");
  c.match_parameters = j.at("match_parameters");
  c.seed = j.at("seed");
  return c;
}

// JSON has no NaN/inf; the curve and statistics are finite by construction
// (training aborts on non-finite losses), checked here to fail early.
double finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("checkpoint: non-finite ") + what);
  return v;
}

}  // namespace

void Checkpoint::capture(AssimilationModel& model) {
  parameters.clear();
  for (const Parameter* p : model.parameters()) parameters.push_back({p->name, p->shape, p->value});
}

void Checkpoint::restore(AssimilationModel& model) const {
  const ParamList ps = model.parameters();
  if (ps.size() != parameters.size())
    throw FormatError("parameters", "checkpoint holds " + std::to_string(parameters.size()) +
                                        " parameter arrays, model expects " + std::to_string(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const ParameterBlob& b = parameters[i];
    if (b.name != ps[i]->name || b.shape != ps[i]->shape || b.values.size() != ps[i]->size())
      throw FormatError("parameters", "parameter '" + b.name + "' does not match model parameter '" +
                                          ps[i]->name + "'");
    ps[i]->value = b.values;
  }
}

AssimilationModel Checkpoint::instantiate() const {
  AssimilationModel built(model);
  restore(built);
  return built;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json curve = json::array();
  for (const auto& e : ckpt.curve)
    curve.push_back({{"epoch", e.epoch},
                     {"train_nll", finite(e.train_nll, "train loss")},
                     {"val_nll", finite(e.val_nll, "validation loss")}});
  json params = json::array();
  for (const auto& b : ckpt.parameters) params.push_back({{"name", b.name}, {"shape", b.shape}});
  for (double s : ckpt.normalizer.stddev) finite(s, "normalizer statistic");
  for (double m : ckpt.normalizer.mean) finite(m, "normalizer statistic");
  const json header = {{"model", model_to_json(ckpt.model)},
                       {"normalizer", {{"mean", ckpt.normalizer.mean}, {"stddev", ckpt.normalizer.stddev}}},
                       {"train_obs_lat", ckpt.train_obs_lat},
                       {"train_obs_lon", ckpt.train_obs_lon},
                       {"fine_tuned", ckpt.fine_tuned},
                       {"initial_val_nll", finite(ckpt.initial_val_nll, "initial validation loss")},
                       {"curve", curve},
                       {"best_epoch", ckpt.best_epoch},
                       {"config_echo", ckpt.config_echo},
                       {"parameters", params}};
  const std::string text = header.dump();
  detail::ByteWriter w;
  w.put_bytes(kMagic, 8);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(text.size());
  w.put_bytes(text.data(), text.size());
  for (const auto& b : ckpt.parameters)
    for (double v : b.values) w.put<double>(v);
  w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::ByteReader r(path);
  if (r.get_string(8, "magic") != std::string(kMagic, 8)) throw FormatError("magic", "not an FNPCKPT1 file");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("version", "checkpoint format version " + std::to_string(version) + ", expected " +
                                     std::to_string(kCheckpointVersion));
  const auto len = r.get<std::uint64_t>("header");
  if (len > kMaxHeader) throw FormatError("header", "implausible header length");
  const std::string text = r.get_string(static_cast<std::size_t>(len), "header");

  Checkpoint ck;
  std::size_t total = 0;
  try {
    const json h = json::parse(text);
    ck.model = model_from_json(h.at("model"));
    ck.normalizer.mean = h.at("normalizer").at("mean").get<std::vector<double>>();
    ck.normalizer.stddev = h.at("normalizer").at("stddev").get<std::vector<double>>();
    ck.train_obs_lat = h.at("train_obs_lat");
    ck.train_obs_lon = h.at("train_obs_lon");
    ck.fine_tuned = h.at("fine_tuned");
    ck.initial_val_nll = h.at("initial_val_nll");
    for (const auto& e : h.at("curve")) ck.curve.push_back({e.at("epoch"), e.at("train_nll"), e.at("val_nll")});
    ck.best_epoch = h.at("best_epoch");
    ck.config_echo = h.at("config_echo");
    for (const auto& p : h.at("parameters")) {
      ParameterBlob b;
      b.name = p.at("name");
      b.shape = p.at("shape").get<std::vector<std::size_t>>();
      std::size_t n = 1;
      for (std::size_t d : b.shape) n *= d;
      b.values.resize(n);
      total += n;
      ck.parameters.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw FormatError("header", e.what());
  } catch (const ConfigError& e) {
    throw FormatError("header", e.what());
  }
  if (ck.normalizer.mean.size() != ck.model.channels.size() || ck.normalizer.stddev.size() != ck.model.channels.size())
    throw FormatError("header", "normalizer does not match the channel list");
  r.require(total * sizeof(double), "parameters");
  for (auto& b : ck.parameters)
    for (double& v : b.values) v = r.get<double>("parameters");
  if (r.remaining() != 0) throw FormatError("parameters", "trailing bytes after parameter data");
  return ck;
}

}  // namespace fnp
