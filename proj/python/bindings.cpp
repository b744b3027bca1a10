// Python bindings: array-level operations, the variational solver, and
// checkpoint-based assimilation. Fields are (channel, lat, lon) arrays on
// global equiangular grids.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "fnp/checkpoint.hpp"
#include "fnp/dam.hpp"
#include "fnp/decoder.hpp"
#include "fnp/error.hpp"
#include "fnp/harness.hpp"
#include "fnp/metrics.hpp"
#include "fnp/var.hpp"

namespace py = pybind11;
using namespace fnp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor3 to_tensor(const Array& a, const char* what) {
  if (a.ndim() != 3) throw ConfigError(std::string(what) + " must be a (channel, lat, lon) array");
  Tensor3 t(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
            static_cast<std::size_t>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), t.data.begin());
  return t;
}

Array from_values(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  Array out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<ChannelInfo> generic_channels(std::size_t n) {
  std::vector<ChannelInfo> ch;
  for (std::size_t c = 0; c < n; ++c) ch.push_back({"c" + std::to_string(c), 0});
  return ch;
}

Field to_field(const Array& a, const std::vector<ChannelInfo>& channels, const char* what) {
  const Tensor3 t = to_tensor(a, what);
  if (t.c != channels.size())
    throw ConfigError(std::string(what) + " has " + std::to_string(t.c) + " channels, expected " +
                      std::to_string(channels.size()));
  return Field(make_equiangular_grid(t.h, t.w), channels, t.data);
}

Eigen::VectorXd to_vector(const Array& a) {
  if (a.ndim() != 1) throw ConfigError("expected a 1-D array");
  return Eigen::Map<const Eigen::VectorXd>(a.data(), a.shape(0));
}

Eigen::MatrixXd to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ConfigError("expected a 2-D array");
  Eigen::MatrixXd m(a.shape(0), a.shape(1));
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    for (py::ssize_t j = 0; j < a.shape(1); ++j) m(i, j) = a.at(i, j);
  return m;
}

VarProblem to_problem(const Array& x_b, const Array& y, const Array& B, const Array& R, const Array& H) {
  VarProblem p;
  p.x_b = to_vector(x_b);
  p.y = to_vector(y);
  p.B = to_matrix(B);
  p.R = to_matrix(R);
  p.H_op = to_matrix(H);
  return p;
}

Array to_array(const Eigen::VectorXd& v) {
  Array out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.data(), v.data() + v.size(), out.mutable_data());
  return out;
}

ObservationSet to_obs(const Array& lat, const Array& lon, const Array& values,
                      const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask, std::size_t channels) {
  if (lat.ndim() != 1 || lon.ndim() != 1 || lat.shape(0) != lon.shape(0))
    throw ConfigError("lat and lon must be 1-D arrays of equal length");
  const auto n = lat.shape(0);
  if (values.ndim() != 2 || values.shape(0) != n || values.shape(1) != static_cast<py::ssize_t>(channels))
    throw ConfigError("values must have shape (points, " + std::to_string(channels) + ")");
  if (mask.ndim() != 2 || mask.shape(0) != n || mask.shape(1) != values.shape(1))
    throw ConfigError("mask must match the shape of values");
  ObservationSet obs = ObservationSet::empty_set(channels);
  std::vector<double> v(channels);
  std::vector<std::uint8_t> m(channels);
  for (py::ssize_t p = 0; p < n; ++p) {
    for (std::size_t c = 0; c < channels; ++c) {
      m[c] = mask.at(p, static_cast<py::ssize_t>(c)) ? 1 : 0;
      v[c] = m[c] ? values.at(p, static_cast<py::ssize_t>(c)) : kMissing;
    }
    obs.push_back({lat.at(p), lon.at(p)}, v, m);
  }
  return obs;
}

py::dict report_dict(const MetricsReport& r) {
  py::dict rmse;
  for (std::size_t c = 0; c < r.channel_names.size(); ++c) rmse[py::str(r.channel_names[c])] = r.rmse_per_channel[c];
  py::dict d;
  d["experiment_id"] = r.experiment_id;
  d["variant"] = r.variant;
  d["mse"] = r.mse;
  d["mae"] = r.mae;
  d["rmse"] = rmse;
  d["samples"] = r.sample_count;
  return d;
}

class PyCheckpoint {
 public:
  explicit PyCheckpoint(const std::string& path) : ckpt_(load_checkpoint(path)) {}
  explicit PyCheckpoint(Checkpoint ck) : ckpt_(std::move(ck)) {}

  void save(const std::string& path) const { save_checkpoint(ckpt_, path); }
  std::string variant() const { return variant_name(ckpt_.model.variant); }
  std::vector<std::string> channels() const {
    std::vector<std::string> out;
    for (const ChannelInfo& c : ckpt_.model.channels) out.push_back(c.name);
    return out;
  }
  std::pair<std::size_t, std::size_t> grid() const { return {ckpt_.model.grid_lat, ckpt_.model.grid_lon}; }
  std::size_t best_epoch() const { return ckpt_.best_epoch; }
  std::vector<std::pair<double, double>> curve() const {
    std::vector<std::pair<double, double>> out;
    for (const EpochLog& e : ckpt_.curve) out.emplace_back(e.train_nll, e.val_nll);
    return out;
  }

  py::tuple assimilate(const std::optional<Array>& background, const Array& lat, const Array& lon,
                       const Array& values, const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask,
                       std::optional<std::pair<std::size_t, std::size_t>> grid) const {
    const auto& ch = ckpt_.model.channels;
    const ObservationSet obs = to_obs(lat, lon, values, mask, ch.size());
    std::optional<Field> bg;
    if (background) bg = to_field(*background, ch, "background");
    LatLonGrid target;
    if (grid) target = make_equiangular_grid(grid->first, grid->second);
    else if (bg) target = bg->grid;
    else target = make_equiangular_grid(ckpt_.model.grid_lat, ckpt_.model.grid_lon);
    ExampleFields out;
    {
      py::gil_scoped_release release;
      out = fnp::assimilate(ckpt_, target, bg ? &*bg : nullptr, obs);
    }
    const std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(ch.size()),
                                         static_cast<py::ssize_t>(target.n_lat()),
                                         static_cast<py::ssize_t>(target.n_lon())};
    return py::make_tuple(from_values(out.analysis.values, shape), from_values(out.variance.values, shape));
  }

 private:
  Checkpoint ckpt_;
};

py::dict run_experiment(const std::string& config_text, const std::string& checkpoint_path) {
  const ExperimentConfig cfg = parse_config(config_text);
  cfg.validate();
  Checkpoint ck;
  Evaluation ev;
  {
    py::gil_scoped_release release;
    const Dataset train_set = synthesize_split(cfg, Split::Train, cfg.lead_time_h);
    const Dataset val_set = synthesize_split(cfg, Split::Val, cfg.lead_time_h);
    const Dataset test_set = synthesize_split(cfg, Split::Test, cfg.lead_time_h);
    ck = train(cfg, train_set, val_set);
    ev = evaluate(ck, cfg, test_set);
  }
  if (!checkpoint_path.empty()) save_checkpoint(ck, checkpoint_path);
  py::dict d;
  d["analysis"] = report_dict(ev.analysis);
  d["background"] = report_dict(ev.background);
  d["climatology"] = report_dict(ev.climatology);
  d["checkpoint"] = PyCheckpoint(std::move(ck));
  return d;
}

}  // namespace

PYBIND11_MODULE(_fnp, m) {
  m.doc() = "Arbitrary-resolution data assimilation on latitude/longitude grids";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());

  m.def(
      "similarity",
      [](const Array& y, const Array& shared) {
        const Tensor3 s = similarity(to_tensor(y, "y"), to_tensor(shared, "shared"));
        return from_values(s.data, {static_cast<py::ssize_t>(s.h), static_cast<py::ssize_t>(s.w)});
      },
      py::arg("y"), py::arg("shared"), "Per-point Euclidean distance over channels.");

  m.def(
      "selection_mask",
      [](const Array& sim_bg, const Array& sim_obs, const std::string& retain_rule) {
        if (sim_bg.ndim() != 2 || sim_obs.ndim() != 2) throw ConfigError("similarity maps must be 2-D");
        const auto h = static_cast<std::size_t>(sim_bg.shape(0)), w = static_cast<std::size_t>(sim_bg.shape(1));
        Tensor3 a(1, h, w), b(1, static_cast<std::size_t>(sim_obs.shape(0)), static_cast<std::size_t>(sim_obs.shape(1)));
        std::copy(sim_bg.data(), sim_bg.data() + sim_bg.size(), a.data.begin());
        std::copy(sim_obs.data(), sim_obs.data() + sim_obs.size(), b.data.begin());
        const auto mask = selection_mask(a, b, parse_retain_rule(retain_rule));
        py::array_t<bool> out({static_cast<py::ssize_t>(h), static_cast<py::ssize_t>(w)});
        std::copy(mask.begin(), mask.end(), out.mutable_data());
        return out;
      },
      py::arg("sim_bg"), py::arg("sim_obs"), py::arg("retain_rule") = "verbatim",
      "True where the background feature is kept.");

  m.def(
      "select_merge",
      [](const Array& y_bg, const Array& y_obs, const py::array_t<bool, py::array::c_style | py::array::forcecast>& take_bg) {
        const Tensor3 a = to_tensor(y_bg, "y_bg"), b = to_tensor(y_obs, "y_obs");
        std::vector<std::uint8_t> mask(take_bg.data(), take_bg.data() + take_bg.size());
        const Tensor3 out = select_merge(a, b, mask);
        return from_values(out.data, {static_cast<py::ssize_t>(out.c), static_cast<py::ssize_t>(out.h),
                                      static_cast<py::ssize_t>(out.w)});
      },
      py::arg("y_bg"), py::arg("y_obs"), py::arg("take_bg"));

  m.def(
      "latitude_weighted_rmse",
      [](const Array& estimate, const Array& truth) {
        const auto ch = generic_channels(static_cast<std::size_t>(truth.ndim() == 3 ? truth.shape(0) : 0));
        const Field e = to_field(estimate, ch, "estimate"), t = to_field(truth, ch, "truth");
        std::vector<double> out;
        for (std::size_t c = 0; c < ch.size(); ++c) out.push_back(latitude_weighted_rmse(e, t, c));
        return out;
      },
      py::arg("estimate"), py::arg("truth"), "Per-channel latitude-weighted RMSE.");

  m.def(
      "gaussian_nll",
      [](const Array& mean, const Array& variance, const Array& truth) {
        if (mean.size() != variance.size() || mean.size() != truth.size())
          throw ConfigError("mean, variance and truth must have the same size");
        AnalysisDistribution d(1, static_cast<std::size_t>(mean.size()));
        std::copy(mean.data(), mean.data() + mean.size(), d.mean.begin());
        std::copy(variance.data(), variance.data() + variance.size(), d.variance.begin());
        return gaussian_nll(d, std::span<const double>(truth.data(), static_cast<std::size_t>(truth.size())));
      },
      py::arg("mean"), py::arg("variance"), py::arg("truth"), "Mean Gaussian negative log-likelihood.");

  m.def(
      "var_cost",
      [](const Array& x, const Array& x_b, const Array& y, const Array& B, const Array& R, const Array& H) {
        return cost(to_vector(x), to_problem(x_b, y, B, R, H));
      },
      py::arg("x"), py::arg("x_b"), py::arg("y"), py::arg("B"), py::arg("R"), py::arg("H"));
  m.def(
      "var_gradient",
      [](const Array& x, const Array& x_b, const Array& y, const Array& B, const Array& R, const Array& H) {
        return to_array(cost_gradient(to_vector(x), to_problem(x_b, y, B, R, H)));
      },
      py::arg("x"), py::arg("x_b"), py::arg("y"), py::arg("B"), py::arg("R"), py::arg("H"));
  m.def(
      "analytic_analysis",
      [](const Array& x_b, const Array& y, const Array& B, const Array& R, const Array& H) {
        return to_array(analytic_analysis(to_problem(x_b, y, B, R, H)));
      },
      py::arg("x_b"), py::arg("y"), py::arg("B"), py::arg("R"), py::arg("H"), "Minimizer of the variational cost.");

  m.def(
      "sample_observations",
      [](const Array& truth, std::pair<std::size_t, std::size_t> obs_grid, double ratio, std::uint64_t seed) {
        const auto ch = generic_channels(static_cast<std::size_t>(truth.ndim() == 3 ? truth.shape(0) : 0));
        const ObservationSet obs =
            sample_observations(to_field(truth, ch, "truth"), make_equiangular_grid(obs_grid.first, obs_grid.second),
                                ratio, seed);
        const auto n = static_cast<py::ssize_t>(obs.size()), c = static_cast<py::ssize_t>(obs.n_channels);
        Array lat(std::vector<py::ssize_t>{n}), lon(std::vector<py::ssize_t>{n});
        for (py::ssize_t p = 0; p < n; ++p) {
          lat.mutable_at(p) = obs.coords[static_cast<std::size_t>(p)].lat;
          lon.mutable_at(p) = obs.coords[static_cast<std::size_t>(p)].lon;
        }
        py::array_t<bool> mask({n, c});
        std::copy(obs.mask.begin(), obs.mask.end(), mask.mutable_data());
        py::dict d;
        d["lat"] = lat;
        d["lon"] = lon;
        d["values"] = from_values(obs.values, {n, c});
        d["mask"] = mask;
        return d;
      },
      py::arg("truth"), py::arg("obs_grid"), py::arg("ratio"), py::arg("seed"),
      "Observations drawn from a truth array at a fraction of the obs grid's points.");

  m.def(
      "normalize_config", [](const std::string& text) { return format_config(parse_config(text)); }, py::arg("text"),
      "Parses configuration text and returns it with every key spelled out.");

  py::class_<PyCheckpoint>(m, "Checkpoint")
      .def(py::init<const std::string&>(), py::arg("path"))
      .def("save", &PyCheckpoint::save, py::arg("path"))
      .def_property_readonly("variant", &PyCheckpoint::variant)
      .def_property_readonly("channels", &PyCheckpoint::channels)
      .def_property_readonly("grid", &PyCheckpoint::grid)
      .def_property_readonly("best_epoch", &PyCheckpoint::best_epoch)
      .def_property_readonly("curve", &PyCheckpoint::curve, "(train_nll, val_nll) per epoch")
      .def("assimilate", &PyCheckpoint::assimilate, py::arg("background"), py::arg("lat"), py::arg("lon"),
           py::arg("values"), py::arg("mask"), py::arg("grid") = py::none(),
           "Analysis mean and variance; background=None reconstructs from observations alone.");

  m.def("run_experiment", &run_experiment, py::arg("config_text"), py::arg("checkpoint_path") = "",
        "Synthesizes data, trains and evaluates one configuration.");
}
