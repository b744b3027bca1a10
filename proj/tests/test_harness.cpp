#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fnp/checkpoint.hpp"
#include "fnp/error.hpp"
#include "fnp/harness.hpp"

using namespace fnp;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "fnp_test_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.experiment_id = "tiny";
  c.channels = {{"a", 0}, {"b", 1}};
  c.amplitudes = {2.0, 0.5};
  c.background_grid = {8, 16};
  c.obs_grid = {8, 16};
  c.ratio = 0.2;
  c.epochs = 2;
  c.learning_rate = 1e-3;
  c.seed = 3;
  c.data_seed = 4;
  c.embed_dim = 3;
  c.n_layers = 1;
  c.modes_lat = 2;
  c.modes_lon = 4;
  c.decoder_hidden = 6;
  c.train_samples = 6;
  c.val_samples = 3;
  c.test_samples = 3;
  return c;
}

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b)); }

void check_same_metrics(const MetricsReport& a, const MetricsReport& b, double tol) {
  CHECK(rel_close(a.mse, b.mse, tol));
  CHECK(rel_close(a.mae, b.mae, tol));
  REQUIRE(a.rmse_per_channel.size() == b.rmse_per_channel.size());
  for (std::size_t c = 0; c < a.rmse_per_channel.size(); ++c)
    CHECK(rel_close(a.rmse_per_channel[c], b.rmse_per_channel[c], tol));
}

std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_CASE("config parse, format and round-trip") {
  const ExperimentConfig c = parse_config(
      "# comment line\n"
      "experiment_id = run_a  # trailing comment\n"
      "variant = fnp_no_dam\n"
      "channels = z500:0, t2m:1\n"
      "background_grid = 16x32\n"
      "eval_obs_grids = 16x32,32x64\n"
      "ratio = 0.05\n"
      "retain_rule = prose\n"
      "selection = soft\n"
      "fine_tune = true\n"
      "variants = fnp,fnp_no_nfl\n"
      "data_lead_times = 24,48\n");
  CHECK(c.experiment_id == "run_a");
  CHECK(c.variant == VariantTag::FnpNoDam);
  REQUIRE(c.channels.size() == 2);
  CHECK(c.channels[1] == ChannelInfo{"t2m", 1});
  CHECK(c.background_grid == GridShape{16, 32});
  CHECK(c.eval_obs_grids.size() == 2);
  CHECK(c.ratio == 0.05);
  CHECK(c.retain == RetainRule::Prose);
  CHECK(c.selection == SelectionMode::Soft);
  CHECK(c.fine_tune);
  CHECK(c.variants.size() == 2);
  CHECK(c.resolved_truth_grid() == GridShape{32, 64});

  const ExperimentConfig back = parse_config(format_config(c));
  CHECK(format_config(back) == format_config(c));
  const ExperimentConfig t = tiny_config();
  CHECK(format_config(parse_config(format_config(t))) == format_config(t));
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_config("no_such_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs = 1\nepochs = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("epochs = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("ratio = abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("background_grid = 16by32\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("variant = best\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("just some words\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("ratio = 1.5\n").validate(), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/fnp.cfg"), ConfigError);
}

TEST_CASE("synthetic splits are deterministic and written datasets load back") {
  ExperimentConfig c = tiny_config();
  const Dataset a = synthesize_split(c, Split::Train, 24.0);
  const Dataset b = synthesize_split(c, Split::Train, 24.0);
  REQUIRE(a.size() == 6);
  CHECK(a[2].truth.values == b[2].truth.values);
  CHECK(a[2].background.values == b[2].background.values);
  CHECK(a[0].truth.values != a[1].truth.values);

  const fs::path dir = scratch_dir("data");
  c.data_dir = dir;
  c.data_lead_times = {24.0, 48.0};
  generate_data(c);
  CHECK(fs::exists(manifest_path(c, Split::Test, 48.0)));
  const Dataset loaded = load_split(c, Split::Train, 24.0);
  REQUIRE(loaded.size() == a.size());
  CHECK(loaded[3].truth.values == a[3].truth.values);
  CHECK(loaded[3].background.values == a[3].background.values);
  const Dataset later = load_split(c, Split::Val, 48.0);
  CHECK(later.size() == 3);

  ExperimentConfig wrong = c;
  wrong.background_grid = {4, 8};
  CHECK_THROWS_AS(load_split(wrong, Split::Train, 24.0), ConfigError);
}

TEST_CASE("training: zero epochs is the initialization, repeated runs agree") {
  ExperimentConfig c = tiny_config();
  const Dataset train_set = synthesize_split(c, Split::Train, 24.0);
  const Dataset val_set = synthesize_split(c, Split::Val, 24.0);
  const Dataset test_set = synthesize_split(c, Split::Test, 24.0);

  ExperimentConfig zero = c;
  zero.epochs = 0;
  const Checkpoint init = train(zero, train_set, val_set);
  CHECK(init.best_epoch == 0);
  CHECK(init.curve.empty());
  AssimilationModel fresh(model_config_for(c));
  Checkpoint untrained = init;
  untrained.capture(fresh);
  check_same_metrics(evaluate(init, c, test_set).analysis, evaluate(untrained, c, test_set).analysis, 1e-12);
  CHECK(rel_close(init.initial_val_nll, validation_nll(fresh, init.normalizer, c, val_set), 1e-12));

  const Checkpoint r1 = train(c, train_set, val_set);
  const Checkpoint r2 = train(c, train_set, val_set);
  REQUIRE(r1.curve.size() == 2);
  REQUIRE(r2.curve.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) {
    CHECK(rel_close(r1.curve[e].train_nll, r2.curve[e].train_nll, 1e-6));
    CHECK(rel_close(r1.curve[e].val_nll, r2.curve[e].val_nll, 1e-6));
  }
  check_same_metrics(evaluate(r1, c, test_set).analysis, evaluate(r2, c, test_set).analysis, 1e-6);
}

TEST_CASE("training reduces the training loss") {
  ExperimentConfig c = tiny_config();
  c.background_grid = {16, 32};
  c.obs_grid = {16, 32};
  c.train_samples = 40;
  c.val_samples = 4;
  c.epochs = 5;
  c.modes_lat = 4;
  c.modes_lon = 8;
  const Dataset train_set = synthesize_split(c, Split::Train, 24.0);
  const Dataset val_set = synthesize_split(c, Split::Val, 24.0);
  for (std::uint64_t seed : {1, 2, 3}) {
    c.seed = seed;
    const Checkpoint ck = train(c, train_set, val_set);
    INFO("seed ", seed);
    CHECK(ck.curve.back().train_nll < ck.curve.front().train_nll);
  }
}

TEST_CASE("checkpoint round-trip preserves parameters and metrics") {
  const ExperimentConfig c = tiny_config();
  const Dataset train_set = synthesize_split(c, Split::Train, 24.0);
  const Dataset val_set = synthesize_split(c, Split::Val, 24.0);
  const Dataset test_set = synthesize_split(c, Split::Test, 24.0);
  const Checkpoint ck = train(c, train_set, val_set);
  const fs::path dir = scratch_dir("ckpt");
  save_checkpoint(ck, dir / "m.ckpt");
  const Checkpoint back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.best_epoch == ck.best_epoch);
  CHECK(back.normalizer.mean == ck.normalizer.mean);
  CHECK(back.model.channels == ck.model.channels);
  REQUIRE(back.parameters.size() == ck.parameters.size());
  for (std::size_t k = 0; k < ck.parameters.size(); ++k) CHECK(back.parameters[k].values == ck.parameters[k].values);
  check_same_metrics(evaluate(back, c, test_set).analysis, evaluate(ck, c, test_set).analysis, 1e-6);

  const std::string bytes = read_text(dir / "m.ckpt");
  auto section_after_cut = [&](std::size_t n) {
    std::ofstream(dir / "cut.ckpt", std::ios::binary | std::ios::trunc).write(bytes.data(), static_cast<std::streamsize>(n));
    try {
      load_checkpoint(dir / "cut.ckpt");
    } catch (const FormatError& e) {
      return e.section();
    }
    return std::string();
  };
  CHECK(section_after_cut(5) == "magic");
  CHECK(section_after_cut(10) == "version");
  CHECK(section_after_cut(40) == "header");
  CHECK(section_after_cut(bytes.size() - 8) == "parameters");

  std::string bumped = bytes;
  bumped[8] = 9;  // version field
  std::ofstream(dir / "v.ckpt", std::ios::binary | std::ios::trunc) << bumped;
  CHECK_THROWS_AS(load_checkpoint(dir / "v.ckpt"), FormatError);
}

TEST_CASE("evaluation rows: background reference and identity model") {
  const ExperimentConfig c = tiny_config();
  const Dataset test_set = synthesize_split(c, Split::Test, 24.0);
  const Normalizer norm = Normalizer::fit(std::vector<Field>{test_set[0].truth, test_set[1].truth});
  MetricsAccumulator identity(norm), background(norm);
  for (const Sample& s : test_set) {
    identity.add(s.background, s.truth);
    background.add(s.background, s.truth);
  }
  MetricsReport meta;
  meta.experiment_id = "x";
  check_same_metrics(identity.finish(meta), background.finish(meta), 0.0);
}

TEST_CASE("cross-resolution evaluation at the training grid equals plain evaluation") {
  const ExperimentConfig c = tiny_config();
  const Dataset train_set = synthesize_split(c, Split::Train, 24.0);
  const Dataset val_set = synthesize_split(c, Split::Val, 24.0);
  const Dataset test_set = synthesize_split(c, Split::Test, 24.0);
  const Checkpoint ck = train(c, train_set, val_set);
  const Evaluation plain = evaluate(ck, c, test_set);
  const std::vector<Evaluation> cross = cross_resolution_eval(ck, c, train_set, val_set, test_set);
  REQUIRE(cross.size() == 1);
  check_same_metrics(cross[0].analysis, plain.analysis, 0.0);

  ExperimentConfig dense = c;
  dense.eval_obs_grids = {{16, 32}};
  dense.truth_grid = {16, 32};
  const Dataset dense_test = synthesize_split(dense, Split::Test, 24.0);
  const std::vector<Evaluation> unseen = cross_resolution_eval(ck, dense, train_set, val_set, dense_test);
  REQUIRE(unseen.size() == 1);
  CHECK(std::isfinite(unseen[0].analysis.mse));
  CHECK(unseen[0].analysis.experiment_id == "tiny_obs16x32");

  ExperimentConfig recon = c;
  recon.drop_background = true;
  const Evaluation r = evaluate(ck, recon, test_set);
  CHECK(std::isfinite(r.analysis.mse));
}

TEST_CASE("interpolate-first refuses unseen observation grids") {
  ExperimentConfig c = tiny_config();
  c.variant = VariantTag::InterpFirst;
  c.epochs = 1;
  const Dataset train_set = synthesize_split(c, Split::Train, 24.0);
  const Dataset val_set = synthesize_split(c, Split::Val, 24.0);
  const Checkpoint ck = train(c, train_set, val_set);
  ExperimentConfig other = c;
  other.obs_grid = {16, 32};
  other.truth_grid = {16, 32};
  CHECK_THROWS_AS(evaluate(ck, other, synthesize_split(other, Split::Test, 24.0)), ConfigError);
}

TEST_CASE("a one-variant sweep equals train plus evaluate") {
  ExperimentConfig c = tiny_config();
  c.variants = {VariantTag::Fnp};
  c.ratios = {c.ratio};
  c.lead_times = {c.lead_time_h};
  const std::vector<Evaluation> sweep = ablate(c);
  REQUIRE(sweep.size() == 1);
  const Checkpoint ck =
      train(c, synthesize_split(c, Split::Train, 24.0), synthesize_split(c, Split::Val, 24.0));
  check_same_metrics(sweep[0].analysis, evaluate(ck, c, synthesize_split(c, Split::Test, 24.0)).analysis, 1e-12);
}

TEST_CASE("reports: CSV rows, duplicate ids, summary and plots") {
  const ExperimentConfig c = tiny_config();
  const Dataset train_set = synthesize_split(c, Split::Train, 24.0);
  const Dataset val_set = synthesize_split(c, Split::Val, 24.0);
  const Dataset test_set = synthesize_split(c, Split::Test, 24.0);
  ExperimentConfig zero = c;
  zero.epochs = 0;
  const Evaluation e = evaluate(train(zero, train_set, val_set), c, test_set);

  const fs::path dir = scratch_dir("report");
  write_metrics_csv({e.analysis}, dir / "one.csv");
  std::istringstream csv(read_text(dir / "one.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  CHECK(line == "experiment_id,variant,obs_resolution_deg,ratio,lead_time_h,fine_tuned,channel,rmse,mse,mae,seed");
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == c.channels.size());
  CHECK_THROWS_AS(write_metrics_csv({e.analysis, e.analysis}, dir / "dup.csv"), ConfigError);
  CHECK_THROWS_AS(write_metrics_csv({}, dir / "none.csv"), ConfigError);

  const MetricsReport rt = [&] {
    write_report_json(e.analysis, dir / "r.json");
    return read_report_json(dir / "r.json");
  }();
  CHECK(rt.experiment_id == e.analysis.experiment_id);
  CHECK(rt.mse == e.analysis.mse);
  CHECK(rt.rmse_per_channel == e.analysis.rmse_per_channel);

  const fs::path runs = dir / "runs";
  save_evaluation(e, runs);
  build_report(runs, dir / "out", {0, 1});
  CHECK(fs::file_size(dir / "out" / "metrics.csv") > 0);
  const std::string summary = read_text(dir / "out" / "summary.txt");
  CHECK(summary.find("tiny.background") != std::string::npos);
  CHECK(summary.find("tiny.climatology") != std::string::npos);
  std::size_t plots = 0;
  for (const auto& entry : fs::directory_iterator(dir / "out" / "plots")) {
    CHECK(entry.file_size() > 0);
    ++plots;
  }
  CHECK(plots == 12);  // 6 rasters per channel
  CHECK_THROWS_AS(build_report(dir / "missing", dir / "out2", {0}), ConfigError);
}
