// Command-line driver: data generation, training, evaluation, ablations and plots.

#include <CLI11.hpp>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <fmt/format.h>

#include "metdrive/config.hpp"
#include "metdrive/dataset.hpp"
#include "metdrive/metrics.hpp"
#include "metdrive/plot.hpp"
#include "metdrive/record_io.hpp"
#include "metdrive/selfcheck.hpp"
#include "metdrive/training.hpp"

namespace fs = std::filesystem;
using namespace metdrive;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  for (const auto& kv : o.overrides) apply_override(c, kv);
  if (o.seed) c.seed = *o.seed;
  validate_config(c);
  return c;
}

// Records are keyed by (kind, label). A record replaces the line holding the
// same key in place, otherwise it is appended, so reruns leave identical bytes.
void upsert_records(const std::string& path, const std::vector<std::string>& records) {
  const auto key = [&path](const std::string& line) {
    try {
      const auto j = io::json::parse(line);
      return j.value("kind", std::string{}) + '\n' + j.value("label", std::string{});
    } catch (const io::json::exception& e) {
      throw IoError(path + ": not a report file (" + e.what() + ")");
    }
  };
  std::vector<std::string> lines;
  if (fs::exists(path)) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) lines.push_back(line);
    }
  }
  for (const auto& r : records) {
    const std::string k = key(r);
    const auto it = std::find_if(lines.begin(), lines.end(), [&](const std::string& l) { return key(l) == k; });
    if (it != lines.end()) {
      *it = r;
    } else {
      lines.push_back(r);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw IoError("write failed for " + path);
}

std::vector<world::Scenario> eval_scenarios(const ExperimentConfig& c, const world::WorldConfig& w) {
  std::vector<world::Scenario> out;
  for (int i = 0; i < c.eval_routes; ++i) {
    out.push_back(data::evaluation_scenario(c.eval_seed, i, c.eval_max_difficulty, w));
  }
  return out;
}

int gen_data(const Options& o) {
  const ExperimentConfig c = resolve(o);
  const std::string dir = o.out.empty() ? c.data_path : o.out;
  spdlog::info("generating {} routes with seed {}", c.data_routes, c.seed);
  const data::Dataset d = data::make_dataset(c.data_routes, c.seed, c);
  data::write_dataset(dir, d);
  fmt::print("wrote {} samples from {} routes to {}\n", d.samples.size(), d.routes, dir);
  return 0;
}

int train(const Options& o) {
  const ExperimentConfig c = resolve(o);
  const std::string ckpt = o.out.empty() ? c.checkpoint_path : o.out;
  const data::Dataset d = data::read_dataset(c.data_path);
  spdlog::info("training on {} samples for {} epochs", d.samples.size(), c.epochs);
  const auto state = training::train(c, d.samples, [](const training::EpochLoss& e) {
    spdlog::info("epoch {:3d}  total {:.5f}  imitation {:.5f}  guidance {:.5f}", e.epoch, e.total,
                 e.imitation, e.temporal_guidance);
  });
  training::save_checkpoint(ckpt, state);
  upsert_records(c.report_path, {training::loss_curve_record(state.curve, ckpt)});
  fmt::print("saved checkpoint {} after {} epochs\n", ckpt, state.epoch);
  return 0;
}

int eval_openloop(const Options& o) {
  const ExperimentConfig c = resolve(o);
  const auto state = training::load_checkpoint(c.checkpoint_path);
  const data::Dataset d = data::read_dataset(c.data_path);
  const auto errors = metrics::open_loop_eval(*state.model, d.samples);
  const std::string report = o.out.empty() ? c.report_path : o.out;
  upsert_records(report, {metrics::open_loop_record(errors, d.samples.size(), c.data_path)});
  fmt::print("ADE {:.4f} m  FDE {:.4f} m  over {} samples\n", errors.ade, errors.fde, d.samples.size());
  return 0;
}

int eval_closedloop(const Options& o) {
  const ExperimentConfig c = resolve(o);
  const auto state = training::load_checkpoint(c.checkpoint_path);
  const world::WorldConfig w;
  const auto scenarios = eval_scenarios(c, w);
  const auto report = metrics::closed_loop_eval(*state.model, scenarios, w);
  const std::string path = o.out.empty() ? c.report_path : o.out;
  upsert_records(path, {metrics::closed_loop_record(report, c.checkpoint_path)});
  for (const auto& r : report.routes) {
    spdlog::debug("route seed {} difficulty {}: RC {:.1f} IS {:.3f}", r.seed, r.difficulty, r.rc, r.is);
  }
  fmt::print("DS {:.2f}  RC {:.2f}  IS {:.3f}  over {} routes\n", report.driving_score, report.mean_rc,
             report.mean_is, report.routes.size());
  return 0;
}

int ablate(const Options& o) {
  const ExperimentConfig base = resolve(o);
  const world::WorldConfig w;
  const data::Dataset d = fs::exists(fs::path(base.data_path) / "meta.jsonl")
                              ? data::read_dataset(base.data_path)
                              : data::make_dataset(base.data_routes, base.seed, base, w);
  const auto scenarios = eval_scenarios(base, w);
  const auto heldout = data::heldout_samples(base, w);
  struct Variant {
    const char* name;
    bool tg;
    temporal::InputMode mode;
  };
  const std::vector<Variant> variants{
      {"full", true, temporal::InputMode::decomposed},
      {"no_temporal_guidance", false, temporal::InputMode::decomposed},
      {"paired_undecomposed", true, temporal::InputMode::paired_undecomposed},
      {"raw_theta_u_psi", true, temporal::InputMode::raw_theta_u_psi},
  };
  std::vector<std::string> lines;
  fmt::print("{:<22} {:>7} {:>7} {:>6} {:>8}\n", "variant", "DS", "RC", "IS", "ADE");
  for (const auto& v : variants) {
    ExperimentConfig c = base;
    c.temporal_loss_on = v.tg;
    c.input_mode = v.mode;
    spdlog::info("training variant {}", v.name);
    const auto state = training::train(c, d.samples);
    const auto report = metrics::closed_loop_eval(*state.model, scenarios, w);
    const auto errors = metrics::open_loop_eval(*state.model, heldout);
    lines.push_back(metrics::closed_loop_record(report, v.name));
    lines.push_back(metrics::open_loop_record(errors, heldout.size(), v.name));
    fmt::print("{:<22} {:>7.2f} {:>7.2f} {:>6.3f} {:>8.4f}\n", v.name, report.driving_score, report.mean_rc,
               report.mean_is, errors.ade);
  }
  upsert_records(o.out.empty() ? base.report_path : o.out, lines);
  return 0;
}

int plot_cmd(const Options& o) {
  const ExperimentConfig c = resolve(o);
  const std::string dir = o.out.empty() ? "plots" : o.out;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  const auto state = training::load_checkpoint(c.checkpoint_path);

  plot::Series total{"total", {}, {}}, il{"imitation", {}, {}}, tg{"temporal guidance", {}, {}};
  for (const auto& e : state.curve) {
    for (auto* s : {&total, &il, &tg}) s->x.push_back(e.epoch);
    total.y.push_back(e.total);
    il.y.push_back(e.imitation);
    tg.y.push_back(e.temporal_guidance);
  }
  if (!state.curve.empty()) {
    const std::string path = (fs::path(dir) / "loss_curve.svg").string();
    plot::write_text(path, plot::line_chart_svg("Training loss", {total, il, tg}, "epoch", "loss"));
    fmt::print("wrote {}\n", path);
  }

  const world::WorldConfig w;
  const world::Scenario sc = data::evaluation_scenario(c.eval_seed, 0, c.eval_max_difficulty, w);
  const auto speed_series = [&](const std::string& label, const world::Driver& driver) {
    const EpisodeLog log = world::rollout(sc, driver, w);
    plot::Series s{label, {}, {}};
    for (const auto& r : log.steps) {
      s.x.push_back(r.t);
      s.y.push_back(r.speed * 3.6);
    }
    return s;
  };
  const std::string path = (fs::path(dir) / "speed_profile.svg").string();
  plot::write_text(path, plot::line_chart_svg(
                             "Speed on evaluation route 0",
                             {speed_series("model", metrics::make_model_driver(*state.model)),
                              speed_series("bang-bang", world::make_bang_bang())},
                             "time [s]", "speed [km/h]"));
  fmt::print("wrote {}\n", path);
  return 0;
}

int selftest(const Options& o) {
  ExperimentConfig c = resolve(o);
  c.embed_dim = 8;
  c.temporal_dim = 16;
  c.geometric_dim = 16;
  c.hidden = 16;
  c.epochs = 1;
  c.data_routes = 2;
  c.eval_routes = 1;
  const fs::path dir = o.out.empty() ? fs::temp_directory_path() / "metdrive-selftest" : fs::path(o.out);
  fs::create_directories(dir);
  int failures = 0;
  const auto check = [&failures](const std::string& name, bool ok) {
    fmt::print("{} {}\n", ok ? "PASS" : "FAIL", name);
    if (!ok) ++failures;
  };
  for (const auto& r : checks::run_all()) check(fmt::format("{} ({})", r.name, r.detail), r.passed);
  const data::Dataset d = data::make_dataset(c.data_routes, c.seed, c);
  check("dataset non-empty", !d.samples.empty());
  data::write_dataset((dir / "data").string(), d);
  check("dataset round-trip", data::read_dataset((dir / "data").string()).samples == d.samples);
  const auto state = training::train(c, d.samples);
  check("loss finite", !state.curve.empty() && std::isfinite(state.curve.back().total));
  training::save_checkpoint((dir / "model.metd").string(), state);
  const auto loaded = training::load_checkpoint((dir / "model.metd").string());
  check("checkpoint round-trip", loaded.model->predict(d.samples.front()) == state.model->predict(d.samples.front()));
  const world::WorldConfig w;
  const auto scenarios = eval_scenarios(c, w);
  const auto report = metrics::closed_loop_eval(*state.model, scenarios, w);
  check("closed loop scores in range", report.driving_score >= 0.0 && report.driving_score <= 100.0);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("metdrive");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  if (const char* level = std::getenv("METDRIVE_LOG")) {
    const std::string l = level;
    if (l == "debug") {
      spdlog::set_level(spdlog::level::debug);
    } else if (l == "info") {
      spdlog::set_level(spdlog::level::info);
    } else if (l == "warn") {
      spdlog::set_level(spdlog::level::warn);
    } else {
      std::cerr << "METDRIVE_LOG must be one of debug, info, warn (got '" << l << "')\n";
      return 2;
    }
  } else {
    spdlog::set_level(spdlog::level::info);
  }

  CLI::App app{"metdrive: temporal-guided end-to-end driving on a synthetic world"};
  app.require_subcommand(1);
  Options opts;
  const auto add_common = [&opts](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "flat key=value config file");
    sub->add_option("--set", opts.overrides, "override a config key (key=value), repeatable");
    sub->add_option("--out", opts.out, "output path (file or directory, per subcommand)");
    sub->add_option("--seed", opts.seed, "override the experiment seed");
  };
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const std::vector<Command> commands{
      {"gen-data", "drive the expert and write a dataset directory", gen_data},
      {"train", "train a model on data.path and save a checkpoint", train},
      {"eval-openloop", "ADE/FDE of checkpoint.path on data.path", eval_openloop},
      {"eval-closedloop", "closed-loop RC/IS/DS on the held-out routes", eval_closedloop},
      {"ablate", "train and score the four ablation variants", ablate},
      {"plot", "write loss-curve and speed-profile SVGs", plot_cmd},
      {"selftest", "run the gradient check, oracle suites and a tiny end-to-end pipeline", selftest},
  };
  std::vector<CLI::App*> subs;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common(sub);
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      return commands[i].run(opts);
    } catch (const ConfigError& e) {
      spdlog::error("configuration error: {}", e.what());
      return 2;
    } catch (const std::exception& e) {
      spdlog::error("{} failed: {}", commands[i].name, e.what());
      return 1;
    }
  }
  return 2;
}
