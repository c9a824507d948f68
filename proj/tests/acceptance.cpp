// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// The ablation criteria train twelve models on about 2k samples and take
// roughly a quarter of an hour on one core.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "metdrive/config.hpp"
#include "metdrive/dataset.hpp"
#include "metdrive/metrics.hpp"
#include "metdrive/selfcheck.hpp"
#include "metdrive/training.hpp"

using namespace metdrive;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  fmt::print("{} criterion {}: {} ({})\n", ok ? "PASS" : "FAIL", id, name, detail);
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (slurp(e.path()) != slurp(b / e.path().filename())) return false;
    ++files;
  }
  return files > 0;
}

double mean(const std::vector<double>& v) { return losses::compensated_mean(v); }

std::string join(const std::vector<double>& v, const char* format) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : "/") + fmt::format(fmt::runtime(format), x);
  return out;
}

struct Run {
  double ds = 0.0;
  double ade = 0.0;
  double seconds = 0.0;
  std::unique_ptr<MetDriveModel> model;
};

int total_oscillations(const metrics::ClosedLoopReport& r) {
  int n = 0;
  for (const auto& route : r.routes) n += route.smooth.oscillation_count;
  return n;
}

}  // namespace

int main() {
  {
    const auto start = Clock::now();
    const auto c1 = checks::check_full_model_gradient();
    const double s = seconds_since(start);
    report(1, "full-model gradient check", c1.passed && s < 60.0, fmt::format("{}; {:.1f} s", c1.detail, s));
  }
  const auto c2 = checks::check_positional_embedding();
  report(2, "positional embedding exactness", c2.passed, c2.detail);
  const auto c3 = checks::check_temporal_guidance();
  report(3, "temporal guidance semantics", c3.passed, c3.detail);
  const auto c4 = checks::check_metric_oracles();
  report(4, "metric oracles", c4.passed, c4.detail);

  const ExperimentConfig base;
  const world::WorldConfig w;
  const auto start_data = Clock::now();
  const data::Dataset d = data::make_dataset(base.data_routes, base.seed, base, w);
  const auto heldout = data::heldout_samples(base, w);
  std::vector<world::Scenario> mixed;
  for (int i = 0; i < base.eval_routes; ++i) {
    mixed.push_back(data::evaluation_scenario(base.eval_seed, i, base.eval_max_difficulty, w));
  }
  fmt::print("# {} training samples from {} routes, {} held-out samples, {:.1f} s\n", d.samples.size(),
             d.routes, heldout.size(), seconds_since(start_data));

  const auto run = [&](std::uint64_t seed, bool tg, temporal::InputMode mode) {
    ExperimentConfig c = base;
    c.seed = seed;
    c.temporal_loss_on = tg;
    c.input_mode = mode;
    const auto start = Clock::now();
    auto state = training::train(c, d.samples);
    Run r;
    r.seconds = seconds_since(start);
    r.ds = metrics::closed_loop_eval(*state.model, mixed, w).driving_score;
    r.ade = metrics::open_loop_eval(*state.model, heldout).ade;
    r.model = std::move(state.model);
    fmt::print("# seed {} guidance {} mode {}: DS {:.2f} ADE {:.4f} train {:.1f} s\n", seed, tg ? "on" : "off",
               temporal::to_string(mode), r.ds, r.ade, r.seconds);
    std::fflush(stdout);
    return r;
  };

  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto start_ablation = Clock::now();
  std::vector<Run> on, off;
  for (auto s : seeds) {
    on.push_back(run(s, true, temporal::InputMode::decomposed));
    off.push_back(run(s, false, temporal::InputMode::decomposed));
  }
  const auto collect = [](const std::vector<Run>& runs, double Run::*field) {
    std::vector<double> out;
    for (const auto& r : runs) out.push_back(r.*field);
    return out;
  };
  {
    const auto ds_on = collect(on, &Run::ds), ds_off = collect(off, &Run::ds);
    const auto ade_on = collect(on, &Run::ade), ade_off = collect(off, &Run::ade);
    const double minutes = seconds_since(start_ablation) / 60.0;
    const bool ds_ok = mean(ds_on) >= mean(ds_off);
    const bool ade_ok = mean(ade_on) <= mean(ade_off);
    report(5, "temporal guidance ablation", ds_ok && ade_ok && minutes <= 30.0,
           fmt::format("DS on {:.2f} [{}] vs off {:.2f} [{}]; ADE on {:.4f} [{}] vs off {:.4f} [{}]; {:.1f} min",
                       mean(ds_on), join(ds_on, "{:.2f}"), mean(ds_off), join(ds_off, "{:.2f}"), mean(ade_on),
                       join(ade_on, "{:.4f}"), mean(ade_off), join(ade_off, "{:.4f}"), minutes));
  }

  {
    std::vector<Run> paired, raw;
    for (auto s : seeds) {
      paired.push_back(run(s, true, temporal::InputMode::paired_undecomposed));
      raw.push_back(run(s, true, temporal::InputMode::raw_theta_u_psi));
    }
    const double dec = mean(collect(on, &Run::ds));
    const double pair = mean(collect(paired, &Run::ds));
    const double rw = mean(collect(raw, &Run::ds));
    report(6, "input-mode ablation", dec >= pair && dec >= rw,
           fmt::format("DS decomposed {:.2f} vs paired_undecomposed {:.2f} [{}] vs raw_theta_u_psi {:.2f} [{}]", dec,
                       pair, join(collect(paired, &Run::ds), "{:.2f}"), rw, join(collect(raw, &Run::ds), "{:.2f}")));
  }

  {
    std::vector<world::Scenario> easy;
    for (int i = 0; i < 10; ++i) easy.push_back(data::evaluation_scenario(base.eval_seed, i, 1, w));
    const Run& r = on.front();
    const auto model_report = metrics::closed_loop_eval(*r.model, easy, w);
    const auto bang = metrics::evaluate_driver([](const world::Scenario&) { return world::make_bang_bang(); },
                                               easy, w);
    const int osc_model = total_oscillations(model_report);
    const int osc_bang = total_oscillations(bang);
    const bool ok = d.samples.size() >= 2000 && r.seconds <= 600.0 && model_report.mean_rc >= 90.0 &&
                    osc_model < osc_bang;
    report(7, "closed-loop trainability", ok,
           fmt::format("{} samples, {:.0f} s training, RC {:.2f} on 10 easy routes, oscillations {} vs bang-bang {}",
                       d.samples.size(), r.seconds, model_report.mean_rc, osc_model, osc_bang));
  }

  {
    ExperimentConfig c = base;
    c.data_routes = 3;
    c.epochs = 2;
    c.eval_routes = 3;
    const fs::path root = fs::temp_directory_path() / "metdrive-acceptance";
    fs::remove_all(root);
    std::vector<std::string> reports;
    for (const char* name : {"a", "b"}) {
      const fs::path dir = root / name;
      const data::Dataset ds = data::make_dataset(c.data_routes, c.seed, c, w);
      data::write_dataset((dir / "data").string(), ds);
      const data::Dataset back = data::read_dataset((dir / "data").string());
      const auto state = training::train(c, back.samples);
      training::save_checkpoint((dir / "model.metd").string(), state);
      const auto loaded = training::load_checkpoint((dir / "model.metd").string());
      std::vector<world::Scenario> sc;
      for (int i = 0; i < c.eval_routes; ++i) sc.push_back(data::evaluation_scenario(c.eval_seed, i, 3, w));
      reports.push_back(metrics::closed_loop_record(metrics::closed_loop_eval(*loaded.model, sc, w), "det") + "\n" +
                        metrics::open_loop_record(metrics::open_loop_eval(*loaded.model, back.samples),
                                                  back.samples.size(), "det"));
    }
    const bool data_same = same_tree(root / "a" / "data", root / "b" / "data");
    const bool ckpt_same = slurp(root / "a" / "model.metd") == slurp(root / "b" / "model.metd");
    const bool report_same = reports[0] == reports[1];
    report(8, "determinism", data_same && ckpt_same && report_same,
           fmt::format("dataset {}, checkpoint {}, report {}", data_same ? "identical" : "differs",
                       ckpt_same ? "identical" : "differs", report_same ? "identical" : "differs"));
    fs::remove_all(root);
  }

  fmt::print("{}/8 criteria passed\n", 8 - failures);
  return failures == 0 ? 0 : 1;
}
