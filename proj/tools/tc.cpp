// tc: batch driver for the takeover-cognition pipeline.
// Subcommands: simulate, infer, bench, physio.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "takeover/filter.hpp"
#include "takeover/physio.hpp"
#include "takeover/predict.hpp"
#include "takeover/rollout.hpp"

namespace fs = std::filesystem;
using namespace takeover;

namespace {

constexpr const char* kToolVersion = "1.0.0";

int thread_budget() {
  if (const char* env = std::getenv("TC_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
      throw ConfigError("TC_THREADS must be a positive integer");
    }
    throw ConfigError("TC_THREADS must be a positive integer");
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Runs fn(i) for i in [0, count) on at most thread_budget() workers.
/// Exceptions are rethrown on the caller thread.
template <typename Fn>
void parallel_for(int count, Fn&& fn) {
  const int workers = std::min(thread_budget(), std::max(count, 1));
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::future<void>> futures;
  futures.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        fn(i);
      }
    }));
  }
  for (auto& f : futures) f.get();
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const std::string& config_path, std::uint64_t seed,
                    const std::map<std::string, std::string>& extra = {}) {
  fs::create_directories(out_dir);
  const auto now = std::chrono::system_clock::now();
  std::ostringstream body;
  body << "command = " << command << "\n"
       << "config = " << (config_path.empty() ? "-" : config_path) << "\n"
       << "seed = " << seed << "\n"
       << "out = " << out_dir.string() << "\n"
       << "version = " << kToolVersion << "\n"
       << "timestamp_unix = "
       << std::chrono::duration_cast<std::chrono::seconds>(
              now.time_since_epoch())
              .count()
       << "\n";
  for (const auto& [k, v] : extra) body << k << " = " << v << "\n";
  const fs::path path = out_dir / "manifest.txt";
  const std::string tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os << body.str();
  }
  fs::rename(tmp, path);
}

ScenarioConfig load_scenario(const std::string& config_path) {
  if (config_path.empty()) return ScenarioConfig{};
  return scenario_from_key_values(read_key_values(fs::path(config_path)));
}

ControllerGains load_gains(const std::string& gains_path) {
  if (gains_path.empty()) return ControllerGains{};
  return gains_from_key_values(read_key_values(fs::path(gains_path)));
}

void write_scenario(const ScenarioConfig& c, const fs::path& path) {
  const std::string tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os << "lane_count = " << c.lane_count << "\n"
       << "lane_width = " << detail::fmt_double(c.lane_width) << "\n"
       << "ego_speed0 = " << detail::fmt_double(c.ego_speed0) << "\n"
       << "background_speed = " << detail::fmt_double(c.background_speed)
       << "\n"
       << "th_level = " << detail::fmt_double(c.th_level) << "\n"
       << "workzone_x = " << detail::fmt_double(c.workzone_x) << "\n"
       << "workzone_length = " << detail::fmt_double(c.workzone_length) << "\n"
       << "takeover_x = " << detail::fmt_double(c.takeover_x) << "\n"
       << "tlt = " << detail::fmt_double(c.tlt) << "\n"
       << "tor_id = " << c.tor_id << "\n"
       << "ndrt_id = " << c.ndrt_id << "\n"
       << "seed = " << c.seed << "\n"
       << "max_steer = " << detail::fmt_double(c.max_steer) << "\n"
       << "max_accel = " << detail::fmt_double(c.max_accel) << "\n"
       << "max_decel = " << detail::fmt_double(c.max_decel) << "\n"
       << "wheelbase = " << detail::fmt_double(c.wheelbase) << "\n"
       << "placement_back = " << detail::fmt_double(c.placement_back) << "\n"
       << "placement_ahead = " << detail::fmt_double(c.placement_ahead)
       << "\n";
  }
  fs::rename(tmp, path);
}

std::string episode_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "ep_%04d", index);
  return buf;
}

std::optional<CognitiveParams> parse_theta(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const auto cols = detail::split_csv_line(text);
  if (cols.size() != 4) {
    throw ConfigError("--fixed-theta expects sigma0,sigma_max,c,d");
  }
  CognitiveParams p;
  try {
    p.sigma0 = std::stod(cols[0]);
    p.sigma_max = std::stod(cols[1]);
    p.c = std::stod(cols[2]);
    p.d = std::stod(cols[3]);
  } catch (const std::exception&) {
    throw ConfigError("--fixed-theta expects four numbers");
  }
  if (!p.valid()) throw ConfigError("--fixed-theta outside parameter bounds");
  return p;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string config, gains, out = "out";
  std::uint64_t seed = 0;
  int count = 1;
  bool fixed_theta = false;
  std::string theta;  // optional sigma0,sigma_max,c,d
};

int cmd_simulate(const SimulateArgs& a) {
  const ScenarioConfig base = load_scenario(a.config);
  const ControllerGains gains = load_gains(a.gains);
  const fs::path out_dir(a.out);
  write_manifest(out_dir, "simulate", a.config, a.seed,
                 {{"count", std::to_string(a.count)},
                  {"fixed_theta", a.fixed_theta ? "1" : "0"}});
  write_scenario(base, out_dir / "scenario.cfg");

  std::vector<Termination> outcomes(a.count);
  parallel_for(a.count, [&](int i) {
    ScenarioConfig cfg = base;
    cfg.seed = mix_seed(a.seed, static_cast<std::uint64_t>(i), 0);
    EpisodeOptions opts;
    opts.fixed_theta = a.fixed_theta;
    opts.theta = parse_theta(a.theta);
    const Episode ep =
        simulate_episode(cfg, gains, opts, mix_seed(a.seed, i, 1));
    const std::string name = episode_name(i);
    write_trajectory(ep.frames, out_dir / (name + ".csv"));
    write_theta_trace(ep, out_dir / (name + "_theta.csv"));
    outcomes[i] = ep.outcome;
  });

  int crashes = 0, successes = 0;
  for (Termination t : outcomes) {
    crashes += t == Termination::crash;
    successes += t == Termination::success;
  }
  std::cout << "simulated " << a.count << " episodes (" << crashes
            << " crash, " << successes << " success) -> " << out_dir.string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

struct InferArgs {
  std::string trajectory, config, gains, out = "out";
  std::uint64_t seed = 0;
  int window = kDefaultWindow;
  int particles = 20;
};

int cmd_infer(const InferArgs& a) {
  const std::vector<Frame> frames = read_trajectory(fs::path(a.trajectory));
  const ScenarioConfig cfg = load_scenario(a.config);
  const ControllerGains gains = load_gains(a.gains);

  FilterConfig fc;
  fc.window = a.window;
  fc.particle_count = a.particles;
  fc.validate();
  if (static_cast<int>(frames.size()) < fc.window + 1) {
    throw ValidationError("trajectory shorter than window + 1 frames");
  }

  const fs::path out_dir(a.out);
  write_manifest(out_dir, "infer", a.config, a.seed,
                 {{"trajectory", a.trajectory},
                  {"window", std::to_string(a.window)},
                  {"particles", std::to_string(a.particles)}});

  FilterState fs_state = FilterState::create(fc, gains, a.seed);
  std::vector<PosteriorTraceRow> rows;
  const std::int64_t t0 = frames.front().t;
  constexpr int kMaxHistory = 8;
  for (std::size_t idx = fc.window; idx < frames.size(); ++idx) {
    const Frame& anchor_frame = frames[idx - fc.window];
    WorldState anchor = world_from_frame(anchor_frame, cfg);
    if (anchor.terminated != Termination::running) break;
    TrajectoryWindow window;
    window.frames.assign(frames.begin() + (idx - fc.window + 1),
                         frames.begin() + idx + 1);
    const std::size_t hist_begin =
        idx - fc.window >= kMaxHistory ? idx - fc.window - kMaxHistory : 0;
    std::span<const Frame> history(frames.data() + hist_begin,
                                   idx - fc.window - hist_begin);
    PosteriorTraceRow row;
    row.t = t0 + static_cast<std::int64_t>(idx);
    row.summary = pf_step(fs_state, anchor, window, history);
    rows.push_back(row);
  }
  write_posterior_trace(rows, out_dir / "posterior_trace.csv");
  std::cout << "inferred " << rows.size() << " posterior rows -> "
            << (out_dir / "posterior_trace.csv").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string corpus, config, gains, out = "out";
  std::uint64_t seed = 0;
  std::vector<std::string> methods = {"adaptive", "cv", "off"};
  std::vector<double> thresholds = {0.5, 1.0, 2.0};
  int horizon = kDefaultHorizon;
  int window = kDefaultWindow;
  int particles = 20;
};

int cmd_bench(const BenchArgs& a) {
  const fs::path corpus_dir(a.corpus);
  if (!fs::is_directory(corpus_dir)) {
    throw IoError("corpus directory not found: " + a.corpus);
  }
  std::vector<fs::path> episodes;
  for (const auto& entry : fs::directory_iterator(corpus_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("ep_") && name.ends_with(".csv") &&
        name.find("_theta") == std::string::npos) {
      episodes.push_back(entry.path());
    }
  }
  std::sort(episodes.begin(), episodes.end());

  std::string config_path = a.config;
  if (config_path.empty() && fs::exists(corpus_dir / "scenario.cfg")) {
    config_path = (corpus_dir / "scenario.cfg").string();
  }
  const ScenarioConfig cfg = load_scenario(config_path);
  const ControllerGains gains = load_gains(a.gains);

  FilterConfig fc;
  fc.window = a.window;
  fc.particle_count = a.particles;
  fc.validate();

  const fs::path out_dir(a.out);
  write_manifest(out_dir, "bench", config_path, a.seed,
                 {{"corpus", a.corpus},
                  {"horizon", std::to_string(a.horizon)},
                  {"window", std::to_string(a.window)}});

  if (episodes.empty()) {
    write_bench_report({}, out_dir / "bench_report.csv");
    std::cerr << "warning: empty corpus, wrote empty report\n";
    return 0;
  }

  std::vector<PredictMethod> methods;
  for (const std::string& m : a.methods) methods.push_back(method_from_name(m));

  struct Job {
    std::size_t episode;
    PredictMethod method;
  };
  std::vector<Job> jobs;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    for (PredictMethod m : methods) jobs.push_back({e, m});
  }
  std::vector<EpisodeEvaluation> evals(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), [&](int j) {
    const Job& job = jobs[j];
    const std::vector<Frame> frames = read_trajectory(episodes[job.episode]);
    EvaluateOptions opts;
    opts.horizon = a.horizon;
    opts.seed = mix_seed(a.seed, static_cast<std::uint64_t>(job.episode), 7);
    EpisodeEvaluation ev =
        rolling_evaluate(frames, cfg, job.method, fc, gains, opts);
    ev.episode = episodes[job.episode].stem().string();
    evals[j] = std::move(ev);
  });

  write_bench_report(evals, out_dir / "bench_report.csv");

  // Coverage summary: one row per method, one column per threshold, plus
  // the false-flag rate on collision-free episodes.
  {
    const fs::path path = out_dir / "coverage.csv";
    const std::string tmp = path.string() + ".tmp";
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os << "method";
    for (double thr : a.thresholds) os << ",coverage_" << thr;
    os << ",collision_episodes,false_flag_rate\n";
    for (PredictMethod m : methods) {
      std::vector<EpisodeEvaluation> mine;
      int clean = 0, false_flags = 0;
      for (const EpisodeEvaluation& ev : evals) {
        if (ev.method != m) continue;
        mine.push_back(ev);
        if (!ev.t_col) {
          ++clean;
          false_flags += ev.t_flag.has_value();
        }
      }
      const std::vector<double> cov = lead_time_coverage(mine, a.thresholds);
      os << method_name(m);
      for (double c : cov) os << ',' << detail::fmt_double(c);
      int collisions = 0;
      for (const EpisodeEvaluation& ev : mine) collisions += ev.t_col.has_value();
      os << ',' << collisions << ','
         << detail::fmt_double(clean > 0 ? static_cast<double>(false_flags) /
                                               clean
                                         : 0.0)
         << "\n";
    }
    os.close();
    fs::rename(tmp, path);
  }
  std::cout << "benchmarked " << episodes.size() << " episodes x "
            << methods.size() << " methods -> " << out_dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// physio
// ---------------------------------------------------------------------------

struct PhysioArgs {
  std::string gaze, trace, groups, out = "out";
  std::uint64_t seed = 0;
};

void write_segments_csv(const SegmentList& segments, const fs::path& path) {
  const std::string tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os << "start,end,label\n";
    for (const Segment& s : segments) {
      os << s.start << ',' << s.end << ',' << s.label << "\n";
    }
  }
  fs::rename(tmp, path);
}

int cmd_physio(const PhysioArgs& a) {
  const fs::path out_dir(a.out);
  write_manifest(out_dir, "physio", a.gaze, a.seed,
                 {{"trace", a.trace}, {"groups", a.groups}});

  const std::vector<GazeSample> samples = read_gaze(fs::path(a.gaze));
  const ScreenBounds screen;
  const std::vector<int> aoi = aoi_sequence(samples, screen);

  // Physiological anomaly channels.
  const Flags fix = fixation_anomalies(samples);
  const Flags disp =
      dispersion_anomalies(windowed_entropies(aoi), samples.size());
  const Flags sacc = saccade_anomalies(samples);
  std::vector<double> pupil(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) pupil[i] = samples[i].pupil;
  const Flags pup = pupil_anomalies(pupil);

  const Flags perception = flag_union(disp, fix);
  const Flags looming = flag_union(sacc, pup);
  SegmentList phys = smooth_and_segment(perception, kHanningLength,
                                        kSegmentAmplitude, true, "physio");
  const SegmentList phys_loom = smooth_and_segment(
      looming, kHanningLength, kSegmentAmplitude, true, "physio");
  phys.insert(phys.end(), phys_loom.begin(), phys_loom.end());
  std::sort(phys.begin(), phys.end(), [](const Segment& x, const Segment& y) {
    return x.start < y.start;
  });

  // Cognitive anomaly segments from the posterior trace (union over the
  // four parameter channels).
  SegmentList cog;
  if (!a.trace.empty()) {
    const std::vector<PosteriorTraceRow> trace =
        read_posterior_trace(fs::path(a.trace));
    if (!trace.empty()) {
      Flags cog_flags(trace.size(), 0);
      for (int dim = 0; dim < 4; ++dim) {
        std::vector<double> series(trace.size());
        for (std::size_t i = 0; i < trace.size(); ++i) {
          series[i] = trace[i].summary.mean[dim];
        }
        cog_flags = flag_union(cog_flags, cognitive_anomalies(series));
      }
      cog = smooth_and_segment(cog_flags, kHanningLength, kSegmentAmplitude,
                               true, "cognitive");
    }
  }

  write_segments_csv(phys, out_dir / "physio_segments.csv");
  write_segments_csv(cog, out_dir / "cognitive_segments.csv");

  const MatchReport report = match_segments(cog, phys);
  {
    const fs::path path = out_dir / "match_report.txt";
    const std::string tmp = path.string() + ".tmp";
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os << "match_rate = " << detail::fmt_double(report.match_rate) << "\n"
       << "miss_rate = " << detail::fmt_double(report.miss_rate) << "\n"
       << "match_defined = " << (report.match_defined ? 1 : 0) << "\n"
       << "cognitive_segments = " << cog.size() << "\n"
       << "physio_segments = " << phys.size() << "\n";
    os.close();
    fs::rename(tmp, path);
  }

  // Optional grouped summary: CSV `dimension,parameter,condition,value`
  // -> one ANOVA/MaxDiff row per (dimension, parameter).
  if (!a.groups.empty()) {
    std::ifstream is(a.groups);
    if (!is) throw IoError("cannot open: " + a.groups);
    std::string line;
    if (!std::getline(is, line) ||
        detail::split_csv_line(line) !=
            std::vector<std::string>{"dimension", "parameter", "condition",
                                     "value"}) {
      throw ParseError("groups CSV must start with "
                       "dimension,parameter,condition,value");
    }
    std::map<std::pair<std::string, std::string>,
             std::map<std::string, std::vector<double>>>
        table;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto cols = detail::split_csv_line(line);
      if (cols.size() != 4) {
        throw ParseError("groups line " + std::to_string(lineno) +
                         ": expected 4 columns");
      }
      try {
        table[{cols[0], cols[1]}][cols[2]].push_back(std::stod(cols[3]));
      } catch (const std::exception&) {
        throw ParseError("groups line " + std::to_string(lineno) +
                         ": malformed value");
      }
    }
    std::vector<PhysioReportRow> rows;
    for (const auto& [key, conditions] : table) {
      std::vector<std::vector<double>> groups;
      std::vector<double> means;
      for (const auto& [_, values] : conditions) {
        groups.push_back(values);
        double m = 0.0;
        for (double v : values) m += v;
        means.push_back(m / values.size());
      }
      PhysioReportRow row;
      row.dimension = key.first;
      row.parameter = key.second;
      if (groups.size() >= 2) {
        const AnovaResult an = anova_oneway(groups);
        row.F = an.F;
        row.p = an.p;
      }
      row.maxdiff = maxdiff_equivalence(means).maxdiff;
      rows.push_back(row);
    }
    write_physio_report(rows, out_dir / "physio_report.csv");
  }

  std::cout << "physio analysis -> " << out_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"takeover-cognition pipeline driver"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* simulate = app.add_subcommand("simulate", "generate episodes");
  simulate->add_option("--config", sim.config, "scenario key=value file");
  simulate->add_option("--gains", sim.gains, "controller gains file");
  simulate->add_option("--seed", sim.seed, "master seed");
  simulate->add_option("--count", sim.count, "episode count")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--out", sim.out, "output directory");
  simulate->add_flag("--fixed-theta", sim.fixed_theta,
                     "hold theta constant per episode");
  simulate->add_option("--theta", sim.theta,
                       "explicit sigma0,sigma_max,c,d (implies a fixed value)");

  InferArgs inf;
  CLI::App* infer = app.add_subcommand("infer", "posterior over theta");
  infer->add_option("--trajectory", inf.trajectory, "episode CSV")->required();
  infer->add_option("--config", inf.config, "scenario key=value file");
  infer->add_option("--gains", inf.gains, "controller gains file");
  infer->add_option("--seed", inf.seed, "master seed");
  infer->add_option("--window", inf.window, "window length L");
  infer->add_option("--particles", inf.particles, "particle count N");
  infer->add_option("--out", inf.out, "output directory");

  BenchArgs ben;
  CLI::App* bench = app.add_subcommand("bench", "prediction benchmark");
  bench->add_option("--corpus", ben.corpus, "episode directory")->required();
  bench->add_option("--config", ben.config, "scenario key=value file");
  bench->add_option("--gains", ben.gains, "controller gains file");
  bench->add_option("--seed", ben.seed, "master seed");
  bench->add_option("--method", ben.methods,
                    "methods: adaptive, cv, off (repeatable)");
  bench->add_option("--thresholds", ben.thresholds, "lead-time thresholds (s)");
  bench->add_option("--horizon", ben.horizon, "look-ahead horizon H");
  bench->add_option("--window", ben.window, "filter window L");
  bench->add_option("--particles", ben.particles, "particle count N");
  bench->add_option("--out", ben.out, "output directory");

  PhysioArgs phy;
  CLI::App* physio = app.add_subcommand("physio", "physiological consistency");
  physio->add_option("--gaze", phy.gaze, "gaze CSV")->required();
  physio->add_option("--trace", phy.trace, "posterior trace CSV");
  physio->add_option("--groups", phy.groups,
                     "grouped match-rate CSV for ANOVA/MaxDiff");
  physio->add_option("--seed", phy.seed, "master seed");
  physio->add_option("--out", phy.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim);
    if (infer->parsed()) return cmd_infer(inf);
    if (bench->parsed()) return cmd_bench(ben);
    if (physio->parsed()) return cmd_physio(phy);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const ContractError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const DomainError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
