// followme: person-following pipeline tools.
//
// Subcommands: calibrate, identify, train-gesture, eval-gesture, eval-reid,
// simulate, gen-scenario. Exit codes: 0 success, 2 usage/validation error,
// 1 runtime error. Diagnostics go to stderr; artifacts go to flag paths.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "followme/errors.hpp"
#include "followme/gesture.hpp"
#include "followme/harness.hpp"
#include "followme/metrics.hpp"
#include "followme/reid.hpp"
#include "followme/scenario.hpp"

namespace fs = std::filesystem;
using namespace followme;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CalibrateOpts {
  std::string features;
  std::string out;
  double split = reid::kDefaultSplitFraction;
  int dim = reid::kDefaultFeatureDim;
};

int run_calibrate(const CalibrateOpts& o) {
  const auto records = reid::load_feature_log(o.features);
  if (records.empty()) {
    throw InvalidInputError(o.features + ": feature log is empty");
  }
  std::vector<reid::FeatureVector> samples;
  samples.reserve(records.size());
  for (const auto& r : records) {
    if (static_cast<int>(r.feature.size()) != o.dim) {
      throw InvalidInputError(
          o.features + ": feature dimension " +
          std::to_string(r.feature.size()) + " does not match --dim " +
          std::to_string(o.dim));
    }
    samples.push_back(r.feature);
  }
  const reid::CalibrationProfile profile = reid::calibrate(samples, o.split);
  reid::save_profile(o.out, profile);
  std::cerr << "calibrated " << samples.size() << " frames, lambda_d = "
            << profile.lambda_d << " -> " << o.out << "\n";
  return kExitOk;
}

struct IdentifyOpts {
  std::string profile;
  std::string features;
  std::string report;
};

int run_identify(const IdentifyOpts& o) {
  const reid::CalibrationProfile profile = reid::load_profile(o.profile);
  const auto records = reid::load_feature_log(o.features);
  if (records.empty()) {
    throw InvalidInputError(o.features + ": feature log is empty");
  }

  // Consecutive records sharing a timestamp form one frame.
  nlohmann::json frames = nlohmann::json::array();
  std::size_t identified = 0;
  std::size_t total = 0;
  std::size_t i = 0;
  while (i < records.size()) {
    std::size_t j = i;
    std::vector<reid::FeatureVector> feats;
    while (j < records.size() && records[j].t == records[i].t) {
      feats.push_back(records[j].feature);
      ++j;
    }
    const reid::IdentificationResult res = reid::identify(feats, profile);
    nlohmann::json frame{{"t", records[i].t},
                         {"n_persons", feats.size()}};
    if (res.found()) {
      frame["index"] = *res.target_index;
      frame["distance"] = *res.distance;
      const auto& rec = records[i + *res.target_index];
      if (rec.person_id) frame["person_id"] = *rec.person_id;
      ++identified;
    } else {
      frame["index"] = nullptr;
    }
    frames.push_back(std::move(frame));
    ++total;
    i = j;
  }

  const nlohmann::json report{{"schema_version", 1},
                              {"lambda_d", profile.lambda_d},
                              {"frames", frames},
                              {"total_frames", total},
                              {"identified_frames", identified}};
  std::ofstream out(o.report);
  if (!out) throw Error("cannot open report file for writing: " + o.report);
  out << report.dump(2) << "\n";
  std::cerr << "identified in " << identified << "/" << total
            << " frames -> " << o.report << "\n";
  return kExitOk;
}

struct TrainGestureOpts {
  std::string data;
  std::string out;
  double c = 1.0;
  std::string gamma = "auto";
  double tol = 1e-3;
};

int run_train_gesture(const TrainGestureOpts& o) {
  const auto corpus = gesture::load_corpus(o.data);
  gesture::TrainOptions opts;
  opts.c = o.c;
  opts.tol = o.tol;
  if (o.gamma != "auto") {
    try {
      std::size_t pos = 0;
      const double g = std::stod(o.gamma, &pos);
      if (pos != o.gamma.size()) throw std::invalid_argument(o.gamma);
      opts.gamma = g;
    } catch (const std::exception&) {
      throw InvalidInputError("--gamma must be a number or 'auto', got '" +
                              o.gamma + "'");
    }
  }
  const gesture::GestureModel model = gesture::train(corpus, opts);
  gesture::save_model(o.out, model);
  std::cerr << "trained on " << corpus.size() << " samples, gamma = "
            << model.gamma << " -> " << o.out << "\n";
  return kExitOk;
}

struct EvalGestureOpts {
  std::string model;
  std::string data;
  std::string report;
};

int run_eval_gesture(const EvalGestureOpts& o) {
  const gesture::GestureModel model = gesture::load_model(o.model);
  const auto corpus = gesture::load_corpus(o.data);
  if (corpus.empty()) {
    throw InvalidInputError(o.data + ": corpus is empty");
  }
  const std::vector<std::string> labels = {"wait", "follow", "other"};
  std::vector<int> actual;
  std::vector<int> predicted;
  actual.reserve(corpus.size());
  predicted.reserve(corpus.size());
  for (const auto& sample : corpus) {
    actual.push_back(static_cast<int>(sample.label));
    predicted.push_back(
        static_cast<int>(gesture::classify(model, sample.landmarks)));
  }
  const metrics::MetricsReport report =
      metrics::compute_metrics(labels, actual, predicted);
  std::ofstream out(o.report);
  if (!out) throw Error("cannot open report file for writing: " + o.report);
  out << metrics::to_json(report).dump(2) << "\n";
  std::cerr << "accuracy " << report.accuracy << " over " << corpus.size()
            << " samples -> " << o.report << "\n";
  return kExitOk;
}

struct EvalReidOpts {
  std::string profiles_dir;
  std::string frames;
  std::string report;
};

int run_eval_reid(const EvalReidOpts& o) {
  std::vector<std::pair<std::string, std::string>> profile_files;
  for (const auto& entry : fs::directory_iterator(o.profiles_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") {
      profile_files.emplace_back(entry.path().stem().string(),
                                 entry.path().string());
    }
  }
  std::sort(profile_files.begin(), profile_files.end());
  if (profile_files.empty()) {
    throw InvalidInputError(o.profiles_dir +
                            ": no .json profiles in directory");
  }

  const harness::ReidFrameSet set = harness::load_reid_frames(o.frames);
  std::vector<reid::CalibrationProfile> profiles;
  for (const std::string& tag : set.tags) {
    const auto it =
        std::find_if(profile_files.begin(), profile_files.end(),
                     [&](const auto& p) { return p.first == tag; });
    if (it == profile_files.end()) {
      throw InvalidInputError(o.frames + ": no profile named '" + tag +
                              ".json' in " + o.profiles_dir);
    }
    profiles.push_back(reid::load_profile(it->second));
  }

  const harness::ReidEvaluation ev =
      harness::eval_reid(profiles, set.tags, set.frames);
  std::ofstream out(o.report);
  if (!out) throw Error("cannot open report file for writing: " + o.report);
  out << harness::reid_evaluation_to_json(ev).dump(2) << "\n";
  std::cerr << "accuracy " << ev.accuracy << ", target precision "
            << ev.target_precision << ", target recall " << ev.target_recall
            << " over " << ev.total_frames << " frames -> " << o.report
            << "\n";
  return kExitOk;
}

struct SimulateOpts {
  std::string scenario;
  std::string out;
  std::string report;
  std::optional<std::uint64_t> seed;
  std::optional<double> t_exp;
  std::optional<double> v_max;
  std::optional<int> xi;
};

int run_simulate(const SimulateOpts& o) {
  scenario::Scenario sc = scenario::load_scenario(o.scenario);
  if (o.seed) sc.seed = *o.seed;
  if (o.t_exp) {
    if (!(*o.t_exp > 0.0)) throw InvalidInputError("--t-exp must be positive");
    sc.robot.t_exp = *o.t_exp;
  }
  if (o.v_max) {
    if (!(*o.v_max > 0.0)) throw InvalidInputError("--v-max must be positive");
    sc.robot.v_max = *o.v_max;
  }
  if (o.xi) {
    if (*o.xi < 1) throw InvalidInputError("--xi must be >= 1");
    sc.gesture.debounce_count = *o.xi;
  }

  const harness::SimResult result = harness::run_scenario(sc);
  harness::save_trace_csv(o.out, result.trace);
  if (!o.report.empty()) {
    nlohmann::json j = harness::summary_to_json(result.summary);
    j["seed"] = sc.seed;
    std::ofstream rep(o.report);
    if (!rep) throw Error("cannot open report file for writing: " + o.report);
    rep << j.dump(2) << "\n";
  }
  std::cerr << "simulated " << result.summary.ticks << " ticks, modes s/f/s/w "
            << result.summary.mode_ticks[0] << "/"
            << result.summary.mode_ticks[1] << "/"
            << result.summary.mode_ticks[2] << "/"
            << result.summary.mode_ticks[3] << " -> " << o.out << "\n";
  return kExitOk;
}

struct GenScenarioOpts {
  std::string out_dir;
  bool reid_bench = false;
  bool gesture_corpus = false;
  std::uint64_t seed = 7;
};

int run_gen_scenario(const GenScenarioOpts& o) {
  fs::create_directories(o.out_dir);
  const fs::path dir(o.out_dir);

  scenario::save_scenario((dir / "straight_line.json").string(),
                          harness::make_straight_scenario());
  scenario::save_scenario((dir / "gesture_stop.json").string(),
                          harness::make_gesture_stop_scenario());
  scenario::save_scenario((dir / "lpath.json").string(),
                          harness::make_lpath_scenario());
  std::cerr << "wrote straight_line.json, gesture_stop.json, lpath.json to "
            << o.out_dir << "\n";

  if (o.reid_bench) {
    const harness::ReidBenchmark bench = harness::make_reid_benchmark(o.seed);
    const fs::path profiles_dir = dir / "reid_profiles";
    fs::create_directories(profiles_dir);
    for (std::size_t s = 0; s < bench.tags.size(); ++s) {
      reid::save_profile((profiles_dir / (bench.tags[s] + ".json")).string(),
                         bench.profiles[s]);
    }
    harness::save_reid_frames((dir / "reid_frames.jsonl").string(),
                              bench.tags, bench.frames);
    std::cerr << "wrote reid_profiles/ and reid_frames.jsonl ("
              << bench.tags.size() << " identities)\n";
  }

  if (o.gesture_corpus) {
    const auto train = harness::make_gesture_corpus(
        500, derive_seed(o.seed, 100));
    const auto test = harness::make_gesture_corpus(
        200, derive_seed(o.seed, 101));
    gesture::save_corpus((dir / "gesture_train.csv").string(), train);
    gesture::save_corpus((dir / "gesture_test.csv").string(), test);
    std::cerr << "wrote gesture_train.csv (500/class) and gesture_test.csv "
                 "(200/class)\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "followme: deterministic person-following pipeline "
      "(re-identification, gesture commands, tracking, navigation) with a "
      "scenario simulator"};
  app.require_subcommand(1);

  CalibrateOpts cal;
  CLI::App* calibrate =
      app.add_subcommand("calibrate",
                         "Estimate a target appearance profile and its "
                         "acceptance threshold from a feature log");
  calibrate->add_option("--features", cal.features,
                        "Feature log (JSON Lines, one record per observation)")
      ->required()
      ->check(CLI::ExistingFile);
  calibrate->add_option("--split", cal.split,
                        "Fraction of frames used for distribution estimation; "
                        "the rest set the threshold")
      ->capture_default_str();
  calibrate->add_option("--dim", cal.dim, "Expected feature dimension")
      ->capture_default_str();
  calibrate->add_option("--out", cal.out, "Output profile JSON")->required();

  IdentifyOpts ident;
  CLI::App* identify = app.add_subcommand(
      "identify", "Re-identify the calibrated target in logged frames");
  identify->add_option("--profile", ident.profile, "Calibration profile JSON")
      ->required()
      ->check(CLI::ExistingFile);
  identify->add_option("--features", ident.features,
                       "Feature log (JSON Lines); consecutive records with "
                       "equal timestamps form one frame")
      ->required()
      ->check(CLI::ExistingFile);
  identify->add_option("--report", ident.report, "Output report JSON")
      ->required();

  TrainGestureOpts tg;
  CLI::App* train_gesture = app.add_subcommand(
      "train-gesture", "Train the RBF-SVM gesture classifier on a landmark "
                       "corpus CSV");
  train_gesture->add_option("--data", tg.data, "Corpus CSV (63 coords + label)")
      ->required()
      ->check(CLI::ExistingFile);
  train_gesture->add_option("--c", tg.c, "Soft-margin penalty")
      ->capture_default_str();
  train_gesture->add_option("--gamma", tg.gamma,
                            "RBF width, a number or 'auto' (1/(D*Var))")
      ->capture_default_str();
  train_gesture->add_option("--tol", tg.tol, "Optimality stopping tolerance")
      ->capture_default_str();
  train_gesture->add_option("--out", tg.out, "Output model JSON")->required();

  EvalGestureOpts eg;
  CLI::App* eval_gesture = app.add_subcommand(
      "eval-gesture", "Classify a labeled corpus and report per-class "
                      "metrics and the confusion matrix");
  eval_gesture->add_option("--model", eg.model, "Model JSON")
      ->required()
      ->check(CLI::ExistingFile);
  eval_gesture->add_option("--data", eg.data, "Corpus CSV")
      ->required()
      ->check(CLI::ExistingFile);
  eval_gesture->add_option("--report", eg.report, "Output metrics JSON")
      ->required();

  EvalReidOpts er;
  CLI::App* eval_reid = app.add_subcommand(
      "eval-reid", "Score re-identification frames per subject and average");
  eval_reid->add_option("--profiles", er.profiles_dir,
                        "Directory of <subject>.json profiles")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval_reid->add_option("--frames", er.frames,
                        "Frame log (JSON Lines with subject, target_present, "
                        "features)")
      ->required()
      ->check(CLI::ExistingFile);
  eval_reid->add_option("--report", er.report, "Output report JSON")
      ->required();

  SimulateOpts sim;
  CLI::App* simulate = app.add_subcommand(
      "simulate", "Run a scenario through the closed loop and write the "
                  "trace CSV");
  simulate->add_option("--scenario", sim.scenario, "Scenario JSON")
      ->required()
      ->check(CLI::ExistingFile);
  simulate->add_option("--out", sim.out, "Output trace CSV")->required();
  simulate->add_option("--report", sim.report, "Optional summary JSON");
  simulate->add_option("--seed", sim.seed,
                       "Override the scenario seed (determines every "
                       "stochastic artifact)");
  simulate->add_option("--t-exp", sim.t_exp,
                       "Override track expiry time in seconds (default 3)");
  simulate->add_option("--v-max", sim.v_max,
                       "Override robot speed limit in m/s (default 0.3)");
  simulate->add_option("--xi", sim.xi,
                       "Override gesture debounce count (default 5)");

  GenScenarioOpts gen;
  CLI::App* gen_scenario = app.add_subcommand(
      "gen-scenario", "Write the built-in evaluation scenarios (and "
                      "optionally benchmark corpora)");
  gen_scenario->add_option("--out-dir", gen.out_dir, "Output directory")
      ->required();
  gen_scenario->add_flag("--reid-bench", gen.reid_bench,
                         "Also write the 8-identity re-identification "
                         "benchmark (profiles + frames)");
  gen_scenario->add_flag("--gesture-corpus", gen.gesture_corpus,
                         "Also write train/test gesture landmark corpora");
  gen_scenario->add_option("--seed", gen.seed, "Benchmark seed")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (calibrate->parsed()) return run_calibrate(cal);
    if (identify->parsed()) return run_identify(ident);
    if (train_gesture->parsed()) return run_train_gesture(tg);
    if (eval_gesture->parsed()) return run_eval_gesture(eg);
    if (eval_reid->parsed()) return run_eval_reid(er);
    if (simulate->parsed()) return run_simulate(sim);
    if (gen_scenario->parsed()) return run_gen_scenario(gen);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidInputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CalibrationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
