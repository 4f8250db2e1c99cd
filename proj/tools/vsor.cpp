// vsor: evaluation, dataset statistics, synthesis, training and gradient checks.
// Reports go to stdout as JSON; diagnostics go to stderr.
// Exit codes: 0 success, 1 validation failure, 2 runtime error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vsor/annotation.hpp"
#include "vsor/config.hpp"
#include "vsor/dataset.hpp"
#include "vsor/gradcheck_suite.hpp"
#include "vsor/trainer.hpp"

namespace {

using namespace vsor;
using ojson = nlohmann::ordered_json;

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

/// Thrown when a command finished its report but the outcome is a failure.
struct CommandFailed {
  int code;
};

nlohmann::json optional_number(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

void emit(const ojson& report) { std::cout << report.dump(2) << "\n"; }

std::string sequence_label(const fs::path& root, const fs::path& seq) {
  const fs::path rel = fs::relative(seq, root);
  return rel == "." ? std::string(".") : rel.generic_string();
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string gt;
  std::string pred;
  double iou = kDefaultIouThreshold;
  std::string dump_maps;
};

void cmd_eval(const EvalArgs& a) {
  if (!(a.iou > 0.0 && a.iou <= 1.0)) throw ValidationError(ValidationKind::kInvalidConfig, "--iou must be in (0,1]");
  const fs::path gt_root(a.gt), pred_root(a.pred);
  if (!fs::is_directory(pred_root)) {
    throw ValidationError(ValidationKind::kMissingFile, pred_root.string() + " is not a directory");
  }
  const std::vector<fs::path> sequences = discover_sequences(gt_root);
  if (sequences.empty()) throw ValidationError(ValidationKind::kEmptyInput, "no sequences under " + gt_root.string());

  std::vector<std::string> missing;
  for (const fs::path& seq : sequences) {
    const fs::path pred_seq = pred_root / fs::relative(seq, gt_root);
    for (int idx : read_manifest(seq)) {
      if (!fs::exists(frame_pgm_path(pred_seq, idx)) || !fs::exists(frame_ranks_path(pred_seq, idx))) {
        missing.push_back(sequence_label(gt_root, seq) + "/" + frame_stem(idx));
      }
    }
  }
  if (!missing.empty()) {
    ojson report;
    report["error"] = "missing predicted frames";
    report["missing_frames"] = missing;
    emit(report);
    std::cerr << "vsor eval: " << missing.size() << " predicted frame(s) missing\n";
    throw CommandFailed{kExitValidation};
  }

  ojson frames = ojson::array();
  std::vector<FrameEval> evals;
  for (const fs::path& seq : sequences) {
    const fs::path pred_seq = pred_root / fs::relative(seq, gt_root);
    for (int idx : read_manifest(seq)) {
      const RankAnnotation gt = load_frame_annotation(seq, idx);
      const RankAnnotation pred = load_frame_annotation(pred_seq, idx);
      if (!gt.instance_map.same_size(pred.instance_map)) {
        throw ValidationError(ValidationKind::kShapeMismatch,
                              frame_pgm_path(pred_seq, idx).string() + ": size differs from ground truth");
      }
      const FrameEval e = evaluate_frame(gt, pred, a.iou);
      evals.push_back(e);
      ojson row;
      row["sequence"] = sequence_label(gt_root, seq);
      row["frame"] = idx;
      row["sa_sor"] = optional_number(e.sa_sor);
      row["mae"] = e.mae;
      frames.push_back(row);
      if (!a.dump_maps.empty()) {
        const RankMap map = annotation_to_rank_map(pred);
        InstanceMap scaled(map.width(), map.height(), 0);
        for (std::size_t p = 0; p < map.size(); ++p) {
          scaled[p] = static_cast<std::uint16_t>(std::lround(map[p] * 65535.0));
        }
        write_pgm(fs::path(a.dump_maps) / fs::relative(seq, gt_root) / (frame_stem(idx) + ".pgm"), scaled);
      }
    }
  }
  const EvalSummary s = summarize(evals);
  ojson report;
  report["iou_threshold"] = a.iou;
  report["frames"] = frames;
  report["aggregate"] = {{"sa_sor", optional_number(s.sa_sor)},
                         {"sa_sor_undefined_count", s.sa_sor_undefined},
                         {"mae", s.mae},
                         {"frame_count", s.frame_count}};
  emit(report);
}

// ---------------------------------------------------------------------------

struct StatsArgs {
  std::string data;
  std::string per = "frame";
};

void cmd_stats(const StatsArgs& a) {
  const std::vector<fs::path> sequences = discover_sequences(a.data);
  if (sequences.empty()) throw ValidationError(ValidationKind::kEmptyInput, "no sequences under " + a.data);
  std::vector<std::vector<std::size_t>> per_video;
  std::vector<std::size_t> per_frame;
  for (const fs::path& seq : sequences) {
    std::vector<std::size_t> counts;
    for (int idx : read_manifest(seq)) counts.push_back(load_frame_annotation(seq, idx).instance_count());
    per_frame.insert(per_frame.end(), counts.begin(), counts.end());
    per_video.push_back(std::move(counts));
  }
  const DatasetStats s = a.per == "video" ? compute_video_stats(per_video) : compute_stats(per_frame);
  ojson report;
  report["per"] = a.per;
  report["sequence_count"] = sequences.size();
  report["frame_count"] = s.frame_count;
  report["unit_count"] = s.unit_count;
  report["invalid_rate"] = s.invalid_rate;
  const char* labels[] = {"1", "2", "3", "4", "5+"};
  ojson hist;
  for (std::size_t b = 0; b < 5; ++b) hist[labels[b]] = s.count_histogram[b];
  report["histogram"] = hist;
  emit(report);
}

// ---------------------------------------------------------------------------

RunConfig load_run_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  ConfigMap map = config_path.empty() ? ConfigMap{} : load_config_file(config_path);
  for (const std::string& o : overrides) set_config_entry(map, o);
  RunConfig c = apply_config(map);
  c.validate();
  return c;
}

struct SynthArgs {
  std::string out;
  std::size_t sequences = 1;
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
};

void cmd_synth(const SynthArgs& a) {
  if (a.sequences == 0) throw ValidationError(ValidationKind::kInvalidConfig, "--sequences must be positive");
  const RunConfig c = load_run_config(a.config, a.overrides);
  const std::size_t width = std::max<std::size_t>(4, std::to_string(a.sequences - 1).size());
  ojson names = ojson::array();
  std::size_t frames = 0;
  for (std::size_t i = 0; i < a.sequences; ++i) {
    std::string digits = std::to_string(i);
    digits.insert(0, width - digits.size(), '0');
    const std::string name = "seq_" + digits;
    const SequenceSample s = synth_generate(c.synth, derive_seed(a.seed, 12, i));
    write_sequence(fs::path(a.out) / name, s);
    frames += s.frames.size();
    names.push_back(name);
  }
  ojson report;
  report["out"] = a.out;
  report["seed"] = a.seed;
  report["sequences"] = names;
  report["frame_count"] = frames;
  report["config"] = to_json(c);
  emit(report);
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string params_out;
  std::string train_data;
  std::string eval_data;
};

std::vector<SequenceSample> load_all(const std::string& root) {
  std::vector<SequenceSample> out;
  for (const fs::path& seq : discover_sequences(root)) out.push_back(load_sequence(seq));
  if (out.empty()) throw ValidationError(ValidationKind::kEmptyInput, "no sequences under " + root);
  return out;
}

void cmd_train(const TrainArgs& a) {
  const RunConfig c = load_run_config(a.config, a.overrides);
  if (a.train_data.empty() != a.eval_data.empty()) {
    throw ValidationError(ValidationKind::kInvalidConfig, "--train-data and --eval-data go together");
  }
  SyntheticSplit split;
  if (a.train_data.empty()) {
    split = make_synthetic_split(c);
  } else {
    split.train = load_all(a.train_data);
    split.eval = load_all(a.eval_data);
  }
  const TrainResult r = train(c.model, split.train, split.eval);
  if (!a.params_out.empty()) write_file(a.params_out, params_to_json(r.params).dump() + "\n");

  ojson report;
  report["config"] = to_json(c);
  report["train_sequences"] = split.train.size();
  report["eval_sequences"] = split.eval.size();
  report["loss_curve"] = r.report.loss_curve;
  report["eval"] = {{"sa_sor", optional_number(r.report.eval.sa_sor)},
                    {"sa_sor_undefined_count", r.report.eval.sa_sor_undefined},
                    {"mae", r.report.eval.mae},
                    {"frame_count", r.report.eval.frame_count}};
  report["wall_clock_seconds"] = r.report.wall_clock_seconds;
  if (!a.params_out.empty()) report["params_out"] = a.params_out;
  emit(report);
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t seeds = 20;
  bool corrupt_backward = false;
};

void cmd_gradcheck(const GradcheckArgs& a) {
  if (a.seeds == 0) throw ValidationError(ValidationKind::kInvalidConfig, "--seeds must be positive");
  const auto rows = run_gradcheck_suite(a.seed, a.seeds, a.corrupt_backward ? 1.01 : 1.0);
  ojson checks = ojson::array();
  bool ok = true;
  for (const GradCheckRow& r : rows) {
    checks.push_back({{"name", r.name}, {"seeds", r.seeds}, {"max_rel_error", r.max_error}, {"pass", r.passed}});
    ok = ok && r.passed;
  }
  ojson report;
  report["seed"] = a.seed;
  report["tolerance"] = kGradCheckTolerance;
  report["checks"] = checks;
  report["all_passed"] = ok;
  emit(report);
  if (!ok) {
    std::cerr << "vsor gradcheck: finite-difference mismatch\n";
    throw CommandFailed{kExitValidation};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video salient object ranking toolkit"};
  app.require_subcommand(1);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score predicted rank annotations against ground truth");
  eval_cmd->add_option("--gt", eval.gt, "Ground-truth dataset directory")->required();
  eval_cmd->add_option("--pred", eval.pred, "Prediction directory with the same layout")->required();
  eval_cmd->add_option("--iou", eval.iou, "IoU threshold for instance matching")->capture_default_str();
  eval_cmd->add_option("--dump-maps", eval.dump_maps, "Write predicted rank maps as 16-bit PGM here");

  StatsArgs stats;
  auto* stats_cmd = app.add_subcommand("stats", "Salient-object count statistics");
  stats_cmd->add_option("--data", stats.data, "Dataset directory")->required();
  stats_cmd->add_option("--per", stats.per, "Aggregation unit")
      ->check(CLI::IsMember({"frame", "video"}))
      ->capture_default_str();

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic sequences");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--sequences", synth.sequences, "Number of sequences")->capture_default_str();
  synth_cmd->add_option("--config", synth.config, "Config file (key=value or JSON)");
  synth_cmd->add_option("--set", synth.overrides, "Config override key=value (repeatable)");
  synth_cmd->add_option("--seed", synth.seed, "Base seed")->capture_default_str();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model variant and report held-out metrics");
  train_cmd->add_option("--config", train_args.config, "Config file (key=value or JSON)");
  train_cmd->add_option("--set", train_args.overrides, "Config override key=value (repeatable)");
  train_cmd->add_option("--params-out", train_args.params_out, "Write trained parameters (JSON) here");
  train_cmd->add_option("--train-data", train_args.train_data, "Training sequences (default: synthetic)");
  train_cmd->add_option("--eval-data", train_args.eval_data, "Held-out sequences (default: synthetic)");

  GradcheckArgs grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  grad_cmd->add_option("--seed", grad.seed, "Base seed")->capture_default_str();
  grad_cmd->add_option("--seeds", grad.seeds, "Random instances per op")->capture_default_str();
  grad_cmd->add_flag("--corrupt-backward", grad.corrupt_backward, "Test hook: perturb analytic gradients")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*eval_cmd) cmd_eval(eval);
    if (*stats_cmd) cmd_stats(stats);
    if (*synth_cmd) cmd_synth(synth);
    if (*train_cmd) cmd_train(train_args);
    if (*grad_cmd) cmd_gradcheck(grad);
  } catch (const CommandFailed& f) {
    return f.code;
  } catch (const ValidationError& e) {
    std::cerr << "vsor: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "vsor: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
