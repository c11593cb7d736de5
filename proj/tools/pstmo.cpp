#include <CLI11.hpp>

#include <nlohmann/json.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "pstmo/pstmo.hpp"

namespace {

using namespace pstmo;

constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitRuntime = 4;

struct TrainFlags {
  std::string config, data, val, out, from_pretrained, resume;
  std::optional<std::size_t> epochs, batch, n_frames, stride, ms, workers, window_step;
  std::optional<double> qt;
  std::optional<std::uint64_t> seed;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool finetune) {
  cmd->add_option("--config", f.config, "Run configuration (JSON)");
  cmd->add_option("--data", f.data, "Training dataset directory (overrides data.train)");
  cmd->add_option("--val", f.val, "Validation dataset directory (overrides data.val)");
  cmd->add_option("--out", f.out, "Run directory (overrides out_dir)");
  cmd->add_option("--epochs", f.epochs, "Epochs for this stage");
  cmd->add_option("--batch", f.batch, "Batch size");
  cmd->add_option("--n-frames", f.n_frames, "Window length N (odd)");
  cmd->add_option("--stride", f.stride, "Temporal downsampling rate s");
  cmd->add_option("--window-step", f.window_step, "Spacing between training window centers");
  cmd->add_option("--qt", f.qt, "Temporal masking ratio");
  cmd->add_option("--ms", f.ms, "Masked joints per surviving frame");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--workers", f.workers, "Worker threads");
  cmd->add_option("--resume", f.resume, "Continue from a checkpoint of this stage");
  if (finetune) cmd->add_option("--from-pretrained", f.from_pretrained, "Stage-I checkpoint whose encoder initializes the model");
}

ModelConfig with_frames(ModelConfig m, std::size_t n) {
  m.frames = n;
  if (m.use_mofa) m.mofa_depth = mofa_depth_for(n, m.kernel);
  return m;
}

RunConfig resolve(const TrainFlags& f, bool finetune) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (!f.data.empty()) cfg.data.train = f.data;
  if (!f.val.empty()) cfg.data.val = f.val;
  if (!f.out.empty()) cfg.out_dir = f.out;
  if (f.epochs) (finetune ? cfg.optim.epochs_stage2 : cfg.optim.epochs_stage1) = *f.epochs;
  if (f.batch) cfg.optim.batch_size = *f.batch;
  if (f.n_frames) cfg.model = with_frames(cfg.model, *f.n_frames);
  if (f.stride) cfg.data.stride = *f.stride;
  if (f.window_step) cfg.data.window_step = *f.window_step;
  if (f.qt) cfg.mask.temporal_ratio = *f.qt;
  if (f.ms) cfg.mask.masked_joints = *f.ms;
  if (f.seed) cfg.seed = *f.seed;
  if (f.workers) cfg.workers = *f.workers;
  if (!f.resume.empty()) cfg.resume = f.resume;
  if (!f.from_pretrained.empty()) cfg.pretrained = f.from_pretrained;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainFlags& f, bool finetune) {
  const RunConfig cfg = resolve(f, finetune);
  const CorpusSplit data = load_split(cfg);
  TrainHooks hooks;
  hooks.progress = &std::cout;
  const StageResult r = finetune ? run_stage2(cfg, data, hooks) : run_stage1(cfg, data, hooks);
  nlohmann::json done = {{"done", finetune ? "finetune" : "pretrain"},
                         {"run_dir", cfg.out_dir},
                         {"final_checkpoint", r.final_checkpoint.string()},
                         {"best_checkpoint", r.best_checkpoint.string()}};
  if (r.best_report) done["best"] = to_json(*r.best_report);
  std::cout << done.dump() << std::endl;
  return 0;
}

struct EvalFlags {
  std::string ckpt, data, out;
  bool flip = false, shuffle = false, exclude_root = false;
  double noise_sigma = 0.0;
  std::optional<std::size_t> n_frames, stride;
  std::size_t window_step = 1, workers = 1;
  std::uint64_t seed = 0;
};

std::size_t checkpoint_stride(const Checkpoint& ck) { return ck.extra.value("stride", std::size_t{1}); }

int cmd_eval(const EvalFlags& f) {
  const Checkpoint ck = load_checkpoint(f.ckpt);
  require(ck.stage == Stage::finetune, ErrorCode::invalid_argument, "evaluation needs a fine-tuning checkpoint");
  if (f.n_frames)
    require(*f.n_frames == ck.config.frames, ErrorCode::shape_mismatch,
            "--n-frames " + std::to_string(*f.n_frames) + " does not match the checkpoint (N=" + std::to_string(ck.config.frames) + ")");
  Dataset ds = load_dataset(f.data);
  require(ds.skeleton.num_joints() == ck.config.joints, ErrorCode::shape_mismatch, "dataset joint count does not match the checkpoint");
  const std::size_t stride = f.stride.value_or(checkpoint_stride(ck));
  const Corpus corpus = make_corpus(std::move(ds.sequences), ds.skeleton, ck.config.frames, stride, f.window_step);
  const StmoNetwork net(ck.config);
  const MetricReport rep = evaluate(net, ck.params, corpus, {f.flip, f.noise_sigma, f.shuffle, f.seed, f.workers, !f.exclude_root});
  const nlohmann::json j = to_json(rep);
  if (!f.out.empty()) {
    le::write_file(fs::path(f.out) / "metrics.csv", to_csv(rep));
    le::write_file(fs::path(f.out) / "metrics.json", j.dump(2) + "\n");
  }
  std::cout << j.dump() << std::endl;
  return 0;
}

struct AttnFlags {
  std::string ckpt, data, out;
  std::size_t window_index = 0;
  std::optional<std::size_t> stride;
  double qt = 0.8;
  std::size_t ms = 2;
  std::uint64_t seed = 0;
};

int cmd_attn(const AttnFlags& f) {
  const Checkpoint ck = load_checkpoint(f.ckpt);
  Dataset ds = load_dataset(f.data);
  require(ds.skeleton.num_joints() == ck.config.joints, ErrorCode::shape_mismatch, "dataset joint count does not match the checkpoint");
  const Corpus corpus = make_corpus(std::move(ds.sequences), ds.skeleton, ck.config.frames, f.stride.value_or(checkpoint_stride(ck)), 1);
  require(f.window_index < corpus.size(), ErrorCode::invalid_argument,
          "window index " + std::to_string(f.window_index) + " out of range (" + std::to_string(corpus.size()) + " windows)");
  const Mat<float> window = to_matrix<float>(corpus.window(f.window_index).inputs);
  MaskPlan plan = MaskPlan::identity(ck.config.frames);
  if (ck.stage == Stage::pretrain) {
    MaskConfig mc;
    mc.temporal_ratio = f.qt;
    mc.masked_joints = f.ms;
    Rng rng(derive_seed(f.seed, f.window_index));
    plan = build_plan(mc, ck.config.frames, ck.config.joints, rng);
  }
  const auto dumps = export_attention(ck.config, ck.params, ck.stage, window, plan);
  const auto index = write_attention(dumps, f.out);
  std::cout << nlohmann::json{{"out", f.out}, {"dumps", index.size()}}.dump() << std::endl;
  return 0;
}

struct CountFlags {
  std::string config, preset, stage = "finetune";
  std::optional<std::size_t> n_frames;
};

int cmd_count(const CountFlags& f) {
  require(f.config.empty() || f.preset.empty(), ErrorCode::invalid_argument, "give --config or --preset, not both");
  ModelConfig m = preset_small();
  if (!f.preset.empty()) m = model_preset(f.preset, f.n_frames.value_or(243));
  if (!f.config.empty()) m = load_run_config(f.config).model;
  if (f.n_frames && f.preset.empty()) m = with_frames(m, *f.n_frames);
  nlohmann::json j = to_json(complexity(m, parse_stage(f.stage)));
  j["model"] = to_json(m);
  j["stage"] = f.stage;
  std::cout << j.dump() << std::endl;
  return 0;
}

struct SynthFlags {
  std::string out, skeleton = "h36m17";
  std::size_t frames = 600, sequences = 1;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthFlags& f) {
  Dataset ds;
  ds.skeleton = skeleton_by_name(f.skeleton);
  ds.sequences = synth_sequences(ds.skeleton, f.sequences, f.frames, f.seed);
  save_dataset(f.out, ds);
  std::cout << nlohmann::json{{"out", f.out}, {"sequences", f.sequences}, {"frames", f.frames}}.dump() << std::endl;
  return 0;
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << nlohmann::json{{"error", code}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage 2D-to-3D pose lifting: synthetic data, pre-training, fine-tuning, evaluation and analysis"};
  app.require_subcommand(1);

  SynthFlags synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic skeleton-motion corpus");
  c_synth->add_option("--out", synth.out, "Output dataset directory")->required();
  c_synth->add_option("--frames", synth.frames, "Frames per sequence");
  c_synth->add_option("--sequences", synth.sequences, "Number of sequences");
  c_synth->add_option("--seed", synth.seed, "Random seed");
  c_synth->add_option("--skeleton", synth.skeleton, "Skeleton (h36m17, toy5)");

  TrainFlags pre, fine;
  auto* c_pre = app.add_subcommand("pretrain", "Masked pose modeling pre-training (Stage I)");
  add_train_flags(c_pre, pre, false);
  auto* c_fine = app.add_subcommand("finetune", "Fine-tuning with 3D supervision (Stage II)");
  add_train_flags(c_fine, fine, true);

  EvalFlags ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a fine-tuned checkpoint");
  c_eval->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  c_eval->add_option("--data", ev.data, "Dataset directory")->required();
  c_eval->add_option("--out", ev.out, "Directory for metrics.csv and metrics.json");
  c_eval->add_flag("--flip", ev.flip, "Average with the prediction on the horizontally flipped input");
  c_eval->add_option("--noise-sigma", ev.noise_sigma, "Gaussian noise on 2D inputs (normalized units)");
  c_eval->add_flag("--shuffle", ev.shuffle, "Randomly permute input frames inside each window");
  c_eval->add_flag("--exclude-root", ev.exclude_root, "Leave the root joint out of the metric averages");
  c_eval->add_option("--n-frames", ev.n_frames, "Expected window length; must match the checkpoint");
  c_eval->add_option("--stride", ev.stride, "Temporal downsampling rate (default: from the checkpoint)");
  c_eval->add_option("--window-step", ev.window_step, "Spacing between evaluated window centers");
  c_eval->add_option("--workers", ev.workers, "Worker threads");
  c_eval->add_option("--seed", ev.seed, "Seed for noise and shuffling");

  AttnFlags at;
  auto* c_attn = app.add_subcommand("attn", "Export attention maps as CSV and SVG");
  c_attn->add_option("--ckpt", at.ckpt, "Checkpoint")->required();
  c_attn->add_option("--data", at.data, "Dataset directory")->required();
  c_attn->add_option("--window-index", at.window_index, "Window to visualize");
  c_attn->add_option("--out", at.out, "Output directory")->required();
  c_attn->add_option("--stride", at.stride, "Temporal downsampling rate (default: from the checkpoint)");
  c_attn->add_option("--qt", at.qt, "Temporal masking ratio (pre-training checkpoints)");
  c_attn->add_option("--ms", at.ms, "Masked joints per frame (pre-training checkpoints)");
  c_attn->add_option("--seed", at.seed, "Mask seed");

  CountFlags co;
  auto* c_count = app.add_subcommand("count", "Parameter and FLOP accounting");
  c_count->add_option("--config", co.config, "Run configuration (JSON)");
  c_count->add_option("--preset", co.preset, "p-stmo-s, p-stmo, sem-only, tem-only, sem-tem");
  c_count->add_option("--n-frames", co.n_frames, "Window length N");
  c_count->add_option("--stage", co.stage, "pretrain or finetune");

  std::uint64_t rf_n = 0, rf_s = 1;
  auto* c_rf = app.add_subcommand("rf", "Temporal receptive field of N frames at downsampling rate s");
  c_rf->add_option("--n", rf_n, "Frames N")->required();
  c_rf->add_option("--s", rf_s, "Downsampling rate s")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kExitUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth);
    if (c_pre->parsed()) return cmd_train(pre, false);
    if (c_fine->parsed()) return cmd_train(fine, true);
    if (c_eval->parsed()) return cmd_eval(ev);
    if (c_attn->parsed()) return cmd_attn(at);
    if (c_count->parsed()) return cmd_count(co);
    if (c_rf->parsed()) {
      const auto r = receptive_field(rf_n, rf_s);
      std::cout << nlohmann::json{{"n", rf_n}, {"s", rf_s}, {"rf", r.rf}, {"span", r.span}}.dump() << std::endl;
      return 0;
    }
  } catch (const Error& e) {
    print_error(std::string(to_string(e.code())), e.what());
    return e.is_validation() ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
