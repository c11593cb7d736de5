#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "pstmo/data/io.hpp"
#include "pstmo/losses.hpp"
#include "pstmo/metrics.hpp"
#include "pstmo/model/checkpoint.hpp"
#include "pstmo/model/stmo.hpp"
#include "pstmo/train/optim.hpp"
#include "pstmo/train/run_config.hpp"

namespace pstmo {

/// Seed-stream labels; each random decision draws from derive_seed(seed, a, b, purpose).
namespace purpose {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t mask = 3;
inline constexpr std::uint64_t dropout = 4;
inline constexpr std::uint64_t flip = 5;
inline constexpr std::uint64_t val_mask = 6;
inline constexpr std::uint64_t noise = 7;
inline constexpr std::uint64_t eval_shuffle = 8;
}  // namespace purpose

struct WindowRef {
  std::size_t sequence = 0;
  std::size_t center = 0;
};

/// Sequences plus the list of window centers drawn from them.
struct Corpus {
  Skeleton skeleton = h36m17();
  std::vector<PoseSequence> sequences;
  std::vector<WindowRef> windows;
  std::size_t frames = 1;  // N
  std::size_t stride = 1;  // s

  std::size_t size() const { return windows.size(); }
  WindowSample window(std::size_t i) const {
    const auto& r = windows.at(i);
    return extract_window(sequences[r.sequence], r.center, frames, stride);
  }
  const PoseSequence& sequence_of(std::size_t i) const { return sequences[windows.at(i).sequence]; }
};

inline Corpus make_corpus(std::vector<PoseSequence> sequences, const Skeleton& skeleton, std::size_t n, std::size_t stride,
                          std::size_t step) {
  require(step >= 1, ErrorCode::invalid_argument, "window step must be >= 1");
  Corpus c;
  c.skeleton = skeleton;
  c.sequences = std::move(sequences);
  c.frames = n;
  c.stride = stride;
  for (std::size_t s = 0; s < c.sequences.size(); ++s) {
    c.sequences[s].validate();
    require(c.sequences[s].num_joints() == skeleton.num_joints(), ErrorCode::shape_mismatch, "sequence joint count does not match skeleton");
    for (std::size_t t = 0; t < c.sequences[s].length(); t += step) c.windows.push_back({s, t});
  }
  return c;
}

struct CorpusSplit {
  Corpus train, val;
};

/// Builds train and validation corpora from the data section of a run config.
inline CorpusSplit load_split(const RunConfig& cfg) {
  require(!cfg.data.train.empty(), ErrorCode::invalid_argument, "data.train is not set");
  Dataset train = load_dataset(cfg.data.train);
  require(train.skeleton.num_joints() == cfg.model.joints, ErrorCode::shape_mismatch,
          "dataset has " + std::to_string(train.skeleton.num_joints()) + " joints, model expects " + std::to_string(cfg.model.joints));
  std::vector<PoseSequence> val_seqs;
  if (!cfg.data.val.empty()) {
    Dataset val = load_dataset(cfg.data.val);
    require(val.skeleton.name == train.skeleton.name, ErrorCode::shape_mismatch, "train and validation skeletons differ");
    val_seqs = std::move(val.sequences);
  } else if (cfg.data.val_fraction > 0.0 && train.sequences.size() > 1) {
    std::size_t hold = static_cast<std::size_t>(std::ceil(cfg.data.val_fraction * static_cast<double>(train.sequences.size())));
    hold = std::clamp<std::size_t>(hold, 1, train.sequences.size() - 1);
    val_seqs.assign(train.sequences.end() - static_cast<std::ptrdiff_t>(hold), train.sequences.end());
    train.sequences.resize(train.sequences.size() - hold);
  }
  CorpusSplit split;
  split.train = make_corpus(std::move(train.sequences), train.skeleton, cfg.model.frames, cfg.data.stride, cfg.data.window_step);
  split.val = make_corpus(std::move(val_seqs), train.skeleton, cfg.model.frames, cfg.data.stride, cfg.data.eval_window_step);
  return split;
}

/// Runs fn(i) for i in [0, count) on up to `workers` threads.
inline void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Windows per gradient group. Groups are summed in index order, so the reduction is the same for any worker count.
inline constexpr std::size_t kGradientGroup = 4;

/**
 * Sum over `count` items of per-item gradients, reduced in a fixed order. Groups are evaluated in waves of
 * `workers`; each wave is folded into the total in group order. Returns the summed loss.
 */
inline double reduce_gradients(std::size_t count, std::size_t workers, const ParameterStore<float>& params, ParameterStore<float>& total,
                               const std::function<double(std::size_t, ParameterStore<float>&)>& item) {
  total = params.zeros_like();
  const std::size_t groups = (count + kGradientGroup - 1) / kGradientGroup;
  workers = std::max<std::size_t>(1, workers);
  double loss = 0.0;
  for (std::size_t first = 0; first < groups; first += workers) {
    const std::size_t wave = std::min(workers, groups - first);
    std::vector<ParameterStore<float>> grads(wave);
    std::vector<double> losses(wave, 0.0);
    parallel_for(wave, workers, [&](std::size_t k) {
      grads[k] = params.zeros_like();
      const std::size_t g = first + k;
      for (std::size_t i = g * kGradientGroup; i < std::min(count, (g + 1) * kGradientGroup); ++i) losses[k] += item(i, grads[k]);
    });
    for (std::size_t k = 0; k < wave; ++k) {
      total.add_scaled(grads[k], 1.0f);
      loss += losses[k];
    }
  }
  return loss;
}

/// Stage-I loss and gradient for one window under `plan`.
inline double pretrain_window_gradient(const PretrainNetwork& net, const ParameterStore<float>& params, const WindowSample& w,
                                       const MaskPlan& plan, ForwardContext& ctx, ParameterStore<float>& grads, float weight = 1.0f) {
  const Mat<float> clean = to_matrix<float>(w.inputs);
  typename PretrainNetwork::Cache<float> cache;
  const Mat<float> recon = net.forward(params, clean, plan, ctx, cache);
  const auto loss = pretrain_loss(recon, clean);
  net.backward(params, grads, cache, Mat<float>(loss.grad * weight));
  return loss.value;
}

/// Stage-II combined loss and gradient for one window.
inline LossValue finetune_window_gradient(const StmoNetwork& net, const ParameterStore<float>& params, const WindowSample& w, double lambda,
                                          ForwardContext& ctx, ParameterStore<float>& grads, float weight = 1.0f) {
  require(w.has_targets(), ErrorCode::invalid_argument, "fine-tuning needs 3D targets");
  typename StmoNetwork::Cache<float> cache;
  const auto out = net.forward(params, to_matrix<float>(w.inputs), ctx, cache);
  const auto single = loss_single(out.center, to_matrix<float>(w.target_center));
  const auto multiple = loss_multiple(out.frames, to_matrix<float>(w.targets_all));
  const float lam = static_cast<float>(lambda);
  net.backward(params, grads, cache, Mat<float>(single.grad * weight), Mat<float>(multiple.grad * (lam * weight)));
  return total_loss(single.value, multiple.value, lambda);
}

struct StepInfo {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double lr = 0.0;
};

inline void check_finite_loss(double loss, const StepInfo& info) {
  if (!std::isfinite(loss))
    throw Error(ErrorCode::non_finite, "non-finite loss at step " + std::to_string(info.step) + " (epoch " + std::to_string(info.epoch) +
                                           ", lr " + std::to_string(info.lr) + ")");
}

/// One Stage-I update over the windows `batch` (corpus indices). Returns the mean batch loss.
inline double pretrain_step(const PretrainNetwork& net, ParameterStore<float>& params, Adam& adam, const Corpus& corpus,
                            const std::vector<std::size_t>& batch, const RunConfig& cfg, const StepInfo& info) {
  const float weight = 1.0f / static_cast<float>(batch.size());
  ParameterStore<float> grads;
  const double loss = reduce_gradients(batch.size(), cfg.workers, params, grads, [&](std::size_t i, ParameterStore<float>& g) {
    const std::size_t id = batch[i];
    Rng mask_rng(derive_seed(cfg.seed, info.epoch, id, purpose::mask));
    Rng drop_rng(derive_seed(cfg.seed, info.epoch, id, purpose::dropout));
    const MaskPlan plan = build_plan(cfg.mask, cfg.model.frames, cfg.model.joints, mask_rng);
    ForwardContext ctx{true, cfg.model.dropout, &drop_rng, nullptr};
    return pretrain_window_gradient(net, params, corpus.window(id), plan, ctx, g, weight);
  }) / static_cast<double>(batch.size());
  check_finite_loss(loss, info);
  clip_global_norm(grads, cfg.optim.clip_norm);
  adam.update(params, grads, info.lr);
  return loss;
}

/// Batch positions that receive the training-time horizontal flip: a random half.
inline std::vector<bool> flip_selection(std::size_t batch, std::uint64_t seed, const StepInfo& info) {
  std::vector<std::size_t> order(batch);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, info.epoch, info.step, purpose::flip));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> flip(batch, false);
  for (std::size_t k = 0; k < batch / 2; ++k) flip[order[k]] = true;
  return flip;
}

/// One Stage-II update. Returns the mean combined loss.
inline double finetune_step(const StmoNetwork& net, ParameterStore<float>& params, Adam& adam, const Corpus& corpus,
                            const std::vector<std::size_t>& batch, const RunConfig& cfg, const StepInfo& info) {
  const float weight = 1.0f / static_cast<float>(batch.size());
  const auto flips = cfg.flip_train ? flip_selection(batch.size(), cfg.seed, info) : std::vector<bool>(batch.size(), false);
  ParameterStore<float> grads;
  const double loss = reduce_gradients(batch.size(), cfg.workers, params, grads, [&](std::size_t i, ParameterStore<float>& g) {
    const std::size_t id = batch[i];
    Rng drop_rng(derive_seed(cfg.seed, info.epoch, id, purpose::dropout));
    ForwardContext ctx{true, cfg.model.dropout, &drop_rng, nullptr};
    WindowSample w = corpus.window(id);
    if (flips[i]) w = horizontal_flip(w, corpus.skeleton);
    return finetune_window_gradient(net, params, w, cfg.loss_lambda, ctx, g, weight).value;
  }) / static_cast<double>(batch.size());
  check_finite_loss(loss, info);
  clip_global_norm(grads, cfg.optim.clip_norm);
  adam.update(params, grads, info.lr);
  return loss;
}

struct EvalOptions {
  bool flip = false;
  double noise_sigma = 0.0;
  bool shuffle = false;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool include_root = true;
};

/// Center-frame prediction in millimeters (1 x 3J), optionally averaged with the un-flipped prediction on the flipped input.
inline Mat<double> predict_center(const StmoNetwork& net, const ParameterStore<float>& params, const PoseArray& inputs, const Skeleton& skeleton,
                                  bool flip) {
  ForwardContext ctx;
  const Mat<float> pred = net.forward(params, to_matrix<float>(inputs), ctx).center;
  Mat<double> out = pred.cast<double>();
  if (!flip) return out;
  const Mat<float> flipped = net.forward(params, to_matrix<float>(horizontal_flip(inputs, skeleton)), ctx).center;
  const PoseArray unflipped = horizontal_flip(to_pose_array<float>(flipped, inputs.joints, 3), skeleton);
  return (out + to_matrix<double>(unflipped)) * 0.5;
}

/// Metrics of center predictions against center targets over every window of `corpus`.
inline MetricReport evaluate(const StmoNetwork& net, const ParameterStore<float>& params, const Corpus& corpus, const EvalOptions& opt) {
  require(opt.noise_sigma >= 0.0, ErrorCode::invalid_argument, "noise sigma must be >= 0");
  Corpus input = corpus;
  if (opt.noise_sigma > 0.0)
    for (std::size_t s = 0; s < input.sequences.size(); ++s) {
      Rng rng(derive_seed(opt.seed, s, 0, purpose::noise));
      input.sequences[s] = add_gaussian_noise(input.sequences[s], opt.noise_sigma, rng);
    }
  std::vector<Mat<double>> preds(corpus.size()), targets(corpus.size());
  parallel_for(corpus.size(), opt.workers, [&](std::size_t i) {
    WindowSample w = input.window(i);
    require(w.has_targets(), ErrorCode::invalid_argument, "evaluation needs 3D targets");
    if (opt.shuffle) {
      Rng rng(derive_seed(opt.seed, i, 0, purpose::eval_shuffle));
      w = shuffle_frames(w, rng);
    }
    preds[i] = predict_center(net, params, w.inputs, corpus.skeleton, opt.flip);
    targets[i] = to_matrix<double>(w.target_center);
  });
  MetricAccumulator acc(opt.include_root);
  for (std::size_t i = 0; i < corpus.size(); ++i) acc.add(corpus.sequence_of(i).action, preds[i], targets[i]);
  return acc.report();
}

/// Mean reconstruction MSE over `corpus` with per-window plans that do not change between calls.
inline double evaluate_reconstruction(const PretrainNetwork& net, const ParameterStore<float>& params, const Corpus& corpus, const MaskConfig& mask,
                                      std::uint64_t seed, std::size_t workers = 1) {
  if (corpus.size() == 0) return 0.0;
  std::vector<double> losses(corpus.size());
  const auto& c = net.config();
  parallel_for(corpus.size(), workers, [&](std::size_t i) {
    Rng rng(derive_seed(seed, i, 0, purpose::val_mask));
    const MaskPlan plan = build_plan(mask, c.frames, c.joints, rng);
    ForwardContext ctx;
    const Mat<float> clean = to_matrix<float>(corpus.window(i).inputs);
    losses[i] = pretrain_loss(net.forward(params, clean, plan, ctx), clean).value;
  });
  std::sort(losses.begin(), losses.end());
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

/// Window order for an epoch, split into batches.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, epoch, 0, purpose::shuffle));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < count; i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
  return batches;
}

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;
  std::optional<ActionMetrics> metrics;
  std::optional<double> loss;
};

inline std::string format_row(const MetricsRow& r) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  std::string out = std::to_string(r.epoch) + "," + r.split + ",";
  if (r.metrics) out += num(r.metrics->mpjpe) + "," + num(r.metrics->p_mpjpe) + "," + num(r.metrics->pck150) + "," + num(r.metrics->auc) + ",";
  else out += ",,,,";
  if (r.loss) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", *r.loss);
    out += buf;
  }
  return out + "\n";
}

inline constexpr const char* kMetricsHeader = "epoch,split,mpjpe,p_mpjpe,pck150,auc,loss\n";

/// Run directory: config.json, metrics.csv, checkpoints/.
class RunDirectory {
 public:
  RunDirectory(const fs::path& root, const RunConfig& cfg, bool append) : root_(root) {
    std::error_code ec;
    fs::create_directories(root_ / "checkpoints", ec);
    require(!ec, ErrorCode::io_error, "cannot create run directory '" + root_.string() + "'");
    le::write_file(root_ / "config.json", to_json(cfg).dump(2) + "\n");
    if (!append || !fs::exists(metrics_path())) le::write_file(metrics_path(), kMetricsHeader);
  }

  fs::path metrics_path() const { return root_ / "metrics.csv"; }
  fs::path checkpoint_path(std::size_t epoch) const { return root_ / "checkpoints" / ("epoch" + std::to_string(epoch) + ".ckpt"); }
  fs::path best_path() const { return root_ / "best.ckpt"; }
  const fs::path& root() const { return root_; }

  void append(const MetricsRow& row) const {
    std::ofstream out(metrics_path(), std::ios::app | std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::io_error, "cannot append to '" + metrics_path().string() + "'");
    out << format_row(row);
  }

 private:
  fs::path root_;
};

struct TrainHooks {
  std::ostream* progress = nullptr;  // single-line JSON records
  std::function<void(std::size_t epoch, const ParameterStore<float>&)> on_epoch;
};

inline void emit(const TrainHooks& hooks, const nlohmann::json& record) {
  if (hooks.progress) *hooks.progress << record.dump() << std::endl;
}

struct StageResult {
  ParameterStore<float> params;
  fs::path final_checkpoint;
  fs::path best_checkpoint;
  std::optional<MetricReport> best_report;
  std::optional<MetricReport> final_report;
  std::vector<double> epoch_losses;
  std::vector<double> val_history;  // reconstruction MSE (Stage I) or pooled MPJPE (Stage II), index = epoch
};

namespace detail {

inline Checkpoint make_checkpoint(const RunConfig& cfg, Stage stage, const ParameterStore<float>& params, const Adam& adam, std::size_t epoch,
                                  std::uint64_t step, double best) {
  Checkpoint ck;
  ck.config = cfg.model;
  ck.stage = stage;
  ck.params = params;
  ck.epoch = epoch;
  ck.step = step;
  ck.seed = cfg.seed;
  ck.optimizer = adam.state();
  ck.extra = {{"best_val", best}, {"stride", cfg.data.stride}};
  return ck;
}

}  // namespace detail

/// Masked pose modeling pre-training of encoder + decoder.
inline StageResult run_stage1(const RunConfig& cfg, const CorpusSplit& data, const TrainHooks& hooks = {}) {
  cfg.validate();
  PretrainNetwork net(cfg.model);
  ParameterStore<float> params = init_parameters<float>(cfg.model, Stage::pretrain, derive_seed(cfg.seed, 0, 0, purpose::init));
  Adam adam(cfg.optim, params);
  std::size_t start = 0;
  std::uint64_t step = 0;
  double best = std::numeric_limits<double>::infinity();
  if (!cfg.resume.empty()) {
    Checkpoint ck = load_checkpoint(cfg.resume);
    require(ck.stage == Stage::pretrain, ErrorCode::invalid_argument, "resume checkpoint is not a pre-training checkpoint");
    check_layout(ck.params, cfg.model, Stage::pretrain, cfg.resume);
    params = std::move(ck.params);
    if (ck.optimizer) adam = Adam(cfg.optim, std::move(*ck.optimizer));
    start = ck.epoch;
    step = ck.step;
    best = ck.extra.value("best_val", best);
  }
  RunDirectory dir(cfg.out_dir, cfg, start > 0);
  const Corpus& val = data.val.size() > 0 ? data.val : data.train;
  StageResult result;
  auto validate_epoch = [&](std::size_t epoch, std::optional<double> train_loss) {
    if (train_loss) dir.append({epoch, "train", std::nullopt, train_loss});
    const double v = evaluate_reconstruction(net, params, val, cfg.mask, cfg.seed, cfg.workers);
    dir.append({epoch, "val", std::nullopt, v});
    result.val_history.push_back(v);
    if (v < best) {
      best = v;
      save_checkpoint(dir.best_path(), detail::make_checkpoint(cfg, Stage::pretrain, params, adam, epoch, step, best));
      result.best_checkpoint = dir.best_path();
    }
    return v;
  };
  if (start == 0) {
    const double v = validate_epoch(0, std::nullopt);
    save_checkpoint(dir.checkpoint_path(0), detail::make_checkpoint(cfg, Stage::pretrain, params, adam, 0, step, best));
    result.final_checkpoint = dir.checkpoint_path(0);
    emit(hooks, {{"stage", "pretrain"}, {"epoch", 0}, {"val_recon_mse", v}});
  }
  const std::size_t epochs = cfg.optim.epochs_stage1;
  for (std::size_t e = start; e < epochs; ++e) {
    StepInfo info{e, step, lr_schedule(e, cfg.optim.lr_stage1, cfg.optim.decay)};
    double sum = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : epoch_batches(data.train.size(), cfg.optim.batch_size, cfg.seed, e)) {
      info.step = step++;
      sum += pretrain_step(net, params, adam, data.train, batch, cfg, info) * static_cast<double>(batch.size());
      seen += batch.size();
    }
    const double loss = seen ? sum / static_cast<double>(seen) : 0.0;
    result.epoch_losses.push_back(loss);
    const std::size_t done = e + 1;
    nlohmann::json rec = {{"stage", "pretrain"}, {"epoch", done}, {"step", step}, {"lr", info.lr}, {"loss", loss}};
    if (done % cfg.eval_every == 0 || done == epochs) rec["val_recon_mse"] = validate_epoch(done, loss);
    else dir.append({done, "train", std::nullopt, loss});
    if (done % cfg.checkpoint_every == 0 || done == epochs) {
      save_checkpoint(dir.checkpoint_path(done), detail::make_checkpoint(cfg, Stage::pretrain, params, adam, done, step, best));
      result.final_checkpoint = dir.checkpoint_path(done);
    }
    emit(hooks, rec);
    if (hooks.on_epoch) hooks.on_epoch(done, params);
  }
  result.params = std::move(params);
  return result;
}

/// Loads the encoder of a Stage-I checkpoint into a freshly initialized Stage-II store.
inline void load_pretrained_encoder(const fs::path& path, ParameterStore<float>& params) {
  const Checkpoint ck = load_checkpoint(path);
  require(ck.stage == Stage::pretrain, ErrorCode::invalid_argument, "'" + path.string() + "' is not a pre-training checkpoint");
  transfer_encoder(ck.params, params);
}

/// Fine-tuning with the combined single/multi-frame loss; keeps the best checkpoint by validation MPJPE.
inline StageResult run_stage2(const RunConfig& cfg, const CorpusSplit& data, const TrainHooks& hooks = {}) {
  cfg.validate();
  require(data.val.size() > 0, ErrorCode::invalid_argument, "fine-tuning needs validation windows");
  StmoNetwork net(cfg.model);
  ParameterStore<float> params = init_parameters<float>(cfg.model, Stage::finetune, derive_seed(cfg.seed, 0, 0, purpose::init));
  if (!cfg.pretrained.empty()) load_pretrained_encoder(cfg.pretrained, params);
  Adam adam(cfg.optim, params);
  std::size_t start = 0;
  std::uint64_t step = 0;
  double best = std::numeric_limits<double>::infinity();
  if (!cfg.resume.empty()) {
    Checkpoint ck = load_checkpoint(cfg.resume);
    require(ck.stage == Stage::finetune, ErrorCode::invalid_argument, "resume checkpoint is not a fine-tuning checkpoint");
    check_layout(ck.params, cfg.model, Stage::finetune, cfg.resume);
    params = std::move(ck.params);
    if (ck.optimizer) adam = Adam(cfg.optim, std::move(*ck.optimizer));
    start = ck.epoch;
    step = ck.step;
    best = ck.extra.value("best_val", best);
  }
  RunDirectory dir(cfg.out_dir, cfg, start > 0);
  const EvalOptions eval_opt{cfg.flip_eval, 0.0, false, cfg.seed, cfg.workers};
  StageResult result;
  auto validate_epoch = [&](std::size_t epoch, std::optional<double> train_loss) {
    if (train_loss) dir.append({epoch, "train", std::nullopt, train_loss});
    const MetricReport rep = evaluate(net, params, data.val, eval_opt);
    dir.append({epoch, "val", rep.pooled, std::nullopt});
    result.val_history.push_back(rep.pooled.mpjpe);
    result.final_report = rep;
    if (rep.pooled.mpjpe < best) {
      best = rep.pooled.mpjpe;
      save_checkpoint(dir.best_path(), detail::make_checkpoint(cfg, Stage::finetune, params, adam, epoch, step, best));
      result.best_checkpoint = dir.best_path();
      result.best_report = rep;
    }
    return rep;
  };
  if (start == 0) {
    const auto rep = validate_epoch(0, std::nullopt);
    save_checkpoint(dir.checkpoint_path(0), detail::make_checkpoint(cfg, Stage::finetune, params, adam, 0, step, best));
    result.final_checkpoint = dir.checkpoint_path(0);
    emit(hooks, {{"stage", "finetune"}, {"epoch", 0}, {"val_mpjpe", rep.pooled.mpjpe}, {"val_p_mpjpe", rep.pooled.p_mpjpe}});
  }
  const std::size_t epochs = cfg.optim.epochs_stage2;
  for (std::size_t e = start; e < epochs; ++e) {
    StepInfo info{e, step, lr_schedule(e, cfg.optim.lr_stage2, cfg.optim.decay)};
    double sum = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : epoch_batches(data.train.size(), cfg.optim.batch_size, cfg.seed, e)) {
      info.step = step++;
      sum += finetune_step(net, params, adam, data.train, batch, cfg, info) * static_cast<double>(batch.size());
      seen += batch.size();
    }
    const double loss = seen ? sum / static_cast<double>(seen) : 0.0;
    result.epoch_losses.push_back(loss);
    const std::size_t done = e + 1;
    nlohmann::json rec = {{"stage", "finetune"}, {"epoch", done}, {"step", step}, {"lr", info.lr}, {"loss", loss}};
    if (done % cfg.eval_every == 0 || done == epochs) {
      const auto rep = validate_epoch(done, loss);
      rec["val_mpjpe"] = rep.pooled.mpjpe;
      rec["val_p_mpjpe"] = rep.pooled.p_mpjpe;
    } else {
      dir.append({done, "train", std::nullopt, loss});
    }
    if (done % cfg.checkpoint_every == 0 || done == epochs) {
      save_checkpoint(dir.checkpoint_path(done), detail::make_checkpoint(cfg, Stage::finetune, params, adam, done, step, best));
      result.final_checkpoint = dir.checkpoint_path(done);
    }
    emit(hooks, rec);
    if (hooks.on_epoch) hooks.on_epoch(done, params);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace pstmo
