#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

#include "pstmo/data/io.hpp"
#include "pstmo/masking.hpp"
#include "pstmo/model/config.hpp"
#include "pstmo/train/optim.hpp"

namespace pstmo {

struct DataConfig {
  std::string train;            // dataset directory or manifest
  std::string val;              // empty: hold out the last sequences of `train`
  double val_fraction = 0.2;
  std::size_t stride = 2;       // s, temporal subsampling inside a window
  std::size_t window_step = 1;  // spacing between training window centers
  std::size_t eval_window_step = 1;
};

struct RunConfig {
  ModelConfig model;
  MaskConfig mask;
  OptimConfig optim;
  DataConfig data;
  double loss_lambda = 1.0;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  std::size_t checkpoint_every = 1;
  std::size_t workers = 1;
  bool flip_train = true;
  bool flip_eval = true;
  std::string out_dir = "runs/default";
  std::string pretrained;  // Stage-I checkpoint for fine-tuning; empty means random init
  std::string resume;      // checkpoint of the same stage to continue from

  void validate() const {
    model.validate();
    mask.validate(model.joints);
    optim.validate();
    require(loss_lambda >= 0.0, ErrorCode::invalid_argument, "loss_lambda must be >= 0");
    require(data.stride >= 1 && data.window_step >= 1 && data.eval_window_step >= 1, ErrorCode::invalid_argument,
            "stride and window steps must be >= 1");
    require(data.val_fraction >= 0.0 && data.val_fraction < 1.0, ErrorCode::invalid_argument, "val_fraction must lie in [0, 1)");
    require(eval_every >= 1 && checkpoint_every >= 1, ErrorCode::invalid_argument, "eval_every and checkpoint_every must be >= 1");
    require(workers >= 1, ErrorCode::invalid_argument, "workers must be >= 1");
    require(!out_dir.empty(), ErrorCode::invalid_argument, "out_dir must be set");
  }
};

inline nlohmann::json to_json(const MaskConfig& m) {
  return {{"temporal_ratio", m.temporal_ratio}, {"masked_joints", m.masked_joints}, {"strategy", to_string(m.strategy)}};
}

inline nlohmann::json to_json(const OptimConfig& o) {
  return {{"lr_stage1", o.lr_stage1},       {"lr_stage2", o.lr_stage2},         {"decay", o.decay},
          {"beta1", o.beta1},               {"beta2", o.beta2},                 {"eps", o.eps},
          {"epochs_stage1", o.epochs_stage1}, {"epochs_stage2", o.epochs_stage2}, {"batch_size", o.batch_size},
          {"clip_norm", o.clip_norm}};
}

inline nlohmann::json to_json(const DataConfig& d) {
  return {{"train", d.train},   {"val", d.val},           {"val_fraction", d.val_fraction},
          {"stride", d.stride}, {"window_step", d.window_step}, {"eval_window_step", d.eval_window_step}};
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"mask", to_json(c.mask)},
          {"optim", to_json(c.optim)},
          {"data", to_json(c.data)},
          {"loss_lambda", c.loss_lambda},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"checkpoint_every", c.checkpoint_every},
          {"workers", c.workers},
          {"flip_train", c.flip_train},
          {"flip_eval", c.flip_eval},
          {"out_dir", c.out_dir},
          {"pretrained", c.pretrained},
          {"resume", c.resume}};
}

/// Strict parse: unknown keys anywhere are errors; absent keys keep defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"model", "mask", "optim", "data", "loss_lambda", "seed", "eval_every", "checkpoint_every", "workers",
                               "flip_train", "flip_eval", "out_dir", "pretrained", "resume"},
                              "run config");
  RunConfig c;
  try {
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("mask")) {
      const auto& m = j.at("mask");
      detail::reject_unknown_keys(m, {"temporal_ratio", "masked_joints", "strategy"}, "mask config");
      c.mask.temporal_ratio = m.value("temporal_ratio", c.mask.temporal_ratio);
      c.mask.masked_joints = m.value("masked_joints", c.mask.masked_joints);
      if (m.contains("strategy")) c.mask.strategy = parse_mask_strategy(m.at("strategy").get<std::string>());
    }
    if (j.contains("optim")) {
      const auto& o = j.at("optim");
      detail::reject_unknown_keys(o,
                                  {"lr_stage1", "lr_stage2", "decay", "beta1", "beta2", "eps", "epochs_stage1", "epochs_stage2",
                                   "batch_size", "clip_norm"},
                                  "optim config");
      c.optim.lr_stage1 = o.value("lr_stage1", c.optim.lr_stage1);
      c.optim.lr_stage2 = o.value("lr_stage2", c.optim.lr_stage2);
      c.optim.decay = o.value("decay", c.optim.decay);
      c.optim.beta1 = o.value("beta1", c.optim.beta1);
      c.optim.beta2 = o.value("beta2", c.optim.beta2);
      c.optim.eps = o.value("eps", c.optim.eps);
      c.optim.epochs_stage1 = o.value("epochs_stage1", c.optim.epochs_stage1);
      c.optim.epochs_stage2 = o.value("epochs_stage2", c.optim.epochs_stage2);
      c.optim.batch_size = o.value("batch_size", c.optim.batch_size);
      c.optim.clip_norm = o.value("clip_norm", c.optim.clip_norm);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      detail::reject_unknown_keys(d, {"train", "val", "val_fraction", "stride", "window_step", "eval_window_step"}, "data config");
      c.data.train = d.value("train", c.data.train);
      c.data.val = d.value("val", c.data.val);
      c.data.val_fraction = d.value("val_fraction", c.data.val_fraction);
      c.data.stride = d.value("stride", c.data.stride);
      c.data.window_step = d.value("window_step", c.data.window_step);
      c.data.eval_window_step = d.value("eval_window_step", c.data.eval_window_step);
    }
    c.loss_lambda = j.value("loss_lambda", c.loss_lambda);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.workers = j.value("workers", c.workers);
    c.flip_train = j.value("flip_train", c.flip_train);
    c.flip_eval = j.value("flip_eval", c.flip_eval);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.pretrained = j.value("pretrained", c.pretrained);
    c.resume = j.value("resume", c.resume);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("run config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  require(fs::exists(path), ErrorCode::missing_file, "config file '" + path.string() + "' does not exist");
  const auto bytes = le::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, "config file '" + path.string() + "': " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace pstmo
