#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>

#include "pstmo/data/io.hpp"
#include "pstmo/model/config.hpp"
#include "pstmo/model/params.hpp"

namespace pstmo {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// PSTM: magic, version, count; per entry name length + name, rank, dims, then binary32 values.
inline std::string encode_store(const ParameterStore<float>& store) {
  std::string buf = "PSTM";
  le::put_u32(buf, kCheckpointVersion);
  le::put_u32(buf, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, t] : store.entries()) {
    le::put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    le::put_u32(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (auto dim : t.shape) le::put_u32(buf, static_cast<std::uint32_t>(dim));
    for (float v : t.values) le::put_f32(buf, v);
  }
  return buf;
}

inline ParameterStore<float> decode_store(const std::vector<unsigned char>& bytes, const std::string& label) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    require(pos + n <= bytes.size(), ErrorCode::parse_error, "'" + label + "' is truncated at byte " + std::to_string(pos));
  };
  auto u32 = [&] {
    need(4);
    const auto v = le::get_u32(bytes.data() + pos);
    pos += 4;
    return v;
  };
  need(4);
  require(std::memcmp(bytes.data(), "PSTM", 4) == 0, ErrorCode::parse_error, "'" + label + "' is not a PSTM checkpoint");
  pos = 4;
  const auto version = u32();
  require(version == kCheckpointVersion, ErrorCode::unsupported_version,
          "'" + label + "' has checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  const auto count = u32();
  ParameterStore<float> store;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = u32();
    need(len);
    std::string name(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
    const auto rank = u32();
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(u32());
    Tensor<float> t(shape);
    need(4 * t.values.size());
    for (auto& v : t.values) {
      v = le::get_f32(bytes.data() + pos);
      pos += 4;
    }
    require(!store.contains(name), ErrorCode::parse_error, "'" + label + "' repeats entry '" + name + "'");
    store.set(name, std::move(t));
  }
  require(pos == bytes.size(), ErrorCode::parse_error, "'" + label + "' has trailing bytes");
  return store;
}

inline void save_store(const fs::path& path, const ParameterStore<float>& store) { le::write_file(path, encode_store(store)); }

inline ParameterStore<float> load_store(const fs::path& path) {
  require(fs::exists(path), ErrorCode::missing_file, "checkpoint '" + path.string() + "' does not exist");
  return decode_store(le::read_file(path), path.string());
}

struct OptimizerState {
  std::uint64_t step = 0;
  ParameterStore<float> m, v;
};

struct Checkpoint {
  ModelConfig config;
  Stage stage = Stage::finetune;
  ParameterStore<float> params;
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::optional<OptimizerState> optimizer;
  nlohmann::json extra = nlohmann::json::object();
};

inline fs::path sidecar_path(const fs::path& ckpt) { return fs::path(ckpt.string() + ".json"); }
inline fs::path optimizer_path(const fs::path& ckpt) { return fs::path(ckpt.string() + ".optim"); }

/// Weights at `path`, config and metadata at `path.json`, optimizer moments (if any) at `path.optim`.
inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  save_store(path, ck.params);
  nlohmann::json meta = {{"format_version", kCheckpointVersion},
                         {"model", to_json(ck.config)},
                         {"stage", to_string(ck.stage)},
                         {"epoch", ck.epoch},
                         {"step", ck.step},
                         {"seed", ck.seed},
                         {"has_optimizer", ck.optimizer.has_value()},
                         {"extra", ck.extra}};
  if (ck.optimizer) {
    ParameterStore<float> moments;
    for (const auto& [name, t] : ck.optimizer->m.entries()) moments.set("m/" + name, t);
    for (const auto& [name, t] : ck.optimizer->v.entries()) moments.set("v/" + name, t);
    save_store(optimizer_path(path), moments);
    meta["optimizer_step"] = ck.optimizer->step;
  }
  le::write_file(sidecar_path(path), meta.dump(2) + "\n");
}

/// Verifies that the stored arrays are exactly those the config lays out for the stage.
inline void check_layout(const ParameterStore<float>& params, const ModelConfig& config, Stage stage, const std::string& label) {
  const auto layout = parameter_layout(config, stage);
  for (const auto& spec : layout) {
    require(params.contains(spec.name), ErrorCode::shape_mismatch, label + ": missing array '" + spec.name + "'");
    require(params.at(spec.name).shape == spec.shape, ErrorCode::shape_mismatch,
            label + ": array '" + spec.name + "' has shape " + shape_string(params.at(spec.name).shape) + ", config expects " +
                shape_string(spec.shape));
  }
  require(params.size() == layout.size(), ErrorCode::shape_mismatch, label + ": unexpected extra arrays for the configured model");
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  Checkpoint ck;
  ck.params = load_store(path);
  const auto side = sidecar_path(path);
  require(fs::exists(side), ErrorCode::missing_file, "checkpoint sidecar '" + side.string() + "' does not exist");
  const auto bytes = le::read_file(side);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.begin(), bytes.end());
    const auto version = meta.at("format_version").get<std::uint32_t>();
    require(version == kCheckpointVersion, ErrorCode::unsupported_version, "unsupported checkpoint sidecar version");
    ck.config = model_config_from_json(meta.at("model"));
    ck.stage = parse_stage(meta.at("stage").get<std::string>());
    ck.epoch = meta.at("epoch").get<std::size_t>();
    ck.step = meta.at("step").get<std::uint64_t>();
    ck.seed = meta.value("seed", std::uint64_t{0});
    ck.extra = meta.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, "checkpoint sidecar '" + side.string() + "': " + e.what());
  }
  ck.config.validate();
  check_layout(ck.params, ck.config, ck.stage, path.string());
  if (meta.value("has_optimizer", false)) {
    const auto moments = load_store(optimizer_path(path));
    OptimizerState st;
    st.step = meta.value("optimizer_step", std::uint64_t{0});
    for (const auto& [name, t] : moments.entries()) {
      if (name.rfind("m/", 0) == 0) st.m.set(name.substr(2), t);
      else if (name.rfind("v/", 0) == 0) st.v.set(name.substr(2), t);
    }
    ck.optimizer = std::move(st);
  }
  return ck;
}

/// Stage-II view of a checkpoint's encoder: the encoder arrays only (decoder and padding tokens dropped).
inline ParameterStore<float> export_encoder(const ParameterStore<float>& params) {
  ParameterStore<float> out;
  for (const auto& [name, t] : params.entries())
    if (is_encoder_parameter(name)) out.set(name, t);
  return out;
}

}  // namespace pstmo
