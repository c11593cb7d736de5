#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "pstmo/data/io.hpp"
#include "pstmo/model/stmo.hpp"

namespace pstmo {

inline std::string attention_stem(const AttentionDump& d) {
  return d.stage + "_" + d.module + "_L" + std::to_string(d.layer) + "_H" + std::to_string(d.head);
}

/**
 * Runs one evaluation-mode forward pass with recording on. Stage I records TEM over the surviving frames and
 * the decoder (with the a/b partition); Stage II records TEM and MOFA.
 */
inline std::vector<AttentionDump> export_attention(const ModelConfig& config, const ParameterStore<float>& params, Stage stage,
                                                   const Mat<float>& window, const MaskPlan& plan) {
  AttentionRecorder recorder;
  ForwardContext ctx;
  ctx.recorder = &recorder;
  if (stage == Stage::pretrain) {
    recorder.stage = "stage1";
    PretrainNetwork(config).forward(params, window, plan, ctx);
  } else {
    require(plan.empty(), ErrorCode::invalid_argument, "fine-tuning attention is recorded without masking");
    recorder.stage = "stage2";
    StmoNetwork(config).forward(params, window, ctx);
  }
  return std::move(recorder.dumps);
}

inline std::string attention_csv(const Mat<double>& w) {
  std::string out;
  char buf[32];
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.6g", w(r, c));
      if (c) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

/// Grayscale heatmap, darker is larger; intensities scaled by the matrix maximum. Runs of equal shade share one rect.
inline std::string attention_svg(const Mat<double>& w, const std::string& title) {
  const double peak = w.size() ? std::max(w.maxCoeff(), 1e-12) : 1.0;
  const int cell = std::max(1, 480 / static_cast<int>(std::max<Eigen::Index>(1, std::max(w.rows(), w.cols()))));
  const int width = cell * static_cast<int>(w.cols());
  const int height = cell * static_cast<int>(w.rows());
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                    std::to_string(height + 20) + "\" shape-rendering=\"crispEdges\">\n";
  out += "<text x=\"2\" y=\"14\" font-family=\"monospace\" font-size=\"12\">" + title + "</text>\n";
  out += "<g transform=\"translate(0,20)\">\n<rect width=\"" + std::to_string(width) + "\" height=\"" + std::to_string(height) +
         "\" fill=\"#ffffff\"/>\n";
  char buf[160];
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    Eigen::Index c = 0;
    while (c < w.cols()) {
      const int shade = 255 - static_cast<int>(std::lround(255.0 * std::clamp(w(r, c) / peak, 0.0, 1.0)));
      Eigen::Index end = c + 1;
      while (end < w.cols() && 255 - static_cast<int>(std::lround(255.0 * std::clamp(w(r, end) / peak, 0.0, 1.0))) == shade) ++end;
      if (shade != 255) {
        std::snprintf(buf, sizeof buf, "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"#%02x%02x%02x\"/>\n",
                      static_cast<int>(c) * cell, static_cast<int>(r) * cell, static_cast<int>(end - c) * cell, cell, shade, shade, shade);
        out += buf;
      }
      c = end;
    }
  }
  out += "</g>\n</svg>\n";
  return out;
}

/// Writes {stem}.csv and {stem}.svg per dump plus index.json; returns the index.
inline nlohmann::json write_attention(const std::vector<AttentionDump>& dumps, const fs::path& dir) {
  require(!dumps.empty(), ErrorCode::invalid_argument, "no attention was recorded");
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorCode::io_error, "cannot create attention directory '" + dir.string() + "'");
  nlohmann::json index = nlohmann::json::array();
  for (const auto& d : dumps) {
    const std::string stem = attention_stem(d);
    le::write_file(dir / (stem + ".csv"), attention_csv(d.weights));
    le::write_file(dir / (stem + ".svg"), attention_svg(d.weights, stem));
    nlohmann::json rec = {{"stem", stem},     {"stage", d.stage},           {"module", d.module},
                          {"layer", d.layer}, {"head", d.head},             {"rows", d.weights.rows()},
                          {"cols", d.weights.cols()}};
    if (d.module == "decoder") rec["partition"] = {{"a", d.partition}, {"b", d.weights.rows() - static_cast<Eigen::Index>(d.partition)}};
    index.push_back(rec);
  }
  le::write_file(dir / "index.json", index.dump(2) + "\n");
  return index;
}

}  // namespace pstmo
