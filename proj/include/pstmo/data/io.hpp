#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pstmo/core/error.hpp"
#include "pstmo/data/sequence.hpp"
#include "pstmo/data/skeleton.hpp"

namespace pstmo {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kPoseFileVersion = 1;
inline constexpr std::uint32_t kManifestVersion = 1;

namespace le {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::string& buf, float f) { put_u32(buf, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) | (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

/// Whole-file read.
inline std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::missing_file, "cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io_error, "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::io_error, "short write to '" + path.string() + "'");
}

}  // namespace le

/// PSEQ: magic, version, T, J, C (u32 LE), then T*J*C binary32 LE values.
inline void write_pose_array(const fs::path& path, const PoseArray& a) {
  std::string buf = "PSEQ";
  buf.reserve(20 + 4 * a.values.size());
  le::put_u32(buf, kPoseFileVersion);
  le::put_u32(buf, static_cast<std::uint32_t>(a.frames));
  le::put_u32(buf, static_cast<std::uint32_t>(a.joints));
  le::put_u32(buf, static_cast<std::uint32_t>(a.channels));
  for (float v : a.values) le::put_f32(buf, v);
  le::write_file(path, buf);
}

inline PoseArray read_pose_array(const fs::path& path) {
  require(fs::exists(path), ErrorCode::missing_file, "pose file '" + path.string() + "' does not exist");
  const auto bytes = le::read_file(path);
  require(bytes.size() >= 20 && std::memcmp(bytes.data(), "PSEQ", 4) == 0, ErrorCode::parse_error,
          "'" + path.string() + "' is not a PSEQ file");
  const std::uint32_t version = le::get_u32(bytes.data() + 4);
  require(version == kPoseFileVersion, ErrorCode::unsupported_version,
          "'" + path.string() + "' has unsupported PSEQ version " + std::to_string(version));
  PoseArray a(le::get_u32(bytes.data() + 8), le::get_u32(bytes.data() + 12), le::get_u32(bytes.data() + 16));
  require(bytes.size() == 20 + 4 * a.values.size(), ErrorCode::shape_mismatch,
          "'" + path.string() + "' payload size does not match its header");
  for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] = le::get_f32(bytes.data() + 20 + 4 * i);
  return a;
}

struct Dataset {
  Skeleton skeleton = h36m17();
  std::size_t image_width = 1000;
  std::size_t image_height = 1000;
  std::vector<PoseSequence> sequences;
};

/// Writes manifest.json plus one PSEQ file per array. File names are stable (seqNNNN_2d/3d.pseq).
inline void save_dataset(const fs::path& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorCode::io_error, "cannot create dataset directory '" + dir.string() + "'");
  nlohmann::json records = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    const auto& seq = ds.sequences[i];
    seq.validate();
    char stem[32];
    std::snprintf(stem, sizeof stem, "seq%04zu", i);
    const std::string f2d = std::string(stem) + "_2d.pseq";
    write_pose_array(dir / f2d, seq.frames);
    nlohmann::json rec = {{"frames_file", f2d},   {"frames", seq.length()}, {"joints", seq.num_joints()},
                          {"has_targets", static_cast<bool>(seq.targets)}, {"fps", seq.fps},
                          {"subject", seq.subject}, {"action", seq.action}, {"camera", seq.camera}};
    if (seq.targets) {
      const std::string f3d = std::string(stem) + "_3d.pseq";
      write_pose_array(dir / f3d, *seq.targets);
      rec["targets_file"] = f3d;
    }
    records.push_back(rec);
  }
  nlohmann::json manifest = {{"format_version", kManifestVersion},
                             {"skeleton", ds.skeleton.name},
                             {"normalization", {{"width", ds.image_width}, {"height", ds.image_height}}},
                             {"sequences", records}};
  le::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// Accepts either a dataset directory or the manifest path itself.
inline Dataset load_dataset(const fs::path& where) {
  const fs::path manifest_path = fs::is_directory(where) ? where / "manifest.json" : where;
  require(fs::exists(manifest_path), ErrorCode::missing_file, "manifest '" + manifest_path.string() + "' does not exist");
  const fs::path dir = manifest_path.parent_path();
  const auto raw = le::read_file(manifest_path);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, "manifest '" + manifest_path.string() + "' is not valid JSON: " + e.what());
  }
  try {
    const auto version = m.at("format_version").get<std::uint32_t>();
    require(version == kManifestVersion, ErrorCode::unsupported_version,
            "manifest format_version " + std::to_string(version) + " is not supported");
    Dataset ds;
    ds.skeleton = skeleton_by_name(m.at("skeleton").get<std::string>());
    ds.image_width = m.at("normalization").at("width").get<std::size_t>();
    ds.image_height = m.at("normalization").at("height").get<std::size_t>();
    for (const auto& rec : m.at("sequences")) {
      PoseSequence seq;
      const auto t = rec.at("frames").get<std::size_t>();
      const auto j = rec.at("joints").get<std::size_t>();
      require(j == ds.skeleton.num_joints(), ErrorCode::shape_mismatch, "manifest joint count disagrees with skeleton");
      const std::string f2d = rec.at("frames_file").get<std::string>();
      seq.frames = read_pose_array(dir / f2d);
      require(seq.frames.frames == t && seq.frames.joints == j && seq.frames.channels == 2, ErrorCode::shape_mismatch,
              "'" + f2d + "' holds (" + std::to_string(seq.frames.frames) + "," + std::to_string(seq.frames.joints) + "," +
                  std::to_string(seq.frames.channels) + ") but the manifest declares (" + std::to_string(t) + "," + std::to_string(j) + ",2)");
      if (rec.value("has_targets", false)) {
        const std::string f3d = rec.at("targets_file").get<std::string>();
        PoseArray tg = read_pose_array(dir / f3d);
        require(tg.frames == t && tg.joints == j && tg.channels == 3, ErrorCode::shape_mismatch,
                "'" + f3d + "' does not match the declared shape (" + std::to_string(t) + "," + std::to_string(j) + ",3)");
        seq.targets = std::move(tg);
      }
      seq.fps = rec.value("fps", 50.0);
      seq.subject = rec.value("subject", "");
      seq.action = rec.value("action", "");
      seq.camera = rec.value("camera", "");
      ds.sequences.push_back(std::move(seq));
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, "manifest '" + manifest_path.string() + "' is malformed: " + e.what());
  }
}

}  // namespace pstmo
