#pragma once

#include "elastica/core.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>

namespace elastica {

nlohmann::json to_json(const PhysicalAttributes& attrs);
PhysicalAttributes attributes_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SimConfig& config);
SimConfig config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Points& points);
Points points_from_json(const nlohmann::json& j);

/// SceneBundle <-> JSON using the persisted field names. The binding's rest
/// pose is reconstructed from `anchors.positions` and `gaussians[].center`.
nlohmann::json to_json(const SceneBundle& bundle, bool include_trajectory = true);
SceneBundle bundle_from_json(const nlohmann::json& j);

/// Canonical text form: compact, keys sorted, shortest round-trip doubles.
std::string write_bundle(const SceneBundle& bundle, bool include_trajectory = true);
SceneBundle read_bundle(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

void save_bundle(const std::filesystem::path& path, const SceneBundle& bundle);
SceneBundle load_bundle(const std::filesystem::path& path);

void save_attributes(const std::filesystem::path& path, const PhysicalAttributes& attrs);
PhysicalAttributes load_attributes(const std::filesystem::path& path);

// Trajectory files: JSON {frame_rate, frames} or the binary "SMTJ" layout
// (magic, u32 N_A, u32 T, then T*N_A*3 little-endian f64).
void write_trajectory_json(const std::filesystem::path& path, const Trajectory& frames, double frame_rate);
void write_trajectory_binary(const std::filesystem::path& path, const Trajectory& frames);
std::string encode_trajectory_binary(const Trajectory& frames);
Trajectory decode_trajectory_binary(std::string_view bytes);
/// Reads either format; the binary form is recognised by its magic.
Trajectory load_trajectory(const std::filesystem::path& path);

}  // namespace elastica
