#pragma once

// Line-delimited JSON records (schema version 1) and their payload encodings.

#include <json.hpp>

#include <string>
#include <vector>

#include "metdrive/domain.hpp"
#include "metdrive/model.hpp"
#include "metdrive/perception.hpp"

namespace metdrive::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

std::string base64_encode(const std::vector<unsigned char>& bytes);
/// Throws ValidationError on characters outside the alphabet or bad padding.
std::vector<unsigned char> base64_decode(const std::string& text);

/// {"rows", "cols", "data": base64 of row-major little-endian float64}
json encode_matrix(const Mat& m);
Mat decode_matrix(const json& j);

json to_json(const EgoStateSequence& seq);
EgoStateSequence ego_from_json(const json& j);
json to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const json& j);
json to_json(const perception::ObservationFrame& frame);
perception::ObservationFrame frame_from_json(const json& j);
json to_json(const Sample& sample);
Sample sample_from_json(const json& j);
json to_json(const RouteSpec& route);
RouteSpec route_from_json(const json& j);
json to_json(const EpisodeLog& log);
EpisodeLog episode_from_json(const json& j);

/// Serialised record line with "v" set, no trailing newline.
std::string record_line(json record);

/// Writes records one per line; throws IoError naming the path.
void write_jsonl(const std::string& path, const std::vector<json>& records);
/// Parses every non-empty line; throws IoError naming path and line on failure
/// or on a schema version other than 1.
std::vector<json> read_jsonl(const std::string& path);

}  // namespace metdrive::io
