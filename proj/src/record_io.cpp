#include "metdrive/record_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace metdrive::io {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

std::vector<double> doubles(const json& j, const char* key) {
  return j.at(key).get<std::vector<double>>();
}

Vec2 vec2(const json& j) {
  if (!j.is_array() || j.size() != 2) throw ValidationError("record: expected [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

static_assert(std::endian::native == std::endian::little, "raster payloads assume a little-endian host");

std::string base64_encode(const std::vector<unsigned char>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const unsigned v = bytes[i] << 16;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ValidationError("base64: length is not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::array<int, 4> v{};
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + static_cast<std::size_t>(k)];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw ValidationError("base64: misplaced padding");
        ++pad;
        v[static_cast<std::size_t>(k)] = 0;
      } else {
        if (pad > 0) throw ValidationError("base64: data after padding");
        v[static_cast<std::size_t>(k)] = decode_char(c);
        if (v[static_cast<std::size_t>(k)] < 0) throw ValidationError("base64: invalid character");
      }
    }
    const unsigned bits = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<unsigned char>((bits >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<unsigned char>((bits >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(bits & 0xff));
  }
  return out;
}

json encode_matrix(const Mat& m) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(m.size()) * sizeof(double));
  std::memcpy(bytes.data(), m.data(), bytes.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", base64_encode(bytes)}};
}

Mat decode_matrix(const json& j) {
  const auto rows = j.at("rows").get<ad::Index>();
  const auto cols = j.at("cols").get<ad::Index>();
  if (rows < 0 || cols < 0) throw ValidationError("matrix record: negative shape");
  const auto bytes = base64_decode(j.at("data").get<std::string>());
  if (bytes.size() != static_cast<std::size_t>(rows * cols) * sizeof(double)) {
    throw ValidationError("matrix record: payload size does not match shape");
  }
  Mat m(rows, cols);
  std::memcpy(m.data(), bytes.data(), bytes.size());
  return m;
}

json to_json(const EgoStateSequence& s) {
  return {{"theta", s.theta}, {"steer", s.steer}, {"throttle", s.throttle},
          {"dx", s.dx},       {"dy", s.dy},       {"t", s.timestamps}};
}

EgoStateSequence ego_from_json(const json& j) {
  EgoStateSequence s;
  s.theta = doubles(j, "theta");
  s.steer = doubles(j, "steer");
  s.throttle = doubles(j, "throttle");
  s.dx = doubles(j, "dx");
  s.dy = doubles(j, "dy");
  s.timestamps = doubles(j, "t");
  return s;
}

json to_json(const Trajectory& traj) {
  json out = json::array();
  for (const auto& p : traj.points) out.push_back({p.x(), p.y()});
  return out;
}

Trajectory trajectory_from_json(const json& j) {
  Trajectory t;
  for (const auto& p : j) t.points.push_back(vec2(p));
  return t;
}

json to_json(const perception::ObservationFrame& f) {
  return {{"t", f.t}, {"camera", encode_matrix(f.camera)}, {"bev", encode_matrix(f.bev)}};
}

perception::ObservationFrame frame_from_json(const json& j) {
  perception::ObservationFrame f;
  f.t = j.at("t").get<double>();
  f.camera = decode_matrix(j.at("camera"));
  f.bev = decode_matrix(j.at("bev"));
  return f;
}

json to_json(const Sample& s) {
  json frames = json::array();
  for (const auto& f : s.frames) frames.push_back(to_json(f));
  return {{"kind", "sample"},
          {"route", s.route},
          {"step", s.step},
          {"target", {s.target_point.x(), s.target_point.y()}},
          {"gt", to_json(s.gt)},
          {"ego", to_json(s.ego)},
          {"frames", std::move(frames)}};
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.route = j.at("route").get<std::uint64_t>();
  s.step = j.at("step").get<std::int64_t>();
  s.target_point = vec2(j.at("target"));
  s.gt = trajectory_from_json(j.at("gt"));
  s.ego = ego_from_json(j.at("ego"));
  for (const auto& f : j.at("frames")) s.frames.push_back(frame_from_json(f));
  return s;
}

json to_json(const RouteSpec& route) {
  json pts = json::array();
  for (const auto& p : route.targets) pts.push_back({p.x(), p.y()});
  return {{"targets", std::move(pts)}, {"speed_limit", route.speed_limit}};
}

RouteSpec route_from_json(const json& j) {
  std::vector<Vec2> pts;
  for (const auto& p : j.at("targets")) pts.push_back(vec2(p));
  return make_route(std::move(pts), doubles(j, "speed_limit"));
}

json to_json(const EpisodeLog& log) {
  json steps = json::array();
  for (const auto& r : log.steps) {
    json inf = json::array();
    for (const auto& i : r.infractions) inf.push_back({{"type", to_string(i.type)}, {"detail", i.detail}});
    steps.push_back({{"t", r.t},
                     {"pose", {r.pose.x, r.pose.y, r.pose.theta}},
                     {"speed", r.speed},
                     {"steer", r.steer},
                     {"throttle", r.throttle},
                     {"brake", r.brake},
                     {"infractions", std::move(inf)}});
  }
  return {{"kind", "episode"},
          {"route", to_json(log.route)},
          {"completed_length", log.completed_length},
          {"completed", log.completed},
          {"diverged", log.diverged},
          {"steps", std::move(steps)}};
}

EpisodeLog episode_from_json(const json& j) {
  EpisodeLog log;
  log.route = route_from_json(j.at("route"));
  log.completed_length = j.at("completed_length").get<double>();
  log.completed = j.at("completed").get<bool>();
  log.diverged = j.at("diverged").get<bool>();
  for (const auto& s : j.at("steps")) {
    StepRecord r;
    r.t = s.at("t").get<double>();
    const auto pose = s.at("pose").get<std::vector<double>>();
    if (pose.size() != 3) throw ValidationError("episode record: pose needs 3 values");
    r.pose = {pose[0], pose[1], pose[2]};
    r.speed = s.at("speed").get<double>();
    r.steer = s.at("steer").get<double>();
    r.throttle = s.at("throttle").get<double>();
    r.brake = s.at("brake").get<double>();
    for (const auto& i : s.at("infractions")) {
      r.infractions.push_back({infraction_from_string(i.at("type").get<std::string>()),
                               i.at("detail").get<std::string>()});
    }
    log.steps.push_back(std::move(r));
  }
  return log;
}

std::string record_line(json record) {
  record["v"] = kSchemaVersion;
  return record.dump();
}

void write_jsonl(const std::string& path, const std::vector<json>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& r : records) out << record_line(r) << '\n';
  out.flush();
  if (!out) throw IoError("write failed for " + path);
}

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::vector<json> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(path + ":" + std::to_string(number) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("v") || j["v"] != kSchemaVersion) {
      throw IoError(path + ":" + std::to_string(number) + ": unsupported schema version");
    }
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace metdrive::io
