#include "elastica/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace elastica {

using nlohmann::json;

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <typename T>
T get(const json& j, const char* key) {
  if (!j.contains(key)) throw DataError(std::string("missing field '") + key + "'", key);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(std::string("bad field '") + key + "': " + e.what(), key);
  }
}

Eigen::VectorXd scalar_or_array(const json& j, const char* key) {
  const json& v = j.at(key);
  if (v.is_number()) return Eigen::VectorXd::Constant(1, v.get<double>());
  if (!v.is_array()) throw DataError(std::string("field '") + key + "' must be a number or array", key);
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
  return out;
}

Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw DataError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
  return v;
}

}  // namespace

json to_json(const PhysicalAttributes& a) {
  json j;
  if (a.shared) {
    j["mass"] = a.m();
    j["stiffness"] = a.k();
    j["damping"] = a.d();
  } else {
    j["mass"] = vec_to_json(a.mass);
    j["stiffness"] = vec_to_json(a.stiffness);
    j["damping"] = vec_to_json(a.damping);
  }
  j["friction"] = a.friction;
  j["shared"] = a.shared;
  return j;
}

PhysicalAttributes attributes_from_json(const json& j) {
  try {
    PhysicalAttributes a;
    a.mass = scalar_or_array(j, "mass");
    a.stiffness = scalar_or_array(j, "stiffness");
    a.damping = scalar_or_array(j, "damping");
    a.friction = j.at("friction").get<double>();
    a.shared = j.value("shared", a.mass.size() == 1 && a.stiffness.size() == 1);
    return a;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad attributes: ") + e.what(), "attributes");
  }
}

json to_json(const SimConfig& c) {
  return json{{"dt", c.dt},
              {"substeps_per_frame", c.substeps_per_frame},
              {"gravity", {c.gravity.x(), c.gravity.y(), c.gravity.z()}},
              {"p_k", c.p_k},
              {"ground_height", c.ground_height},
              {"frame_rate", c.frame_rate}};
}

SimConfig config_from_json(const json& j) {
  SimConfig c;
  c.dt = get<double>(j, "dt");
  c.substeps_per_frame = get<int>(j, "substeps_per_frame");
  c.gravity = vec3_from_json(j.at("gravity"));
  c.p_k = get<double>(j, "p_k");
  c.ground_height = get<double>(j, "ground_height");
  c.frame_rate = get<double>(j, "frame_rate");
  return c;
}

json to_json(const Points& p) {
  json a = json::array();
  for (Eigen::Index i = 0; i < p.cols(); ++i) a.push_back({p(0, i), p(1, i), p(2, i)});
  return a;
}

Points points_from_json(const json& j) {
  if (!j.is_array()) throw DataError("expected an array of points");
  Points p(3, static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) p.col(static_cast<Eigen::Index>(i)) = vec3_from_json(j[i]);
  return p;
}

json to_json(const SceneBundle& b, bool include_trajectory) {
  json j;
  j["object_id"] = b.object_id;

  json gs = json::array();
  const auto& g = b.gaussians;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    gs.push_back({{"center", {g.centers(0, i), g.centers(1, i), g.centers(2, i)}},
                  {"scale", g.scales[i]},
                  {"color", {g.colors(0, i), g.colors(1, i), g.colors(2, i)}},
                  {"opacity", g.opacities[i]},
                  {"rotation", {g.rotations(0, i), g.rotations(1, i), g.rotations(2, i), g.rotations(3, i)}}});
  }
  j["gaussians"] = std::move(gs);

  j["anchors"] = {{"positions", to_json(b.anchors.positions)}, {"velocities", to_json(b.anchors.velocities)}};

  json edges = json::array();
  for (const Edge& e : b.topology.edges) edges.push_back({e.i, e.j});
  j["springs"] = {{"edges", std::move(edges)},
                  {"rest_lengths", vec_to_json(b.topology.rest_lengths)},
                  {"k_neighbors", b.topology.k_neighbors}};

  json idx = json::array(), dist = json::array();
  for (Eigen::Index c = 0; c < b.binding.indices.cols(); ++c) {
    json row_i = json::array(), row_d = json::array();
    for (Eigen::Index r = 0; r < b.binding.indices.rows(); ++r) {
      row_i.push_back(b.binding.indices(r, c));
      row_d.push_back(b.binding.rest_distances(r, c));
    }
    idx.push_back(std::move(row_i));
    dist.push_back(std::move(row_d));
  }
  j["binding"] = {{"indices", std::move(idx)},
                  {"rest_distances", std::move(dist)},
                  {"p_b", b.binding.p_b},
                  {"n_b", b.binding.n_b}};

  j["attributes"] = to_json(b.attributes);
  j["config"] = to_json(b.config);

  if (include_trajectory && b.trajectory) {
    json frames = json::array();
    for (const Points& f : *b.trajectory) frames.push_back(to_json(f));
    j["trajectory"] = std::move(frames);
  }
  return j;
}

SceneBundle bundle_from_json(const json& j) {
  try {
    SceneBundle b;
    b.object_id = get<std::string>(j, "object_id");

    const json& gs = j.at("gaussians");
    b.gaussians.resize(static_cast<Eigen::Index>(gs.size()));
    for (std::size_t n = 0; n < gs.size(); ++n) {
      const auto i = static_cast<Eigen::Index>(n);
      const json& g = gs[n];
      b.gaussians.centers.col(i) = vec3_from_json(g.at("center"));
      b.gaussians.scales[i] = g.at("scale").get<double>();
      b.gaussians.colors.col(i) = vec3_from_json(g.at("color"));
      b.gaussians.opacities[i] = g.at("opacity").get<double>();
      const json& q = g.at("rotation");
      if (!q.is_array() || q.size() != 4) throw DataError("rotation must have 4 components", "gaussians.rotation");
      for (int c = 0; c < 4; ++c) b.gaussians.rotations(c, i) = q[static_cast<std::size_t>(c)].get<double>();
    }

    b.anchors.positions = points_from_json(j.at("anchors").at("positions"));
    b.anchors.velocities = points_from_json(j.at("anchors").at("velocities"));

    const json& s = j.at("springs");
    for (const json& e : s.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw DataError("edge must be a pair", "springs.edges");
      b.topology.edges.push_back({e[0].get<int>(), e[1].get<int>()});
    }
    b.topology.rest_lengths = scalar_or_array(s, "rest_lengths");
    if (s.at("rest_lengths").is_number()) throw DataError("rest_lengths must be an array", "springs.rest_lengths");
    b.topology.k_neighbors = get<int>(s, "k_neighbors");

    const json& bj = j.at("binding");
    b.binding.n_b = get<int>(bj, "n_b");
    b.binding.p_b = get<double>(bj, "p_b");
    const json& idx = bj.at("indices");
    const json& dist = bj.at("rest_distances");
    if (idx.size() != dist.size()) throw DataError("binding indices/rest_distances length mismatch", "binding");
    const auto ng = static_cast<Eigen::Index>(idx.size());
    b.binding.indices.resize(b.binding.n_b, ng);
    b.binding.rest_distances.resize(b.binding.n_b, ng);
    for (Eigen::Index c = 0; c < ng; ++c) {
      const json& ri = idx[static_cast<std::size_t>(c)];
      const json& rd = dist[static_cast<std::size_t>(c)];
      if (ri.size() != static_cast<std::size_t>(b.binding.n_b) || rd.size() != ri.size())
        throw DataError("binding row " + std::to_string(c) + " does not have n_b entries", "binding");
      for (int r = 0; r < b.binding.n_b; ++r) {
        b.binding.indices(r, c) = ri[static_cast<std::size_t>(r)].get<int>();
        b.binding.rest_distances(r, c) = rd[static_cast<std::size_t>(r)].get<double>();
      }
    }
    b.binding.rest_anchors = b.anchors.positions;
    b.binding.rest_centers = b.gaussians.centers;

    b.attributes = attributes_from_json(j.at("attributes"));
    b.config = config_from_json(j.at("config"));
    b.config.length_eps = SimConfig{}.length_eps;

    if (j.contains("trajectory")) {
      Trajectory frames;
      for (const json& f : j.at("trajectory")) frames.push_back(points_from_json(f));
      b.trajectory = std::move(frames);
    }
    return b;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed scene bundle: ") + e.what());
  }
}

std::string write_bundle(const SceneBundle& b, bool include_trajectory) {
  return to_json(b, include_trajectory).dump();
}

SceneBundle read_bundle(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("scene bundle is not valid JSON");
  return bundle_from_json(j);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string(), path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string(), path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("write failed for " + path.string(), path.string());
}

void save_bundle(const std::filesystem::path& path, const SceneBundle& b) { write_text_file(path, write_bundle(b)); }

SceneBundle load_bundle(const std::filesystem::path& path) {
  try {
    return read_bundle(read_text_file(path));
  } catch (const DataError& e) {
    if (!e.context().empty()) throw;
    throw DataError(e.what(), path.string());
  }
}

void save_attributes(const std::filesystem::path& path, const PhysicalAttributes& a) {
  write_text_file(path, to_json(a).dump(2) + "\n");
}

PhysicalAttributes load_attributes(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw DataError("attributes file is not valid JSON", path.string());
  // Accept either a bare attributes object or one nested under "attributes".
  if (j.contains("attributes")) return attributes_from_json(j.at("attributes"));
  return attributes_from_json(j);
}

void write_trajectory_json(const std::filesystem::path& path, const Trajectory& frames, double frame_rate) {
  json j;
  j["frame_rate"] = frame_rate;
  json fs = json::array();
  for (const Points& f : frames) fs.push_back(to_json(f));
  j["frames"] = std::move(fs);
  write_text_file(path, j.dump());
}

std::string encode_trajectory_binary(const Trajectory& frames) {
  static_assert(std::endian::native == std::endian::little, "binary trajectories assume a little-endian host");
  const auto n = frames.empty() ? 0u : static_cast<std::uint32_t>(frames.front().cols());
  std::string out = "SMTJ";
  put_u32(out, n);
  put_u32(out, static_cast<std::uint32_t>(frames.size()));
  for (const Points& f : frames) {
    if (f.cols() != n) throw DataError("trajectory frames differ in point count");
    const char* bytes = reinterpret_cast<const char*>(f.data());
    out.append(bytes, static_cast<std::size_t>(f.size()) * sizeof(double));
  }
  return out;
}

Trajectory decode_trajectory_binary(std::string_view in) {
  if (in.size() < 12 || in.substr(0, 4) != "SMTJ") throw DataError("not an SMTJ trajectory");
  const std::uint32_t n = get_u32(in, 4);
  const std::uint32_t t = get_u32(in, 8);
  const std::size_t per_frame = static_cast<std::size_t>(n) * 3 * sizeof(double);
  if (in.size() != 12 + per_frame * t) throw DataError("SMTJ payload size does not match header");
  Trajectory frames(t, Points(3, n));
  for (std::uint32_t f = 0; f < t; ++f)
    std::memcpy(frames[f].data(), in.data() + 12 + per_frame * f, per_frame);
  return frames;
}

void write_trajectory_binary(const std::filesystem::path& path, const Trajectory& frames) {
  write_text_file(path, encode_trajectory_binary(frames));
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  if (text.size() >= 4 && text.compare(0, 4, "SMTJ") == 0) return decode_trajectory_binary(text);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("trajectory file is neither SMTJ nor JSON", path.string());
  Trajectory frames;
  const json& fs = j.contains("frames") ? j.at("frames") : j.at("trajectory");
  for (const json& f : fs) frames.push_back(points_from_json(f));
  return frames;
}

}  // namespace elastica
