#pragma once

#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>

#include "edtrack/io/obj.hpp"
#include "edtrack/pbd.hpp"

namespace edtrack {

struct Scenario {
  PBDState state;
  double dt = 1.0 / 30.0;
  int iterations = 10;
  int frames = 30;
};

namespace detail {

inline Vec3 json_vec3(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(what + " must be a 3-element array");
  Vec3 v(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
  if (!v.allFinite()) throw ConfigError(what + " is not finite");
  return v;
}

inline bool is_auto(const nlohmann::json& j) { return j.is_string() && j.get<std::string>() == "auto"; }

}  // namespace detail

/// Builds a scenario from its JSON description. Constraint lists may be
/// "auto" (derived from the mesh) or explicit index lists.
inline Scenario scenario_from_json(const nlohmann::json& j) {
  using nlohmann::json;
  Scenario sc;
  try {
    sc.dt = j.value("dt", sc.dt);
    sc.iterations = j.value("iterations", sc.iterations);
    sc.frames = j.value("frames", sc.frames);
    if (!(sc.dt > 0)) throw ConfigError("scenario dt must be positive");
    if (sc.iterations < 1) throw ConfigError("scenario iterations must be at least 1");
    if (sc.frames < 0) throw ConfigError("scenario frames must be non-negative");

    std::vector<Vec3> pos;
    std::vector<double> inv_mass;
    for (const auto& p : j.at("particles")) {
      pos.push_back(detail::json_vec3(p.at("x"), "particle x"));
      inv_mass.push_back(p.value("inv_mass", 1.0));
    }
    if (pos.empty()) throw ConfigError("scenario has no particles");
    std::vector<Triangle> tris;
    for (const auto& t : j.at("mesh").at("triangles")) tris.push_back(t.get<Triangle>());
    sc.state = make_state(pos, std::move(tris), inv_mass);

    if (j.contains("gravity")) {
      const auto& g = j["gravity"];
      if (g.is_boolean()) sc.state.gravity = g.get<bool>() ? Vec3(0, 9.81, 0) : Vec3::Zero();
      else sc.state.gravity = detail::json_vec3(g, "gravity");
    }
    sc.state.damping = j.value("damping", sc.state.damping);
    if (!(sc.state.damping > 0 && sc.state.damping <= 1)) throw ConfigError("damping must be in (0, 1]");

    const json cj = j.value("constraints", json::object());
    const json stiff = cj.value("stiffness", json::object());
    ConstraintOptions opt;
    opt.distance_stiffness = stiff.value("distance", opt.distance_stiffness);
    opt.volume_stiffness = stiff.value("volume", opt.volume_stiffness);
    opt.shape_stiffness = stiff.value("shape_matching", opt.shape_stiffness);
    for (double s : {opt.distance_stiffness, opt.volume_stiffness, opt.shape_stiffness})
      if (!(s >= 0 && s <= 1)) throw ConfigError("constraint stiffness must be in [0, 1]");

    const json dist = cj.value("distance", json("auto"));
    const json shape = cj.value("shape_matching", json("auto"));
    opt.distance = detail::is_auto(dist);
    opt.shape_matching = detail::is_auto(shape);
    opt.volume = cj.value("volume", false);
    sc.state.constraints = auto_constraints(sc.state, opt);

    const auto n = int(pos.size());
    auto check = [&](int i) {
      if (i < 0 || i >= n) throw ConfigError("constraint references missing particle " + std::to_string(i));
      return i;
    };
    if (dist.is_array())
      for (const auto& e : dist) {
        const int a = check(e.at(0).get<int>()), b = check(e.at(1).get<int>());
        sc.state.constraints.push_back(DistanceConstraint{a, b, (pos[a] - pos[b]).norm(), opt.distance_stiffness});
      }
    if (shape.is_array())
      for (const auto& cl : shape) {
        ShapeMatchingConstraint sm;
        sm.stiffness = opt.shape_stiffness;
        for (const auto& i : cl) {
          sm.indices.push_back(check(i.get<int>()));
          sm.rest.push_back(pos[sm.indices.back()]);
        }
        if (sm.indices.size() < 3) throw ConfigError("shape-matching cluster needs at least 3 particles");
        sc.state.constraints.push_back(std::move(sm));
      }

    for (const auto& h : j.value("handles", json::array())) {
      Handle handle;
      handle.particle = check(h.at("particle").get<int>());
      for (const auto& s : h.at("trajectory")) {
        if (!s.is_array() || s.size() != 4) throw ConfigError("handle trajectory samples are [t, x, y, z]");
        handle.trajectory.push_back({s[0].get<double>(), Vec3(s[1].get<double>(), s[2].get<double>(), s[3].get<double>())});
      }
      for (std::size_t k = 1; k < handle.trajectory.size(); ++k)
        if (handle.trajectory[k].t < handle.trajectory[k - 1].t)
          throw ConfigError("handle trajectory times must be non-decreasing");
      sc.state.handles.push_back(std::move(handle));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scenario '" + path + "' is not valid JSON: " + e.what());
  }
  return scenario_from_json(j);
}

inline ObjMesh mesh_snapshot(const PBDState& s) { return {s.mesh_positions(), s.mesh.triangles}; }

inline void export_mesh(const PBDState& s, const std::string& path) {
  if (s.mesh.empty()) throw InvalidParameterError("cannot export an empty mesh");
  write_obj(path, mesh_snapshot(s));
}

/// Steps the scenario `frames` times, reporting the rest state as frame 0.
inline void run_scenario(Scenario& sc, const std::function<void(int, const PBDState&)>& on_frame) {
  on_frame(0, sc.state);
  for (int f = 1; f <= sc.frames; ++f) {
    step(sc.state, sc.dt, sc.iterations);
    on_frame(f, sc.state);
  }
}

}  // namespace edtrack
