#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "bpa/env.hpp"

namespace bpa::selfdrive {

inline constexpr int kSensorCount = 8;
inline constexpr int kVelocityLevels = 9;
inline constexpr std::size_t kObservationCount = (1u << kSensorCount) * kVelocityLevels;  // 2304
inline constexpr int kProbeDirections = 16;
inline constexpr double kCollisionPenalty = -100.0;
inline constexpr std::size_t kMaxSteps = 3000;
inline constexpr int kMaxResetAttempts = 10000;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Sensor indices. Heading angles grow clockwise on screen, so +45 degrees is front-right.
inline constexpr int kFront = 0;
inline constexpr int kFrontRight = 1;
inline constexpr int kRight = 2;
inline constexpr int kRear = 4;
inline constexpr int kLeft = 6;
inline constexpr int kFrontLeft = 7;

struct Rect {
    double x = 0, y = 0, w = 0, h = 0;
};

struct ArenaMap {
    int version = 1;
    double width = 50.0;
    double height = 50.0;
    double car_radius = 1.0;
    double sensor_range = 4.0;
    std::vector<Rect> obstacles;

    void validate() const {
        if (!(width > 0 && height > 0)) throw ConfigError("map: width/height must be positive");
        if (!(car_radius > 0)) throw ConfigError("map: car_radius must be positive");
        if (!(sensor_range > 0)) throw ConfigError("map: sensor_range must be positive");
        if (2 * car_radius >= std::min(width, height)) throw ConfigError("map: car does not fit");
        for (const auto& r : obstacles)
            if (r.w <= 0 || r.h <= 0 || r.x < 0 || r.y < 0 || r.x + r.w > width || r.y + r.h > height)
                throw ConfigError("map: obstacle outside arena bounds");
    }
};

inline void to_json(nlohmann::json& j, const Rect& r) { j = {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }
inline void from_json(const nlohmann::json& j, Rect& r) {
    r.x = j.at("x").get<double>();
    r.y = j.at("y").get<double>();
    r.w = j.at("w").get<double>();
    r.h = j.at("h").get<double>();
}

inline void to_json(nlohmann::json& j, const ArenaMap& m) {
    j = {{"version", m.version},         {"width", m.width},
         {"height", m.height},           {"car_radius", m.car_radius},
         {"sensor_range", m.sensor_range}, {"obstacles", m.obstacles}};
}
inline void from_json(const nlohmann::json& j, ArenaMap& m) {
    m.version = j.value("version", 1);
    m.width = j.at("width").get<double>();
    m.height = j.at("height").get<double>();
    m.car_radius = j.at("car_radius").get<double>();
    m.sensor_range = j.at("sensor_range").get<double>();
    m.obstacles = j.at("obstacles").get<std::vector<Rect>>();
    m.validate();
}

/// 50 x 50 arena with four large rectangular blocks.
inline ArenaMap default_map() {
    ArenaMap m;
    m.obstacles = {{8, 8, 12, 7}, {31, 6, 8, 14}, {7, 30, 7, 13}, {25, 34, 17, 7}};
    return m;
}

inline ArenaMap load_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open map file '" + path + "'");
    try {
        return nlohmann::json::parse(in).get<ArenaMap>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("map file '" + path + "': " + e.what());
    }
}

/// Kinematics shared by every car on a map.
struct Dynamics {
    double v_min = 0.5;
    double velocity_step = 0.5;
    double turn_degrees = 15.0;
    double time_step = 0.1;
    bool terminate_on_collision = false;

    double velocity(int index) const { return v_min + velocity_step * index; }
    double v_max() const { return velocity(kVelocityLevels - 1); }
};

struct CarPose {
    double px = 0, py = 0;
    double heading = 0;  // radians in [0, 2pi)
    int velocity_index = 0;
};

struct SdObservation {
    std::array<bool, kSensorCount> sensors{};
    int velocity_index = 0;

    friend bool operator==(const SdObservation&, const SdObservation&) = default;
};

enum class SdAction : int { accel = 0, decel = 1, left = 2, right = 3, none = 4 };

inline double wrap_angle(double a) {
    a = std::fmod(a, kTwoPi);
    if (a < 0) a += kTwoPi;
    if (a >= kTwoPi) a = 0.0;
    return a;
}

/// Distance along a ray from (px, py) to the first wall or obstacle.
inline double ray_distance(const ArenaMap& map, double px, double py, double angle) {
    const double dx = std::cos(angle);
    const double dy = std::sin(angle);
    constexpr double kInf = std::numeric_limits<double>::infinity();
    constexpr double kEps = 1e-12;

    double best = kInf;
    // Arena boundary, seen from inside.
    if (dx > kEps) best = std::min(best, (map.width - px) / dx);
    if (dx < -kEps) best = std::min(best, -px / dx);
    if (dy > kEps) best = std::min(best, (map.height - py) / dy);
    if (dy < -kEps) best = std::min(best, -py / dy);

    for (const auto& r : map.obstacles) {
        double t0 = 0.0, t1 = kInf;
        auto slab = [&](double p, double d, double lo, double hi) {
            if (std::abs(d) < kEps) return p >= lo && p <= hi;
            double a = (lo - p) / d, b = (hi - p) / d;
            if (a > b) std::swap(a, b);
            t0 = std::max(t0, a);
            t1 = std::min(t1, b);
            return t0 <= t1;
        };
        if (slab(px, dx, r.x, r.x + r.w) && slab(py, dy, r.y, r.y + r.h)) best = std::min(best, t0);
    }
    return std::max(best, 0.0);
}

inline bool collides(const ArenaMap& map, double px, double py) {
    const double r = map.car_radius;
    if (px - r < 0 || px + r > map.width || py - r < 0 || py + r > map.height) return true;
    for (const auto& o : map.obstacles) {
        const double cx = std::clamp(px, o.x, o.x + o.w);
        const double cy = std::clamp(py, o.y, o.y + o.h);
        const double dx = px - cx, dy = py - cy;
        if (dx * dx + dy * dy < r * r) return true;
    }
    return false;
}

inline SdObservation observe(const CarPose& pose, const ArenaMap& map) {
    SdObservation obs;
    for (int k = 0; k < kSensorCount; ++k) {
        const double angle = pose.heading + k * (kTwoPi / kSensorCount);
        obs.sensors[k] = ray_distance(map, pose.px, pose.py, angle) <= map.sensor_range;
    }
    obs.velocity_index = pose.velocity_index;
    return obs;
}

inline DiscreteStateId encode(const SdObservation& obs) {
    DiscreteStateId id = 0;
    for (int k = 0; k < kSensorCount; ++k)
        if (obs.sensors[k]) id |= DiscreteStateId{1} << k;
    return static_cast<DiscreteStateId>(obs.velocity_index) * (1u << kSensorCount) + id;
}

inline SdObservation decode(DiscreteStateId id) {
    SdObservation obs;
    obs.velocity_index = static_cast<int>(id >> kSensorCount);
    for (int k = 0; k < kSensorCount; ++k) obs.sensors[k] = (id >> k) & 1u;
    return obs;
}

inline StateVector to_features(const SdObservation& obs) {
    StateVector f(kSensorCount + 1);
    for (int k = 0; k < kSensorCount; ++k) f[k] = obs.sensors[k] ? 1.0 : 0.0;
    f[kSensorCount] = obs.velocity_index;
    return f;
}

inline SdObservation from_features(const StateVector& f) {
    SdObservation obs;
    for (int k = 0; k < kSensorCount; ++k) obs.sensors[k] = f.at(k) > 0.5;
    obs.velocity_index = static_cast<int>(std::lround(f.at(kSensorCount)));
    return obs;
}

inline std::vector<SdObservation> all_observations() {
    std::vector<SdObservation> out;
    out.reserve(kObservationCount);
    for (DiscreteStateId id = 0; id < kObservationCount; ++id) out.push_back(decode(id));
    return out;
}

/// Heading index (of 16) with the longest free distance. Probes are capped at half the
/// smaller arena side so that open space in every direction compares equal.
inline int best_heading_index(const ArenaMap& map, double px, double py) {
    const double cap = 0.5 * std::min(map.width, map.height);
    int best = 0;
    double best_d = -1.0;
    for (int i = 0; i < kProbeDirections; ++i) {
        const double d = std::min(cap, ray_distance(map, px, py, i * kTwoPi / kProbeDirections));
        if (d > best_d + 1e-9) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

/// Collision-free position, heading toward the most open direction, velocity at the lower limit.
inline CarPose safe_reset(const ArenaMap& map, RngStream& rng) {
    const double r = map.car_radius;
    for (int attempt = 0; attempt < kMaxResetAttempts; ++attempt) {
        const double px = rng.uniform(r, map.width - r);
        const double py = rng.uniform(r, map.height - r);
        if (collides(map, px, py)) continue;
        const int dir = best_heading_index(map, px, py);
        return CarPose{px, py, dir * kTwoPi / kProbeDirections, 0};
    }
    throw Fault("safe_reset: no collision-free pose after 10000 samples");
}

/// Episode start: a safe reset with the velocity level drawn uniformly.
inline CarPose episode_start(const ArenaMap& map, RngStream& rng) {
    CarPose pose = safe_reset(map, rng);
    pose.velocity_index = static_cast<int>(rng.below(kVelocityLevels));
    return pose;
}

struct SdTransition {
    CarPose pose;
    double reward = 0;
    bool collision = false;
};

inline SdTransition step(const CarPose& pose, SdAction a, const ArenaMap& map,
                         const Dynamics& dyn, RngStream& rng) {
    CarPose next = pose;
    const double turn = dyn.turn_degrees * std::numbers::pi / 180.0;
    switch (a) {
        case SdAction::accel: next.velocity_index = std::min(next.velocity_index + 1, kVelocityLevels - 1); break;
        case SdAction::decel: next.velocity_index = std::max(next.velocity_index - 1, 0); break;
        case SdAction::left: next.heading = wrap_angle(next.heading - turn); break;
        case SdAction::right: next.heading = wrap_angle(next.heading + turn); break;
        case SdAction::none: break;
    }
    const double v = dyn.velocity(next.velocity_index);
    next.px += v * dyn.time_step * std::cos(next.heading);
    next.py += v * dyn.time_step * std::sin(next.heading);
    if (collides(map, next.px, next.py)) return {safe_reset(map, rng), kCollisionPenalty, true};
    return {next, v, false};
}

/// Rule-table driving policy used as the simulated advisor's knowledge.
inline SdAction oracle_action(const SdObservation& obs) {
    const bool front = obs.sensors[kFront];
    const bool fl = obs.sensors[kFrontLeft];
    const bool fr = obs.sensors[kFrontRight];
    if (front) {
        if (!fl) return SdAction::left;
        if (!fr) return SdAction::right;
        return SdAction::left;
    }
    if (fl && fr) return SdAction::decel;
    if (fr) return SdAction::left;
    if (fl) return SdAction::right;
    if (obs.velocity_index < kVelocityLevels - 1) return SdAction::accel;
    return SdAction::none;
}

class SelfDriveEnv final : public Environment {
public:
    explicit SelfDriveEnv(std::shared_ptr<const ArenaMap> map = std::make_shared<const ArenaMap>(default_map()),
                          Dynamics dyn = {})
        : map_(std::move(map)), dyn_(dyn) {
        map_->validate();
    }

    std::string_view id() const override { return "selfdrive"; }

    const std::vector<Action>& actions() const override {
        static const std::vector<Action> kActions{
            {0, "accelerate"}, {1, "decelerate"}, {2, "turn_left"}, {3, "turn_right"}, {4, "none"}};
        return kActions;
    }

    StateVector reset(RngStream& rng) override {
        pose_ = episode_start(*map_, rng);
        return observe();
    }

    StepResult step(ActionId action, RngStream& rng) override {
        if (!action_valid(action)) throw Fault("selfdrive: invalid action");
        const auto t = selfdrive::step(pose_, static_cast<SdAction>(action), *map_, dyn_, rng);
        pose_ = t.pose;
        StepResult r{observe(), t.reward, t.collision && dyn_.terminate_on_collision, {}};
        if (t.collision) r.info["collision"] = "1";
        return r;
    }

    StateVector observe() const override { return to_features(selfdrive::observe(pose_, *map_)); }

    DiscreteStateId discrete_state(const StateVector& s) const override { return encode(from_features(s)); }
    std::size_t discrete_state_count() const override { return kObservationCount; }

    FeatureBounds feature_bounds() const override {
        FeatureBounds b{StateVector(kSensorCount + 1, 0.0), StateVector(kSensorCount + 1, 1.0)};
        b.upper[kSensorCount] = kVelocityLevels - 1;
        return b;
    }

    ActionId oracle_action(const StateVector& s) const override {
        return static_cast<ActionId>(selfdrive::oracle_action(from_features(s)));
    }

    bool state_valid(const StateVector& s) const override {
        if (s.size() != kSensorCount + 1) return false;
        for (int k = 0; k < kSensorCount; ++k)
            if (s[k] != 0.0 && s[k] != 1.0) return false;
        return s[kSensorCount] >= 0 && s[kSensorCount] <= kVelocityLevels - 1 &&
               s[kSensorCount] == std::floor(s[kSensorCount]);
    }

    EpisodeLimit default_limit() const override { return {kMaxSteps}; }

    nlohmann::json render() const override {
        const auto obs = selfdrive::observe(pose_, *map_);
        return {{"kind", "selfdrive"},
                {"x", pose_.px},
                {"y", pose_.py},
                {"heading", pose_.heading},
                {"velocity", dyn_.velocity(pose_.velocity_index)},
                {"velocity_index", pose_.velocity_index},
                {"sensors", obs.sensors},
                {"width", map_->width},
                {"height", map_->height},
                {"car_radius", map_->car_radius},
                {"sensor_range", map_->sensor_range},
                {"obstacles", map_->obstacles}};
    }

    const CarPose& pose() const { return pose_; }
    void set_pose(const CarPose& p) { pose_ = p; }
    const ArenaMap& map() const { return *map_; }
    const Dynamics& dynamics() const { return dyn_; }

private:
    std::shared_ptr<const ArenaMap> map_;
    Dynamics dyn_;
    CarPose pose_{};
};

}  // namespace bpa::selfdrive
