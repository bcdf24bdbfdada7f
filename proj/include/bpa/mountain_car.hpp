#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "bpa/env.hpp"
#include "bpa/generalize.hpp"

namespace bpa::mountain_car {

inline constexpr double kMinX = -1.2;
inline constexpr double kMaxX = 0.6;
inline constexpr double kMaxSpeed = 0.07;
inline constexpr double kGoalX = 0.6;
inline constexpr double kStartLow = -0.6;
inline constexpr double kStartHigh = 0.4;
inline constexpr double kForce = 0.001;
inline constexpr double kGravity = 0.0025;
inline constexpr std::size_t kMaxSteps = 1000;

struct McState {
    double x = -0.5;
    double v = 0.0;

    bool valid() const { return x >= kMinX && x <= kMaxX && std::abs(v) <= kMaxSpeed; }
};

enum class McAction : int { left = 0, none = 1, right = 2 };

struct McTransition {
    McState next;
    double reward = -1.0;
    bool terminal = false;
};

/// Start position uniform in [-0.6, 0.4), at rest.
inline McState reset(RngStream& rng) { return McState{rng.uniform(kStartLow, kStartHigh), 0.0}; }

inline McTransition step(const McState& s, McAction a) {
    const double push = static_cast<double>(static_cast<int>(a) - 1);
    double v = std::clamp(s.v + kForce * push - kGravity * std::cos(3.0 * s.x), -kMaxSpeed, kMaxSpeed);
    const double x = std::clamp(s.x + v, kMinX, kMaxX);
    if (x == kMinX) v = std::max(v, 0.0);
    const bool goal = x >= kGoalX;
    return {McState{x, v}, goal ? 0.0 : -1.0, goal};
}

/// Energy pumping: push in the direction of motion.
inline McAction oracle_action(const McState& s) { return s.v >= 0.0 ? McAction::right : McAction::left; }

inline FeatureBounds bounds() { return {{kMinX, -kMaxSpeed}, {kMaxX, kMaxSpeed}}; }

/// Default tabular discretization, 20 x 20 over (x, v).
inline UniformGrid default_grid() {
    auto b = bounds();
    return UniformGrid(b.lower, b.upper, {20, 20});
}

class MountainCarEnv final : public Environment {
public:
    explicit MountainCarEnv(UniformGrid grid = default_grid()) : grid_(std::move(grid)) {}

    std::string_view id() const override { return "mountain_car"; }

    const std::vector<Action>& actions() const override {
        static const std::vector<Action> kActions{{0, "left"}, {1, "none"}, {2, "right"}};
        return kActions;
    }

    StateVector reset(RngStream& rng) override {
        state_ = mountain_car::reset(rng);
        return observe();
    }

    StepResult step(ActionId action, RngStream&) override {
        if (!action_valid(action)) throw Fault("mountain_car: invalid action");
        const auto t = mountain_car::step(state_, static_cast<McAction>(action));
        state_ = t.next;
        return StepResult{observe(), t.reward, t.terminal, {}};
    }

    StateVector observe() const override { return {state_.x, state_.v}; }

    DiscreteStateId discrete_state(const StateVector& s) const override { return grid_.cell(s); }
    std::size_t discrete_state_count() const override { return grid_.cell_count(); }
    FeatureBounds feature_bounds() const override { return bounds(); }

    ActionId oracle_action(const StateVector& s) const override {
        return static_cast<ActionId>(mountain_car::oracle_action(McState{s.at(0), s.at(1)}));
    }

    bool state_valid(const StateVector& s) const override {
        return s.size() == 2 && McState{s[0], s[1]}.valid();
    }

    EpisodeLimit default_limit() const override { return {kMaxSteps}; }

    nlohmann::json render() const override {
        return {{"kind", "mountain_car"}, {"x", state_.x}, {"v", state_.v}};
    }

    const McState& state() const { return state_; }
    void set_state(const McState& s) { state_ = s; }

private:
    UniformGrid grid_;
    McState state_{};
};

}  // namespace bpa::mountain_car
