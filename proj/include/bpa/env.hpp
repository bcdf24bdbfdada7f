#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bpa/rng.hpp"

namespace bpa {

/// Raw observation features. Mountain car: (x, v). Self-driving: 8 sensor bits then velocity index.
using StateVector = std::vector<double>;
using DiscreteStateId = std::size_t;
using ActionId = int;

/// Raised when an environment or component breaks its contract at run time.
class Fault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised for invalid configuration or requests, before anything runs.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Action {
    ActionId id = 0;
    std::string label;
};

struct StepResult {
    StateVector next_state;
    double reward = 0.0;
    bool terminal = false;
    std::map<std::string, std::string> info;
};

struct EpisodeLimit {
    std::size_t max_steps = 1000;
};

/// Closed interval per observation dimension, used by grid and k-means generalizers.
struct FeatureBounds {
    std::vector<double> lower;
    std::vector<double> upper;
};

/// Step/reset contract shared by the tabular environments.
///
/// An environment owns its current state; `reset` and `step` draw from the stream they are
/// handed so that an environment never carries hidden randomness of its own.
class Environment {
public:
    virtual ~Environment() = default;

    virtual std::string_view id() const = 0;
    virtual const std::vector<Action>& actions() const = 0;
    std::size_t action_count() const { return actions().size(); }

    virtual StateVector reset(RngStream& rng) = 0;
    virtual StepResult step(ActionId action, RngStream& rng) = 0;
    virtual StateVector observe() const = 0;

    /// Canonical tabular encoding of an observation.
    virtual DiscreteStateId discrete_state(const StateVector& s) const = 0;
    virtual std::size_t discrete_state_count() const = 0;
    virtual FeatureBounds feature_bounds() const = 0;

    /// The hand-coded policy standing in for an advisor's knowledge.
    virtual ActionId oracle_action(const StateVector& s) const = 0;

    virtual bool state_valid(const StateVector& s) const = 0;
    virtual EpisodeLimit default_limit() const = 0;

    /// Environment-specific render payload for live viewers.
    virtual nlohmann::json render() const = 0;

    bool action_valid(ActionId a) const {
        return a >= 0 && static_cast<std::size_t>(a) < action_count();
    }
};

inline void require_finite_reward(double reward) {
    if (!std::isfinite(reward)) throw Fault("environment returned a non-finite reward");
}

}  // namespace bpa
