#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bpa/env.hpp"
#include "bpa/generalize.hpp"
#include "bpa/rng.hpp"
#include "bpa/selfdrive.hpp"

namespace bpa {

/// Bernoulli advisor: offers advice with probability `availability`, and the offered action
/// matches the oracle with probability `accuracy` (otherwise a uniformly drawn other action).
struct UserProfile {
    std::string name;
    double accuracy = 1.0;
    double availability = 1.0;

    void validate() const {
        if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw ConfigError("user accuracy must be in [0,1]");
        if (!(availability >= 0.0 && availability <= 1.0)) throw ConfigError("user availability must be in [0,1]");
    }
};

namespace users {
inline const UserProfile kOptimistic{"optimistic", 1.0, 1.0};
inline const UserProfile kRealistic{"realistic", 0.94870, 0.47316};
inline const UserProfile kPessimistic{"pessimistic", 0.47435, 0.23658};
}  // namespace users

inline UserProfile user_profile_by_name(std::string_view name) {
    if (name == "optimistic") return users::kOptimistic;
    if (name == "realistic") return users::kRealistic;
    if (name == "pessimistic") return users::kPessimistic;
    throw ConfigError("unknown simulated user '" + std::string(name) + "'");
}

class SimulatedUser {
public:
    SimulatedUser(UserProfile profile, const Environment& env) : profile_(std::move(profile)), env_(&env) {
        profile_.validate();
    }

    /// One advisor opportunity. A persistent target never hears about a cluster twice.
    std::optional<ActionId> query(ClusterId cluster, const StateVector& state, bool persistent_target,
                                  RngStream& rng) {
        if (persistent_target && advised_.contains(cluster)) return std::nullopt;
        if (!rng.bernoulli(profile_.availability)) return std::nullopt;
        const ActionId correct = env_->oracle_action(state);
        ActionId given = correct;
        if (!rng.bernoulli(profile_.accuracy)) {
            const auto n = env_->action_count();
            auto pick = static_cast<ActionId>(rng.below(n - 1));
            given = pick >= correct ? pick + 1 : pick;
        }
        if (persistent_target) advised_.insert(cluster);
        return given;
    }

    /// Replace the memory of advised clusters, e.g. after the cluster mapping changed.
    void reset_memory(std::set<ClusterId> clusters) { advised_ = std::move(clusters); }

    const std::set<ClusterId>& advised_clusters() const { return advised_; }
    const UserProfile& profile() const { return profile_; }

private:
    UserProfile profile_;
    const Environment* env_;
    std::set<ClusterId> advised_;
};

/// Self-driving predicate: per-sensor pattern (unset = wildcard) and an inclusive velocity range.
struct BroadRule {
    std::array<std::optional<bool>, selfdrive::kSensorCount> sensors{};
    int velocity_min = 0;
    int velocity_max = selfdrive::kVelocityLevels - 1;
    ActionId action = 0;
    std::size_t max_fires = 1;

    bool matches(const selfdrive::SdObservation& obs) const {
        for (int k = 0; k < selfdrive::kSensorCount; ++k)
            if (sensors[k] && *sensors[k] != obs.sensors[k]) return false;
        return obs.velocity_index >= velocity_min && obs.velocity_index <= velocity_max;
    }
};

inline void from_json(const nlohmann::json& j, BroadRule& r) {
    r = BroadRule{};
    if (j.contains("sensors")) {
        const auto& pattern = j.at("sensors");
        if (!pattern.is_array() || pattern.size() != selfdrive::kSensorCount)
            throw ConfigError("rule sensors must be an array of 8 entries (true/false/null)");
        for (int k = 0; k < selfdrive::kSensorCount; ++k)
            if (!pattern[k].is_null()) r.sensors[k] = pattern[k].get<bool>();
    }
    r.velocity_min = j.value("velocity_min", 0);
    r.velocity_max = j.value("velocity_max", selfdrive::kVelocityLevels - 1);
    r.action = j.at("action").get<int>();
    r.max_fires = j.value("max_fires", std::size_t{1});
    if (r.action < 0 || r.action >= 5) throw ConfigError("rule action out of range");
    if (r.velocity_min > r.velocity_max) throw ConfigError("rule velocity range is empty");
    if (r.max_fires < 1) throw ConfigError("rule max_fires must be >= 1");
}

inline void to_json(nlohmann::json& j, const BroadRule& r) {
    nlohmann::json pattern = nlohmann::json::array();
    for (const auto& s : r.sensors) pattern.push_back(s ? nlohmann::json(*s) : nlohmann::json(nullptr));
    j = {{"sensors", pattern},
         {"velocity_min", r.velocity_min},
         {"velocity_max", r.velocity_max},
         {"action", r.action},
         {"max_fires", r.max_fires}};
}

/// (front blocked -> turn left) and (nothing blocked, below top speed -> accelerate).
inline std::vector<BroadRule> default_broad_rules() {
    BroadRule front;
    front.sensors[selfdrive::kFront] = true;
    front.action = static_cast<ActionId>(selfdrive::SdAction::left);

    BroadRule open;
    open.sensors.fill(false);
    open.velocity_max = selfdrive::kVelocityLevels - 2;
    open.action = static_cast<ActionId>(selfdrive::SdAction::accel);
    return {front, open};
}

inline std::vector<BroadRule> load_rules(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open rule file '" + path + "'");
    try {
        return nlohmann::json::parse(in).get<std::vector<BroadRule>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("rule file '" + path + "': " + e.what());
    }
}

struct RuleFiring {
    ActionId action = 0;
    std::size_t rule_id = 0;
};

/// Rule-based trainer: the first rule with remaining fires whose predicate matches gives advice.
class BroadAdvisor {
public:
    explicit BroadAdvisor(std::vector<BroadRule> rules) : rules_(std::move(rules)), fired_(rules_.size(), 0) {}

    std::optional<RuleFiring> query(const selfdrive::SdObservation& obs) {
        for (std::size_t i = 0; i < rules_.size(); ++i) {
            if (fired_[i] >= rules_[i].max_fires || !rules_[i].matches(obs)) continue;
            ++fired_[i];
            return RuleFiring{rules_[i].action, i};
        }
        return std::nullopt;
    }

    const std::vector<BroadRule>& rules() const { return rules_; }
    std::size_t total_fires() const {
        std::size_t n = 0;
        for (auto f : fired_) n += f;
        return n;
    }

private:
    std::vector<BroadRule> rules_;
    std::vector<std::size_t> fired_;
};

/// Every cluster holding at least one observation that satisfies the rule.
inline std::set<ClusterId> expand_rule(const BroadRule& rule, const Generalizer& g) {
    std::set<ClusterId> out;
    for (const auto& obs : selfdrive::all_observations())
        if (rule.matches(obs)) out.insert(g.assign(selfdrive::to_features(obs)));
    return out;
}

}  // namespace bpa
