#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <vector>

#include "bpa/env.hpp"
#include "bpa/rng.hpp"

namespace bpa {

struct LearnParams {
    double alpha = 0.1;
    double gamma = 0.99;
    double epsilon = 0.2;
    double epsilon_decay = 0.999;  // per episode
    double q_init = 0.0;

    void validate() const {
        if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in (0,1]");
        if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0,1]");
        if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must be in [0,1]");
        if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0)) throw ConfigError("epsilon_decay must be in (0,1]");
        if (!std::isfinite(q_init)) throw ConfigError("q_init must be finite");
    }

    double epsilon_at(std::size_t episode) const {
        return epsilon * std::pow(epsilon_decay, static_cast<double>(episode));
    }
};

/// Dense state x action table.
class QTable {
public:
    QTable(std::size_t state_count, std::size_t action_count, double q_init = 0.0)
        : states_(state_count), actions_(action_count), values_(state_count * action_count, q_init) {}

    double operator()(DiscreteStateId s, ActionId a) const { return values_[index(s, a)]; }
    double& at(DiscreteStateId s, ActionId a) { return values_[index(s, a)]; }

    double max_value(DiscreteStateId s) const {
        const auto row = values_.begin() + static_cast<std::ptrdiff_t>(s * actions_);
        return *std::max_element(row, row + static_cast<std::ptrdiff_t>(actions_));
    }

    std::size_t state_count() const { return states_; }
    std::size_t action_count() const { return actions_; }
    const std::vector<double>& values() const { return values_; }

    /// Debug dump, one row per cell: state_id,action_id,q_value.
    void write_csv(std::ostream& out) const {
        out << "state_id,action_id,q_value\n";
        for (std::size_t s = 0; s < states_; ++s)
            for (std::size_t a = 0; a < actions_; ++a) out << s << ',' << a << ',' << values_[s * actions_ + a] << '\n';
    }

private:
    std::size_t index(DiscreteStateId s, ActionId a) const {
        if (s >= states_ || a < 0 || static_cast<std::size_t>(a) >= actions_) throw Fault("QTable: index out of range");
        return s * actions_ + static_cast<std::size_t>(a);
    }

    std::size_t states_;
    std::size_t actions_;
    std::vector<double> values_;
};

/// Greedy action with uniform tie-breaking.
inline ActionId greedy_action(const QTable& q, DiscreteStateId s, RngStream& rng) {
    const double best = q.max_value(s);
    std::size_t ties = 0;
    for (std::size_t a = 0; a < q.action_count(); ++a)
        if (q(s, static_cast<ActionId>(a)) == best) ++ties;
    std::size_t pick = ties == 1 ? 0 : rng.below(ties);
    for (std::size_t a = 0; a < q.action_count(); ++a) {
        if (q(s, static_cast<ActionId>(a)) != best) continue;
        if (pick-- == 0) return static_cast<ActionId>(a);
    }
    return 0;
}

/// Epsilon-greedy default exploration policy.
inline ActionId select_default(const QTable& q, DiscreteStateId s, double epsilon, RngStream& rng) {
    if (rng.uniform() < epsilon) return static_cast<ActionId>(rng.below(q.action_count()));
    return greedy_action(q, s, rng);
}

/// One-step Q-learning backup; touches only (s, a).
inline void q_update(QTable& q, DiscreteStateId s, ActionId a, double r, DiscreteStateId s_next,
                     bool terminal, const LearnParams& params) {
    if (!std::isfinite(r)) throw Fault("q_update: non-finite reward");
    const double target = terminal ? r : r + params.gamma * q.max_value(s_next);
    double& cell = q.at(s, a);
    cell += params.alpha * (target - cell);
}

}  // namespace bpa
