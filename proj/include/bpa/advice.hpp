#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "bpa/env.hpp"
#include "bpa/generalize.hpp"
#include "bpa/rng.hpp"

namespace bpa {

enum class AdviceMode { none, non_persistent, persistent };
enum class AdviceSource { simulated, live, rule };
enum class Provenance { advisor, reused, default_policy };

inline std::string_view to_string(AdviceMode m) {
    switch (m) {
        case AdviceMode::none: return "none";
        case AdviceMode::non_persistent: return "non_persistent";
        case AdviceMode::persistent: return "persistent";
    }
    return "none";
}

inline AdviceMode advice_mode_from_string(std::string_view s) {
    if (s == "none" || s == "unassisted") return AdviceMode::none;
    if (s == "non_persistent") return AdviceMode::non_persistent;
    if (s == "persistent") return AdviceMode::persistent;
    throw ConfigError("unknown agent mode '" + std::string(s) + "'");
}

inline std::string_view to_string(AdviceSource s) {
    switch (s) {
        case AdviceSource::simulated: return "simulated";
        case AdviceSource::live: return "live";
        case AdviceSource::rule: return "rule";
    }
    return "simulated";
}

inline std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::advisor: return "advisor";
        case Provenance::reused: return "reused";
        case Provenance::default_policy: return "default";
    }
    return "default";
}

/// Reuse probability schedule: psi(e) = max(floor, psi0 * decay^e).
struct PprParams {
    double psi0 = 0.8;
    double decay = 0.99;
    double floor = 0.0;

    void validate() const {
        if (!(psi0 >= 0.0 && psi0 <= 1.0)) throw ConfigError("ppr psi0 must be in [0,1]");
        if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("ppr decay must be in (0,1]");
        if (!(floor >= 0.0 && floor <= 1.0)) throw ConfigError("ppr floor must be in [0,1]");
    }
};

inline double psi(const PprParams& p, std::size_t episode) {
    return std::max(p.floor, p.psi0 * std::pow(p.decay, static_cast<double>(episode)));
}

struct AdviceEntry {
    ActionId action = 0;
    std::size_t times_reused = 0;
    AdviceSource source = AdviceSource::simulated;
    std::optional<StateVector> raw_state;
};

/// Cluster-keyed advice memory. One action per cluster, latest write wins.
class AdviceStore {
public:
    explicit AdviceStore(std::size_t cluster_capacity = 0) : capacity_(cluster_capacity) {}

    void record(ClusterId cluster, ActionId action, AdviceSource source,
                std::optional<StateVector> raw_state = std::nullopt) {
        if (capacity_ != 0 && cluster.value >= capacity_) throw Fault("AdviceStore: cluster id out of range");
        entries_[cluster] = AdviceEntry{action, 0, source, std::move(raw_state)};
    }

    const AdviceEntry* lookup(ClusterId cluster) const {
        auto it = entries_.find(cluster);
        return it == entries_.end() ? nullptr : &it->second;
    }

    bool contains(ClusterId cluster) const { return entries_.contains(cluster); }

    void mark_reused(ClusterId cluster) {
        if (auto it = entries_.find(cluster); it != entries_.end()) ++it->second.times_reused;
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t capacity() const { return capacity_; }
    const std::map<ClusterId, AdviceEntry>& entries() const { return entries_; }

    /// Moves every entry that remembers its raw state under the cluster the new generalizer
    /// assigns it. Entries are replayed in their previous key order, so collisions resolve
    /// toward the highest previous key.
    void rekey(const Generalizer& g) {
        std::map<ClusterId, AdviceEntry> next;
        for (auto& [cluster, entry] : entries_) {
            if (!entry.raw_state) continue;
            next[g.assign(*entry.raw_state)] = std::move(entry);
        }
        entries_ = std::move(next);
        capacity_ = g.cluster_count();
    }

    void write_csv(std::ostream& out) const {
        out << "cluster_id,action_id,source,times_reused\n";
        for (const auto& [cluster, e] : entries_)
            out << cluster.value << ',' << e.action << ',' << to_string(e.source) << ',' << e.times_reused << '\n';
    }

private:
    std::size_t capacity_;
    std::map<ClusterId, AdviceEntry> entries_;
};

struct Arbitration {
    ActionId action = 0;
    Provenance provenance = Provenance::default_policy;
};

struct LiveAdvice {
    ActionId action = 0;
    AdviceSource source = AdviceSource::simulated;
};

/// Chooses between advice given now, remembered advice and the agent's own default action.
///
/// Live advice always wins and, for a persistent agent, is written to the store. Without live
/// advice a persistent agent reuses the stored action for the cluster with probability psi; the
/// random draw happens only when such an entry exists. Other modes never read the store.
inline Arbitration arbitrate(AdviceStore& store, AdviceMode mode, const std::optional<LiveAdvice>& live,
                             ClusterId cluster, const StateVector& raw_state, const PprParams& ppr,
                             std::size_t episode, ActionId default_action, RngStream& rng) {
    if (live) {
        if (mode == AdviceMode::persistent) store.record(cluster, live->action, live->source, raw_state);
        return {live->action, Provenance::advisor};
    }
    if (mode == AdviceMode::persistent) {
        if (const AdviceEntry* entry = store.lookup(cluster)) {
            if (rng.uniform() < psi(ppr, episode)) {
                const ActionId a = entry->action;
                store.mark_reused(cluster);
                return {a, Provenance::reused};
            }
        }
    }
    return {default_action, Provenance::default_policy};
}

}  // namespace bpa
