#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "bpa/advice.hpp"
#include "bpa/advisors.hpp"
#include "bpa/env.hpp"
#include "bpa/generalize.hpp"
#include "bpa/q_learning.hpp"
#include "bpa/rng.hpp"
#include "bpa/selfdrive.hpp"

namespace bpa {

struct AgentConfig {
    AdviceMode mode = AdviceMode::none;
    LearnParams learn;
    PprParams ppr;
    GeneralizerSpec generalizer;
    /// Persistent agents skip the advisor for clusters that already hold advice.
    bool suppress_queries_on_known_cluster = true;
};

enum class AdvisorKind { none, user, broad };

struct AdvisorSpec {
    AdvisorKind kind = AdvisorKind::none;
    UserProfile user;
    std::vector<BroadRule> rules;
};

struct EpisodeMetrics {
    std::size_t episode = 0;
    std::size_t steps = 0;
    double total_reward = 0.0;
    std::size_t interactions = 0;
    std::size_t reused_steps = 0;
    double psi = 0.0;

    double advised_fraction() const {
        return steps == 0 ? 0.0 : static_cast<double>(interactions) / static_cast<double>(steps);
    }

    friend bool operator==(const EpisodeMetrics&, const EpisodeMetrics&) = default;
};

struct StepRecord {
    std::size_t episode = 0;
    std::size_t step = 0;  // 1-based index of the executed step within its episode
    ActionId action = 0;
    Provenance provenance = Provenance::default_policy;
    ClusterId cluster;
    double reward = 0.0;
    double cumulative_reward = 0.0;
    double psi = 0.0;
    bool terminal = false;
    bool episode_done = false;
    std::map<std::string, std::string> info;
};

/// One learning agent bound to one environment and at most one simulated advisor.
///
/// Each step runs: observe, advisor query, arbitration, environment step, Q update. Random
/// draws come from per-component streams ("env", "agent", "advice", "user", "generalizer")
/// derived from a single master seed.
class Trainer {
public:
    Trainer(std::unique_ptr<Environment> env, AgentConfig cfg, AdvisorSpec advisor, std::uint64_t seed,
            std::optional<EpisodeLimit> limit = std::nullopt)
        : env_(std::move(env)),
          cfg_(std::move(cfg)),
          limit_(limit.value_or(env_->default_limit())),
          q_(env_->discrete_state_count(), env_->action_count(), cfg_.learn.q_init),
          env_rng_(seed, "env"),
          agent_rng_(seed, "agent"),
          advice_rng_(seed, "advice"),
          user_rng_(seed, "user"),
          generalizer_rng_(seed, "generalizer") {
        cfg_.learn.validate();
        cfg_.ppr.validate();
        cfg_.generalizer.validate();
        if (limit_.max_steps == 0) throw ConfigError("max_steps must be positive");

        identity_ = IdentityEncoding{[e = env_.get()](const StateVector& s) { return e->discrete_state(s); },
                                     env_->discrete_state_count()};
        if (cfg_.generalizer.kind == GeneralizerKind::kmeans) {
            // Until the warmup buffer is full, clusters fall back to the canonical encoding.
            generalizer_ = Generalizer::identity(identity_);
            warmup_.reserve(cfg_.generalizer.warmup_samples);
        } else {
            generalizer_ = fit(cfg_.generalizer, {}, generalizer_rng_, identity_, env_->feature_bounds());
            kmeans_done_ = true;
        }
        store_ = AdviceStore(generalizer_.cluster_count());

        switch (advisor.kind) {
            case AdvisorKind::none: break;
            case AdvisorKind::user: user_.emplace(advisor.user, *env_); break;
            case AdvisorKind::broad:
                if (env_->id() != "selfdrive") throw ConfigError("broad rules are defined for the selfdrive environment");
                broad_.emplace(std::move(advisor.rules));
                break;
        }
    }

    /// Starts the next episode (the first call starts episode 0).
    void begin_episode() {
        if (started_) ++episode_;
        started_ = true;
        state_ = env_->reset(env_rng_);
        current_ = EpisodeMetrics{episode_, 0, 0.0, 0, 0, psi(cfg_.ppr, episode_)};
        done_ = false;
    }

    bool episode_started() const { return started_; }
    bool episode_done() const { return done_; }

    /// Executes one step. `live` is advice from an external trainer that arrived for this step.
    StepRecord step(std::optional<ActionId> live = std::nullopt) {
        if (!started_ || done_) throw Fault("Trainer::step called outside a running episode");
        if (live && !env_->action_valid(*live)) throw Fault("live advice names an invalid action");

        const StateVector s = state_;
        collect_warmup(s);
        const DiscreteStateId table_state = env_->discrete_state(s);
        const ClusterId cluster = generalizer_.assign(s);
        const ActionId default_action =
            select_default(q_, table_state, cfg_.learn.epsilon_at(episode_), agent_rng_);

        std::optional<LiveAdvice> advice;
        if (live) advice = LiveAdvice{*live, AdviceSource::live};
        else advice = consult_advisor(cluster, s);

        const Arbitration choice = arbitrate(store_, cfg_.mode, advice, cluster, s, cfg_.ppr, episode_,
                                             default_action, advice_rng_);

        StepResult r = env_->step(choice.action, env_rng_);
        require_finite_reward(r.reward);
        q_update(q_, table_state, choice.action, r.reward, env_->discrete_state(r.next_state), r.terminal,
                 cfg_.learn);
        state_ = std::move(r.next_state);

        ++current_.steps;
        current_.total_reward += r.reward;
        if (choice.provenance == Provenance::advisor) ++current_.interactions;
        if (choice.provenance == Provenance::reused) ++current_.reused_steps;
        done_ = r.terminal || current_.steps >= limit_.max_steps;

        return StepRecord{episode_,           current_.steps, choice.action, choice.provenance,
                          cluster,            r.reward,       current_.total_reward,
                          current_.psi,       r.terminal,     done_,
                          std::move(r.info)};
    }

    /// Runs a fresh episode to completion.
    EpisodeMetrics run_episode() {
        begin_episode();
        while (!done_) step();
        return current_;
    }

    const EpisodeMetrics& metrics() const { return current_; }
    std::size_t episode() const { return episode_; }
    const StateVector& state() const { return state_; }
    const Environment& env() const { return *env_; }
    Environment& env() { return *env_; }
    const QTable& q_table() const { return q_; }
    const AdviceStore& store() const { return store_; }
    const Generalizer& generalizer() const { return generalizer_; }
    const AgentConfig& config() const { return cfg_; }
    const EpisodeLimit& limit() const { return limit_; }
    const std::optional<SimulatedUser>& user() const { return user_; }
    const std::optional<BroadAdvisor>& broad() const { return broad_; }
    bool generalizer_frozen() const { return kmeans_done_; }

private:
    std::optional<LiveAdvice> consult_advisor(ClusterId cluster, const StateVector& s) {
        if (cfg_.mode == AdviceMode::none) return std::nullopt;
        const bool persistent = cfg_.mode == AdviceMode::persistent;
        if (persistent && cfg_.suppress_queries_on_known_cluster && store_.contains(cluster)) return std::nullopt;

        if (user_) {
            if (auto a = user_->query(cluster, s, persistent, user_rng_)) return LiveAdvice{*a, AdviceSource::simulated};
            return std::nullopt;
        }
        if (broad_) {
            auto fired = broad_->query(selfdrive::from_features(s));
            if (!fired) return std::nullopt;
            if (persistent) {
                const BroadRule& rule = broad_->rules()[fired->rule_id];
                for (const auto& obs : selfdrive::all_observations()) {
                    if (!rule.matches(obs)) continue;
                    auto f = selfdrive::to_features(obs);
                    const ClusterId c = generalizer_.assign(f);
                    store_.record(c, fired->action, AdviceSource::rule, std::move(f));
                }
            }
            return LiveAdvice{fired->action, AdviceSource::rule};
        }
        return std::nullopt;
    }

    void collect_warmup(const StateVector& s) {
        if (kmeans_done_) return;
        warmup_.push_back(s);
        if (warmup_.size() < cfg_.generalizer.warmup_samples) return;
        generalizer_ = fit(cfg_.generalizer, warmup_, generalizer_rng_, identity_, env_->feature_bounds());
        kmeans_done_ = true;
        warmup_.clear();
        warmup_.shrink_to_fit();
        store_.rekey(generalizer_);
        if (user_) {
            std::set<ClusterId> known;
            for (const auto& [c, e] : store_.entries()) known.insert(c);
            user_->reset_memory(std::move(known));
        }
    }

    std::unique_ptr<Environment> env_;
    AgentConfig cfg_;
    EpisodeLimit limit_;
    QTable q_;
    RngStream env_rng_, agent_rng_, advice_rng_, user_rng_, generalizer_rng_;

    IdentityEncoding identity_;
    Generalizer generalizer_;
    bool kmeans_done_ = false;
    std::vector<StateVector> warmup_;
    AdviceStore store_;

    std::optional<SimulatedUser> user_;
    std::optional<BroadAdvisor> broad_;

    bool started_ = false;
    bool done_ = true;
    std::size_t episode_ = 0;
    StateVector state_;
    EpisodeMetrics current_;
};

inline EpisodeMetrics run_episode(Trainer& trainer) { return trainer.run_episode(); }

}  // namespace bpa
