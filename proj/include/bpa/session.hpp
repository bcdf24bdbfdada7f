#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bpa/experiment.hpp"
#include "bpa/trainer.hpp"

namespace bpa {

/// Error surfaced to session clients as {"error": code, "message": ...}.
class SessionError : public std::runtime_error {
public:
    SessionError(std::string code, const std::string& message, int http_status)
        : std::runtime_error(message), code_(std::move(code)), status_(http_status) {}

    const std::string& code() const { return code_; }
    int http_status() const { return status_; }

private:
    std::string code_;
    int status_;
};

enum class RunState { paused, running, finished };

inline std::string_view to_string(RunState s) {
    switch (s) {
        case RunState::paused: return "paused";
        case RunState::running: return "running";
        case RunState::finished: return "finished";
    }
    return "paused";
}

struct SessionRequest {
    std::string environment;
    AdviceMode mode = AdviceMode::persistent;
    std::uint64_t seed = 0;
    std::chrono::milliseconds step_period{200};
    std::size_t episodes = 1000;
    AgentConfig agent;
    AdvisorSpec advisor;
    EnvironmentSpec env_spec;
    std::optional<std::size_t> max_steps;
};

/// Parses a create-session body: {"environment", "agent_mode", plus optional overrides}.
inline SessionRequest parse_session_request(const nlohmann::json& body) {
    if (!body.is_object() || !body.contains("environment") || !body.at("environment").is_string())
        throw SessionError("BAD_REQUEST", "body must be an object with an 'environment' string", 400);
    SessionRequest req;
    req.environment = body.at("environment").get<std::string>();
    if (!known_environment(req.environment))
        throw SessionError("ENV_UNKNOWN", "unknown environment '" + req.environment + "'", 400);

    // Everything else reuses the experiment config parser so sessions and headless runs agree.
    nlohmann::json cfg = body;
    cfg["mode"] = body.value("agent_mode", std::string("persistent"));
    cfg.erase("agent_mode");
    cfg["episodes"] = body.value("episodes", std::size_t{1000});
    cfg["seeds"] = nlohmann::json::array({body.value("seed", std::uint64_t{0})});
    ExperimentConfig parsed;
    try {
        parsed = parse_experiment_config(cfg);
    } catch (const ConfigError& e) {
        throw SessionError("BAD_REQUEST", e.what(), 400);
    }
    req.mode = parsed.agent.mode;
    req.seed = parsed.seeds.front();
    req.episodes = parsed.episodes;
    req.agent = parsed.agent;
    req.advisor = parsed.advisor;
    req.env_spec = parsed.environment;
    req.max_steps = parsed.max_steps;
    const auto period = body.value("step_period_ms", std::int64_t{200});
    if (period < 1) throw SessionError("BAD_REQUEST", "step_period_ms must be >= 1", 400);
    req.step_period = std::chrono::milliseconds(period);
    return req;
}

/// A live, steppable training run. Control and advice calls may come from any thread; all of
/// them serialize on one mutex, and advice is only consumed at the start of a step.
class Session {
public:
    Session(std::string id, SessionRequest req) : id_(std::move(id)), req_(std::move(req)) {
        std::optional<EpisodeLimit> limit;
        if (req_.max_steps) limit = EpisodeLimit{*req_.max_steps};
        AgentConfig agent = req_.agent;
        agent.mode = req_.mode;
        trainer_ = std::make_unique<Trainer>(make_environment(req_.env_spec), agent, req_.advisor, req_.seed, limit);
        trainer_->begin_episode();
        loop_ = std::thread([this] { run_loop(); });
    }

    ~Session() {
        {
            std::lock_guard lock(mu_);
            stopping_ = true;
        }
        loop_cv_.notify_all();
        frames_cv_.notify_all();
        if (loop_.joinable()) loop_.join();
    }

    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    const std::string& id() const { return id_; }
    const Environment& env() const { return trainer_->env(); }

    void run() {
        std::lock_guard lock(mu_);
        require_not_finished();
        state_ = RunState::running;
        loop_cv_.notify_all();
    }

    void pause() {
        std::lock_guard lock(mu_);
        if (state_ == RunState::running) state_ = RunState::paused;
    }

    nlohmann::json step_once() {
        std::lock_guard lock(mu_);
        require_not_finished();
        if (state_ == RunState::running) throw SessionError("SESSION_RUNNING", "pause the session before stepping", 409);
        do_step();
        return frames_.back();
    }

    void reset() {
        std::lock_guard lock(mu_);
        require_not_finished();
        if (trainer_->episode() + 1 >= req_.episodes) {
            state_ = RunState::finished;
            frames_cv_.notify_all();
            return;
        }
        trainer_->begin_episode();
        last_.reset();
    }

    struct AdviceAck {
        std::size_t applied_at_step = 0;
        std::size_t queued = 0;
    };

    AdviceAck advise(ActionId action) {
        std::lock_guard lock(mu_);
        if (!trainer_->env().action_valid(action))
            throw SessionError("ACTION_INVALID", "action " + std::to_string(action) + " is not valid here", 400);
        require_not_finished();
        queue_.push_back(action);
        const std::size_t next = trainer_->episode_done() ? 1 : trainer_->metrics().steps + 1;
        return {next, queue_.size()};
    }

    /// Current view: the latest frame, or the freshly reset state when no step has run yet.
    nlohmann::json view() const {
        std::lock_guard lock(mu_);
        return make_view(last_ ? &*last_ : nullptr);
    }

    RunState state() const {
        std::lock_guard lock(mu_);
        return state_;
    }

    /// Index of the newest recorded frame, if any.
    std::optional<std::size_t> latest_frame_index() const {
        std::lock_guard lock(mu_);
        if (next_frame_ == 0) return std::nullopt;
        return next_frame_ - 1;
    }

    /// Frames from `cursor` on, waiting up to `timeout` for at least one. `closed` turns true once
    /// the session is finished and the caller has seen every frame.
    std::vector<nlohmann::json> frames_since(std::size_t& cursor, std::chrono::milliseconds timeout, bool& closed) {
        std::unique_lock lock(mu_);
        frames_cv_.wait_for(lock, timeout,
                            [&] { return next_frame_ > cursor || stopping_ || state_ == RunState::finished; });
        std::vector<nlohmann::json> out;
        const std::size_t first = next_frame_ - frames_.size();
        if (cursor < first) cursor = first;  // fell out of the retained window
        for (; cursor < next_frame_; ++cursor) out.push_back(frames_[cursor - first]);
        closed = stopping_ || (state_ == RunState::finished && cursor >= next_frame_);
        return out;
    }

    nlohmann::json describe() const {
        std::lock_guard lock(mu_);
        nlohmann::json actions = nlohmann::json::array();
        for (const auto& a : trainer_->env().actions()) actions.push_back({{"id", a.id}, {"label", a.label}});
        return {{"session_id", id_},
                {"environment", std::string(trainer_->env().id())},
                {"agent_mode", std::string(to_string(req_.mode))},
                {"run_state", std::string(to_string(state_))},
                {"step_period_ms", req_.step_period.count()},
                {"actions", actions}};
    }

    static constexpr std::size_t kRetainedFrames = 10000;

private:
    struct LastStep {
        StepRecord record;
        std::size_t discarded = 0;
    };

    void require_not_finished() const {
        if (state_ == RunState::finished) throw SessionError("SESSION_FINISHED", "session has finished", 409);
    }

    // Caller holds mu_.
    void do_step() {
        if (trainer_->episode_done()) trainer_->begin_episode();

        std::optional<ActionId> live;
        std::size_t discarded = 0;
        if (!queue_.empty()) {
            live = queue_.back();
            discarded = queue_.size() - 1;
            queue_.clear();
        }
        last_ = LastStep{trainer_->step(live), discarded};

        frames_.push_back(make_view(&*last_));
        ++next_frame_;
        if (frames_.size() > kRetainedFrames) frames_.pop_front();

        if (trainer_->episode_done() && trainer_->episode() + 1 >= req_.episodes) state_ = RunState::finished;
        frames_cv_.notify_all();
    }

    nlohmann::json make_view(const LastStep* last) const {
        const auto& m = trainer_->metrics();
        nlohmann::json v{{"session_id", id_},
                         {"run_state", std::string(to_string(state_))},
                         {"episode", trainer_->episode()},
                         {"step", m.steps},
                         {"state", trainer_->env().render()},
                         {"cumulative_reward", m.total_reward},
                         {"psi", m.psi},
                         {"interactions", m.interactions}};
        if (last) {
            v["action"] = last->record.action;
            v["last_reward"] = last->record.reward;
            v["provenance"] = std::string(to_string(last->record.provenance));
            v["discarded_advice"] = last->discarded;
            v["terminal"] = last->record.terminal;
            v["episode_done"] = last->record.episode_done;
            v["collision"] = last->record.info.contains("collision");
        } else {
            v["action"] = nullptr;
            v["last_reward"] = nullptr;
            v["provenance"] = nullptr;
            v["discarded_advice"] = 0;
            v["terminal"] = false;
            v["episode_done"] = false;
            v["collision"] = false;
        }
        return v;
    }

    void run_loop() {
        std::unique_lock lock(mu_);
        while (!stopping_) {
            if (state_ != RunState::running) {
                loop_cv_.wait(lock, [&] { return stopping_ || state_ == RunState::running; });
                continue;
            }
            do_step();
            loop_cv_.wait_for(lock, req_.step_period, [&] { return stopping_ || state_ != RunState::running; });
        }
    }

    std::string id_;
    SessionRequest req_;
    std::unique_ptr<Trainer> trainer_;

    mutable std::mutex mu_;
    std::condition_variable loop_cv_;
    std::condition_variable frames_cv_;
    bool stopping_ = false;
    RunState state_ = RunState::paused;
    std::vector<ActionId> queue_;
    std::optional<LastStep> last_;
    std::deque<nlohmann::json> frames_;
    std::size_t next_frame_ = 0;
    std::thread loop_;
};

inline std::string random_session_token() {
    static std::mutex mu;
    static std::random_device rd;
    std::lock_guard lock(mu);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (int i = 0; i < 4; ++i) {
        std::uint32_t word = rd();
        for (int n = 0; n < 8; ++n, word >>= 4) out.push_back(kHex[word & 0xf]);
    }
    return out;
}

class SessionRegistry {
public:
    std::shared_ptr<Session> create(const nlohmann::json& body) {
        SessionRequest req = parse_session_request(body);
        auto session = std::make_shared<Session>(random_session_token(), std::move(req));
        std::unique_lock lock(mu_);
        sessions_.emplace(session->id(), session);
        return session;
    }

    std::shared_ptr<Session> get(const std::string& id) const {
        std::shared_lock lock(mu_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw SessionError("SESSION_UNKNOWN", "no session '" + id + "'", 404);
        return it->second;
    }

    std::size_t size() const {
        std::shared_lock lock(mu_);
        return sessions_.size();
    }

    void clear() {
        std::map<std::string, std::shared_ptr<Session>> doomed;
        {
            std::unique_lock lock(mu_);
            doomed.swap(sessions_);
        }
    }

private:
    mutable std::shared_mutex mu_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace bpa
