#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bpa/advice.hpp"
#include "bpa/advisors.hpp"
#include "bpa/env.hpp"
#include "bpa/mountain_car.hpp"
#include "bpa/selfdrive.hpp"
#include "bpa/trainer.hpp"

namespace bpa {

/// Environment construction options. `map_file` is resolved by the caller.
struct EnvironmentSpec {
    std::string id = "mountain_car";
    std::optional<selfdrive::ArenaMap> map;
    selfdrive::Dynamics dynamics;
};

inline bool known_environment(std::string_view id) { return id == "mountain_car" || id == "selfdrive"; }

inline std::unique_ptr<Environment> make_environment(const EnvironmentSpec& spec) {
    if (spec.id == "mountain_car") return std::make_unique<mountain_car::MountainCarEnv>();
    if (spec.id == "selfdrive") {
        auto map = std::make_shared<const selfdrive::ArenaMap>(spec.map.value_or(selfdrive::default_map()));
        return std::make_unique<selfdrive::SelfDriveEnv>(std::move(map), spec.dynamics);
    }
    throw ConfigError("unknown environment '" + spec.id + "'");
}

/// Grid over (x, v) for mountain car, the canonical encoding for the self-driving car.
inline GeneralizerSpec default_generalizer(std::string_view env_id) {
    GeneralizerSpec g;
    if (env_id == "mountain_car") {
        g.kind = GeneralizerKind::uniform_grid;
        g.bins_per_dim = {20, 20};
    }
    return g;
}

struct ExperimentConfig {
    EnvironmentSpec environment;
    AgentConfig agent;
    AdvisorSpec advisor;
    std::size_t episodes = 1;
    std::vector<std::uint64_t> seeds{0};
    std::optional<std::size_t> max_steps;
    std::string output;
    unsigned threads = 1;

    void validate() const {
        if (!known_environment(environment.id)) throw ConfigError("unknown environment '" + environment.id + "'");
        if (episodes < 1) throw ConfigError("episodes must be >= 1");
        if (seeds.empty()) throw ConfigError("seeds must be non-empty");
        if (max_steps && *max_steps == 0) throw ConfigError("max_steps must be positive");
        if (advisor.kind == AdvisorKind::broad && environment.id != "selfdrive")
            throw ConfigError("broad rule advisors require the selfdrive environment");
        agent.learn.validate();
        agent.ppr.validate();
        agent.generalizer.validate();
        advisor.user.validate();
        if (environment.map) environment.map->validate();
    }
};

namespace detail {

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative() && !base.empty()) path = base / path;
    return path.string();
}

}  // namespace detail

/// Parses an experiment config. Relative file references resolve against `base_dir`.
inline ExperimentConfig parse_experiment_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    ExperimentConfig cfg;
    try {
        cfg.environment.id = j.at("environment").get<std::string>();
        if (!known_environment(cfg.environment.id))
            throw ConfigError("unknown environment '" + cfg.environment.id + "'");
        cfg.agent.mode = advice_mode_from_string(j.value("mode", std::string("none")));

        if (j.contains("selfdrive")) {
            const auto& sd = j.at("selfdrive");
            if (sd.contains("map_file")) cfg.environment.map = selfdrive::load_map(detail::resolve(base_dir, sd.at("map_file")));
            if (sd.contains("map")) cfg.environment.map = sd.at("map").get<selfdrive::ArenaMap>();
            auto& d = cfg.environment.dynamics;
            d.time_step = sd.value("time_step", d.time_step);
            d.turn_degrees = sd.value("turn_degrees", d.turn_degrees);
            d.v_min = sd.value("v_min", d.v_min);
            d.terminate_on_collision = sd.value("terminate_on_collision", d.terminate_on_collision);
        }

        cfg.agent.generalizer = default_generalizer(cfg.environment.id);
        if (j.contains("generalizer")) {
            const auto& g = j.at("generalizer");
            auto& spec = cfg.agent.generalizer;
            spec.kind = generalizer_kind_from_string(g.at("kind").get<std::string>());
            spec.bins_per_dim = g.value("bins_per_dim", spec.bins_per_dim);
            spec.k = g.value("k", spec.k);
            spec.warmup_samples = g.value("warmup_samples", spec.warmup_samples);
            spec.max_iters = g.value("max_iters", spec.max_iters);
            spec.tolerance = g.value("tolerance", spec.tolerance);
        }
        if (j.contains("ppr")) {
            const auto& p = j.at("ppr");
            cfg.agent.ppr.psi0 = p.value("psi0", cfg.agent.ppr.psi0);
            cfg.agent.ppr.decay = p.value("decay", cfg.agent.ppr.decay);
            cfg.agent.ppr.floor = p.value("floor", cfg.agent.ppr.floor);
        }
        if (j.contains("learn")) {
            const auto& l = j.at("learn");
            auto& lp = cfg.agent.learn;
            lp.alpha = l.value("alpha", lp.alpha);
            lp.gamma = l.value("gamma", lp.gamma);
            lp.epsilon = l.value("epsilon", lp.epsilon);
            lp.epsilon_decay = l.value("epsilon_decay", lp.epsilon_decay);
            lp.q_init = l.value("q_init", lp.q_init);
        }
        cfg.agent.suppress_queries_on_known_cluster =
            j.value("suppress_queries_on_known_cluster", cfg.agent.mode == AdviceMode::persistent);

        if (j.contains("advisor")) {
            const auto& a = j.at("advisor");
            const auto kind = a.value("kind", std::string("none"));
            if (kind == "none") {
                cfg.advisor.kind = AdvisorKind::none;
            } else if (kind == "user") {
                cfg.advisor.kind = AdvisorKind::user;
                if (a.contains("accuracy") || a.contains("availability")) {
                    cfg.advisor.user = UserProfile{a.value("name", std::string("custom")), a.at("accuracy").get<double>(),
                                                   a.at("availability").get<double>()};
                } else {
                    cfg.advisor.user = user_profile_by_name(a.at("name").get<std::string>());
                }
            } else if (kind == "broad") {
                cfg.advisor.kind = AdvisorKind::broad;
                if (a.contains("rules_file")) cfg.advisor.rules = load_rules(detail::resolve(base_dir, a.at("rules_file")));
                else if (a.contains("rules")) cfg.advisor.rules = a.at("rules").get<std::vector<BroadRule>>();
                else cfg.advisor.rules = default_broad_rules();
            } else {
                throw ConfigError("unknown advisor kind '" + kind + "'");
            }
        }

        cfg.episodes = j.at("episodes").get<std::size_t>();
        if (j.at("seeds").is_number()) {
            const auto n = j.at("seeds").get<std::uint64_t>();
            cfg.seeds.clear();
            for (std::uint64_t s = 0; s < n; ++s) cfg.seeds.push_back(s);
        } else {
            cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        }
        if (j.contains("max_steps")) cfg.max_steps = j.at("max_steps").get<std::size_t>();
        cfg.output = j.value("output", std::string());
        cfg.threads = j.value("threads", 1u);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
    return parse_experiment_config(j, std::filesystem::path(path).parent_path());
}

struct MetricsRow {
    std::uint64_t seed = 0;
    EpisodeMetrics metrics;

    friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

using MetricsTable = std::vector<MetricsRow>;

inline std::unique_ptr<Trainer> make_trainer(const ExperimentConfig& cfg, std::uint64_t seed) {
    std::optional<EpisodeLimit> limit;
    if (cfg.max_steps) limit = EpisodeLimit{*cfg.max_steps};
    return std::make_unique<Trainer>(make_environment(cfg.environment), cfg.agent, cfg.advisor, seed, limit);
}

inline std::vector<EpisodeMetrics> run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    auto trainer = make_trainer(cfg, seed);
    std::vector<EpisodeMetrics> out;
    out.reserve(cfg.episodes);
    for (std::size_t e = 0; e < cfg.episodes; ++e) out.push_back(trainer->run_episode());
    return out;
}

/// Runs every seed with fresh components. Rows come back in (seed order, episode) order no
/// matter how many worker threads ran.
inline MetricsTable run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<std::vector<EpisodeMetrics>> per_seed(cfg.seeds.size());
    const unsigned workers = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(cfg.seeds.size())));

    if (workers == 1) {
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) per_seed[i] = run_seed(cfg, cfg.seeds[i]);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mu;
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
                    try {
                        per_seed[i] = run_seed(cfg, cfg.seeds[i]);
                    } catch (...) {
                        std::lock_guard lock(failure_mu);
                        if (!failure) failure = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
    }

    MetricsTable table;
    table.reserve(cfg.seeds.size() * cfg.episodes);
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
        for (auto& m : per_seed[i]) table.push_back({cfg.seeds[i], m});
    return table;
}

// ---------------------------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kMetricsHeader = "seed,episode,steps,total_reward,interactions,reused_steps,psi";

/// Shortest round-trip decimal form.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline void write_metrics_csv(std::ostream& out, const MetricsTable& table) {
    out << kMetricsHeader << '\n';
    for (const auto& row : table) {
        const auto& m = row.metrics;
        out << row.seed << ',' << m.episode << ',' << m.steps << ',' << format_double(m.total_reward) << ','
            << m.interactions << ',' << m.reused_steps << ',' << format_double(m.psi) << '\n';
    }
}

inline void write_metrics_csv(const std::string& path, const MetricsTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write metrics CSV '" + path + "'");
    write_metrics_csv(out, table);
    if (!out) throw std::runtime_error("error while writing metrics CSV '" + path + "'");
}

inline MetricsTable read_metrics_csv(std::istream& in, const std::string& name = "<stream>") {
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader)
        throw ConfigError("'" + name + "': missing or unexpected metrics CSV header");
    MetricsTable table;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
        if (cols.size() != 7) throw ConfigError("'" + name + "' line " + std::to_string(lineno) + ": expected 7 columns");
        try {
            MetricsRow row;
            row.seed = std::stoull(cols[0]);
            row.metrics.episode = std::stoull(cols[1]);
            row.metrics.steps = std::stoull(cols[2]);
            row.metrics.total_reward = std::stod(cols[3]);
            row.metrics.interactions = std::stoull(cols[4]);
            row.metrics.reused_steps = std::stoull(cols[5]);
            row.metrics.psi = std::stod(cols[6]);
            table.push_back(row);
        } catch (const std::exception&) {
            throw ConfigError("'" + name + "' line " + std::to_string(lineno) + ": malformed number");
        }
    }
    return table;
}

inline MetricsTable read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics CSV '" + path + "'");
    return read_metrics_csv(in, path);
}

// ---------------------------------------------------------------------------------------------
// Summary

struct EpisodeSummary {
    std::size_t episode = 0;
    std::size_t seeds = 0;
    double mean_steps = 0, std_steps = 0;
    double mean_reward = 0, std_reward = 0;
    double ma_steps = 0, ma_reward = 0;  // trailing moving average of the means
    double mean_interactions = 0;
    double mean_reused_steps = 0;
    double mean_psi = 0;
};

struct SeedTotals {
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    std::size_t interactions = 0;
    std::size_t reused_steps = 0;
    double reward = 0;

    double advised_fraction() const { return steps == 0 ? 0.0 : static_cast<double>(interactions) / steps; }
};

struct Summary {
    std::size_t window = 1;
    std::vector<EpisodeSummary> episodes;
    std::vector<SeedTotals> seeds;
    std::size_t total_interactions = 0;
    std::size_t total_steps = 0;
};

/// Trailing moving average; the first entries average over what is available.
inline std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window) {
    if (window < 1) throw ConfigError("window must be >= 1");
    std::vector<double> out(xs.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        acc += xs[i];
        if (i >= window) acc -= xs[i - window];
        out[i] = acc / static_cast<double>(std::min(window, i + 1));
    }
    return out;
}

inline Summary summarize(const MetricsTable& table, std::size_t window) {
    if (window < 1) throw ConfigError("window must be >= 1");
    Summary sum;
    sum.window = window;

    std::map<std::size_t, std::vector<const EpisodeMetrics*>> by_episode;
    std::map<std::uint64_t, SeedTotals> by_seed;
    for (const auto& row : table) {
        by_episode[row.metrics.episode].push_back(&row.metrics);
        auto& t = by_seed[row.seed];
        t.seed = row.seed;
        t.steps += row.metrics.steps;
        t.interactions += row.metrics.interactions;
        t.reused_steps += row.metrics.reused_steps;
        t.reward += row.metrics.total_reward;
        sum.total_interactions += row.metrics.interactions;
        sum.total_steps += row.metrics.steps;
    }

    auto mean_std = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double var = 0;
        for (double x : v) var += (x - m) * (x - m);
        const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        return std::pair{m, sd};
    };

    std::vector<double> steps_means, reward_means;
    for (const auto& [episode, rows] : by_episode) {
        EpisodeSummary es;
        es.episode = episode;
        es.seeds = rows.size();
        std::vector<double> steps, reward;
        double inter = 0, reused = 0, psi_acc = 0;
        for (const auto* m : rows) {
            steps.push_back(static_cast<double>(m->steps));
            reward.push_back(m->total_reward);
            inter += static_cast<double>(m->interactions);
            reused += static_cast<double>(m->reused_steps);
            psi_acc += m->psi;
        }
        std::tie(es.mean_steps, es.std_steps) = mean_std(steps);
        std::tie(es.mean_reward, es.std_reward) = mean_std(reward);
        const auto n = static_cast<double>(rows.size());
        es.mean_interactions = inter / n;
        es.mean_reused_steps = reused / n;
        es.mean_psi = psi_acc / n;
        steps_means.push_back(es.mean_steps);
        reward_means.push_back(es.mean_reward);
        sum.episodes.push_back(es);
    }
    const auto ma_s = moving_average(steps_means, window);
    const auto ma_r = moving_average(reward_means, window);
    for (std::size_t i = 0; i < sum.episodes.size(); ++i) {
        sum.episodes[i].ma_steps = ma_s[i];
        sum.episodes[i].ma_reward = ma_r[i];
    }
    for (auto& [seed, t] : by_seed) sum.seeds.push_back(t);
    return sum;
}

inline void write_summary_csv(std::ostream& out, const Summary& s) {
    out << "episode,seeds,mean_steps,std_steps,mean_reward,std_reward,ma_steps,ma_reward,mean_interactions,"
           "mean_reused_steps,mean_psi\n";
    for (const auto& e : s.episodes)
        out << e.episode << ',' << e.seeds << ',' << format_double(e.mean_steps) << ',' << format_double(e.std_steps)
            << ',' << format_double(e.mean_reward) << ',' << format_double(e.std_reward) << ','
            << format_double(e.ma_steps) << ',' << format_double(e.ma_reward) << ','
            << format_double(e.mean_interactions) << ',' << format_double(e.mean_reused_steps) << ','
            << format_double(e.mean_psi) << '\n';
}

inline nlohmann::json summary_to_json(const Summary& s) {
    nlohmann::json j;
    j["window"] = s.window;
    j["total_interactions"] = s.total_interactions;
    j["total_steps"] = s.total_steps;
    j["advised_fraction"] = s.total_steps == 0 ? 0.0 : static_cast<double>(s.total_interactions) / s.total_steps;
    j["seeds"] = nlohmann::json::array();
    for (const auto& t : s.seeds)
        j["seeds"].push_back({{"seed", t.seed},
                              {"steps", t.steps},
                              {"interactions", t.interactions},
                              {"reused_steps", t.reused_steps},
                              {"total_reward", t.reward},
                              {"advised_fraction", t.advised_fraction()}});
    j["episodes"] = nlohmann::json::array();
    for (const auto& e : s.episodes)
        j["episodes"].push_back({{"episode", e.episode},
                                 {"seeds", e.seeds},
                                 {"mean_steps", e.mean_steps},
                                 {"std_steps", e.std_steps},
                                 {"mean_reward", e.mean_reward},
                                 {"std_reward", e.std_reward},
                                 {"ma_steps", e.ma_steps},
                                 {"ma_reward", e.ma_reward},
                                 {"mean_interactions", e.mean_interactions},
                                 {"mean_reused_steps", e.mean_reused_steps},
                                 {"mean_psi", e.mean_psi}});
    return j;
}

}  // namespace bpa
