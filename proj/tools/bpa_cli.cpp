#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bpa/bpa.hpp"
#include "bpa/service.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& out_path, std::optional<std::uint64_t> seed_override) {
    auto cfg = bpa::load_experiment_config(config_path);
    if (seed_override) cfg.seeds = {*seed_override};
    const std::string out = !out_path.empty() ? out_path : cfg.output;
    if (out.empty()) throw bpa::ConfigError("no output path: pass --out or set \"output\" in the config");

    const auto table = bpa::run_experiment(cfg);
    bpa::write_metrics_csv(out, table);

    const auto s = bpa::summarize(table, 1);
    std::cerr << "wrote " << table.size() << " rows to " << out << " (interactions " << s.total_interactions
              << ", steps " << s.total_steps << ")\n";
    return 0;
}

int cmd_summarize(const std::string& in_path, const std::string& out_path, std::size_t window) {
    const auto table = bpa::read_metrics_csv(in_path);
    const auto summary = bpa::summarize(table, window);
    const bool as_json = std::filesystem::path(out_path).extension() == ".json";
    if (out_path.empty() || out_path == "-") {
        bpa::write_summary_csv(std::cout, summary);
        return 0;
    }
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
    if (as_json) out << bpa::summary_to_json(summary).dump(2) << '\n';
    else bpa::write_summary_csv(out, summary);
    return 0;
}

bpa::SessionService* g_service = nullptr;

int cmd_serve(const std::string& host, int port) {
    bpa::SessionService service;
    g_service = &service;
    std::signal(SIGINT, [](int) {
        if (g_service) g_service->stop();
    });
    std::cerr << "session service listening on " << host << ':' << port << '\n';
    if (!service.listen(host, port)) {
        std::cerr << "error: cannot listen on " << host << ':' << port << '\n';
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Broad-persistent advice laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_path, in_path, host = "127.0.0.1";
    std::optional<std::uint64_t> seed_override;
    std::size_t window = 1;
    int port = 8080;

    auto* run = app.add_subcommand("run", "Run an experiment config and write the metrics CSV");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_path, "Metrics CSV path (defaults to the config's \"output\")");
    run->add_option("--seed-override", seed_override, "Run a single seed instead of the configured list");

    auto* summarize = app.add_subcommand("summarize", "Summarize a metrics CSV");
    summarize->add_option("input,--in", in_path, "Metrics CSV")->required()->check(CLI::ExistingFile);
    summarize->add_option("--out", out_path, "Summary path (.json for JSON, otherwise CSV; '-' for stdout)");
    summarize->add_option("--window", window, "Trailing moving-average window")->check(CLI::PositiveNumber);

    auto* serve = app.add_subcommand("serve", "Start the live-advice session service");
    serve->add_option("--port", port, "TCP port")->check(CLI::Range(1, 65535));
    serve->add_option("--host", host, "Bind address");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(config_path, out_path, seed_override);
        if (*summarize) return cmd_summarize(in_path, out_path, window);
        if (*serve) return cmd_serve(host, port);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
