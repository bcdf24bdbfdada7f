#pragma once

#include <chrono>
#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "bpa/session.hpp"

namespace bpa {

/// HTTP+JSON gateway over a SessionRegistry.
///
///   POST /sessions                      {"environment", "agent_mode", ...} -> {"session_id", ...}
///   POST /sessions/{id}/control         {"command": run|pause|step_once|reset}
///   POST /sessions/{id}/advice          {"action": N} -> {"applied_at_step", "queued"}
///   GET  /sessions/{id}                 latest FrameView
///   GET  /sessions/{id}/frames          newline-delimited FrameView stream (?limit=N closes after N)
class SessionService {
public:
    SessionService() { install_routes(); }

    ~SessionService() { stop(); }

    SessionService(const SessionService&) = delete;
    SessionService& operator=(const SessionService&) = delete;

    /// Blocks serving on host:port.
    bool listen(const std::string& host, int port) { return server_.listen(host, port); }

    /// Binds an ephemeral port and serves on a background thread.
    int start_background(const std::string& host = "127.0.0.1") {
        const int port = server_.bind_to_any_port(host);
        if (port < 0) throw std::runtime_error("session service: cannot bind " + host);
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port;
    }

    void stop() {
        if (server_.is_running()) server_.stop();
        if (thread_.joinable()) thread_.join();
        registry_.clear();
    }

    SessionRegistry& registry() { return registry_; }

private:
    static void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, const std::string& code, const std::string& message, int status) {
        send_json(res, {{"error", code}, {"message", message}}, status);
    }

    static nlohmann::json parse_body(const httplib::Request& req) {
        try {
            return nlohmann::json::parse(req.body.empty() ? std::string("{}") : req.body);
        } catch (const nlohmann::json::exception& e) {
            throw SessionError("BAD_REQUEST", std::string("malformed JSON body: ") + e.what(), 400);
        }
    }

    template <typename F>
    static httplib::Server::Handler guarded(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const SessionError& e) {
                send_error(res, e.code(), e.what(), e.http_status());
            } catch (const std::exception& e) {
                send_error(res, "INTERNAL", e.what(), 500);
            }
        };
    }

    void install_routes() {
        server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                     {"Access-Control-Allow-Headers", "Content-Type"},
                                     {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
        server_.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

        server_.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto session = registry_.create(parse_body(req));
            send_json(res, session->describe());
        }));

        server_.Get(R"(/sessions/([A-Za-z0-9]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, registry_.get(req.matches[1])->view());
        }));

        server_.Post(R"(/sessions/([A-Za-z0-9]+)/control)",
                     guarded([this](const httplib::Request& req, httplib::Response& res) {
                         auto session = registry_.get(req.matches[1]);
                         const auto body = parse_body(req);
                         if (!body.is_object() || !body.contains("command") || !body.at("command").is_string())
                             throw SessionError("BAD_REQUEST", "body must carry a 'command' string", 400);
                         const auto command = body.at("command").get<std::string>();
                         if (command == "run") session->run();
                         else if (command == "pause") session->pause();
                         else if (command == "step_once") session->step_once();
                         else if (command == "reset") session->reset();
                         else throw SessionError("COMMAND_UNKNOWN", "unknown command '" + command + "'", 400);
                         auto view = session->view();
                         send_json(res, {{"ok", true},
                                         {"command", command},
                                         {"run_state", view["run_state"]},
                                         {"episode", view["episode"]},
                                         {"step", view["step"]}});
                     }));

        server_.Post(R"(/sessions/([A-Za-z0-9]+)/advice)",
                     guarded([this](const httplib::Request& req, httplib::Response& res) {
                         auto session = registry_.get(req.matches[1]);
                         const auto body = parse_body(req);
                         if (!body.is_object() || !body.contains("action") || !body.at("action").is_number_integer())
                             throw SessionError("ACTION_INVALID", "body must carry an integer 'action'", 400);
                         const auto ack = session->advise(body.at("action").get<ActionId>());
                         send_json(res, {{"ok", true}, {"applied_at_step", ack.applied_at_step}, {"queued", ack.queued}});
                     }));

        server_.Get(R"(/sessions/([A-Za-z0-9]+)/frames)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        auto session = registry_.get(req.matches[1]);
                        std::size_t limit = 0;
                        if (req.has_param("limit")) {
                            try {
                                limit = std::stoull(req.get_param_value("limit"));
                            } catch (const std::exception&) {
                                throw SessionError("BAD_REQUEST", "limit must be a non-negative integer", 400);
                            }
                        }
                        // Late subscribers start at the newest frame.
                        auto cursor = std::make_shared<std::size_t>(session->latest_frame_index().value_or(0));
                        auto sent = std::make_shared<std::size_t>(0);
                        res.set_chunked_content_provider(
                            "application/x-ndjson", [session, cursor, sent, limit](std::size_t, httplib::DataSink& sink) {
                                bool closed = false;
                                auto batch = session->frames_since(*cursor, std::chrono::milliseconds(250), closed);
                                for (const auto& frame : batch) {
                                    const std::string line = frame.dump() + "\n";
                                    if (!sink.write(line.data(), line.size())) return false;
                                    if (limit != 0 && ++*sent >= limit) {
                                        sink.done();
                                        return true;
                                    }
                                }
                                if (closed) sink.done();
                                return sink.is_writable();
                            });
                    }));
    }

    httplib::Server server_;
    SessionRegistry registry_;
    std::thread thread_;
};

}  // namespace bpa
