#include "eshare/http.hpp"

#include <sys/socket.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "eshare/error.hpp"
#include "eshare/wire.hpp"

namespace eshare::http {

namespace {

using wire::json;

void reuse_addr_only(socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
}

std::string error_body(ErrorCode code, const std::string& message, const std::string& detail) {
    return json{{"code", std::string(to_string(code))}, {"message", message}, {"detail", detail}}.dump();
}

void reply_json(httplib::Response& res, int status, const std::string& body) {
    res.status = status;
    res.set_content(body, "application/json");
}

/// Runs a handler, turning thrown errors into the standard error body.
template <class F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        reply_json(res, http_status(e.code()), error_body(e.code(), e.what(), e.detail()));
    } catch (const std::exception& e) {
        reply_json(res, 500, error_body(ErrorCode::Io, "internal error", e.what()));
    }
}

/// Server side of one SSE subscription. Channels are tracked so stop() can
/// wake every stream that is still open.
class StreamRegistry {
public:
    void add(const std::shared_ptr<EventChannel>& ch) {
        std::lock_guard lock(mu_);
        std::erase_if(channels_, [](const std::weak_ptr<EventChannel>& w) { return w.expired(); });
        channels_.push_back(ch);
    }
    void cancel_all() {
        std::lock_guard lock(mu_);
        for (auto& w : channels_) {
            if (auto ch = w.lock()) ch->cancel();
        }
        channels_.clear();
    }

private:
    std::mutex mu_;
    std::vector<std::weak_ptr<EventChannel>> channels_;
};

/// `format` turns one channel entry into the SSE text for it.
template <class Format>
void serve_stream(httplib::Response& res, std::shared_ptr<EventChannel> ch, Format format) {
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [ch, format](std::size_t, httplib::DataSink& sink) {
            if (!sink.is_writable()) {
                ch->cancel();
                return false;
            }
            auto event = ch->next(0.25);
            if (event) {
                const std::string text = format(*event);
                if (!sink.write(text.data(), text.size())) {
                    ch->cancel();
                    return false;
                }
                return true;
            }
            if (ch->closed()) {
                sink.done();
                return true;
            }
            static const std::string keepalive = ": keepalive\n\n";
            sink.write(keepalive.data(), keepalive.size());
            return true;
        },
        [ch](bool) { ch->cancel(); });
}

class ServerBase {
public:
    ServerBase() { server.set_socket_options(reuse_addr_only); }

    std::uint16_t bind(const std::string& host, std::uint16_t port) {
        if (port == 0) {
            const int p = server.bind_to_any_port(host);
            if (p < 0) throw Error(ErrorCode::Io, "cannot bind", host);
            port_ = static_cast<std::uint16_t>(p);
        } else {
            if (!server.bind_to_port(host, port)) {
                throw Error(ErrorCode::Io, "port " + std::to_string(port) + " is already in use",
                            host + ":" + std::to_string(port));
            }
            port_ = port;
        }
        return port_;
    }

    void start() {
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    void run() { server.listen_after_bind(); }

    void stop() {
        streams.cancel_all();
        server.stop();
        if (thread.joinable()) thread.join();
    }

    httplib::Server server;
    StreamRegistry streams;
    std::thread thread;
    std::uint16_t port_ = 0;
};

}  // namespace

// ---- coordinator server ---------------------------------------------------

struct CoordinatorServer::Impl : ServerBase {
    std::shared_ptr<Coordinator> coordinator;
};

CoordinatorServer::CoordinatorServer(std::shared_ptr<Coordinator> coordinator) : impl_(std::make_unique<Impl>()) {
    impl_->coordinator = std::move(coordinator);
    auto& s = impl_->server;
    auto* self = impl_.get();
    Coordinator& c = *self->coordinator;

    s.Post("/v1/devices", [&c](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = c.register_device(wire::decode_device(wire::parse(req.body)));
            reply_json(res, 201, json{{"device_id", id}}.dump());
        });
    });

    s.Post(R"(/v1/microcells/([^/]+)/listings)", [&c](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const json j = wire::parse(req.body);
            const std::string device_id = wire::req_string(j, "device_id");
            const DeviceProfile dev = c.get_device(device_id);
            if (dev.microcell_id != req.matches[1].str()) {
                throw Error(ErrorCode::Locality, "device is registered in another microcell", dev.microcell_id);
            }
            Role role;
            std::optional<EnergyAmount> amount;
            try {
                role = role_from_string(wire::req_string(j, "role"));
            } catch (const Error& e) {
                if (e.code() == ErrorCode::Validation) throw;
                throw Error(ErrorCode::Validation, e.what(), "role");
            }
            try {
                amount = EnergyAmount(wire::req_int(j, "amount_percent"));
            } catch (const Error& e) {
                if (e.code() == ErrorCode::Validation) throw;
                throw Error(e.code(), e.what(), "amount_percent");
            }
            reply_json(res, 201, wire::encode(c.post_listing(device_id, role, *amount)).dump());
        });
    });

    s.Get(R"(/v1/microcells/([^/]+)/listings)", [&c](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::optional<Role> role;
            if (req.has_param("role") && !req.get_param_value("role").empty()) {
                try {
                    role = role_from_string(req.get_param_value("role"));
                } catch (const Error& e) {
                    throw Error(ErrorCode::Validation, e.what(), "role");
                }
            }
            json out = json::array();
            for (const auto& l : c.list_open(req.matches[1].str(), role)) out.push_back(wire::encode(l));
            reply_json(res, 200, out.dump());
        });
    });

    s.Delete(R"(/v1/listings/([^/]+))", [&c](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { reply_json(res, 200, wire::encode(c.withdraw_listing(req.matches[1].str())).dump()); });
    });

    s.Post("/v1/transactions", [&c](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const json j = wire::parse(req.body);
            TransactionRequest tr;
            tr.consumer_id = wire::req_string(j, "consumer_id");
            tr.provider_id = wire::req_string(j, "provider_id");
            try {
                tr.amount = EnergyAmount(wire::req_int(j, "amount_percent"));
                if (auto mode = wire::opt_string(j, "goal_mode")) tr.goal_mode = sim::goal_mode_from_string(*mode);
            } catch (const Error& e) {
                if (e.code() == ErrorCode::Validation) throw;
                throw Error(ErrorCode::Validation, e.what(), "goal_mode");
            }
            tr.duration_s = wire::opt_number(j, "duration_s");
            reply_json(res, 201, json{{"transaction_id", c.create_transaction(tr)}}.dump());
        });
    });

    s.Put(R"(/v1/transactions/([^/]+)/reports)", [&c](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto state = c.submit_report(req.matches[1].str(), wire::decode_report(wire::parse(req.body)));
            reply_json(res, 200, json{{"state", std::string(to_string(state))}}.dump());
        });
    });

    s.Get(R"(/v1/transactions/([^/]+)/loss-report)", [&c](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            double bucket = 300.0;
            if (req.has_param("bucket_s")) {
                try {
                    bucket = std::stod(req.get_param_value("bucket_s"));
                } catch (const std::exception&) {
                    throw Error(ErrorCode::Validation, "bucket_s must be a number", "bucket_s");
                }
            }
            reply_json(res, 200, wire::encode(c.loss_report(req.matches[1].str(), bucket)).dump());
        });
    });

    s.Get(R"(/v1/transactions/([^/]+))", [&c](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { reply_json(res, 200, wire::encode(c.get_transaction(req.matches[1].str())).dump()); });
    });

    s.Get(R"(/v1/microcells/([^/]+)/events)", [self](const httplib::Request& req, httplib::Response& res) {
        auto ch = self->coordinator->subscribe(req.matches[1].str());
        self->streams.add(ch);
        serve_stream(res, ch, [](const std::string& e) { return "data: " + e + "\n\n"; });
    });
}

CoordinatorServer::~CoordinatorServer() { stop(); }
std::uint16_t CoordinatorServer::bind(const std::string& host, std::uint16_t port) { return impl_->bind(host, port); }
void CoordinatorServer::start() { impl_->start(); }
void CoordinatorServer::run() { impl_->run(); }
void CoordinatorServer::stop() { impl_->stop(); }

// ---- client ---------------------------------------------------------------

struct HttpCoordinatorClient::Impl {
    explicit Impl(const std::string& url) : base(url), client(url) {
        client.set_connection_timeout(3);
        client.set_read_timeout(10);
        client.set_write_timeout(10);
    }

    [[noreturn]] void fail_transport(const std::string& path, httplib::Error err) {
        throw Error(ErrorCode::Unreachable, "coordinator unreachable at " + base, path + ": " + httplib::to_string(err));
    }

    std::string check(const std::string& path, const httplib::Result& r) {
        if (!r) fail_transport(path, r.error());
        if (r->status >= 400) {
            json j = json::parse(r->body, nullptr, false);
            if (j.is_object() && j.contains("code") && j["code"].is_string()) {
                const auto code = error_code_from_string(j["code"].get<std::string>()).value_or(ErrorCode::Io);
                throw Error(code, j.value("message", std::string("request failed")), j.value("detail", std::string()));
            }
            throw Error(ErrorCode::Io, "HTTP " + std::to_string(r->status), path);
        }
        return r->body;
    }

    json get(const std::string& path) {
        std::lock_guard lock(mu);
        return wire::parse(check(path, client.Get(path)));
    }
    json post(const std::string& path, const json& body) {
        std::lock_guard lock(mu);
        return wire::parse(check(path, client.Post(path, body.dump(), "application/json")));
    }
    json put(const std::string& path, const json& body) {
        std::lock_guard lock(mu);
        return wire::parse(check(path, client.Put(path, body.dump(), "application/json")));
    }
    json del(const std::string& path) {
        std::lock_guard lock(mu);
        return wire::parse(check(path, client.Delete(path)));
    }

    std::string base;
    std::mutex mu;
    std::map<std::string, std::string> cells;  // device -> microcell
    httplib::Client client;
};

HttpCoordinatorClient::HttpCoordinatorClient(std::string base_url) : impl_(std::make_unique<Impl>(base_url)) {}
HttpCoordinatorClient::~HttpCoordinatorClient() = default;

namespace {
std::string seg(const std::string& s) { return httplib::detail::encode_url(s); }
}  // namespace

std::string HttpCoordinatorClient::register_device(const DeviceProfile& profile) {
    const std::string id = wire::req_string(impl_->post("/v1/devices", wire::encode(profile)), "device_id");
    std::lock_guard lock(impl_->mu);
    impl_->cells[id] = profile.microcell_id;
    return id;
}

EnergyListing HttpCoordinatorClient::post_listing(const std::string& device_id, Role role, EnergyAmount amount) {
    std::string cell;
    {
        std::lock_guard lock(impl_->mu);
        auto it = impl_->cells.find(device_id);
        if (it == impl_->cells.end()) {
            throw Error(ErrorCode::NotFound, "device was not registered through this client", device_id);
        }
        cell = it->second;
    }
    json body{{"device_id", device_id}, {"role", std::string(to_string(role))}, {"amount_percent", amount.percent()}};
    return wire::decode_listing(impl_->post("/v1/microcells/" + seg(cell) + "/listings", body));
}

EnergyListing HttpCoordinatorClient::withdraw_listing(const std::string& listing_id) {
    return wire::decode_listing(impl_->del("/v1/listings/" + seg(listing_id)));
}

std::vector<EnergyListing> HttpCoordinatorClient::list_open(const std::string& microcell_id, std::optional<Role> role) {
    std::string path = "/v1/microcells/" + seg(microcell_id) + "/listings";
    if (role) path += "?role=" + std::string(to_string(*role));
    std::vector<EnergyListing> out;
    for (const auto& l : impl_->get(path)) out.push_back(wire::decode_listing(l));
    return out;
}

std::string HttpCoordinatorClient::create_transaction(const TransactionRequest& r) {
    json body{{"consumer_id", r.consumer_id},
              {"provider_id", r.provider_id},
              {"amount_percent", r.amount.percent()},
              {"goal_mode", std::string(sim::to_string(r.goal_mode))}};
    if (r.duration_s) body["duration_s"] = *r.duration_s;
    return wire::req_string(impl_->post("/v1/transactions", body), "transaction_id");
}

TransactionState HttpCoordinatorClient::submit_report(const std::string& transaction_id, const PartyReport& report) {
    const json j = impl_->put("/v1/transactions/" + seg(transaction_id) + "/reports", wire::encode(report));
    return transaction_state_from_string(wire::req_string(j, "state"));
}

TransactionRecord HttpCoordinatorClient::get_transaction(const std::string& transaction_id) {
    return wire::decode_transaction(impl_->get("/v1/transactions/" + seg(transaction_id)));
}

LossReport HttpCoordinatorClient::loss_report(const std::string& transaction_id, double bucket_s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", bucket_s);
    return wire::decode_loss_report(
        impl_->get("/v1/transactions/" + seg(transaction_id) + "/loss-report?bucket_s=" + buf));
}

std::string HttpCoordinatorClient::get_raw(const std::string& path) {
    std::lock_guard lock(impl_->mu);
    return impl_->check(path, impl_->client.Get(path));
}

// ---- agent control server -------------------------------------------------

struct AgentControlServer::Impl : ServerBase {
    std::shared_ptr<agent::DeviceAgent> agent;
};

AgentControlServer::AgentControlServer(std::shared_ptr<agent::DeviceAgent> a) : impl_(std::make_unique<Impl>()) {
    impl_->agent = std::move(a);
    auto* self = impl_.get();
    auto& s = impl_->server;

    s.Post("/control/command", [self](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            self->agent->command(agent::decode_command(req.body));
            reply_json(res, 202, json{{"accepted", true}}.dump());
        });
    });

    s.Get("/status", [self](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { reply_json(res, 200, agent::encode_status(self->agent->status())); });
    });

    s.Get("/events", [self](const httplib::Request&, httplib::Response& res) {
        auto ch = self->agent->subscribe();
        self->streams.add(ch);
        serve_stream(res, ch, [](const std::string& e) {
            const json j = json::parse(e);
            return "event: " + j.at("event").get<std::string>() + "\ndata: " + j.at("data").dump() + "\n\n";
        });
    });
}

AgentControlServer::~AgentControlServer() { stop(); }
std::uint16_t AgentControlServer::bind(const std::string& host, std::uint16_t port) { return impl_->bind(host, port); }
void AgentControlServer::start() { impl_->start(); }
void AgentControlServer::stop() { impl_->stop(); }

}  // namespace eshare::http
