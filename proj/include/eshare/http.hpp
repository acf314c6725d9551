#pragma once

// HTTP/1.1 + JSON surfaces: the coordinator API, a client that speaks it,
// and the agent's local control API. Error bodies are {code, message, detail}.

#include <cstdint>
#include <memory>
#include <string>

#include "eshare/agent.hpp"
#include "eshare/coordinator.hpp"

namespace eshare::http {

class CoordinatorServer {
public:
    explicit CoordinatorServer(std::shared_ptr<Coordinator> coordinator);
    ~CoordinatorServer();
    CoordinatorServer(const CoordinatorServer&) = delete;
    CoordinatorServer& operator=(const CoordinatorServer&) = delete;

    /// Binds host:port (0 picks a free port). Throws Error(Io) if taken.
    std::uint16_t bind(const std::string& host, std::uint16_t port);
    /// Serves on a background thread.
    void start();
    /// Serves on the calling thread until stop().
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// CoordinatorApi over HTTP. Transport failures raise Error(Unreachable);
/// API errors are rethrown with the server's code.
class HttpCoordinatorClient final : public CoordinatorApi {
public:
    explicit HttpCoordinatorClient(std::string base_url);
    ~HttpCoordinatorClient() override;

    std::string register_device(const DeviceProfile& profile) override;
    EnergyListing post_listing(const std::string& device_id, Role role, EnergyAmount amount) override;
    EnergyListing withdraw_listing(const std::string& listing_id) override;
    std::vector<EnergyListing> list_open(const std::string& microcell_id, std::optional<Role> role) override;
    std::string create_transaction(const TransactionRequest& request) override;
    TransactionState submit_report(const std::string& transaction_id, const PartyReport& report) override;
    TransactionRecord get_transaction(const std::string& transaction_id) override;
    LossReport loss_report(const std::string& transaction_id, double bucket_s) override;

    /// Raw GET, for callers that want the body verbatim.
    std::string get_raw(const std::string& path);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

class AgentControlServer {
public:
    explicit AgentControlServer(std::shared_ptr<agent::DeviceAgent> agent);
    ~AgentControlServer();
    AgentControlServer(const AgentControlServer&) = delete;
    AgentControlServer& operator=(const AgentControlServer&) = delete;

    std::uint16_t bind(const std::string& host, std::uint16_t port);
    void start();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace eshare::http
