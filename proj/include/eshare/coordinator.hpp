#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "eshare/clock.hpp"
#include "eshare/event_channel.hpp"
#include "eshare/ledger_types.hpp"

namespace eshare {

/// Operations an agent needs from the edge coordinator. Implemented in
/// process by Coordinator and over HTTP by HttpCoordinatorClient.
class CoordinatorApi {
public:
    virtual ~CoordinatorApi() = default;

    virtual std::string register_device(const DeviceProfile& profile) = 0;
    virtual EnergyListing post_listing(const std::string& device_id, Role role, EnergyAmount amount) = 0;
    virtual EnergyListing withdraw_listing(const std::string& listing_id) = 0;
    virtual std::vector<EnergyListing> list_open(const std::string& microcell_id, std::optional<Role> role) = 0;
    virtual std::string create_transaction(const TransactionRequest& request) = 0;
    virtual TransactionState submit_report(const std::string& transaction_id, const PartyReport& report) = 0;
    virtual TransactionRecord get_transaction(const std::string& transaction_id) = 0;
    virtual LossReport loss_report(const std::string& transaction_id, double bucket_s) = 0;
};

struct CoordinatorOptions {
    /// Directory holding ledger.jsonl; unset keeps everything in memory.
    std::optional<std::filesystem::path> data_dir;
    std::shared_ptr<const Clock> clock;
    /// Fixed seed makes generated ids reproducible (scenario runs).
    std::optional<std::uint64_t> id_seed;
    double default_bucket_s = 300.0;
    std::size_t subscriber_buffer = 1024;
};

/// The edge service manager: device registry, per-microcell listings,
/// transaction ledger and report reconciliation. All mutations go through
/// one lock, so every change is linearizable and committed to the ledger
/// file before the call returns.
class Coordinator final : public CoordinatorApi {
public:
    explicit Coordinator(CoordinatorOptions options = {});
    ~Coordinator() override;

    std::string register_device(const DeviceProfile& profile) override;
    DeviceProfile get_device(const std::string& device_id) const;
    EnergyListing post_listing(const std::string& device_id, Role role, EnergyAmount amount) override;
    EnergyListing withdraw_listing(const std::string& listing_id) override;
    std::vector<EnergyListing> list_open(const std::string& microcell_id, std::optional<Role> role) override;
    std::string create_transaction(const TransactionRequest& request) override;
    TransactionState submit_report(const std::string& transaction_id, const PartyReport& report) override;
    TransactionRecord get_transaction(const std::string& transaction_id) override;
    LossReport loss_report(const std::string& transaction_id, double bucket_s) override;

    std::shared_ptr<EventChannel> subscribe(const std::string& microcell_id);

    std::size_t transaction_count() const;

private:
    struct Subscriber {
        std::string microcell_id;
        std::weak_ptr<EventChannel> sub;
    };

    void replay();
    void append_ledger(const std::string& kind, const std::string& body_json, bool sync);
    void publish(const std::string& microcell_id, const std::string& type, const std::string& data_json);
    std::string fresh_id(const std::string& prefix, int hex_digits);
    double now() const;

    CoordinatorOptions options_;
    mutable std::mutex mu_;
    std::map<std::string, DeviceProfile> devices_;
    std::map<std::string, EnergyListing> listings_;
    std::map<std::string, std::uint64_t> listing_order_;  // creation sequence, for newest-first ties
    std::map<std::string, TransactionRecord> transactions_;
    std::map<std::string, std::string> busy_devices_;  // device -> open transaction id
    std::vector<Subscriber> subscribers_;
    std::uint64_t event_seq_ = 0;
    std::uint64_t listing_seq_ = 0;
    std::mt19937_64 rng_;
    std::FILE* ledger_ = nullptr;
};

}  // namespace eshare
