#include "eshare/coordinator.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "eshare/error.hpp"
#include "eshare/wire.hpp"

namespace eshare {

namespace {

constexpr const char* kLedgerFile = "ledger.jsonl";

std::string hex(std::uint64_t v, int digits) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(static_cast<std::size_t>(digits), '0');
    for (int i = digits - 1; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
        v >>= 4;
    }
    return out;
}

}  // namespace

// ---- Coordinator ----------------------------------------------------------

Coordinator::Coordinator(CoordinatorOptions options) : options_(std::move(options)) {
    if (!options_.clock) options_.clock = std::make_shared<SystemClock>();
    if (options_.id_seed) {
        rng_.seed(*options_.id_seed);
    } else {
        std::random_device rd;
        rng_.seed((std::uint64_t{rd()} << 32) ^ rd());
    }
    if (options_.data_dir) {
        std::filesystem::create_directories(*options_.data_dir);
        replay();
        const auto path = *options_.data_dir / kLedgerFile;
        ledger_ = std::fopen(path.c_str(), "a");
        if (!ledger_) throw Error(ErrorCode::Io, "cannot open ledger", path.string() + ": " + std::strerror(errno));
    }
}

Coordinator::~Coordinator() {
    if (ledger_) std::fclose(ledger_);
}

double Coordinator::now() const { return options_.clock->now_s(); }

std::string Coordinator::fresh_id(const std::string& prefix, int hex_digits) {
    for (;;) {
        std::string id = prefix;
        for (int left = hex_digits; left > 0; left -= 16) id += hex(rng_(), std::min(left, 16));
        if (!listings_.count(id) && !transactions_.count(id) && !devices_.count(id)) return id;
    }
}

void Coordinator::replay() {
    const auto path = *options_.data_dir / kLedgerFile;
    std::ifstream in(path);
    if (!in) return;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        wire::json j = wire::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            // A torn final line from a crash mid-append carries no committed state.
            if (in.peek() == std::char_traits<char>::eof()) break;
            throw Error(ErrorCode::Io, "corrupt ledger line", std::to_string(lineno));
        }
        const std::string kind = wire::req_string(j, "kind");
        const auto& data = j.at("data");
        if (kind == "device") {
            auto d = wire::decode_device(data);
            devices_[d.device_id] = d;
        } else if (kind == "listing") {
            auto l = wire::decode_listing(data);
            if (!listing_order_.count(l.listing_id)) listing_order_[l.listing_id] = ++listing_seq_;
            listings_.insert_or_assign(l.listing_id, l);
        } else if (kind == "transaction") {
            auto t = wire::decode_transaction(data);
            transactions_.insert_or_assign(t.transaction_id, t);
        }
    }
    for (const auto& [id, t] : transactions_) {
        if (!t.reconciled()) {
            busy_devices_[t.provider_id] = id;
            busy_devices_[t.consumer_id] = id;
        }
    }
}

void Coordinator::append_ledger(const std::string& kind, const std::string& body_json, bool sync) {
    if (!ledger_) return;
    const std::string line = R"({"kind":")" + kind + R"(","data":)" + body_json + "}\n";
    if (std::fwrite(line.data(), 1, line.size(), ledger_) != line.size() || std::fflush(ledger_) != 0) {
        throw Error(ErrorCode::Io, "ledger write failed", std::strerror(errno));
    }
    if (sync) ::fsync(::fileno(ledger_));
}

void Coordinator::publish(const std::string& microcell_id, const std::string& type, const std::string& data_json) {
    const std::string event = R"({"seq":)" + std::to_string(++event_seq_) + R"(,"type":")" + type +
                              R"(","microcell_id":)" + wire::json(microcell_id).dump() + R"(,"data":)" + data_json +
                              "}";
    std::erase_if(subscribers_, [](const Subscriber& s) {
        auto sub = s.sub.lock();
        return !sub || sub->closed();
    });
    for (auto& s : subscribers_) {
        if (s.microcell_id != microcell_id) continue;
        if (auto sub = s.sub.lock()) sub->push(event);
    }
}

std::shared_ptr<EventChannel> Coordinator::subscribe(const std::string& microcell_id) {
    std::lock_guard lock(mu_);
    auto sub = std::make_shared<EventChannel>(options_.subscriber_buffer);
    subscribers_.push_back({microcell_id, sub});
    return sub;
}

std::string Coordinator::register_device(const DeviceProfile& profile) {
    if (!(profile.capacity_mwh > 0.0)) {
        throw Error(ErrorCode::InvalidCapacity, "capacity must be positive", std::to_string(profile.capacity_mwh));
    }
    if (profile.microcell_id.empty()) throw Error(ErrorCode::Validation, "microcell_id is required", "microcell_id");
    std::lock_guard lock(mu_);
    DeviceProfile stored = profile;
    if (stored.device_id.empty()) stored.device_id = fresh_id("dev-", 16);
    if (auto it = devices_.find(stored.device_id); it != devices_.end()) {
        if (it->second == stored) return stored.device_id;
        throw Error(ErrorCode::Conflict, "device id already registered with a different profile", stored.device_id);
    }
    devices_[stored.device_id] = stored;
    append_ledger("device", wire::encode(stored).dump(), false);
    publish(stored.microcell_id, "device-registered", wire::encode(stored).dump());
    return stored.device_id;
}

DeviceProfile Coordinator::get_device(const std::string& device_id) const {
    std::lock_guard lock(mu_);
    auto it = devices_.find(device_id);
    if (it == devices_.end()) throw Error(ErrorCode::NotFound, "unknown device", device_id);
    return it->second;
}

EnergyListing Coordinator::post_listing(const std::string& device_id, Role role, EnergyAmount amount) {
    std::lock_guard lock(mu_);
    auto dev = devices_.find(device_id);
    if (dev == devices_.end()) throw Error(ErrorCode::NotFound, "unknown device", device_id);
    for (const auto& [id, l] : listings_) {
        if (l.device_id == device_id && l.state == ListingState::Open) {
            throw Error(ErrorCode::Busy, "device already has an open listing", id);
        }
    }
    if (auto b = busy_devices_.find(device_id); b != busy_devices_.end()) {
        throw Error(ErrorCode::Busy, "device is in an unreconciled transaction", b->second);
    }
    EnergyListing l;
    l.listing_id = fresh_id("lst-", 16);
    l.device_id = device_id;
    l.microcell_id = dev->second.microcell_id;
    l.role = role;
    l.amount = amount;
    l.created_at = now();
    l.state = ListingState::Open;
    listings_[l.listing_id] = l;
    listing_order_[l.listing_id] = ++listing_seq_;
    const std::string body = wire::encode(l).dump();
    append_ledger("listing", body, false);
    publish(l.microcell_id, "listing-created", body);
    return l;
}

EnergyListing Coordinator::withdraw_listing(const std::string& listing_id) {
    std::lock_guard lock(mu_);
    auto it = listings_.find(listing_id);
    if (it == listings_.end()) throw Error(ErrorCode::NotFound, "unknown listing", listing_id);
    if (!listing_transition_allowed(it->second.state, ListingState::Withdrawn)) {
        throw Error(ErrorCode::Conflict, "listing is no longer open", std::string(to_string(it->second.state)));
    }
    it->second.state = ListingState::Withdrawn;
    const std::string body = wire::encode(it->second).dump();
    append_ledger("listing", body, false);
    publish(it->second.microcell_id, "listing-withdrawn", body);
    return it->second;
}

std::vector<EnergyListing> Coordinator::list_open(const std::string& microcell_id, std::optional<Role> role) {
    std::lock_guard lock(mu_);
    std::vector<EnergyListing> out;
    for (const auto& [id, l] : listings_) {
        if (l.microcell_id != microcell_id || l.state != ListingState::Open) continue;
        if (role && l.role != *role) continue;
        out.push_back(l);
    }
    std::sort(out.begin(), out.end(), [&](const EnergyListing& a, const EnergyListing& b) {
        if (a.created_at != b.created_at) return a.created_at > b.created_at;
        return listing_order_.at(a.listing_id) > listing_order_.at(b.listing_id);
    });
    return out;
}

std::string Coordinator::create_transaction(const TransactionRequest& req) {
    std::lock_guard lock(mu_);
    auto consumer = devices_.find(req.consumer_id);
    if (consumer == devices_.end()) throw Error(ErrorCode::NotFound, "unknown consumer", req.consumer_id);
    auto provider = devices_.find(req.provider_id);
    if (provider == devices_.end()) throw Error(ErrorCode::NotFound, "unknown provider", req.provider_id);
    if (req.consumer_id == req.provider_id) {
        throw Error(ErrorCode::InvalidArgument, "consumer and provider must differ", req.consumer_id);
    }
    if (consumer->second.microcell_id != provider->second.microcell_id) {
        throw Error(ErrorCode::Locality, "parties are in different microcells",
                    consumer->second.microcell_id + " vs " + provider->second.microcell_id);
    }
    for (const auto* id : {&req.consumer_id, &req.provider_id}) {
        if (auto b = busy_devices_.find(*id); b != busy_devices_.end()) {
            throw Error(ErrorCode::Busy, "party is already in a transaction", *id);
        }
    }
    EnergyListing* offer = nullptr;
    EnergyListing* request = nullptr;
    for (auto& [id, l] : listings_) {
        if (l.state != ListingState::Open) continue;
        if (l.device_id == req.provider_id && l.role == Role::Provider) offer = &l;
        if (l.device_id == req.consumer_id && l.role == Role::Consumer) request = &l;
    }
    if (!offer) throw Error(ErrorCode::Busy, "provider has no open offer", req.provider_id);
    if (!request) throw Error(ErrorCode::Busy, "consumer has no open request", req.consumer_id);
    if (offer->amount != request->amount || offer->amount != req.amount) {
        throw Error(ErrorCode::EqualAmountViolation, "offer and request amounts differ",
                    std::to_string(offer->amount.percent()) + "% offer vs " +
                        std::to_string(request->amount.percent()) + "% request");
    }
    if (req.goal_mode == sim::GoalMode::DurationTarget && !(req.duration_s && *req.duration_s > 0.0)) {
        throw Error(ErrorCode::Validation, "duration goal needs a positive duration_s", "duration_s");
    }

    TransactionRecord rec;
    rec.transaction_id = fresh_id("", 32);
    rec.microcell_id = consumer->second.microcell_id;
    rec.provider_id = req.provider_id;
    rec.consumer_id = req.consumer_id;
    rec.amount = req.amount;
    rec.goal_mode = req.goal_mode;
    if (req.goal_mode == sim::GoalMode::DurationTarget) rec.duration_s = req.duration_s;
    rec.created_at_s = now();
    rec.state = TransactionState::Created;

    offer->state = ListingState::Matched;
    request->state = ListingState::Matched;
    transactions_[rec.transaction_id] = rec;
    busy_devices_[rec.provider_id] = rec.transaction_id;
    busy_devices_[rec.consumer_id] = rec.transaction_id;

    const std::string offer_body = wire::encode(*offer).dump();
    const std::string request_body = wire::encode(*request).dump();
    const std::string tx_body = wire::encode(rec).dump();
    append_ledger("listing", offer_body, false);
    append_ledger("listing", request_body, false);
    append_ledger("transaction", tx_body, true);
    publish(rec.microcell_id, "listing-matched", offer_body);
    publish(rec.microcell_id, "listing-matched", request_body);
    publish(rec.microcell_id, "transaction-created", tx_body);
    return rec.transaction_id;
}

TransactionState Coordinator::submit_report(const std::string& transaction_id, const PartyReport& report) {
    std::lock_guard lock(mu_);
    auto it = transactions_.find(transaction_id);
    if (it == transactions_.end()) throw Error(ErrorCode::NotFound, "unknown transaction", transaction_id);
    TransactionRecord& rec = it->second;

    std::optional<PartyReport>* slot = nullptr;
    PartyRole role{};
    if (report.device_id == rec.provider_id) {
        slot = &rec.provider_report;
        role = PartyRole::Provider;
    } else if (report.device_id == rec.consumer_id) {
        slot = &rec.consumer_report;
        role = PartyRole::Consumer;
    } else {
        throw Error(ErrorCode::Forbidden, "device is not a party to this transaction", report.device_id);
    }
    if (slot->has_value() || rec.reconciled()) {
        throw Error(ErrorCode::AlreadyReported, "party has already reported", report.device_id);
    }
    validate_report(report, role);

    TransactionRecord next = rec;
    (role == PartyRole::Provider ? next.provider_report : next.consumer_report) = report;
    next.state = TransactionState::AwaitingReports;
    if (next.provider_report && next.consumer_report) {
        LossReport loss = reconcile(*next.provider_report, *next.consumer_report, options_.default_bucket_s);
        if (next.goal_mode == sim::GoalMode::AmountTarget) {
            const double target = percent_to_energy(next.amount, next.consumer_report->final_battery.capacity_mwh());
            if (loss.consumer_gained_mwh > target + 1e-6) {
                loss.discrepancies.push_back("consumer-gained-exceeds-request");
            }
        }
        next.loss_report = std::move(loss);
        const bool aborted = next.provider_report->end_reason == sim::EndReason::Aborted ||
                             next.consumer_report->end_reason == sim::EndReason::Aborted;
        next.state = aborted ? TransactionState::ReconciledPartial : TransactionState::Reconciled;
    }

    const std::string body = wire::encode(next).dump();
    append_ledger("transaction", body, true);
    rec = std::move(next);
    if (rec.reconciled()) {
        busy_devices_.erase(rec.provider_id);
        busy_devices_.erase(rec.consumer_id);
    }
    publish(rec.microcell_id, rec.reconciled() ? "transaction-reconciled" : "transaction-report", body);
    return rec.state;
}

TransactionRecord Coordinator::get_transaction(const std::string& transaction_id) {
    std::lock_guard lock(mu_);
    auto it = transactions_.find(transaction_id);
    if (it == transactions_.end()) throw Error(ErrorCode::NotFound, "unknown transaction", transaction_id);
    return it->second;
}

LossReport Coordinator::loss_report(const std::string& transaction_id, double bucket_s) {
    TransactionRecord rec = get_transaction(transaction_id);
    if (!rec.reconciled()) {
        throw Error(ErrorCode::NotReconciled, "transaction is not reconciled yet", std::string(to_string(rec.state)));
    }
    LossReport out = reconcile(*rec.provider_report, *rec.consumer_report, bucket_s);
    out.discrepancies = rec.loss_report->discrepancies;
    return out;
}

std::size_t Coordinator::transaction_count() const {
    std::lock_guard lock(mu_);
    return transactions_.size();
}

}  // namespace eshare
