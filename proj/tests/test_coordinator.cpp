#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "eshare/coordinator.hpp"
#include "eshare/error.hpp"
#include "eshare/wire.hpp"
#include "oracles.hpp"

using namespace eshare;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error";
    return ErrorCode::Io;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static std::atomic<int> n{0};
        path = std::filesystem::temp_directory_path() /
               ("eshare-coord-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
        std::filesystem::remove_all(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

struct Fixture {
    std::shared_ptr<VirtualClock> clock = std::make_shared<VirtualClock>();
    std::unique_ptr<Coordinator> coord;

    explicit Fixture(std::optional<std::filesystem::path> dir = std::nullopt) { open(dir); }

    void open(std::optional<std::filesystem::path> dir) {
        CoordinatorOptions o;
        o.clock = clock;
        o.data_dir = dir;
        o.id_seed = 7;
        coord = std::make_unique<Coordinator>(o);
    }

    std::string device(const std::string& id, const std::string& cell = "m1", double cap = 10000.0) {
        return coord->register_device({id, id, cap, cell});
    }
};

PartyReport report_from(const std::string& id, double capacity, const std::vector<double>& times,
                        const std::vector<double>& charge, sim::EndReason reason) {
    PartyReport r;
    r.device_id = id;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double c = std::clamp(charge[i], 0.0, capacity);
        r.log.push_back({times[i], 100.0 * c / capacity, c});
    }
    r.final_battery = BatteryState(capacity, r.log.back().charge_mwh);
    r.end_reason = reason;
    return r;
}

TransactionRequest req(const std::string& consumer, const std::string& provider) {
    TransactionRequest r;
    r.consumer_id = consumer;
    r.provider_id = provider;
    r.amount = EnergyAmount(10);
    return r;
}

// Provider offering and consumer requesting 10%, matched into a transaction.
std::string matched(Fixture& f, const std::string& p, const std::string& c,
                    sim::GoalMode mode = sim::GoalMode::AmountTarget, std::optional<double> duration = {}) {
    f.coord->post_listing(p, Role::Provider, EnergyAmount(10));
    f.coord->post_listing(c, Role::Consumer, EnergyAmount(10));
    return f.coord->create_transaction({c, p, EnergyAmount(10), mode, duration});
}

}  // namespace

TEST(Registry, IdempotentAndConflicting) {
    Fixture f;
    EXPECT_EQ(f.device("a"), "a");
    EXPECT_EQ(f.device("a"), "a");
    EXPECT_EQ(code_of([&] { f.coord->register_device({"a", "other", 10000.0, "m1"}); }), ErrorCode::Conflict);
    EXPECT_EQ(code_of([&] { f.coord->register_device({"z", "z", 0.0, "m1"}); }), ErrorCode::InvalidCapacity);
    EXPECT_EQ(code_of([&] { f.coord->register_device({"z", "z", 1.0, ""}); }), ErrorCode::Validation);
    const std::string gen = f.coord->register_device({"", "anon", 5000.0, "m1"});
    EXPECT_EQ(gen.rfind("dev-", 0), 0u);
    EXPECT_EQ(f.coord->get_device(gen).capacity_mwh, 5000.0);
    EXPECT_EQ(code_of([&] { f.coord->get_device("nope"); }), ErrorCode::NotFound);
}

TEST(Listings, OneOpenPerDeviceFilterAndOrder) {
    Fixture f;
    f.device("a");
    f.device("b");
    f.device("c");
    f.device("x", "m2");
    auto la = f.coord->post_listing("a", Role::Provider, EnergyAmount(10));
    EXPECT_EQ(la.state, ListingState::Open);
    EXPECT_EQ(la.microcell_id, "m1");
    EXPECT_EQ(code_of([&] { f.coord->post_listing("a", Role::Consumer, EnergyAmount(5)); }), ErrorCode::Busy);
    EXPECT_EQ(code_of([&] { f.coord->post_listing("ghost", Role::Provider, EnergyAmount(5)); }),
              ErrorCode::NotFound);
    f.clock->advance_to(1.0);
    auto lb = f.coord->post_listing("b", Role::Provider, EnergyAmount(20));
    auto lc = f.coord->post_listing("c", Role::Consumer, EnergyAmount(20));
    f.coord->post_listing("x", Role::Provider, EnergyAmount(20));

    auto all = f.coord->list_open("m1", std::nullopt);
    ASSERT_EQ(all.size(), 3u);
    EXPECT_EQ(all[0].listing_id, lc.listing_id);  // same timestamp, later insert first
    EXPECT_EQ(all[1].listing_id, lb.listing_id);
    EXPECT_EQ(all[2].listing_id, la.listing_id);
    auto providers = f.coord->list_open("m1", Role::Provider);
    ASSERT_EQ(providers.size(), 2u);
    EXPECT_EQ(providers[0].device_id, "b");
    EXPECT_EQ(f.coord->list_open("m9", std::nullopt).size(), 0u);

    auto w = f.coord->withdraw_listing(la.listing_id);
    EXPECT_EQ(w.state, ListingState::Withdrawn);
    EXPECT_EQ(code_of([&] { f.coord->withdraw_listing(la.listing_id); }), ErrorCode::Conflict);
    EXPECT_EQ(code_of([&] { f.coord->withdraw_listing("lst-none"); }), ErrorCode::NotFound);
    EXPECT_NO_THROW(f.coord->post_listing("a", Role::Consumer, EnergyAmount(5)));
}

TEST(Transactions, CreationRules) {
    Fixture f;
    f.device("p");
    f.device("c");
    f.device("far", "m2");
    f.coord->post_listing("p", Role::Provider, EnergyAmount(10));
    f.coord->post_listing("c", Role::Consumer, EnergyAmount(20));
    EXPECT_EQ(code_of([&] { f.coord->create_transaction(req("c", "p")); }),
              ErrorCode::EqualAmountViolation);
    EXPECT_EQ(code_of([&] { f.coord->create_transaction(req("far", "p")); }), ErrorCode::Locality);
    EXPECT_EQ(code_of([&] { f.coord->create_transaction(req("c", "c")); }),
              ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([&] { f.coord->create_transaction(req("ghost", "p")); }),
              ErrorCode::NotFound);
    for (const auto& l : f.coord->list_open("m1", Role::Consumer)) f.coord->withdraw_listing(l.listing_id);
    f.coord->post_listing("c", Role::Consumer, EnergyAmount(10));
    EXPECT_EQ(code_of([&] {
                  f.coord->create_transaction({"c", "p", EnergyAmount(10), sim::GoalMode::DurationTarget, {}});
              }),
              ErrorCode::Validation);
    const auto id = f.coord->create_transaction(req("c", "p"));
    EXPECT_EQ(id.size(), 32u);
    auto rec = f.coord->get_transaction(id);
    EXPECT_EQ(rec.state, TransactionState::Created);
    EXPECT_EQ(rec.provider_id, "p");
    EXPECT_EQ(f.coord->list_open("m1", std::nullopt).size(), 0u);

    f.device("q");
    f.coord->post_listing("q", Role::Consumer, EnergyAmount(10));
    EXPECT_EQ(code_of([&] { f.coord->create_transaction(req("q", "p")); }), ErrorCode::Busy);
    EXPECT_EQ(code_of([&] { f.coord->post_listing("p", Role::Provider, EnergyAmount(10)); }), ErrorCode::Busy);
    EXPECT_EQ(code_of([&] { f.coord->loss_report(id, 300.0); }), ErrorCode::NotReconciled);
}

TEST(Transactions, ConcurrentMatchingHasOneWinner) {
    for (int round = 0; round < 20; ++round) {
        Fixture f;
        f.device("p");
        f.coord->post_listing("p", Role::Provider, EnergyAmount(10));
        constexpr int kConsumers = 8;
        for (int i = 0; i < kConsumers; ++i) {
            const std::string id = "c" + std::to_string(i);
            f.device(id);
            f.coord->post_listing(id, Role::Consumer, EnergyAmount(10));
        }
        std::atomic<int> ok{0}, busy{0};
        std::vector<std::thread> threads;
        for (int i = 0; i < kConsumers; ++i) {
            threads.emplace_back([&, i] {
                try {
                    f.coord->create_transaction(req("c" + std::to_string(i), "p"));
                    ++ok;
                } catch (const Error& e) {
                    if (e.code() == ErrorCode::Busy) ++busy;
                }
            });
        }
        for (auto& t : threads) t.join();
        EXPECT_EQ(ok.load(), 1);
        EXPECT_EQ(busy.load(), kConsumers - 1);
        EXPECT_EQ(f.coord->transaction_count(), 1u);
    }
}

TEST(Reports, ValidationAndOwnership) {
    Fixture f;
    f.device("p");
    f.device("c");
    const auto id = matched(f, "p", "c");
    const oracle::Outcome o = oracle::closed_form({});
    auto prov = report_from("p", 10000.0, o.times, o.provider_charge, sim::EndReason::ConsumerTarget);
    auto cons = report_from("c", 10000.0, o.times, o.consumer_charge, sim::EndReason::ConsumerTarget);

    auto intruder = prov;
    intruder.device_id = "mallory";
    EXPECT_EQ(code_of([&] { f.coord->submit_report(id, intruder); }), ErrorCode::Forbidden);
    EXPECT_EQ(code_of([&] { f.coord->submit_report("nope", prov); }), ErrorCode::NotFound);

    auto rising = prov;
    rising.log[3].charge_mwh += 10.0;
    EXPECT_EQ(code_of([&] { f.coord->submit_report(id, rising); }), ErrorCode::Validation);
    auto reordered = cons;
    std::swap(reordered.log[1], reordered.log[2]);
    EXPECT_EQ(code_of([&] { f.coord->submit_report(id, reordered); }), ErrorCode::Validation);
    auto empty = cons;
    empty.log.clear();
    EXPECT_EQ(code_of([&] { f.coord->submit_report(id, empty); }), ErrorCode::Validation);
    auto mismatch = cons;
    mismatch.final_battery = BatteryState(10000.0, 1.0);
    EXPECT_EQ(code_of([&] { f.coord->submit_report(id, mismatch); }), ErrorCode::Validation);

    EXPECT_EQ(f.coord->submit_report(id, prov), TransactionState::AwaitingReports);
    EXPECT_EQ(code_of([&] { f.coord->submit_report(id, prov); }), ErrorCode::AlreadyReported);
    EXPECT_EQ(f.coord->submit_report(id, cons), TransactionState::Reconciled);
    EXPECT_EQ(code_of([&] { f.coord->submit_report(id, cons); }), ErrorCode::AlreadyReported);

    const auto rec = f.coord->get_transaction(id);
    ASSERT_TRUE(rec.loss_report);
    EXPECT_NEAR(rec.loss_report->provider_expended_mwh, 1000.0, 1e-6);
    EXPECT_NEAR(rec.loss_report->consumer_gained_mwh, 600.0, 1e-6);
    EXPECT_TRUE(rec.loss_report->discrepancies.empty());
    EXPECT_NO_THROW(f.coord->post_listing("p", Role::Provider, EnergyAmount(10)));
}

TEST(Reports, AbortedPartyMakesPartialAndOverdeliveryIsFlagged) {
    Fixture f;
    f.device("p");
    f.device("c");
    auto id = matched(f, "p", "c");
    auto prov = report_from("p", 10000.0, {0, 5, 10}, {8000, 7995, 7990}, sim::EndReason::Aborted);
    auto cons = report_from("c", 10000.0, {0, 5, 10}, {3000, 3003, 3006}, sim::EndReason::ConsumerTarget);
    f.coord->submit_report(id, cons);
    EXPECT_EQ(f.coord->submit_report(id, prov), TransactionState::ReconciledPartial);

    id = matched(f, "p", "c");
    prov = report_from("p", 10000.0, {0, 5}, {8000, 7990}, sim::EndReason::ConsumerTarget);
    cons = report_from("c", 10000.0, {0, 5}, {3000, 5000}, sim::EndReason::ConsumerTarget);
    f.coord->submit_report(id, prov);
    EXPECT_EQ(f.coord->submit_report(id, cons), TransactionState::Reconciled);
    const auto d = f.coord->get_transaction(id).loss_report->discrepancies;
    EXPECT_NE(std::find(d.begin(), d.end(), "consumer-gained-exceeds-provider-expended"), d.end());
    EXPECT_NE(std::find(d.begin(), d.end(), "consumer-gained-exceeds-request"), d.end());
}

TEST(Reconcile, ThirtyMinuteBuckets) {
    oracle::Setup s;
    s.duration_mode = true;
    s.consumer_charge = 2000.0;
    const auto o = oracle::closed_form(s);
    ASSERT_EQ(o.samples, 361u);
    const auto prov = report_from("p", 10000.0, o.times, o.provider_charge, sim::EndReason::DurationElapsed);
    const auto cons = report_from("c", 10000.0, o.times, o.consumer_charge, sim::EndReason::DurationElapsed);
    const LossReport r = reconcile(prov, cons, 300.0);
    EXPECT_NEAR(r.provider_expended_mwh, 1500.0, 1e-6);
    EXPECT_NEAR(r.consumer_gained_mwh, 900.0, 1e-6);
    EXPECT_NEAR(r.loss_mwh, 600.0, 1e-6);
    ASSERT_EQ(r.buckets.size(), 6u);
    for (const auto& b : r.buckets) {
        EXPECT_NEAR(b.loss_mwh, 100.0, 1e-6);
        EXPECT_NEAR(b.end_s - b.start_s, 300.0, 1e-9);
    }
    const LossReport wide = reconcile(prov, cons, 3600.0);
    ASSERT_EQ(wide.buckets.size(), 1u);
    EXPECT_NEAR(wide.buckets[0].end_s, 1800.0, 1e-9);
    EXPECT_NEAR(wide.buckets[0].loss_mwh, 600.0, 1e-6);
}

TEST(Reconcile, LosslessTransferHasNoLoss) {
    oracle::Setup s;
    s.efficiency = 1.0;
    const auto o = oracle::closed_form(s);
    const LossReport r = reconcile(report_from("p", 10000.0, o.times, o.provider_charge, sim::EndReason::ProviderCap),
                                   report_from("c", 10000.0, o.times, o.consumer_charge, sim::EndReason::ProviderCap),
                                   60.0);
    EXPECT_NEAR(r.loss_mwh, 0.0, 1e-9);
    for (const auto& b : r.buckets) EXPECT_NEAR(b.loss_mwh, 0.0, 1e-9);
}

TEST(Reconcile, RandomLogsMatchOracle) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int run = 0; run < 200; ++run) {
        oracle::Setup s;
        s.provider_capacity = 2000.0 + 18000.0 * u(rng);
        s.consumer_capacity = 2000.0 + 18000.0 * u(rng);
        s.provider_charge = s.provider_capacity * (0.3 + 0.7 * u(rng));
        s.consumer_charge = s.consumer_capacity * 0.9 * u(rng);
        s.power_w = 0.5 + 9.5 * u(rng);
        s.efficiency = 0.1 + 0.9 * u(rng);
        s.period_s = 1.0 + 9.0 * u(rng);
        s.duration_mode = run % 3 == 0;
        s.duration_s = 10.0 + 3000.0 * u(rng);
        const double pct = 1.0 + std::floor(99.0 * u(rng));
        s.offer_cap_mwh = pct / 100.0 * s.provider_capacity;
        s.request_target_mwh = pct / 100.0 * s.consumer_capacity;
        const auto o = oracle::closed_form(s);
        if (o.samples < 2) continue;
        const auto prov = report_from("p", s.provider_capacity, o.times, o.provider_charge, sim::EndReason::Aborted);
        const auto cons = report_from("c", s.consumer_capacity, o.times, o.consumer_charge, sim::EndReason::Aborted);
        const double bucket = 30.0 + 600.0 * u(rng);
        const LossReport r = reconcile(prov, cons, bucket);

        const double scale = std::max(1.0, o.expended_mwh);
        ASSERT_NEAR(r.provider_expended_mwh, o.expended_mwh, 1e-9 * scale) << run;
        ASSERT_NEAR(r.consumer_gained_mwh, o.gained_mwh, 1e-9 * scale) << run;
        ASSERT_NEAR(r.loss_mwh, o.loss_mwh, 1e-9 * scale) << run;
        ASSERT_NEAR(r.duration_s, o.duration_s, 1e-9 * std::max(1.0, o.duration_s)) << run;

        double se = 0, sg = 0, sl = 0;
        for (const auto& b : r.buckets) {
            const double e = oracle::interpolate(o.times, o.provider_charge, b.start_s) -
                             oracle::interpolate(o.times, o.provider_charge, b.end_s);
            const double g = oracle::interpolate(o.times, o.consumer_charge, b.end_s) -
                             oracle::interpolate(o.times, o.consumer_charge, b.start_s);
            ASSERT_NEAR(b.expended_mwh, e, 1e-9 * scale);
            ASSERT_NEAR(b.gained_mwh, g, 1e-9 * scale);
            ASSERT_GE(b.loss_mwh, -1e-9 * scale);
            se += b.expended_mwh;
            sg += b.gained_mwh;
            sl += b.loss_mwh;
        }
        ASSERT_NEAR(se, r.provider_expended_mwh, 1e-9 * scale);
        ASSERT_NEAR(sg, r.consumer_gained_mwh, 1e-9 * scale);
        ASSERT_NEAR(sl, r.loss_mwh, 1e-9 * scale);
        ASSERT_NEAR(r.buckets.front().start_s, 0.0, 0.0);
        ASSERT_NEAR(r.buckets.back().end_s, o.duration_s, 1e-9 * std::max(1.0, o.duration_s));
    }
}

TEST(Reconcile, BucketWidthMustBePositive) {
    const auto p = report_from("p", 100.0, {0, 1}, {50, 49}, sim::EndReason::Aborted);
    const auto c = report_from("c", 100.0, {0, 1}, {10, 11}, sim::EndReason::Aborted);
    EXPECT_EQ(code_of([&] { reconcile(p, c, 0.0); }), ErrorCode::InvalidArgument);
}

TEST(Events, StreamCarriesLifecycleInOrder) {
    Fixture f;
    auto sub = f.coord->subscribe("m1");
    auto other = f.coord->subscribe("m2");
    f.device("p");
    f.device("c");
    const auto id = matched(f, "p", "c");
    const auto o = oracle::closed_form({});
    f.coord->submit_report(id, report_from("p", 10000.0, o.times, o.provider_charge, sim::EndReason::ConsumerTarget));
    f.coord->submit_report(id, report_from("c", 10000.0, o.times, o.consumer_charge, sim::EndReason::ConsumerTarget));
    auto l = f.coord->post_listing("p", Role::Provider, EnergyAmount(5));
    f.coord->withdraw_listing(l.listing_id);

    std::vector<std::string> types;
    std::int64_t last_seq = 0;
    while (auto e = sub->next(0.0)) {
        auto j = wire::parse(*e);
        EXPECT_EQ(j.at("microcell_id"), "m1");
        EXPECT_GT(j.at("seq").get<std::int64_t>(), last_seq);
        last_seq = j.at("seq").get<std::int64_t>();
        types.push_back(j.at("type").get<std::string>());
    }
    const std::vector<std::string> expected = {
        "device-registered",  "device-registered",     "listing-created",       "listing-created",
        "listing-matched",    "listing-matched",       "transaction-created",   "transaction-report",
        "transaction-reconciled", "listing-created",   "listing-withdrawn"};
    EXPECT_EQ(types, expected);
    EXPECT_FALSE(other->next(0.0));
}

TEST(Events, SlowSubscriberIsDisconnected) {
    CoordinatorOptions o;
    o.subscriber_buffer = 3;
    Coordinator c(o);
    auto sub = c.subscribe("m1");
    for (int i = 0; i < 5; ++i) c.register_device({"d" + std::to_string(i), "d", 1.0, "m1"});
    EXPECT_TRUE(sub->closed());
    EXPECT_FALSE(sub->next(0.0));
}

TEST(Recovery, RestartReproducesRecordsExactly) {
    TempDir dir;
    std::string done, open_tx;
    std::string done_bytes, open_bytes;
    {
        Fixture f(dir.path);
        f.device("p");
        f.device("c");
        f.device("p2");
        f.device("c2");
        done = matched(f, "p", "c", sim::GoalMode::DurationTarget, 1800.0);
        oracle::Setup s;
        s.duration_mode = true;
        const auto o = oracle::closed_form(s);
        f.coord->submit_report(done, report_from("p", 10000.0, o.times, o.provider_charge,
                                                  sim::EndReason::DurationElapsed));
        f.coord->submit_report(done, report_from("c", 10000.0, o.times, o.consumer_charge,
                                                  sim::EndReason::DurationElapsed));
        open_tx = matched(f, "p2", "c2");
        f.coord->submit_report(open_tx, report_from("p2", 10000.0, {0, 5}, {8000, 7990},
                                                     sim::EndReason::Aborted));
        f.coord->post_listing("p", Role::Provider, EnergyAmount(7));
        done_bytes = wire::encode(f.coord->get_transaction(done)).dump();
        open_bytes = wire::encode(f.coord->get_transaction(open_tx)).dump();
    }
    Fixture g(dir.path);
    EXPECT_EQ(wire::encode(g.coord->get_transaction(done)).dump(), done_bytes);
    EXPECT_EQ(wire::encode(g.coord->get_transaction(open_tx)).dump(), open_bytes);
    EXPECT_EQ(g.coord->transaction_count(), 2u);
    EXPECT_EQ(g.coord->list_open("m1", Role::Provider).size(), 1u);
    EXPECT_EQ(code_of([&] { g.coord->post_listing("p2", Role::Provider, EnergyAmount(1)); }), ErrorCode::Busy);
    EXPECT_EQ(g.coord->submit_report(open_tx, report_from("c2", 10000.0, {0, 5}, {3000, 3006},
                                                          sim::EndReason::Aborted)),
              TransactionState::ReconciledPartial);
    EXPECT_NEAR(g.coord->loss_report(done, 300.0).loss_mwh, 600.0, 1e-6);

    // A torn trailing append is ignored; the committed prefix survives.
    g.coord.reset();
    {
        std::ofstream out(dir.path / "ledger.jsonl", std::ios::app);
        out << R"({"kind":"transaction","data":{"transaction_id":"dead)";
    }
    Fixture h(dir.path);
    EXPECT_EQ(wire::encode(h.coord->get_transaction(done)).dump(), done_bytes);
    EXPECT_EQ(h.coord->get_transaction(open_tx).state, TransactionState::ReconciledPartial);
}

TEST(Recovery, CorruptMiddleLineIsAnError) {
    TempDir dir;
    std::filesystem::create_directories(dir.path);
    {
        std::ofstream out(dir.path / "ledger.jsonl");
        out << "{not json\n"
            << R"({"kind":"device","data":{"device_id":"a","display_name":"a","capacity_mwh":1.0,"microcell_id":"m"}})"
            << "\n";
    }
    EXPECT_EQ(code_of([&] { Fixture f(dir.path); }), ErrorCode::Io);
}
