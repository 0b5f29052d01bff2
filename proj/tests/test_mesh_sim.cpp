#include <cmath>
#include <random>
#include <string>

#include "doctest.h"
#include "meshrl/errors.hpp"
#include "meshrl/mesh_sim.hpp"

using namespace meshrl;
using sim::BackendConfig;
using sim::LoadAction;
using sim::SimStats;
using sim::TrafficRules;

TEST_CASE("error_probability: flat below capacity, linear above, clipped") {
    BackendConfig cfg;  // base 0.05, slope 0.8, capacity 8
    CHECK(sim::error_probability(0, cfg) == 0.05);
    CHECK(sim::error_probability(3, cfg) == 0.05);
    CHECK(sim::error_probability(8, cfg) == 0.05);  // overload term vanishes at capacity
    CHECK(sim::error_probability(16, cfg) == doctest::Approx(0.85).epsilon(1e-12));

    BackendConfig hot = cfg;
    hot.overload_slope = 10.0;
    CHECK(sim::error_probability(80, hot) == 1.0);  // clipped at 1

    BackendConfig clean = cfg;
    clean.base_fault_prob = 0.0;
    CHECK(sim::error_probability(2, clean) == 0.0);
}

TEST_CASE("simulate: every call fails when the base fault probability is 1") {
    TrafficRules rules{4, 4, 4, 180.0, 100.0, 1.0, 3};
    LoadAction load{3, 200};
    BackendConfig cfg;
    cfg.base_fault_prob = 1.0;
    const auto resp = sim::simulate(rules, load, cfg, 9);
    CHECK(resp.p503 == 1.0);
    CHECK(resp.p200 == 0.0);
}

TEST_CASE("simulate: no 503s without faults, congestion or admission pressure") {
    TrafficRules rules{8, 8, 4, 180.0, 100.0, 1.0, 3};
    LoadAction load{4, 200};
    BackendConfig cfg;
    cfg.base_fault_prob = 0.0;
    cfg.latency_congestion_coeff = 0.0;
    for (std::uint64_t seed : {1ull, 7ull, 42ull}) {
        const auto resp = sim::simulate(rules, load, cfg, seed);
        CHECK(resp.p503 == 0.0);
        CHECK(resp.p200 == 1.0);
        CHECK(resp.qps > 0.0);
    }
}

TEST_CASE("simulate: frozen regression point") {
    // Mid-range rules, defaults, seed 42; values frozen from a reference run.
    TrafficRules rules{4, 4, 4, 180.0, 100.0, 1.0, 1};
    LoadAction load{3, 435};
    BackendConfig cfg;
    const auto resp = sim::simulate(rules, load, cfg, 42);
    CHECK(resp.qps == 152.56639373612089);
    CHECK(resp.p503 == 0.032183908045977011);
    CHECK(resp.p200 == 1.0 - resp.p503);
}

TEST_CASE("simulate: outcome fractions always sum to exactly one") {
    std::mt19937_64 fuzz(2024);
    for (int i = 0; i < 1000; ++i) {
        TrafficRules rules;
        rules.max_pending_requests = static_cast<int>(fuzz() % 8);
        rules.max_connections = 1 + static_cast<int>(fuzz() % 8);
        rules.max_req_per_conn = 1 + static_cast<int>(fuzz() % 8);
        rules.ejection_time_s = 1.0 + static_cast<double>(fuzz() % 300);
        rules.max_ejection_pct = static_cast<double>(fuzz() % 101);
        rules.interval_s = 0.05 + 0.05 * static_cast<double>(fuzz() % 40);
        rules.consecutive_errors = 1 + static_cast<int>(fuzz() % 30);
        const int threads = 1 + static_cast<int>(fuzz() % 12);
        LoadAction load{threads, threads + static_cast<int>(fuzz() % 500)};
        BackendConfig cfg;
        cfg.replicas = 1 + static_cast<int>(fuzz() % 5);
        cfg.base_fault_prob = static_cast<double>(fuzz() % 1000) / 1000.0;
        cfg.overload_slope = 0.01 * static_cast<double>(fuzz() % 300);
        const auto resp = sim::simulate(rules, load, cfg, fuzz());
        CHECK(resp.p200 + resp.p503 == 1.0);
        CHECK(resp.p503 >= 0.0);
        CHECK(resp.p503 <= 1.0);
        CHECK(resp.qps > 0.0);
    }
}

TEST_CASE("simulate: pure function of (rules, load, cfg, seed)") {
    TrafficRules rules{2, 3, 5, 60.0, 66.0, 0.5, 2};
    LoadAction load{6, 321};
    BackendConfig cfg;
    const auto a = sim::simulate(rules, load, cfg, 1234567);
    const auto b = sim::simulate(rules, load, cfg, 1234567);
    CHECK(a.qps == b.qps);
    CHECK(a.p200 == b.p200);
    CHECK(a.p503 == b.p503);

    const auto c = sim::simulate(rules, load, cfg, 1234568);
    CHECK(a.qps != c.qps);
}

TEST_CASE("simulate: extra connections never add overflow rejects (fault-free)") {
    BackendConfig cfg;
    cfg.base_fault_prob = 0.0;
    cfg.latency_congestion_coeff = 0.0;
    for (int pending = 0; pending <= 2; ++pending) {
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            std::int64_t prev = -1;
            for (int conn = 1; conn <= 6; ++conn) {
                TrafficRules rules{pending, conn, 4, 180.0, 100.0, 1.0, 5};
                LoadAction load{8, 300};
                SimStats stats;
                sim::simulate(rules, load, cfg, seed, &stats);
                if (prev >= 0) CHECK(stats.overflow_503 <= prev);
                prev = stats.overflow_503;
            }
        }
    }
}

TEST_CASE("simulate: a single connection with no queue saturates under many workers") {
    TrafficRules rules{0, 1, 4, 180.0, 100.0, 1.0, 5};
    BackendConfig cfg;
    double mean_p503 = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto resp = sim::simulate(rules, LoadAction{10, 100}, cfg, seed);
        CHECK(resp.p503 > 0.0);
        mean_p503 += resp.p503 / 5.0;
    }
    CHECK(mean_p503 > 0.5);  // nine of ten workers are locked out at any instant
}

TEST_CASE("simulate and validate: out-of-range fields are rejected by name") {
    BackendConfig cfg;
    LoadAction load{2, 10};

    TrafficRules rules;
    rules.max_pending_requests = -1;
    CHECK_THROWS_WITH_AS(sim::simulate(rules, load, cfg, 1),
                         doctest::Contains("max_pending_requests"), ValidationError);

    rules = TrafficRules{};
    rules.max_connections = 0;
    CHECK_THROWS_WITH_AS(sim::validate(rules), doctest::Contains("max_connections"),
                         ValidationError);

    rules = TrafficRules{};
    rules.max_ejection_pct = 101.0;
    CHECK_THROWS_WITH_AS(sim::validate(rules), doctest::Contains("max_ejection_pct"),
                         ValidationError);

    CHECK_THROWS_WITH_AS(sim::validate(LoadAction{0, 5}), doctest::Contains("threads"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(sim::validate(LoadAction{5, 4}), doctest::Contains("calls"),
                         ValidationError);

    BackendConfig bad;
    bad.base_fault_prob = 1.5;
    CHECK_THROWS_WITH_AS(sim::validate(bad), doctest::Contains("base_fault_prob"),
                         ValidationError);
}
