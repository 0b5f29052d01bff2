#pragma once

#include <cstdint>

// Closed-loop load simulator for a replicated backend behind circuit-breaker
// and outlier-detection policies. A fixed pool of worker threads pushes a
// fixed budget of calls through a connection-limited front end; replicas
// serve with log-normal latency, fail more often as they congest, and get
// ejected when they string errors together. The observable result is the
// achieved throughput and how the calls split between 200 and 503.

namespace meshrl::sim {

// Resiliency policy knobs applied to the service.
struct TrafficRules {
    int max_pending_requests = 1;   // queue slots in front of the connection pool
    int max_connections = 1;        // concurrent dispatched requests
    int max_req_per_conn = 1;       // requests served before a connection is recycled
    double ejection_time_s = 180.0; // how long an outlier replica stays out
    double max_ejection_pct = 100.0;// ceiling on the ejected fraction, percent
    double interval_s = 1.0;        // outlier sweep period
    int consecutive_errors = 1;     // 503 streak that marks a replica as outlier
};

// Load-generator settings.
struct LoadAction {
    int threads = 1;  // concurrent closed-loop workers
    int calls = 1;    // total request budget shared by the workers
};

// Aggregate outcome of one run.
struct ServiceResponse {
    double qps = 0.0;   // calls / makespan
    double p200 = 0.0;  // success fraction; always exactly 1 - p503
    double p503 = 0.0;  // rejection + failure fraction
};

// Synthetic backend behaviour.
struct BackendConfig {
    int replicas = 3;
    double base_latency_ms = 20.0;      // mean of the log-normal service time
    double latency_sigma = 0.5;         // log-normal spread
    double base_fault_prob = 0.05;      // failure probability of an idle replica
    double overload_slope = 0.8;        // extra failure per unit of relative overload
    int per_replica_capacity = 8;       // in-flight requests a replica absorbs cleanly
    double latency_congestion_coeff = 0.1;  // latency multiplier per in-flight request
};

// Which load-generator field a value refers to; shared vocabulary for the
// model input assembly and the action spaces.
enum class LoadField { Threads, Calls };

// Optional introspection counters, mainly for tests.
struct SimStats {
    std::int64_t overflow_503 = 0;   // rejected at admission
    std::int64_t fault_503 = 0;      // failed at a replica
    std::int64_t outage_503 = 0;     // dispatched while every replica was ejected
    std::int64_t ejections = 0;      // total ejection events
    int max_ejected = 0;             // peak simultaneously ejected replicas
    double makespan_s = 0.0;
};

// Failure probability of a replica carrying `inflight` other requests:
// base_fault_prob + overload_slope * max(0, inflight - capacity) / capacity,
// clipped to [0, 1].
double error_probability(int inflight, const BackendConfig& cfg);

// Run the discrete-event loop. Identical arguments yield a bit-identical
// response. Throws ValidationError on out-of-range fields.
ServiceResponse simulate(const TrafficRules& rules, const LoadAction& load,
                         const BackendConfig& cfg, std::uint64_t seed,
                         SimStats* stats = nullptr);

// Field-by-field range checks; simulate() applies them on entry.
void validate(const TrafficRules& rules);
void validate(const LoadAction& load);
void validate(const BackendConfig& cfg);

}  // namespace meshrl::sim
