#include "meshrl/mesh_sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <queue>
#include <string>
#include <vector>

#include "meshrl/errors.hpp"
#include "meshrl/rng.hpp"

namespace meshrl::sim {

namespace {

bool finite(double x) { return std::isfinite(x); }

// A connection slot. Slots are recycled after max_req_per_conn requests.
struct Conn {
    std::int64_t id;
    bool busy;
    int served;
};

struct Replica {
    int inflight = 0;
    int consec_503 = 0;
    bool ejected = false;
    double ejected_until = 0.0;
};

// In-flight request bookkeeping, one slot per worker (workers are
// closed-loop, so each has at most one outstanding request).
struct Outstanding {
    int replica = -1;
    std::int64_t conn_id = -1;
    bool fails = false;
};

enum class Ev { Sweep, Ready, Resolve };

// Simultaneous events resolve by (timestamp, class, worker index); the sweep
// class sorts first so outlier bookkeeping settles before traffic moves.
struct Event {
    double t;
    int cls;  // 0 sweep, 1 worker
    int worker;
    std::uint64_t seq;
    Ev kind;
};

struct EventAfter {
    bool operator()(const Event& a, const Event& b) const {
        if (a.t != b.t) return a.t > b.t;
        if (a.cls != b.cls) return a.cls > b.cls;
        if (a.worker != b.worker) return a.worker > b.worker;
        return a.seq > b.seq;
    }
};

double fault_prob(int inflight_others, double base_clamped, const BackendConfig& cfg) {
    const double over = std::max(0, inflight_others - cfg.per_replica_capacity);
    const double p = base_clamped + cfg.overload_slope * over / cfg.per_replica_capacity;
    return std::clamp(p, 0.0, 1.0);
}

}  // namespace

double error_probability(int inflight, const BackendConfig& cfg) {
    validate(cfg);
    if (inflight < 0)
        throw ValidationError("error_probability: inflight must be >= 0 (got " +
                              std::to_string(inflight) + ")");
    return fault_prob(inflight, std::clamp(cfg.base_fault_prob, 0.0, 1.0), cfg);
}

void validate(const TrafficRules& r) {
    if (r.max_pending_requests < 0)
        throw ValidationError("TrafficRules.max_pending_requests must be >= 0 (got " +
                              std::to_string(r.max_pending_requests) + ")");
    if (r.max_connections < 1)
        throw ValidationError("TrafficRules.max_connections must be >= 1 (got " +
                              std::to_string(r.max_connections) + ")");
    if (r.max_req_per_conn < 1)
        throw ValidationError("TrafficRules.max_req_per_conn must be >= 1 (got " +
                              std::to_string(r.max_req_per_conn) + ")");
    if (!finite(r.ejection_time_s) || r.ejection_time_s <= 0)
        throw ValidationError("TrafficRules.ejection_time_s must be finite and > 0");
    if (!finite(r.max_ejection_pct) || r.max_ejection_pct < 0 || r.max_ejection_pct > 100)
        throw ValidationError("TrafficRules.max_ejection_pct must lie in [0, 100]");
    if (!finite(r.interval_s) || r.interval_s <= 0)
        throw ValidationError("TrafficRules.interval_s must be finite and > 0");
    if (r.consecutive_errors < 1)
        throw ValidationError("TrafficRules.consecutive_errors must be >= 1 (got " +
                              std::to_string(r.consecutive_errors) + ")");
}

void validate(const LoadAction& l) {
    if (l.threads < 1)
        throw ValidationError("LoadAction.threads must be >= 1 (got " +
                              std::to_string(l.threads) + ")");
    if (l.calls < l.threads)
        throw ValidationError("LoadAction.calls must be >= threads (got calls=" +
                              std::to_string(l.calls) + ", threads=" +
                              std::to_string(l.threads) + ")");
}

void validate(const BackendConfig& c) {
    if (c.replicas < 1)
        throw ValidationError("BackendConfig.replicas must be >= 1 (got " +
                              std::to_string(c.replicas) + ")");
    if (!finite(c.base_latency_ms) || c.base_latency_ms <= 0)
        throw ValidationError("BackendConfig.base_latency_ms must be finite and > 0");
    if (!finite(c.latency_sigma) || c.latency_sigma < 0)
        throw ValidationError("BackendConfig.latency_sigma must be finite and >= 0");
    if (!finite(c.base_fault_prob) || c.base_fault_prob < 0 || c.base_fault_prob > 1)
        throw ValidationError("BackendConfig.base_fault_prob must lie in [0, 1]");
    if (!finite(c.overload_slope) || c.overload_slope < 0)
        throw ValidationError("BackendConfig.overload_slope must be finite and >= 0");
    if (c.per_replica_capacity < 1)
        throw ValidationError("BackendConfig.per_replica_capacity must be >= 1 (got " +
                              std::to_string(c.per_replica_capacity) + ")");
    if (!finite(c.latency_congestion_coeff) || c.latency_congestion_coeff < 0)
        throw ValidationError("BackendConfig.latency_congestion_coeff must be finite and >= 0");
}

ServiceResponse simulate(const TrafficRules& rules, const LoadAction& load,
                         const BackendConfig& cfg, std::uint64_t seed, SimStats* stats) {
    validate(rules);
    validate(load);
    validate(cfg);

    rng::Engine gen(seed);
    const double base_fault = std::clamp(cfg.base_fault_prob, 0.0, 1.0);
    const double mu_log =
        std::log(cfg.base_latency_ms) - 0.5 * cfg.latency_sigma * cfg.latency_sigma;

    std::priority_queue<Event, std::vector<Event>, EventAfter> events;
    std::uint64_t seq = 0;
    auto push = [&](double t, int cls, int worker, Ev kind) {
        events.push(Event{t, cls, worker, seq++, kind});
    };

    std::vector<Replica> replicas(static_cast<std::size_t>(cfg.replicas));
    int ejected_count = 0;
    const int eject_cap =
        static_cast<int>(std::floor(cfg.replicas * rules.max_ejection_pct / 100.0));

    std::vector<Conn> pool;           // open connections, oldest first
    std::int64_t next_conn_id = 0;
    int busy_conns = 0;
    std::deque<int> pending;          // workers queued for a connection

    std::vector<Outstanding> current(static_cast<std::size_t>(load.threads));
    int remaining = load.calls;       // issue budget
    int completed = 0;
    std::int64_t n503 = 0;
    double makespan = 0.0;
    SimStats local{};

    // Instant 503: the call resolves at once and the worker moves on.
    auto resolve_instant = [&](int w, double t, std::int64_t& counter) {
        ++completed;
        ++n503;
        ++counter;
        makespan = std::max(makespan, t);
        push(t, 1, w, Ev::Ready);
    };

    // Route an admitted request to a replica and schedule its resolution.
    auto dispatch = [&](int w, double t) {
        if (ejected_count == cfg.replicas) {
            resolve_instant(w, t, local.outage_503);
            return;
        }
        Conn* conn = nullptr;
        for (auto& c : pool)
            if (!c.busy) { conn = &c; break; }
        if (conn == nullptr) {
            pool.push_back(Conn{next_conn_id++, false, 0});
            conn = &pool.back();
        }
        conn->busy = true;
        ++busy_conns;

        int r = -1;
        for (int i = 0; i < cfg.replicas; ++i) {
            if (replicas[i].ejected) continue;
            if (r < 0 || replicas[i].inflight < replicas[r].inflight) r = i;
        }
        const int inflight_others = replicas[r].inflight;

        const double draw_ms = std::exp(mu_log + cfg.latency_sigma * rng::normal(gen));
        const double latency_s =
            draw_ms * (1.0 + cfg.latency_congestion_coeff * inflight_others) / 1000.0;
        const bool fails = rng::uniform(gen) < fault_prob(inflight_others, base_fault, cfg);

        ++replicas[r].inflight;
        current[w] = Outstanding{r, conn->id, fails};
        push(t + latency_s, 1, w, Ev::Resolve);
    };

    // A worker asking to issue its next call.
    auto ready = [&](int w, double t) {
        if (remaining == 0) return;
        --remaining;
        if (busy_conns < rules.max_connections) {
            dispatch(w, t);
        } else if (static_cast<int>(pending.size()) < rules.max_pending_requests) {
            pending.push_back(w);
        } else {
            resolve_instant(w, t, local.overflow_503);
        }
    };

    auto resolve = [&](int w, double t) {
        const Outstanding req = current[w];
        Replica& rep = replicas[static_cast<std::size_t>(req.replica)];
        --rep.inflight;
        if (req.fails) {
            ++n503;
            ++local.fault_503;
            ++rep.consec_503;
        } else {
            rep.consec_503 = 0;
        }
        ++completed;
        makespan = std::max(makespan, t);

        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (pool[i].id != req.conn_id) continue;
            --busy_conns;
            if (++pool[i].served >= rules.max_req_per_conn)
                pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
            else
                pool[i].busy = false;
            break;
        }

        while (!pending.empty() && busy_conns < rules.max_connections) {
            const int w2 = pending.front();
            pending.pop_front();
            dispatch(w2, t);
        }
        push(t, 1, w, Ev::Ready);
    };

    auto sweep = [&](double t) {
        // Expired ejections end first so a freed slot can be reassigned below.
        for (auto& rep : replicas) {
            if (rep.ejected && t >= rep.ejected_until) {
                rep.ejected = false;
                --ejected_count;
            }
        }
        for (auto& rep : replicas) {
            if (rep.ejected || rep.consec_503 < rules.consecutive_errors) continue;
            if (ejected_count + 1 > eject_cap) continue;
            rep.ejected = true;
            rep.ejected_until = t + rules.ejection_time_s;
            rep.consec_503 = 0;
            ++ejected_count;
            ++local.ejections;
            local.max_ejected = std::max(local.max_ejected, ejected_count);
        }
    };

    for (int w = 0; w < load.threads; ++w) push(0.0, 1, w, Ev::Ready);
    std::uint64_t sweep_no = 1;
    push(rules.interval_s, 0, -1, Ev::Sweep);

    while (completed < load.calls) {
        const Event ev = events.top();
        events.pop();
        switch (ev.kind) {
            case Ev::Sweep:
                sweep(ev.t);
                ++sweep_no;
                push(static_cast<double>(sweep_no) * rules.interval_s, 0, -1, Ev::Sweep);
                break;
            case Ev::Ready:
                ready(ev.worker, ev.t);
                break;
            case Ev::Resolve:
                resolve(ev.worker, ev.t);
                break;
        }
    }

    ServiceResponse out;
    out.p503 = static_cast<double>(n503) / load.calls;
    out.p200 = 1.0 - out.p503;
    out.qps = load.calls / makespan;
    if (stats != nullptr) {
        local.makespan_s = makespan;
        *stats = local;
    }
    return out;
}

}  // namespace meshrl::sim
