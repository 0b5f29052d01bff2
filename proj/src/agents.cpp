#include "meshrl/agents.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "meshrl/errors.hpp"

namespace meshrl::agents {

namespace {

std::vector<int> grid(int lo, int hi, int step) {
    std::vector<int> v;
    for (int x = lo; x <= hi; x += step) v.push_back(x);
    return v;
}

void check_scalar(const char* where, double qps, double p503) {
    if (!std::isfinite(qps) || qps < 0.0)
        throw ValidationError(std::string(where) + ": qps must be finite and non-negative");
    if (!std::isfinite(p503) || p503 < 0.0 || p503 > 1.0)
        throw ValidationError(std::string(where) + ": p503 must lie in [0, 1]");
}

std::vector<double> rules_state(const sim::TrafficRules& r) {
    return {static_cast<double>(r.max_pending_requests),
            static_cast<double>(r.max_connections),
            static_cast<double>(r.max_req_per_conn),
            r.ejection_time_s,
            r.max_ejection_pct,
            r.interval_s,
            static_cast<double>(r.consecutive_errors)};
}

std::vector<double> softmax(const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (auto& v : p) v /= z;
    return p;
}

int pick_index(const std::vector<double>& q, UpdateRule rule, double eps, rng::Engine& gen) {
    return rule == UpdateRule::QRegression ? select_action(q, eps, gen)
                                           : sample_softmax(q, gen);
}

// Loss and output-gradient of one decision head for one transition.
std::pair<double, std::vector<double>> head_loss_grad(const std::vector<double>& q, int idx,
                                                      double reward, UpdateRule rule) {
    if (!std::isfinite(reward)) throw NumericError("agent update: non-finite reward");
    std::vector<double> d(q.size(), 0.0);
    if (rule == UpdateRule::QRegression) {
        const double diff = q[idx] - reward;
        d[idx] = 2.0 * diff;
        return {diff * diff, std::move(d)};
    }
    const auto pi = softmax(q);
    for (std::size_t i = 0; i < q.size(); ++i)
        d[i] = (pi[i] - (static_cast<int>(i) == idx ? 1.0 : 0.0)) * reward;
    const double loss = -std::log(std::max(pi[static_cast<std::size_t>(idx)], 1e-300)) * reward;
    return {loss, std::move(d)};
}

void check_space(const char* where, const ActionSpace& space) {
    if (space.values.empty())
        throw ValidationError(std::string(where) + ": action grid is empty");
    for (std::size_t i = 0; i < space.values.size(); ++i) {
        if (space.values[i] < 1)
            throw ValidationError(std::string(where) + ": action values must be >= 1");
        if (i > 0 && space.values[i] <= space.values[i - 1])
            throw ValidationError(std::string(where) +
                                  ": action values must be strictly increasing");
    }
}

double update_agent(AgentNet& agent, const std::vector<double>& state, int idx, double reward,
                    UpdateRule rule, double alpha) {
    if (rule == UpdateRule::QRegression) return update_q_regression(agent, state, idx, reward);
    const TrajectoryStep step{state, idx, reward};
    return update_reinforce(agent, std::span<const TrajectoryStep>(&step, 1), alpha);
}

// Forward pass of service k through the shared front block and its head.
struct CollabForward {
    nn::Cache scache, pcache;
    std::vector<double> affine;  // front block pre-rectifier
    std::vector<double> ms;      // rectified shared representation
    std::vector<double> q;
};

CollabForward collab_forward_cached(const CollabNets& nets, int service,
                                    const std::vector<double>& state) {
    if (service < 0 || service >= static_cast<int>(nets.pnets.size()))
        throw ValidationError("collab forward: service index out of range");
    if (static_cast<int>(state.size()) != nets.state_dim)
        throw ValidationError("collab forward: state width mismatch");
    CollabForward f;
    f.affine = nn::forward(nets.snet, state, &f.scache);
    f.ms = f.affine;
    for (auto& v : f.ms) v = v > 0.0 ? v : 0.0;
    f.q = nn::forward(nets.pnets[static_cast<std::size_t>(service)], f.ms, &f.pcache);
    return f;
}

// Backward through every head, accumulate the front-block gradient across
// services, and take per-head steps plus exactly one front-block step.
double update_collab_group(CollabNets& nets, std::vector<CollabForward>& fwd,
                           const std::vector<int>& idx, const std::vector<double>& rewards,
                           UpdateRule rule) {
    nn::Grads snet_acc;
    bool first = true;
    double loss = 0.0;
    for (std::size_t k = 0; k < fwd.size(); ++k) {
        auto [lk, d_out] = head_loss_grad(fwd[k].q, idx[k], rewards[k], rule);
        loss += lk;
        auto pg = nn::backward(nets.pnets[k], fwd[k].pcache, d_out);
        std::vector<double> dms = pg.d_input;
        for (std::size_t i = 0; i < dms.size(); ++i)
            if (fwd[k].affine[i] <= 0.0) dms[i] = 0.0;
        auto sg = nn::backward(nets.snet, fwd[k].scache, dms);
        nn::adam_step(nets.pnets[k], pg, nets.pnet_opts[k]);
        if (first) {
            snet_acc = std::move(sg);
            first = false;
        } else {
            snet_acc.add(sg);
        }
    }
    nn::adam_step(nets.snet, snet_acc, nets.snet_opt);
    return loss;
}

void scale_grads(nn::Grads& g, double c) {
    for (auto& m : g.d_weights)
        for (auto& v : m.data) v *= c;
    for (auto& b : g.d_biases)
        for (auto& v : b) v *= c;
}

}  // namespace

ActionSpace action_space(const std::string& profile_name, sim::LoadField kind) {
    ActionSpace s;
    s.kind = kind;
    const bool threads = kind == sim::LoadField::Threads;
    if (profile_name == "s1")
        s.values = threads ? grid(1, 5, 1) : grid(435, 450, 1);
    else if (profile_name == "s2")
        s.values = threads ? grid(3, 7, 1) : grid(100, 400, 100);
    else if (profile_name == "s3")
        s.values = threads ? grid(10, 16, 1) : grid(50, 500, 50);
    else if (profile_name == "s4")
        s.values = threads ? grid(12, 18, 1) : grid(250, 600, 50);
    else if (profile_name == "s5")
        s.values = threads ? grid(16, 20, 1) : grid(1000, 2000, 100);
    else
        throw ValidationError("action_space: unknown profile '" + profile_name + "'");
    return s;
}

double reward_503(double qps, double p503) {
    check_scalar("reward_503", qps, p503);
    return qps * p503;
}

double reward_multi(int service, std::span<const double> qps, std::span<const double> p503,
                    double beta) {
    if (qps.empty() || qps.size() != p503.size())
        throw ValidationError("reward_multi: qps and p503 must be equal-length and non-empty");
    const int n = static_cast<int>(qps.size());
    if (service < 1 || service > n)
        throw ValidationError("reward_multi: service index out of range");
    if (!std::isfinite(beta)) throw ValidationError("reward_multi: beta must be finite");
    double fleet = 0.0;
    for (int i = 0; i < n; ++i) {
        check_scalar("reward_multi", qps[static_cast<std::size_t>(i)],
                     p503[static_cast<std::size_t>(i)]);
        fleet += qps[static_cast<std::size_t>(i)] * p503[static_cast<std::size_t>(i)];
    }
    const auto k = static_cast<std::size_t>(service - 1);
    return qps[k] * p503[k] + beta * fleet / static_cast<double>(n);
}

std::pair<double, double> SurrogateEnv::respond(const sim::TrafficRules& rules,
                                                const sim::LoadAction& load,
                                                std::uint64_t /*seed*/) const {
    return surrogate::predict(*model, surrogate::model_input(rules, load));
}

std::pair<double, double> OracleEnv::respond(const sim::TrafficRules& rules,
                                             const sim::LoadAction& load,
                                             std::uint64_t seed) const {
    const auto r = sim::simulate(rules, load, cfg, seed);
    return {r.qps, r.p503};
}

AgentNet make_agent(const ActionSpace& space, int state_dim, double learning_rate,
                    std::uint64_t seed) {
    check_space("make_agent", space);
    if (state_dim < 1) throw ValidationError("make_agent: state_dim must be >= 1");
    AgentNet a;
    a.space = space;
    a.state_dim = state_dim;
    a.net = nn::net_init({state_dim, 512, 512, static_cast<int>(space.values.size())},
                         rng::derive_seed(seed, 1));
    a.opt = nn::adam_init(a.net, learning_rate);
    a.gen.seed(rng::derive_seed(seed, 2));
    return a;
}

std::vector<double> q_values(const AgentNet& agent, const std::vector<double>& state) {
    if (static_cast<int>(state.size()) != agent.state_dim)
        throw ValidationError("q_values: state width mismatch");
    return nn::forward(agent.net, state, nullptr);
}

int select_action(const std::vector<double>& q, double eps, rng::Engine& gen) {
    if (q.empty()) throw ValidationError("select_action: empty value vector");
    if (!(eps >= 0.0 && eps <= 1.0))
        throw ValidationError("select_action: eps must lie in [0, 1]");
    const double u = rng::uniform(gen);
    if (u < eps)
        return static_cast<int>(rng::uniform_int(gen, 0, static_cast<long>(q.size()) - 1));
    int best = 0;
    for (int i = 1; i < static_cast<int>(q.size()); ++i)
        if (q[static_cast<std::size_t>(i)] > q[static_cast<std::size_t>(best)]) best = i;
    return best;
}

int sample_softmax(const std::vector<double>& logits, rng::Engine& gen) {
    if (logits.empty()) throw ValidationError("sample_softmax: empty logit vector");
    const auto p = softmax(logits);
    const double u = rng::uniform(gen);
    double c = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        c += p[i];
        if (u < c) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
}

double update_q_regression(AgentNet& agent, const std::vector<double>& state, int action_index,
                           double reward) {
    if (static_cast<int>(state.size()) != agent.state_dim)
        throw ValidationError("update_q_regression: state width mismatch");
    if (action_index < 0 || action_index >= static_cast<int>(agent.space.values.size()))
        throw ValidationError("update_q_regression: action index out of range");
    if (!std::isfinite(reward)) throw NumericError("update_q_regression: non-finite reward");
    nn::Cache cache;
    const auto q = nn::forward(agent.net, state, &cache);
    const double diff = q[static_cast<std::size_t>(action_index)] - reward;
    std::vector<double> d(q.size(), 0.0);
    d[static_cast<std::size_t>(action_index)] = 2.0 * diff;
    const auto g = nn::backward(agent.net, cache, d);
    nn::adam_step(agent.net, g, agent.opt);
    return diff * diff;
}

double update_reinforce(AgentNet& agent, std::span<const TrajectoryStep> trajectory,
                        double alpha) {
    if (trajectory.empty()) throw ValidationError("update_reinforce: empty trajectory");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ValidationError("update_reinforce: alpha must lie in [0, 1]");
    double ret = 0.0, w = 1.0;
    for (const auto& step : trajectory) {
        if (!std::isfinite(step.reward)) throw NumericError("update_reinforce: non-finite reward");
        ret += w * step.reward;
        w *= alpha;
    }
    nn::Grads total;
    bool first = true;
    double loss = 0.0;
    for (const auto& step : trajectory) {
        if (static_cast<int>(step.state.size()) != agent.state_dim)
            throw ValidationError("update_reinforce: state width mismatch");
        if (step.action_index < 0 ||
            step.action_index >= static_cast<int>(agent.space.values.size()))
            throw ValidationError("update_reinforce: action index out of range");
        nn::Cache cache;
        const auto logits = nn::forward(agent.net, step.state, &cache);
        const auto pi = softmax(logits);
        loss += -std::log(std::max(pi[static_cast<std::size_t>(step.action_index)], 1e-300)) * ret;
        std::vector<double> d(logits.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] = (pi[i] -
                    (static_cast<int>(i) == step.action_index ? 1.0 : 0.0)) *
                   ret;
        auto g = nn::backward(agent.net, cache, d);
        if (first) {
            total = std::move(g);
            first = false;
        } else {
            total.add(g);
        }
    }
    nn::adam_step(agent.net, total, agent.opt);
    return loss;
}

CollabNets make_collab(int services, const ActionSpace& space, int state_dim,
                       double learning_rate, std::uint64_t seed, bool with_aux_head) {
    check_space("make_collab", space);
    if (services < 1) throw ValidationError("make_collab: need at least one service");
    if (state_dim < 1) throw ValidationError("make_collab: state_dim must be >= 1");
    CollabNets c;
    c.space = space;
    c.state_dim = state_dim;
    c.snet = nn::net_init({state_dim, 512}, rng::derive_seed(seed, 1));
    c.snet_opt = nn::adam_init(c.snet, learning_rate);
    c.pnets.reserve(static_cast<std::size_t>(services));
    for (int k = 0; k < services; ++k) {
        c.pnets.push_back(nn::net_init({512, 512, static_cast<int>(space.values.size())},
                                       rng::derive_seed(seed, 100 + static_cast<std::uint64_t>(k))));
        c.pnet_opts.push_back(nn::adam_init(c.pnets.back(), learning_rate));
    }
    c.gen.seed(rng::derive_seed(seed, 2));
    if (with_aux_head) {
        c.aux_head = nn::net_init({state_dim + 512, state_dim}, rng::derive_seed(seed, 3));
        c.aux_opt = nn::adam_init(*c.aux_head, learning_rate);
    }
    return c;
}

std::vector<double> collab_q_values(const CollabNets& nets, int service,
                                    const std::vector<double>& state) {
    return collab_forward_cached(nets, service, state).q;
}

double snet_aux_update(CollabNets& nets, std::span<const AuxTriple> buffer) {
    if (!nets.aux_head) throw ValidationError("snet_aux_update: auxiliary head not enabled");
    if (buffer.empty()) throw ValidationError("snet_aux_update: empty buffer");
    const auto sd = static_cast<std::size_t>(nets.state_dim);
    nn::Grads snet_acc, aux_acc;
    bool first = true;
    double loss = 0.0;
    for (const auto& t : buffer) {
        if (t.state.size() != sd || t.next_state.size() != sd)
            throw ValidationError("snet_aux_update: state width mismatch in buffer");
        // The shared representation is recomputed under the current front
        // block so the gradient stays exact; the stored ms documents what
        // the policy saw at collection time.
        nn::Cache scache;
        const auto affine = nn::forward(nets.snet, t.state, &scache);
        std::vector<double> cat;
        cat.reserve(sd + affine.size());
        cat.insert(cat.end(), t.state.begin(), t.state.end());
        for (const double v : affine) cat.push_back(v > 0.0 ? v : 0.0);
        nn::Cache acache;
        const auto pred = nn::forward(*nets.aux_head, cat, &acache);
        const auto [l, d] = nn::mse(pred, t.next_state);
        loss += l;
        auto ag = nn::backward(*nets.aux_head, acache, d);
        std::vector<double> dms(ag.d_input.begin() + static_cast<std::ptrdiff_t>(sd),
                                ag.d_input.end());
        for (std::size_t i = 0; i < dms.size(); ++i)
            if (affine[i] <= 0.0) dms[i] = 0.0;
        auto sg = nn::backward(nets.snet, scache, dms);
        if (first) {
            aux_acc = std::move(ag);
            snet_acc = std::move(sg);
            first = false;
        } else {
            aux_acc.add(ag);
            snet_acc.add(sg);
        }
    }
    const double inv = 1.0 / static_cast<double>(buffer.size());
    scale_grads(aux_acc, inv);
    scale_grads(snet_acc, inv);
    nn::adam_step(*nets.aux_head, aux_acc, *nets.aux_opt);
    nn::adam_step(nets.snet, snet_acc, nets.snet_opt);
    return loss * inv;
}

sim::LoadAction apply_actions(const sim::LoadAction& sampled, std::optional<int> threads,
                              std::optional<int> calls) {
    sim::LoadAction out = sampled;
    if (threads) out.threads = *threads;
    if (calls) out.calls = *calls;
    return out;
}

RoundResult run_round_single(AgentNet& agent, const Env& env, const data::Profile& profile,
                             rng::Engine& state_gen, std::uint64_t env_seed, UpdateRule rule,
                             double alpha) {
    auto [rules, load] = data::sample_config(profile, state_gen);
    auto state = rules_state(rules);
    state.push_back(agent.space.kind == sim::LoadField::Threads
                        ? static_cast<double>(load.calls)
                        : static_cast<double>(load.threads));
    if (static_cast<int>(state.size()) != agent.state_dim)
        throw ValidationError("run_round_single: agent state width mismatch");
    const auto q = q_values(agent, state);
    const int idx = pick_index(q, rule, agent.eps, agent.gen);
    const int value = agent.space.values[static_cast<std::size_t>(idx)];
    std::optional<int> tv, cv;
    if (agent.space.kind == sim::LoadField::Threads)
        tv = value;
    else
        cv = value;
    const auto applied = apply_actions(load, tv, cv);
    const auto [qps, p503] = env.respond(rules, applied, env_seed);
    const double r = reward_503(qps, p503);
    const double loss = update_agent(agent, state, idx, r, rule, alpha);

    RoundResult out;
    ServiceRound sr;
    sr.rules = rules;
    sr.sampled = load;
    sr.thread_action = tv;
    sr.call_action = cv;
    sr.qps = qps;
    sr.p503 = p503;
    sr.reward = r;
    sr.state = std::move(state);
    out.services.push_back(std::move(sr));
    out.reward_total = r;
    out.loss = loss;
    return out;
}

RoundResult run_round_multi(AgentNet& thread_agent, AgentNet& call_agent, MultiMode mode,
                            const Env& env, const data::Profile& profile,
                            rng::Engine& state_gen, std::uint64_t env_seed, UpdateRule rule,
                            double alpha) {
    if (thread_agent.space.kind != sim::LoadField::Threads ||
        call_agent.space.kind != sim::LoadField::Calls)
        throw ValidationError("run_round_multi: agents must control threads and calls");
    auto [rules, load] = data::sample_config(profile, state_gen);
    const auto base = rules_state(rules);

    std::vector<double> s_t, s_c;
    int ti = 0, ci = 0;
    switch (mode) {
        case MultiMode::Independent: {
            s_t = base;
            s_c = base;
            ti = pick_index(q_values(thread_agent, s_t), rule, thread_agent.eps,
                            thread_agent.gen);
            ci = pick_index(q_values(call_agent, s_c), rule, call_agent.eps, call_agent.gen);
            break;
        }
        case MultiMode::ThreadThenCall: {
            s_t = base;
            ti = pick_index(q_values(thread_agent, s_t), rule, thread_agent.eps,
                            thread_agent.gen);
            s_c = base;
            s_c.push_back(
                static_cast<double>(thread_agent.space.values[static_cast<std::size_t>(ti)]));
            ci = pick_index(q_values(call_agent, s_c), rule, call_agent.eps, call_agent.gen);
            break;
        }
        case MultiMode::CallThenThread: {
            s_c = base;
            ci = pick_index(q_values(call_agent, s_c), rule, call_agent.eps, call_agent.gen);
            s_t = base;
            s_t.push_back(
                static_cast<double>(call_agent.space.values[static_cast<std::size_t>(ci)]));
            ti = pick_index(q_values(thread_agent, s_t), rule, thread_agent.eps,
                            thread_agent.gen);
            break;
        }
    }
    const int tv = thread_agent.space.values[static_cast<std::size_t>(ti)];
    const int cv = call_agent.space.values[static_cast<std::size_t>(ci)];
    const auto applied = apply_actions(load, tv, cv);
    const auto [qps, p503] = env.respond(rules, applied, env_seed);
    const double r = reward_503(qps, p503);
    double loss = update_agent(thread_agent, s_t, ti, r, rule, alpha);
    loss += update_agent(call_agent, s_c, ci, r, rule, alpha);

    RoundResult out;
    ServiceRound sr;
    sr.rules = rules;
    sr.sampled = load;
    sr.thread_action = tv;
    sr.call_action = cv;
    sr.qps = qps;
    sr.p503 = p503;
    sr.reward = r;
    sr.state = std::move(s_t);
    out.services.push_back(std::move(sr));
    out.reward_total = r;
    out.loss = loss;
    return out;
}

RoundResult run_round_collab(CollabNets& nets, std::span<const Env* const> envs,
                             std::span<const data::Profile* const> profiles,
                             rng::Engine& state_gen, std::span<const std::uint64_t> env_seeds,
                             double beta, UpdateRule rule, double /*alpha*/) {
    const auto n = nets.pnets.size();
    if (n == 0) throw ValidationError("run_round_collab: no services");
    if (envs.size() != n || profiles.size() != n || env_seeds.size() != n)
        throw ValidationError("run_round_collab: envs, profiles and seeds must match services");

    RoundResult out;
    out.services.resize(n);
    std::vector<CollabForward> fwd(n);
    std::vector<int> idx(n, 0);
    std::vector<double> qps(n, 0.0), p503(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        if (envs[k] == nullptr || profiles[k] == nullptr)
            throw ValidationError("run_round_collab: null env or profile");
        auto [rules, load] = data::sample_config(*profiles[k], state_gen);
        auto state = rules_state(rules);
        state.push_back(nets.space.kind == sim::LoadField::Threads
                            ? static_cast<double>(load.calls)
                            : static_cast<double>(load.threads));
        fwd[k] = collab_forward_cached(nets, static_cast<int>(k), state);
        idx[k] = pick_index(fwd[k].q, rule, nets.eps, nets.gen);
        const int value = nets.space.values[static_cast<std::size_t>(idx[k])];
        auto& sr = out.services[k];
        sr.rules = rules;
        sr.sampled = load;
        if (nets.space.kind == sim::LoadField::Threads)
            sr.thread_action = value;
        else
            sr.call_action = value;
        const auto applied = apply_actions(load, sr.thread_action, sr.call_action);
        const auto [q_, p_] = envs[k]->respond(rules, applied, env_seeds[k]);
        qps[k] = q_;
        p503[k] = p_;
        sr.qps = q_;
        sr.p503 = p_;
        sr.state = std::move(state);
        sr.ms = fwd[k].ms;
    }
    std::vector<double> rewards(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        rewards[k] = reward_multi(static_cast<int>(k) + 1, qps, p503, beta);
        out.services[k].reward = rewards[k];
        out.reward_total += rewards[k];
    }
    out.loss = update_collab_group(nets, fwd, idx, rewards, rule);
    return out;
}

RoundResult run_round_collab_both(CollabNets& thread_nets, CollabNets& call_nets,
                                  std::span<const Env* const> envs,
                                  std::span<const data::Profile* const> profiles,
                                  rng::Engine& state_gen,
                                  std::span<const std::uint64_t> env_seeds, double beta,
                                  UpdateRule rule, double /*alpha*/) {
    const auto n = thread_nets.pnets.size();
    if (n == 0) throw ValidationError("run_round_collab_both: no services");
    if (call_nets.pnets.size() != n)
        throw ValidationError("run_round_collab_both: group sizes differ");
    if (thread_nets.space.kind != sim::LoadField::Threads ||
        call_nets.space.kind != sim::LoadField::Calls)
        throw ValidationError("run_round_collab_both: groups must control threads and calls");
    if (envs.size() != n || profiles.size() != n || env_seeds.size() != n)
        throw ValidationError(
            "run_round_collab_both: envs, profiles and seeds must match services");

    RoundResult out;
    out.services.resize(n);
    std::vector<CollabForward> tf(n), cf(n);
    std::vector<int> ti(n, 0), ci(n, 0);
    std::vector<double> qps(n, 0.0), p503(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        if (envs[k] == nullptr || profiles[k] == nullptr)
            throw ValidationError("run_round_collab_both: null env or profile");
        auto [rules, load] = data::sample_config(*profiles[k], state_gen);
        const auto state = rules_state(rules);
        tf[k] = collab_forward_cached(thread_nets, static_cast<int>(k), state);
        ti[k] = pick_index(tf[k].q, rule, thread_nets.eps, thread_nets.gen);
        cf[k] = collab_forward_cached(call_nets, static_cast<int>(k), state);
        ci[k] = pick_index(cf[k].q, rule, call_nets.eps, call_nets.gen);
        auto& sr = out.services[k];
        sr.rules = rules;
        sr.sampled = load;
        sr.thread_action = thread_nets.space.values[static_cast<std::size_t>(ti[k])];
        sr.call_action = call_nets.space.values[static_cast<std::size_t>(ci[k])];
        const auto applied = apply_actions(load, sr.thread_action, sr.call_action);
        const auto [q_, p_] = envs[k]->respond(rules, applied, env_seeds[k]);
        qps[k] = q_;
        p503[k] = p_;
        sr.qps = q_;
        sr.p503 = p_;
        sr.state = state;
        sr.ms = tf[k].ms;
    }
    std::vector<double> rewards(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        rewards[k] = reward_multi(static_cast<int>(k) + 1, qps, p503, beta);
        out.services[k].reward = rewards[k];
        out.reward_total += rewards[k];
    }
    out.loss = update_collab_group(thread_nets, tf, ti, rewards, rule);
    out.loss += update_collab_group(call_nets, cf, ci, rewards, rule);
    return out;
}

}  // namespace meshrl::agents
