#include "meshrl/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "meshrl/errors.hpp"

namespace meshrl::harness {

using json = nlohmann::json;

namespace {

void append_number(std::string& out, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

void append_number(std::string& out, int v) {
    char buf[16];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, res.ptr);
}

struct ParadigmName {
    Paradigm p;
    const char* name;
};
constexpr ParadigmName kParadigms[] = {
    {Paradigm::SingleThread, "single-thread"}, {Paradigm::SingleCall, "single-call"},
    {Paradigm::Independent, "independent"},    {Paradigm::ThreadCall, "thread-call"},
    {Paradigm::CallThread, "call-thread"},     {Paradigm::CollabCall, "collab-call"},
    {Paradigm::CollabThread, "collab-thread"}, {Paradigm::CollabBoth, "collab-both"},
};

json rules_to_json(const sim::TrafficRules& r) {
    return json::array({r.max_pending_requests, r.max_connections, r.max_req_per_conn,
                        r.ejection_time_s, r.max_ejection_pct, r.interval_s,
                        r.consecutive_errors});
}

sim::TrafficRules rules_from_json(const json& a) {
    if (!a.is_array() || a.size() != 7)
        throw FormatError("run file: rules must be a 7-element array");
    sim::TrafficRules r;
    r.max_pending_requests = a[0].get<int>();
    r.max_connections = a[1].get<int>();
    r.max_req_per_conn = a[2].get<int>();
    r.ejection_time_s = a[3].get<double>();
    r.max_ejection_pct = a[4].get<double>();
    r.interval_s = a[5].get<double>();
    r.consecutive_errors = a[6].get<int>();
    return r;
}

json opt_pair_to_json(std::optional<int> t, std::optional<int> c) {
    json a = json::array();
    a.push_back(t ? json(*t) : json(nullptr));
    a.push_back(c ? json(*c) : json(nullptr));
    return a;
}

std::pair<std::optional<int>, std::optional<int>> opt_pair_from_json(const json& a) {
    if (!a.is_array() || a.size() != 2)
        throw FormatError("run file: action pair must be a 2-element array");
    std::pair<std::optional<int>, std::optional<int>> out;
    if (!a[0].is_null()) out.first = a[0].get<int>();
    if (!a[1].is_null()) out.second = a[1].get<int>();
    return out;
}

json config_to_json_obj(const ExperimentConfig& cfg) {
    json b;
    b["replicas"] = cfg.backend.replicas;
    b["base_latency_ms"] = cfg.backend.base_latency_ms;
    b["latency_sigma"] = cfg.backend.latency_sigma;
    b["base_fault_prob"] = cfg.backend.base_fault_prob;
    b["overload_slope"] = cfg.backend.overload_slope;
    b["per_replica_capacity"] = cfg.backend.per_replica_capacity;
    b["latency_congestion_coeff"] = cfg.backend.latency_congestion_coeff;
    json doc;
    doc["paradigm"] = to_string(cfg.paradigm);
    doc["profiles"] = cfg.profiles;
    doc["services"] = cfg.services;
    doc["epochs"] = cfg.epochs;
    doc["interactions"] = cfg.interactions;
    doc["desk_scale"] = cfg.desk_scale;
    doc["repeats"] = cfg.repeats;
    doc["seed"] = cfg.seed;
    doc["beta"] = cfg.reward.beta;
    doc["update_rule"] = to_string(cfg.update_rule);
    doc["snet_aux"] = cfg.snet_aux;
    doc["alpha"] = cfg.alpha;
    doc["eps_start"] = cfg.eps_start;
    doc["eps_end"] = cfg.eps_end;
    doc["rolling_window"] = cfg.rolling_window;
    doc["learning_rate"] = cfg.learning_rate;
    doc["collab_learning_rate"] = cfg.collab_learning_rate;
    doc["oracle"] = cfg.oracle;
    doc["backend"] = b;
    return doc;
}

ExperimentConfig config_from_json_obj(const json& doc) {
    if (!doc.is_object()) throw FormatError("config: expected a JSON object");
    ExperimentConfig cfg;
    try {
        for (const auto& [key, value] : doc.items()) {
            if (key == "paradigm")
                cfg.paradigm = paradigm_from_string(value.get<std::string>());
            else if (key == "profiles")
                cfg.profiles = value.get<std::vector<std::string>>();
            else if (key == "services")
                cfg.services = value.get<int>();
            else if (key == "epochs")
                cfg.epochs = value.get<int>();
            else if (key == "interactions")
                cfg.interactions = value.get<int>();
            else if (key == "desk_scale")
                cfg.desk_scale = value.get<bool>();
            else if (key == "repeats")
                cfg.repeats = value.get<int>();
            else if (key == "seed")
                cfg.seed = value.get<std::uint64_t>();
            else if (key == "beta")
                cfg.reward.beta = value.get<double>();
            else if (key == "update_rule")
                cfg.update_rule = update_rule_from_string(value.get<std::string>());
            else if (key == "snet_aux")
                cfg.snet_aux = value.get<bool>();
            else if (key == "alpha")
                cfg.alpha = value.get<double>();
            else if (key == "eps_start")
                cfg.eps_start = value.get<double>();
            else if (key == "eps_end")
                cfg.eps_end = value.get<double>();
            else if (key == "rolling_window")
                cfg.rolling_window = value.get<int>();
            else if (key == "learning_rate")
                cfg.learning_rate = value.get<double>();
            else if (key == "collab_learning_rate")
                cfg.collab_learning_rate = value.get<double>();
            else if (key == "oracle")
                cfg.oracle = value.get<bool>();
            else if (key == "backend") {
                for (const auto& [bk, bv] : value.items()) {
                    if (bk == "replicas")
                        cfg.backend.replicas = bv.get<int>();
                    else if (bk == "base_latency_ms")
                        cfg.backend.base_latency_ms = bv.get<double>();
                    else if (bk == "latency_sigma")
                        cfg.backend.latency_sigma = bv.get<double>();
                    else if (bk == "base_fault_prob")
                        cfg.backend.base_fault_prob = bv.get<double>();
                    else if (bk == "overload_slope")
                        cfg.backend.overload_slope = bv.get<double>();
                    else if (bk == "per_replica_capacity")
                        cfg.backend.per_replica_capacity = bv.get<int>();
                    else if (bk == "latency_congestion_coeff")
                        cfg.backend.latency_congestion_coeff = bv.get<double>();
                    else
                        throw FormatError("config: unknown backend key '" + bk + "'");
                }
            } else {
                throw FormatError("config: unknown key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    return cfg;
}

json report_to_json(const RunReport& rep, bool with_log) {
    json doc;
    doc["rl_cum"] = rep.rl_cum;
    doc["base_cum"] = rep.base_cum;
    doc["ratio"] = rep.ratio;
    doc["best_epoch"] = rep.best_epoch;
    doc["sim_ratio"] = rep.sim_ratio;
    doc["best_epoch_ratio"] = rep.best_epoch_ratio;
    doc["val_ratio"] = rep.val_ratio ? json(*rep.val_ratio) : json(nullptr);
    if (with_log) {
        doc["env_seed_base"] = rep.env_seed_base;
        doc["oracle"] = rep.oracle;
        json log = json::array();
        for (const auto& round : rep.best_log) {
            json jr = json::array();
            for (const auto& a : round) {
                json ja;
                ja["rules"] = rules_to_json(a.rules);
                ja["sampled"] = json::array({a.sampled.threads, a.sampled.calls});
                ja["rl"] = opt_pair_to_json(a.rl_threads, a.rl_calls);
                ja["base"] = opt_pair_to_json(a.base_threads, a.base_calls);
                jr.push_back(std::move(ja));
            }
            log.push_back(std::move(jr));
        }
        doc["best_log"] = std::move(log);
    }
    return doc;
}

RunReport report_from_json(const json& doc, bool with_log) {
    RunReport rep;
    try {
        rep.rl_cum = doc.at("rl_cum").get<std::vector<double>>();
        rep.base_cum = doc.at("base_cum").get<std::vector<double>>();
        rep.ratio = doc.at("ratio").get<std::vector<double>>();
        rep.best_epoch = doc.at("best_epoch").get<int>();
        rep.sim_ratio = doc.at("sim_ratio").get<double>();
        rep.best_epoch_ratio = doc.at("best_epoch_ratio").get<double>();
        if (!doc.at("val_ratio").is_null()) rep.val_ratio = doc.at("val_ratio").get<double>();
        if (with_log) {
            rep.env_seed_base = doc.at("env_seed_base").get<std::uint64_t>();
            rep.oracle = doc.at("oracle").get<bool>();
            for (const auto& jr : doc.at("best_log")) {
                RoundLog round;
                for (const auto& ja : jr) {
                    LoggedAction a;
                    a.rules = rules_from_json(ja.at("rules"));
                    const auto& s = ja.at("sampled");
                    if (!s.is_array() || s.size() != 2)
                        throw FormatError("run file: sampled load must be a 2-element array");
                    a.sampled.threads = s[0].get<int>();
                    a.sampled.calls = s[1].get<int>();
                    std::tie(a.rl_threads, a.rl_calls) = opt_pair_from_json(ja.at("rl"));
                    std::tie(a.base_threads, a.base_calls) = opt_pair_from_json(ja.at("base"));
                    round.push_back(std::move(a));
                }
                rep.best_log.push_back(std::move(round));
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("run file: ") + e.what());
    }
    return rep;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "' for writing");
    f << text;
    if (!f) throw FormatError("error writing '" + path + "'");
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Grids the baseline draws from, in draw order, for one service.
struct BaselineSpaces {
    const agents::ActionSpace* threads = nullptr;
    const agents::ActionSpace* calls = nullptr;
};

}  // namespace

std::string to_string(Paradigm p) {
    for (const auto& e : kParadigms)
        if (e.p == p) return e.name;
    throw ValidationError("to_string: unknown paradigm");
}

Paradigm paradigm_from_string(const std::string& s) {
    for (const auto& e : kParadigms)
        if (s == e.name) return e.p;
    throw ValidationError("unknown paradigm '" + s + "'");
}

bool is_collab(Paradigm p) {
    return p == Paradigm::CollabCall || p == Paradigm::CollabThread ||
           p == Paradigm::CollabBoth;
}

std::string to_string(agents::UpdateRule r) {
    return r == agents::UpdateRule::QRegression ? "qreg" : "reinforce";
}

agents::UpdateRule update_rule_from_string(const std::string& s) {
    if (s == "qreg") return agents::UpdateRule::QRegression;
    if (s == "reinforce") return agents::UpdateRule::Reinforce;
    throw ValidationError("unknown update rule '" + s + "' (expected qreg or reinforce)");
}

ExperimentConfig effective_config(ExperimentConfig cfg) {
    if (cfg.desk_scale) {
        cfg.epochs = 60;
        cfg.interactions = 200;
    }
    if (!is_collab(cfg.paradigm)) {
        cfg.services = 1;
    } else {
        if (cfg.services < 1) throw ValidationError("config: services must be >= 1");
        if (cfg.profiles.size() == 1 && cfg.services > 1)
            cfg.profiles.assign(static_cast<std::size_t>(cfg.services), cfg.profiles[0]);
        cfg.services = static_cast<int>(cfg.profiles.size());
    }
    validate_config(cfg);
    return cfg;
}

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.profiles.empty()) throw ValidationError("config: at least one profile required");
    for (const auto& name : cfg.profiles) data::profile_by_name(name);  // throws on unknown
    if (!is_collab(cfg.paradigm) && cfg.profiles.size() != 1)
        throw ValidationError("config: this paradigm runs on exactly one profile");
    if (is_collab(cfg.paradigm)) {
        // One shared decision head shape per group requires one shared grid.
        for (const auto& name : cfg.profiles)
            if (name != cfg.profiles[0])
                throw ValidationError(
                    "config: collaborative services must share one profile (one action grid)");
    }
    if (cfg.rolling_window < 1) throw ValidationError("config: rolling_window must be >= 1");
    if (cfg.epochs < cfg.rolling_window)
        throw ValidationError("config: epochs must be >= the rolling window (" +
                              std::to_string(cfg.rolling_window) + ")");
    if (cfg.interactions < 1) throw ValidationError("config: interactions must be >= 1");
    if (cfg.repeats < 1) throw ValidationError("config: repeats must be >= 1");
    if (!(cfg.reward.beta >= 0.0) || !std::isfinite(cfg.reward.beta))
        throw ValidationError("config: beta must be finite and >= 0");
    if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0))
        throw ValidationError("config: alpha must lie in [0, 1]");
    for (const double e : {cfg.eps_start, cfg.eps_end})
        if (!(e >= 0.0 && e <= 1.0)) throw ValidationError("config: eps must lie in [0, 1]");
    if (!(cfg.learning_rate > 0.0) || !(cfg.collab_learning_rate > 0.0))
        throw ValidationError("config: learning rates must be > 0");
    if (cfg.snet_aux && !is_collab(cfg.paradigm))
        throw ValidationError("config: snet_aux applies only to collaborative paradigms");
    sim::validate(cfg.backend);
}

std::string config_to_json(const ExperimentConfig& cfg) {
    return config_to_json_obj(cfg).dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    return config_from_json_obj(doc);
}

ExperimentConfig config_from_json_file(const std::string& path) {
    return config_from_json(read_text_file(path));
}

RollingRatio rolling_ratio(std::span<const double> rl, std::span<const double> base,
                           int window) {
    if (window < 1) throw ValidationError("rolling_ratio: window must be >= 1");
    if (rl.size() != base.size())
        throw ValidationError("rolling_ratio: series lengths differ");
    if (rl.size() < static_cast<std::size_t>(window))
        throw ValidationError("rolling_ratio: series shorter than the window");
    RollingRatio out;
    out.series.assign(rl.size(), 0.0);
    const double w = static_cast<double>(window);
    double win_rl = 0.0, win_base = 0.0;
    for (std::size_t e = 0; e < rl.size(); ++e) {
        win_rl += rl[e];
        win_base += base[e];
        if (e >= static_cast<std::size_t>(window)) {
            win_rl -= rl[e - static_cast<std::size_t>(window)];
            win_base -= base[e - static_cast<std::size_t>(window)];
        }
        if (e + 1 >= static_cast<std::size_t>(window)) {
            const double mb = win_base / w;
            if (mb == 0.0)
                throw NumericError("rolling_ratio: baseline window mean is zero at epoch " +
                                   std::to_string(e));
            const double r = (win_rl / w) / mb;
            out.series[e] = r;
            if (out.argmax < 0 || r > out.max_ratio) {
                out.max_ratio = r;
                out.argmax = static_cast<int>(e);
            }
        }
    }
    return out;
}

int baseline_action(const agents::ActionSpace& space, rng::Engine& gen) {
    if (space.values.empty()) throw ValidationError("baseline_action: empty action grid");
    return static_cast<int>(
        rng::uniform_int(gen, 0, static_cast<long>(space.values.size()) - 1));
}

std::uint64_t env_round_seed(std::uint64_t base, int epoch, int round, int service) {
    return rng::derive_seed(rng::derive_seed(base, static_cast<std::uint64_t>(epoch),
                                             static_cast<std::uint64_t>(round)),
                            static_cast<std::uint64_t>(service));
}

RunReport run_repeat(const ExperimentConfig& raw,
                     std::span<const surrogate::SurrogateModel> models, int repeat_index) {
    const auto cfg = effective_config(raw);
    if (repeat_index < 0) throw ValidationError("run_repeat: repeat index must be >= 0");
    const auto t_start = std::chrono::steady_clock::now();
    const int n = cfg.services;

    std::vector<const data::Profile*> profiles;
    profiles.reserve(static_cast<std::size_t>(n));
    for (const auto& name : cfg.profiles) profiles.push_back(&data::profile_by_name(name));

    std::vector<std::unique_ptr<agents::Env>> env_store;
    std::vector<const agents::Env*> envs;
    if (cfg.oracle) {
        env_store.push_back(std::make_unique<agents::OracleEnv>(cfg.backend));
        for (int k = 0; k < n; ++k) envs.push_back(env_store.front().get());
    } else {
        if (models.empty())
            throw ValidationError("run_repeat: a surrogate model is required unless oracle "
                                  "mode is on");
        if (models.size() != 1 && models.size() != static_cast<std::size_t>(n))
            throw ValidationError("run_repeat: provide one surrogate or one per service");
        for (int k = 0; k < n; ++k) {
            const auto& m = models.size() == 1 ? models[0]
                                               : models[static_cast<std::size_t>(k)];
            if (!m.profile.empty() && m.profile != cfg.profiles[static_cast<std::size_t>(k)])
                throw ValidationError("run_repeat: surrogate trained on profile '" + m.profile +
                                      "' paired with service profile '" +
                                      cfg.profiles[static_cast<std::size_t>(k)] + "'");
            env_store.push_back(std::make_unique<agents::SurrogateEnv>(m));
            envs.push_back(env_store.back().get());
        }
    }

    const std::uint64_t rep_seed =
        rng::derive_seed(cfg.seed, static_cast<std::uint64_t>(repeat_index));
    rng::Engine state_gen(rng::derive_seed(rep_seed, 1));
    rng::Engine base_gen(rng::derive_seed(rep_seed, 2));
    const std::uint64_t env_base = rng::derive_seed(rep_seed, 5);

    const auto tspace = agents::action_space(cfg.profiles[0], sim::LoadField::Threads);
    const auto cspace = agents::action_space(cfg.profiles[0], sim::LoadField::Calls);

    std::optional<agents::AgentNet> single_a, thread_a, call_a;
    std::optional<agents::CollabNets> group_a, group_b;  // thread group, call group
    BaselineSpaces bl;
    switch (cfg.paradigm) {
        case Paradigm::SingleThread:
            single_a = agents::make_agent(tspace, 8, cfg.learning_rate,
                                          rng::derive_seed(rep_seed, 3));
            bl.threads = &tspace;
            break;
        case Paradigm::SingleCall:
            single_a = agents::make_agent(cspace, 8, cfg.learning_rate,
                                          rng::derive_seed(rep_seed, 3));
            bl.calls = &cspace;
            break;
        case Paradigm::Independent:
            thread_a = agents::make_agent(tspace, 7, cfg.learning_rate,
                                          rng::derive_seed(rep_seed, 3));
            call_a = agents::make_agent(cspace, 7, cfg.learning_rate,
                                        rng::derive_seed(rep_seed, 4));
            bl.threads = &tspace;
            bl.calls = &cspace;
            break;
        case Paradigm::ThreadCall:
            thread_a = agents::make_agent(tspace, 7, cfg.learning_rate,
                                          rng::derive_seed(rep_seed, 3));
            call_a = agents::make_agent(cspace, 8, cfg.learning_rate,
                                        rng::derive_seed(rep_seed, 4));
            bl.threads = &tspace;
            bl.calls = &cspace;
            break;
        case Paradigm::CallThread:
            thread_a = agents::make_agent(tspace, 8, cfg.learning_rate,
                                          rng::derive_seed(rep_seed, 3));
            call_a = agents::make_agent(cspace, 7, cfg.learning_rate,
                                        rng::derive_seed(rep_seed, 4));
            bl.threads = &tspace;
            bl.calls = &cspace;
            break;
        case Paradigm::CollabThread:
            group_a = agents::make_collab(n, tspace, 8, cfg.collab_learning_rate,
                                          rng::derive_seed(rep_seed, 3), cfg.snet_aux);
            bl.threads = &tspace;
            break;
        case Paradigm::CollabCall:
            group_a = agents::make_collab(n, cspace, 8, cfg.collab_learning_rate,
                                          rng::derive_seed(rep_seed, 3), cfg.snet_aux);
            bl.calls = &cspace;
            break;
        case Paradigm::CollabBoth:
            group_a = agents::make_collab(n, tspace, 7, cfg.collab_learning_rate,
                                          rng::derive_seed(rep_seed, 3), cfg.snet_aux);
            group_b = agents::make_collab(n, cspace, 7, cfg.collab_learning_rate,
                                          rng::derive_seed(rep_seed, 4), cfg.snet_aux);
            bl.threads = &tspace;
            bl.calls = &cspace;
            break;
    }

    const bool collab = is_collab(cfg.paradigm);
    const std::int64_t total_rounds =
        static_cast<std::int64_t>(cfg.epochs) * cfg.interactions;

    RunReport rep;
    rep.env_seed_base = env_base;
    rep.oracle = cfg.oracle;
    rep.rl_cum.assign(static_cast<std::size_t>(cfg.epochs), 0.0);
    rep.base_cum.assign(static_cast<std::size_t>(cfg.epochs), 0.0);
    rep.ratio.assign(static_cast<std::size_t>(cfg.epochs), 0.0);

    const double w = static_cast<double>(cfg.rolling_window);
    double win_rl = 0.0, win_base = 0.0;
    double best_ratio = 0.0;
    int best_e = -1;
    std::vector<RoundLog> epoch_log(static_cast<std::size_t>(cfg.interactions));
    std::vector<RoundLog> best_log;

    bool have_prev = false;
    std::vector<std::vector<double>> prev_states, prev_ms;
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n), 0);

    for (int e = 0; e < cfg.epochs; ++e) {
        double erl = 0.0, ebase = 0.0;
        for (int i = 0; i < cfg.interactions; ++i) {
            const std::int64_t t = static_cast<std::int64_t>(e) * cfg.interactions + i;
            const double eps =
                total_rounds > 1
                    ? cfg.eps_start + (cfg.eps_end - cfg.eps_start) *
                                          (static_cast<double>(t) /
                                           static_cast<double>(total_rounds - 1))
                    : cfg.eps_start;
            for (int k = 0; k < n; ++k)
                seeds[static_cast<std::size_t>(k)] = env_round_seed(env_base, e, i, k);

            agents::RoundResult rr;
            switch (cfg.paradigm) {
                case Paradigm::SingleThread:
                case Paradigm::SingleCall:
                    single_a->eps = eps;
                    rr = agents::run_round_single(*single_a, *envs[0], *profiles[0], state_gen,
                                                  seeds[0], cfg.update_rule, cfg.alpha);
                    break;
                case Paradigm::Independent:
                case Paradigm::ThreadCall:
                case Paradigm::CallThread: {
                    thread_a->eps = eps;
                    call_a->eps = eps;
                    const auto mode = cfg.paradigm == Paradigm::Independent
                                          ? agents::MultiMode::Independent
                                          : (cfg.paradigm == Paradigm::ThreadCall
                                                 ? agents::MultiMode::ThreadThenCall
                                                 : agents::MultiMode::CallThenThread);
                    rr = agents::run_round_multi(*thread_a, *call_a, mode, *envs[0],
                                                 *profiles[0], state_gen, seeds[0],
                                                 cfg.update_rule, cfg.alpha);
                    break;
                }
                case Paradigm::CollabThread:
                case Paradigm::CollabCall:
                    group_a->eps = eps;
                    rr = agents::run_round_collab(*group_a, envs, profiles, state_gen, seeds,
                                                  cfg.reward.beta, cfg.update_rule, cfg.alpha);
                    break;
                case Paradigm::CollabBoth:
                    group_a->eps = eps;
                    group_b->eps = eps;
                    rr = agents::run_round_collab_both(*group_a, *group_b, envs, profiles,
                                                       state_gen, seeds, cfg.reward.beta,
                                                       cfg.update_rule, cfg.alpha);
                    break;
            }
            erl += rr.reward_total;

            // Baseline on the identical states, environments and seeds;
            // only the action source differs.
            const std::size_t ns = rr.services.size();
            RoundLog log(ns);
            std::vector<double> bqps(ns, 0.0), bp503(ns, 0.0);
            for (std::size_t k = 0; k < ns; ++k) {
                const auto& sr = rr.services[k];
                std::optional<int> bt, bc;
                if (bl.threads)
                    bt = bl.threads->values[static_cast<std::size_t>(
                        baseline_action(*bl.threads, base_gen))];
                if (bl.calls)
                    bc = bl.calls->values[static_cast<std::size_t>(
                        baseline_action(*bl.calls, base_gen))];
                const auto applied = agents::apply_actions(sr.sampled, bt, bc);
                const auto [q_, p_] = envs[k]->respond(sr.rules, applied, seeds[k]);
                bqps[k] = q_;
                bp503[k] = p_;
                log[k] = LoggedAction{sr.rules,        sr.sampled, sr.thread_action,
                                      sr.call_action,  bt,         bc};
            }
            double base_total = 0.0;
            if (collab) {
                for (std::size_t k = 0; k < ns; ++k)
                    base_total += agents::reward_multi(static_cast<int>(k) + 1, bqps, bp503,
                                                       cfg.reward.beta);
            } else {
                base_total = agents::reward_503(bqps[0], bp503[0]);
            }
            ebase += base_total;
            epoch_log[static_cast<std::size_t>(i)] = std::move(log);

            // Auxiliary next-state update on the shared block: the buffer is
            // the previous round's per-service transitions.
            if (cfg.snet_aux && collab) {
                if (have_prev) {
                    std::vector<agents::AuxTriple> buf(ns);
                    for (std::size_t k = 0; k < ns; ++k)
                        buf[k] = agents::AuxTriple{prev_states[k], prev_ms[k],
                                                   rr.services[k].state};
                    agents::snet_aux_update(*group_a, buf);
                    if (group_b) agents::snet_aux_update(*group_b, buf);
                }
                prev_states.assign(ns, {});
                prev_ms.assign(ns, {});
                for (std::size_t k = 0; k < ns; ++k) {
                    prev_states[k] = rr.services[k].state;
                    prev_ms[k] = rr.services[k].ms;
                }
                have_prev = true;
            }
        }
        rep.rl_cum[static_cast<std::size_t>(e)] = erl;
        rep.base_cum[static_cast<std::size_t>(e)] = ebase;

        win_rl += erl;
        win_base += ebase;
        if (e >= cfg.rolling_window) {
            win_rl -= rep.rl_cum[static_cast<std::size_t>(e - cfg.rolling_window)];
            win_base -= rep.base_cum[static_cast<std::size_t>(e - cfg.rolling_window)];
        }
        if (e + 1 >= cfg.rolling_window) {
            const double mb = win_base / w;
            if (mb == 0.0)
                throw NumericError("rolling ratio: baseline window mean is zero at epoch " +
                                   std::to_string(e));
            const double r = (win_rl / w) / mb;
            rep.ratio[static_cast<std::size_t>(e)] = r;
            if (best_e < 0 || r > best_ratio) {
                best_ratio = r;
                best_e = e;
                best_log = epoch_log;
            }
        }
    }

    rep.best_epoch = best_e;
    rep.sim_ratio = best_ratio;
    rep.best_log = std::move(best_log);
    if (rep.base_cum[static_cast<std::size_t>(best_e)] == 0.0)
        throw NumericError("run_repeat: baseline reward at the best epoch is zero");
    rep.best_epoch_ratio = rep.rl_cum[static_cast<std::size_t>(best_e)] /
                           rep.base_cum[static_cast<std::size_t>(best_e)];
    rep.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return rep;
}

ExperimentResult run_experiment(const ExperimentConfig& raw,
                                std::span<const surrogate::SurrogateModel> models) {
    ExperimentResult result;
    result.config = effective_config(raw);
    result.repeats.reserve(static_cast<std::size_t>(result.config.repeats));
    for (int r = 0; r < result.config.repeats; ++r)
        result.repeats.push_back(run_repeat(result.config, models, r));
    result.mean = aggregate_repeats(result.repeats);
    return result;
}

double validate_best(const RunReport& report, const ExperimentConfig& raw, std::uint64_t seed) {
    const auto cfg = effective_config(raw);
    if (report.best_log.empty()) throw ValidationError("validate_best: best-epoch log is empty");
    if (report.best_epoch < 0) throw ValidationError("validate_best: no best epoch recorded");
    // Oracle-mode runs replay under their stored seed root so every response
    // reproduces the training interaction exactly.
    const std::uint64_t base = report.oracle ? report.env_seed_base : seed;
    const bool collab = is_collab(cfg.paradigm);
    double cum_rl = 0.0, cum_base = 0.0;
    for (std::size_t i = 0; i < report.best_log.size(); ++i) {
        const auto& round = report.best_log[i];
        if (round.empty()) throw ValidationError("validate_best: empty round in the log");
        const std::size_t ns = round.size();
        std::vector<double> rq(ns, 0.0), rp(ns, 0.0), bq(ns, 0.0), bp(ns, 0.0);
        for (std::size_t k = 0; k < ns; ++k) {
            const auto& a = round[k];
            const std::uint64_t s = env_round_seed(base, report.best_epoch,
                                                   static_cast<int>(i), static_cast<int>(k));
            const auto rl_load = agents::apply_actions(a.sampled, a.rl_threads, a.rl_calls);
            const auto r1 = sim::simulate(a.rules, rl_load, cfg.backend, s);
            rq[k] = r1.qps;
            rp[k] = r1.p503;
            const auto base_load =
                agents::apply_actions(a.sampled, a.base_threads, a.base_calls);
            const auto r2 = sim::simulate(a.rules, base_load, cfg.backend, s);
            bq[k] = r2.qps;
            bp[k] = r2.p503;
        }
        // Accumulate with the same per-round grouping as training so an
        // oracle-mode replay reproduces the epoch sums bit for bit.
        double rl_round = 0.0, base_round = 0.0;
        if (collab) {
            for (std::size_t k = 0; k < ns; ++k) {
                rl_round += agents::reward_multi(static_cast<int>(k) + 1, rq, rp,
                                                 cfg.reward.beta);
                base_round += agents::reward_multi(static_cast<int>(k) + 1, bq, bp,
                                                   cfg.reward.beta);
            }
        } else {
            rl_round = agents::reward_503(rq[0], rp[0]);
            base_round = agents::reward_503(bq[0], bp[0]);
        }
        cum_rl += rl_round;
        cum_base += base_round;
    }
    if (cum_base == 0.0)
        throw NumericError("validate_best: baseline cumulative reward is zero");
    return cum_rl / cum_base;
}

RunReport aggregate_repeats(std::span<const RunReport> reports) {
    if (reports.empty()) throw ValidationError("aggregate_repeats: no reports");
    const std::size_t epochs = reports[0].rl_cum.size();
    for (const auto& r : reports)
        if (r.rl_cum.size() != epochs || r.base_cum.size() != epochs ||
            r.ratio.size() != epochs)
            throw ValidationError("aggregate_repeats: reports have different shapes");
    RunReport m;
    m.rl_cum.assign(epochs, 0.0);
    m.base_cum.assign(epochs, 0.0);
    m.ratio.assign(epochs, 0.0);
    const double inv = 1.0 / static_cast<double>(reports.size());
    bool all_val = true;
    double val_sum = 0.0;
    for (const auto& r : reports) {
        for (std::size_t e = 0; e < epochs; ++e) {
            m.rl_cum[e] += r.rl_cum[e];
            m.base_cum[e] += r.base_cum[e];
            m.ratio[e] += r.ratio[e];
        }
        m.sim_ratio += r.sim_ratio;
        m.best_epoch_ratio += r.best_epoch_ratio;
        m.wall_seconds += r.wall_seconds;
        if (r.val_ratio)
            val_sum += *r.val_ratio;
        else
            all_val = false;
    }
    for (std::size_t e = 0; e < epochs; ++e) {
        m.rl_cum[e] *= inv;
        m.base_cum[e] *= inv;
        m.ratio[e] *= inv;
    }
    m.sim_ratio *= inv;
    m.best_epoch_ratio *= inv;
    m.wall_seconds *= inv;
    if (all_val) m.val_ratio = val_sum * inv;
    m.oracle = reports[0].oracle;
    for (std::size_t e = 0; e < epochs; ++e)
        if (m.best_epoch < 0 || m.ratio[e] > m.ratio[static_cast<std::size_t>(m.best_epoch)])
            m.best_epoch = static_cast<int>(e);
    return m;
}

void save_run(const ExperimentResult& result, const std::string& path) {
    json doc;
    doc["format"] = "meshrl-run-v1";
    doc["config"] = config_to_json_obj(result.config);
    json reps = json::array();
    for (const auto& r : result.repeats) reps.push_back(report_to_json(r, true));
    doc["repeats"] = std::move(reps);
    doc["mean"] = report_to_json(result.mean, false);
    write_text_file(path, doc.dump(2) + "\n");
}

ExperimentResult load_run(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw FormatError("run file '" + path + "': " + e.what());
    }
    try {
        if (!doc.is_object() || doc.at("format").get<std::string>() != "meshrl-run-v1")
            throw FormatError("run file '" + path + "': unrecognized format");
        ExperimentResult result;
        result.config = config_from_json_obj(doc.at("config"));
        for (const auto& jr : doc.at("repeats"))
            result.repeats.push_back(report_from_json(jr, true));
        result.mean = report_from_json(doc.at("mean"), false);
        return result;
    } catch (const json::exception& e) {
        throw FormatError("run file '" + path + "': " + e.what());
    }
}

void emit_report(const ExperimentResult& result, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw FormatError("cannot create directory '" + out_dir + "': " + ec.message());

    const auto report_summary = [](const RunReport& r) {
        json j;
        j["sim_ratio"] = r.sim_ratio;
        j["best_epoch"] = r.best_epoch;
        j["best_epoch_ratio"] = r.best_epoch_ratio;
        j["val_ratio"] = r.val_ratio ? json(*r.val_ratio) : json(nullptr);
        return j;
    };
    json doc;
    doc["format"] = "meshrl-summary-v1";
    doc["config"] = config_to_json_obj(result.config);
    json reps = json::array();
    for (const auto& r : result.repeats) reps.push_back(report_summary(r));
    doc["repeats"] = std::move(reps);
    doc["mean"] = report_summary(result.mean);
    write_text_file((fs::path(out_dir) / "summary.json").string(), doc.dump(2) + "\n");

    const auto write_curve = [](const RunReport& r, const std::string& path) {
        std::string buf = "epoch,rl_cum_reward,base_cum_reward,rolling_ratio\n";
        for (std::size_t e = 0; e < r.rl_cum.size(); ++e) {
            append_number(buf, static_cast<int>(e));
            buf += ',';
            append_number(buf, r.rl_cum[e]);
            buf += ',';
            append_number(buf, r.base_cum[e]);
            buf += ',';
            append_number(buf, r.ratio[e]);
            buf += '\n';
        }
        write_text_file(path, buf);
    };
    for (std::size_t k = 0; k < result.repeats.size(); ++k)
        write_curve(result.repeats[k], (fs::path(out_dir) / ("repeat_" + std::to_string(k + 1) +
                                                             ".csv"))
                                           .string());
    write_curve(result.mean, (fs::path(out_dir) / "mean.csv").string());
}

}  // namespace meshrl::harness
