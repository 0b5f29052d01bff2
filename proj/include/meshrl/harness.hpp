#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "meshrl/agents.hpp"
#include "meshrl/datagen.hpp"
#include "meshrl/mesh_sim.hpp"
#include "meshrl/rng.hpp"
#include "meshrl/surrogate.hpp"

// Experiment orchestration: the training loops for every agent arrangement,
// a uniform-random baseline tracked on the identical state stream, the
// rolling reward-ratio metric, best-epoch logging, validation replay against
// the simulator, repeat aggregation, and deterministic report emission.

namespace meshrl::harness {

enum class Paradigm {
    SingleThread,   // one agent picks threads
    SingleCall,     // one agent picks calls
    Independent,    // thread and call agents, neither sees the other
    ThreadCall,     // thread agent first, call agent sees its choice
    CallThread,     // call agent first, thread agent sees its choice
    CollabCall,     // n services, shared front block, call agents
    CollabThread,   // n services, shared front block, thread agents
    CollabBoth,     // n services, two shared groups, thread and call agents
};

std::string to_string(Paradigm p);
Paradigm paradigm_from_string(const std::string& s);
bool is_collab(Paradigm p);

std::string to_string(agents::UpdateRule r);
agents::UpdateRule update_rule_from_string(const std::string& s);

struct ExperimentConfig {
    Paradigm paradigm = Paradigm::SingleCall;
    std::vector<std::string> profiles = {"s2"};  // one entry per service
    int services = 1;            // collab paradigms; single/multi always use 1
    int epochs = 500;
    int interactions = 1000;     // rounds per epoch
    bool desk_scale = false;     // preset: 60 epochs x 200 interactions
    int repeats = 3;
    std::uint64_t seed = 1;
    agents::RewardConfig reward;
    agents::UpdateRule update_rule = agents::UpdateRule::QRegression;
    bool snet_aux = false;       // auxiliary next-state head on the shared block
    double alpha = 0.9;          // trajectory discount for the policy-gradient rule
    double eps_start = 0.3, eps_end = 0.02;  // linear exploration schedule
    int rolling_window = 25;
    double learning_rate = 5e-5;        // single/multi agent nets
    double collab_learning_rate = 1e-5; // shared block and private heads
    bool oracle = false;         // interact with the simulator instead of a surrogate
    sim::BackendConfig backend;  // simulated backend for oracle mode and validation
};

// Resolve the desk-scale preset and per-service profile replication, then
// range-check every field. Throws ValidationError.
ExperimentConfig effective_config(ExperimentConfig cfg);
void validate_config(const ExperimentConfig& cfg);

// JSON round trip for config files and report echoes.
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig config_from_json_file(const std::string& path);

// One round of one service as logged at the best epoch: the sampled state
// and both the agent's and the baseline's applied load overrides.
struct LoggedAction {
    sim::TrafficRules rules;
    sim::LoadAction sampled;
    std::optional<int> rl_threads, rl_calls;
    std::optional<int> base_threads, base_calls;
};
using RoundLog = std::vector<LoggedAction>;  // one entry per service

struct RollingRatio {
    std::vector<double> series;  // same length as the inputs; zero before the
                                 // first full window
    double max_ratio = 0.0;
    int argmax = -1;
};

// ratio[e] = mean(rl[e-w+1..e]) / mean(base[e-w+1..e]) for e >= w-1.
// Throws ValidationError on short input, NumericError on a zero baseline
// window mean.
RollingRatio rolling_ratio(std::span<const double> rl, std::span<const double> base,
                           int window = 25);

// Uniform draw over the action grid; consumes exactly one value from `gen`.
int baseline_action(const agents::ActionSpace& space, rng::Engine& gen);

// Outcome of one repeat.
struct RunReport {
    std::vector<double> rl_cum, base_cum;  // per-epoch cumulative rewards
    std::vector<double> ratio;             // rolling ratio series
    int best_epoch = -1;                   // argmax of the ratio series
    double sim_ratio = 0.0;                // max rolling ratio
    double best_epoch_ratio = 0.0;         // rl_cum[best] / base_cum[best]
    std::optional<double> val_ratio;       // filled by validation replay
    std::vector<RoundLog> best_log;        // every round of the best epoch
    std::uint64_t env_seed_base = 0;       // per-repeat environment seed root
    bool oracle = false;
    double wall_seconds = 0.0;  // informational only; never serialized
};

struct ExperimentResult {
    ExperimentConfig config;  // effective (presets resolved)
    std::vector<RunReport> repeats;
    RunReport mean;
};

// Per-round simulator/environment seed, shared between training in oracle
// mode and validation replay so the two loops see identical draws.
std::uint64_t env_round_seed(std::uint64_t base, int epoch, int round, int service);

// One repeat: train the configured paradigm for epochs x interactions
// rounds, track the uniform baseline on the identical state stream and
// environment, and log the best epoch. `models` holds one surrogate per
// service (or a single one to share); ignored in oracle mode.
RunReport run_repeat(const ExperimentConfig& cfg,
                     std::span<const surrogate::SurrogateModel> models, int repeat_index);

// All repeats plus their aggregate.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                std::span<const surrogate::SurrogateModel> models);

// Replay every best-epoch round - agent and baseline actions on the same
// states and the same per-round seeds - through the simulator and return
// cumulative-reward ratio under the run's reward function. Oracle-mode
// reports reuse their stored seed root, which closes the loop exactly.
double validate_best(const RunReport& report, const ExperimentConfig& cfg, std::uint64_t seed);

// Element-wise mean curves and mean ratios; best epoch recomputed from the
// averaged ratio series; the log is left empty.
RunReport aggregate_repeats(std::span<const RunReport> reports);

// RUN file round trip (JSON, full fidelity including the best-epoch logs).
void save_run(const ExperimentResult& result, const std::string& path);
ExperimentResult load_run(const std::string& path);

// Writes summary.json, mean.csv and repeat_<k>.csv into `out_dir`. The CSV
// columns are epoch,rl_cum_reward,base_cum_reward,rolling_ratio. Identical
// results produce byte-identical files.
void emit_report(const ExperimentResult& result, const std::string& out_dir);

}  // namespace meshrl::harness
