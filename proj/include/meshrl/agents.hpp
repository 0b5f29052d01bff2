#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meshrl/datagen.hpp"
#include "meshrl/mesh_sim.hpp"
#include "meshrl/neural.hpp"
#include "meshrl/rng.hpp"
#include "meshrl/surrogate.hpp"

// Q-style agents over discrete load-action grids, in three arrangements:
// one agent per service, two decoupled-or-chained agents on one service,
// and n services that share a state-encoding front block while keeping
// private decision heads.

namespace meshrl::agents {

// Discrete grid of values for one load-generator field, strictly increasing.
struct ActionSpace {
    sim::LoadField kind = sim::LoadField::Threads;
    std::vector<int> values;
};

// Built-in per-profile grids.
ActionSpace action_space(const std::string& profile_name, sim::LoadField kind);

struct RewardConfig {
    double beta = 0.5;  // weight of the fleet-average term in multi-service reward
};

// Single-service reward: worst-case pressure is throughput times error rate.
double reward_503(double qps, double p503);

// Service `service` (1-based) of n: own term plus beta * fleet mean.
double reward_multi(int service, std::span<const double> qps, std::span<const double> p503,
                    double beta);

// What the environment answers with; the surrogate ignores the seed, the
// simulator uses it.
struct Env {
    virtual ~Env() = default;
    virtual std::pair<double, double> respond(const sim::TrafficRules& rules,
                                              const sim::LoadAction& load,
                                              std::uint64_t seed) const = 0;
};

struct SurrogateEnv final : Env {
    const surrogate::SurrogateModel* model;
    explicit SurrogateEnv(const surrogate::SurrogateModel& m) : model(&m) {}
    std::pair<double, double> respond(const sim::TrafficRules& rules,
                                      const sim::LoadAction& load,
                                      std::uint64_t seed) const override;
};

struct OracleEnv final : Env {
    sim::BackendConfig cfg;
    explicit OracleEnv(const sim::BackendConfig& c) : cfg(c) {}
    std::pair<double, double> respond(const sim::TrafficRules& rules,
                                      const sim::LoadAction& load,
                                      std::uint64_t seed) const override;
};

enum class UpdateRule { QRegression, Reinforce };

// One decision head: [state_dim, 512, 512, |actions|].
struct AgentNet {
    nn::DenseNet net;
    nn::AdamState opt;
    ActionSpace space;
    int state_dim = 0;
    double eps = 0.3;
    rng::Engine gen;
};

AgentNet make_agent(const ActionSpace& space, int state_dim, double learning_rate,
                    std::uint64_t seed);

std::vector<double> q_values(const AgentNet& agent, const std::vector<double>& state);

// Epsilon-greedy over the grid; ties go to the lowest index. Always consumes
// at least one draw so the stream layout does not depend on eps.
int select_action(const std::vector<double>& q, double eps, rng::Engine& gen);

// Sample an index from softmax(logits); used by the policy-gradient rule.
int sample_softmax(const std::vector<double>& logits, rng::Engine& gen);

// One Adam step on (Q(state)[action] - reward)^2; only the chosen output
// contributes gradient. Returns the pre-step loss.
double update_q_regression(AgentNet& agent, const std::vector<double>& state, int action_index,
                           double reward);

struct TrajectoryStep {
    std::vector<double> state;
    int action_index = 0;
    double reward = 0.0;
};

// Policy-gradient update: outputs are treated as logits and pushed along
// grad log pi(a|s) * R, with R the alpha-discounted trajectory return.
double update_reinforce(AgentNet& agent, std::span<const TrajectoryStep> trajectory,
                        double alpha);

// Shared front block (one affine+rectifier layer into 512) plus one private
// head per service. The front block exists exactly once; every service's
// forward pass reads the same storage.
struct CollabNets {
    nn::DenseNet snet;             // [state_dim, 512]
    nn::AdamState snet_opt;
    std::vector<nn::DenseNet> pnets;   // each [512, 512, |actions|]
    std::vector<nn::AdamState> pnet_opts;
    ActionSpace space;
    int state_dim = 0;
    double eps = 0.3;
    rng::Engine gen;
    // Optional next-state head for the auxiliary update: one affine layer
    // [state_dim + 512, state_dim] with its own Adam slots.
    std::optional<nn::DenseNet> aux_head;
    std::optional<nn::AdamState> aux_opt;
};

CollabNets make_collab(int services, const ActionSpace& space, int state_dim,
                       double learning_rate, std::uint64_t seed, bool with_aux_head);

// Q-values of service k under the shared front block.
std::vector<double> collab_q_values(const CollabNets& nets, int service,
                                    const std::vector<double>& state);

// Transition triple for the auxiliary update.
struct AuxTriple {
    std::vector<double> state, ms, next_state;
};

// One Adam step on the mean squared next-state prediction error over the
// buffer; gradient reaches both the head and the shared front block.
// Returns the pre-step loss.
double snet_aux_update(CollabNets& nets, std::span<const AuxTriple> buffer);

// Per-service slice of one interaction round.
struct ServiceRound {
    sim::TrafficRules rules;
    sim::LoadAction sampled;               // load values as sampled from the profile
    std::optional<int> thread_action;      // grid value chosen by a thread agent
    std::optional<int> call_action;        // grid value chosen by a call agent
    double qps = 0.0, p503 = 0.0;
    double reward = 0.0;
    std::vector<double> state;             // first (or only) agent's state
    std::vector<double> ms;                // shared-block output (collab only)
};

struct RoundResult {
    std::vector<ServiceRound> services;
    double reward_total = 0.0;
    double loss = 0.0;
};

// Load values after applying agent overrides.
sim::LoadAction apply_actions(const sim::LoadAction& sampled, std::optional<int> threads,
                              std::optional<int> calls);

// Single agent, single service: state is the 7 rules plus the load field the
// agent does not control.
RoundResult run_round_single(AgentNet& agent, const Env& env, const data::Profile& profile,
                             rng::Engine& state_gen, std::uint64_t env_seed, UpdateRule rule,
                             double alpha);

enum class MultiMode { Independent, ThreadThenCall, CallThenThread };

// Two agents on one service, decoupled (both see the 7 rules) or chained
// (the second sees the first's action appended). Both learn from the same
// reward scalar.
RoundResult run_round_multi(AgentNet& thread_agent, AgentNet& call_agent, MultiMode mode,
                            const Env& env, const data::Profile& profile,
                            rng::Engine& state_gen, std::uint64_t env_seed, UpdateRule rule,
                            double alpha);

// n same-kind agents, one per service. Private heads take their own Adam
// step per round; the shared front block accumulates all n gradient
// contributions and steps exactly once.
RoundResult run_round_collab(CollabNets& nets, std::span<const Env* const> envs,
                             std::span<const data::Profile* const> profiles,
                             rng::Engine& state_gen, std::span<const std::uint64_t> env_seeds,
                             double beta, UpdateRule rule, double alpha);

// Thread and call agent per service; each kind shares its own front block.
RoundResult run_round_collab_both(CollabNets& thread_nets, CollabNets& call_nets,
                                  std::span<const Env* const> envs,
                                  std::span<const data::Profile* const> profiles,
                                  rng::Engine& state_gen,
                                  std::span<const std::uint64_t> env_seeds, double beta,
                                  UpdateRule rule, double alpha);

}  // namespace meshrl::agents
