#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meshrl/mesh_sim.hpp"
#include "meshrl/rng.hpp"

// Dataset production for the simulation model: sample rule/load
// configurations from a named profile, label them with the simulator, and
// provide the CSV and standardization plumbing the trainers sit on.

namespace meshrl::data {

// Closed integer range.
struct FieldRange {
    int lo = 0;
    int hi = 0;
};

// Sampling profile: ranges for the five variable rules and the two load
// settings; ejection time and sweep interval are fixed per profile.
struct Profile {
    std::string name;
    FieldRange max_pending_requests;
    FieldRange max_connections;
    FieldRange max_req_per_conn;
    FieldRange max_ejection_pct;
    FieldRange consecutive_errors;
    FieldRange threads;
    FieldRange calls;
    double ejection_time_s = 180.0;
    double interval_s = 1.0;
};

// The five built-in profiles, named "s1" .. "s5".
const Profile& profile_by_name(const std::string& name);
const std::vector<Profile>& builtin_profiles();

// One labeled observation. Inputs are the nine canonical model features in
// CSV column order; outputs are the simulator's qps and p503.
struct TraceRecord {
    sim::TrafficRules rules;
    sim::LoadAction load;
    double qps = 0.0;
    double p503 = 0.0;

    std::array<double, 9> inputs() const;
};

inline constexpr const char* kCsvHeader =
    "max_pending,max_connections,max_req_per_conn,ejection_time_s,"
    "max_ejection_pct,interval_s,consecutive_errors,threads,calls,qps,p503";

// Draw one configuration uniformly and independently per field, advancing
// the generator. Field order is the CSV column order.
std::pair<sim::TrafficRules, sim::LoadAction> sample_config(const Profile& profile,
                                                            rng::Engine& gen);

// Sample `size` configurations with one generator seeded by `seed`, then
// label record i by simulate(..., seed ^ i).
std::vector<TraceRecord> generate_dataset(const Profile& profile, int size,
                                          std::uint64_t seed, const sim::BackendConfig& cfg);

// Seeded shuffle, then a prefix/suffix split with round(ratio * N) training
// rows. Throws ValidationError if either side would be empty.
std::pair<std::vector<TraceRecord>, std::vector<TraceRecord>> split_dataset(
    std::vector<TraceRecord> records, double train_ratio, std::uint64_t seed);

// Z-score parameters over the 9 inputs and 2 outputs, fit on training data
// with population standard deviation. Constant features get std 1 so the
// transform stays invertible.
struct ScalerParams {
    std::array<double, 9> in_mean{}, in_std{};
    std::array<double, 2> out_mean{}, out_std{};
};

ScalerParams fit_scaler(std::span<const TraceRecord> train);
std::array<double, 11> apply_scaler(const ScalerParams& p, const TraceRecord& rec);
std::array<double, 9> scale_inputs(const ScalerParams& p, const std::array<double, 9>& raw);
std::array<double, 2> scale_outputs(const ScalerParams& p, double qps, double p503);
std::pair<double, double> unscale_outputs(const ScalerParams& p,
                                          const std::array<double, 2>& scaled);

// CSV round trip. Numbers are written in shortest round-trip form, so
// read(write(x)) reproduces x exactly.
void write_csv(const std::vector<TraceRecord>& records, const std::string& path);
void write_csv(const std::vector<TraceRecord>& records, std::ostream& out);
std::vector<TraceRecord> read_csv(const std::string& path);
std::vector<TraceRecord> read_csv(std::istream& in);

}  // namespace meshrl::data
