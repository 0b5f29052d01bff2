#include "meshrl/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>

#include "meshrl/errors.hpp"

namespace meshrl::data {

namespace {

Profile make_profile(std::string name, FieldRange pending, FieldRange conns, FieldRange req,
                     FieldRange eject_pct, FieldRange consec, FieldRange threads,
                     FieldRange calls) {
    Profile p;
    p.name = std::move(name);
    p.max_pending_requests = pending;
    p.max_connections = conns;
    p.max_req_per_conn = req;
    p.max_ejection_pct = eject_pct;
    p.consecutive_errors = consec;
    p.threads = threads;
    p.calls = calls;
    return p;
}

int draw(const FieldRange& r, rng::Engine& gen) {
    return static_cast<int>(rng::uniform_int(gen, r.lo, r.hi));
}

// Shortest decimal form that parses back to the same value.
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

double parse_field(const std::string& field, int line_no) {
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc{} || res.ptr != last)
        throw FormatError("csv line " + std::to_string(line_no) + ": bad number '" + field + "'");
    return v;
}

int as_int(double v, const char* name, int line_no) {
    const int i = static_cast<int>(std::llround(v));
    if (static_cast<double>(i) != v)
        throw FormatError("csv line " + std::to_string(line_no) + ": field " + name +
                          " must be an integer");
    return i;
}

}  // namespace

const std::vector<Profile>& builtin_profiles() {
    static const std::vector<Profile> profiles = {
        make_profile("s1", {1, 7}, {1, 7}, {1, 7}, {100, 100}, {1, 1}, {1, 5}, {400, 450}),
        make_profile("s2", {3, 7}, {3, 7}, {3, 7}, {100, 100}, {1, 1}, {3, 7}, {100, 700}),
        make_profile("s3", {12, 18}, {1, 5}, {10, 16}, {4, 8}, {4, 8}, {10, 16}, {50, 500}),
        make_profile("s4", {12, 18}, {10, 20}, {12, 18}, {12, 18}, {12, 18}, {12, 18},
                     {250, 600}),
        make_profile("s5", {15, 30}, {5, 15}, {15, 30}, {22, 30}, {22, 30}, {16, 20},
                     {1000, 2000}),
    };
    return profiles;
}

const Profile& profile_by_name(const std::string& name) {
    std::string key = name;
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (const auto& p : builtin_profiles())
        if (p.name == key) return p;
    throw ValidationError("unknown profile '" + name + "' (expected s1..s5)");
}

std::array<double, 9> TraceRecord::inputs() const {
    return {static_cast<double>(rules.max_pending_requests),
            static_cast<double>(rules.max_connections),
            static_cast<double>(rules.max_req_per_conn),
            rules.ejection_time_s,
            rules.max_ejection_pct,
            rules.interval_s,
            static_cast<double>(rules.consecutive_errors),
            static_cast<double>(load.threads),
            static_cast<double>(load.calls)};
}

std::pair<sim::TrafficRules, sim::LoadAction> sample_config(const Profile& profile,
                                                            rng::Engine& gen) {
    sim::TrafficRules rules;
    rules.max_pending_requests = draw(profile.max_pending_requests, gen);
    rules.max_connections = draw(profile.max_connections, gen);
    rules.max_req_per_conn = draw(profile.max_req_per_conn, gen);
    rules.ejection_time_s = profile.ejection_time_s;
    rules.max_ejection_pct = draw(profile.max_ejection_pct, gen);
    rules.interval_s = profile.interval_s;
    rules.consecutive_errors = draw(profile.consecutive_errors, gen);
    sim::LoadAction load;
    load.threads = draw(profile.threads, gen);
    load.calls = draw(profile.calls, gen);
    return {rules, load};
}

std::vector<TraceRecord> generate_dataset(const Profile& profile, int size, std::uint64_t seed,
                                          const sim::BackendConfig& cfg) {
    if (size < 1)
        throw ValidationError("generate_dataset: size must be >= 1 (got " +
                              std::to_string(size) + ")");
    rng::Engine gen(seed);
    std::vector<TraceRecord> out(static_cast<std::size_t>(size));
    for (auto& rec : out) std::tie(rec.rules, rec.load) = sample_config(profile, gen);
    for (int i = 0; i < size; ++i) {
        auto& rec = out[static_cast<std::size_t>(i)];
        const auto resp =
            sim::simulate(rec.rules, rec.load, cfg, seed ^ static_cast<std::uint64_t>(i));
        rec.qps = resp.qps;
        rec.p503 = resp.p503;
    }
    return out;
}

std::pair<std::vector<TraceRecord>, std::vector<TraceRecord>> split_dataset(
    std::vector<TraceRecord> records, double train_ratio, std::uint64_t seed) {
    const auto n = records.size();
    if (n < 2) throw ValidationError("split_dataset: need at least 2 records");
    if (!(train_ratio > 0.0 && train_ratio < 1.0))
        throw ValidationError("split_dataset: train_ratio must lie in (0, 1)");
    const auto n_train =
        static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(n)));
    if (n_train == 0 || n_train == n)
        throw ValidationError("split_dataset: split leaves an empty side (n=" +
                              std::to_string(n) + ", ratio=" + std::to_string(train_ratio) + ")");

    rng::Engine gen(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(rng::uniform_int(gen, 0, static_cast<long>(i)));
        std::swap(records[i], records[j]);
    }
    std::vector<TraceRecord> test(records.begin() + static_cast<std::ptrdiff_t>(n_train),
                                  records.end());
    records.resize(n_train);
    return {std::move(records), std::move(test)};
}

ScalerParams fit_scaler(std::span<const TraceRecord> train) {
    if (train.empty()) throw ValidationError("fit_scaler: training set is empty");
    const double n = static_cast<double>(train.size());
    std::array<double, 11> mean{}, var{}, lo{}, hi{};
    const auto column_values = [](const TraceRecord& rec) {
        std::array<double, 11> row{};
        const auto in = rec.inputs();
        std::copy(in.begin(), in.end(), row.begin());
        row[9] = rec.qps;
        row[10] = rec.p503;
        return row;
    };
    lo = hi = column_values(train[0]);
    for (const auto& rec : train) {
        const auto row = column_values(rec);
        for (std::size_t j = 0; j < 11; ++j) {
            mean[j] += row[j];
            lo[j] = std::min(lo[j], row[j]);
            hi[j] = std::max(hi[j], row[j]);
        }
    }
    for (auto& m : mean) m /= n;
    for (const auto& rec : train) {
        const auto row = column_values(rec);
        for (std::size_t j = 0; j < 11; ++j) {
            const double d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    ScalerParams p;
    for (std::size_t j = 0; j < 11; ++j) {
        // A constant column standardizes to exactly zero: the rounded mean of
        // n identical values can differ from them in the last bit, which a
        // std.dev. of ~1e-17 would blow up into order-one noise.
        const bool constant = lo[j] == hi[j];
        const double m = constant ? lo[j] : mean[j];
        const double sd = std::sqrt(var[j] / n);
        const double safe = constant || sd == 0.0 ? 1.0 : sd;
        if (j < 9) {
            p.in_mean[j] = m;
            p.in_std[j] = safe;
        } else {
            p.out_mean[j - 9] = m;
            p.out_std[j - 9] = safe;
        }
    }
    return p;
}

std::array<double, 9> scale_inputs(const ScalerParams& p, const std::array<double, 9>& raw) {
    std::array<double, 9> out;
    for (std::size_t j = 0; j < 9; ++j) out[j] = (raw[j] - p.in_mean[j]) / p.in_std[j];
    return out;
}

std::array<double, 2> scale_outputs(const ScalerParams& p, double qps, double p503) {
    return {(qps - p.out_mean[0]) / p.out_std[0], (p503 - p.out_mean[1]) / p.out_std[1]};
}

std::pair<double, double> unscale_outputs(const ScalerParams& p,
                                          const std::array<double, 2>& scaled) {
    return {p.out_mean[0] + p.out_std[0] * scaled[0], p.out_mean[1] + p.out_std[1] * scaled[1]};
}

std::array<double, 11> apply_scaler(const ScalerParams& p, const TraceRecord& rec) {
    const auto in = scale_inputs(p, rec.inputs());
    const auto out = scale_outputs(p, rec.qps, rec.p503);
    std::array<double, 11> row;
    std::copy(in.begin(), in.end(), row.begin());
    row[9] = out[0];
    row[10] = out[1];
    return row;
}

void write_csv(const std::vector<TraceRecord>& records, std::ostream& out) {
    std::string buf;
    buf.reserve(records.size() * 64 + 128);
    buf += kCsvHeader;
    buf += '\n';
    for (const auto& rec : records) {
        append_number(buf, rec.rules.max_pending_requests);
        buf += ',';
        append_number(buf, rec.rules.max_connections);
        buf += ',';
        append_number(buf, rec.rules.max_req_per_conn);
        buf += ',';
        append_number(buf, rec.rules.ejection_time_s);
        buf += ',';
        append_number(buf, rec.rules.max_ejection_pct);
        buf += ',';
        append_number(buf, rec.rules.interval_s);
        buf += ',';
        append_number(buf, rec.rules.consecutive_errors);
        buf += ',';
        append_number(buf, rec.load.threads);
        buf += ',';
        append_number(buf, rec.load.calls);
        buf += ',';
        append_number(buf, rec.qps);
        buf += ',';
        append_number(buf, rec.p503);
        buf += '\n';
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void write_csv(const std::vector<TraceRecord>& records, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "' for writing");
    write_csv(records, f);
    if (!f) throw FormatError("failed writing '" + path + "'");
}

std::vector<TraceRecord> read_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("csv: empty document, header missing");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader)
        throw FormatError("csv: unexpected header '" + line + "'");

    std::vector<TraceRecord> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        std::array<double, 11> v{};
        std::size_t field = 0, start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i != line.size() && line[i] != ',') continue;
            if (field >= 11)
                throw FormatError("csv line " + std::to_string(line_no) + ": too many fields");
            v[field++] = parse_field(line.substr(start, i - start), line_no);
            start = i + 1;
        }
        if (field != 11)
            throw FormatError("csv line " + std::to_string(line_no) + ": expected 11 fields, got " +
                              std::to_string(field));

        TraceRecord rec;
        rec.rules.max_pending_requests = as_int(v[0], "max_pending", line_no);
        rec.rules.max_connections = as_int(v[1], "max_connections", line_no);
        rec.rules.max_req_per_conn = as_int(v[2], "max_req_per_conn", line_no);
        rec.rules.ejection_time_s = v[3];
        rec.rules.max_ejection_pct = v[4];
        rec.rules.interval_s = v[5];
        rec.rules.consecutive_errors = as_int(v[6], "consecutive_errors", line_no);
        rec.load.threads = as_int(v[7], "threads", line_no);
        rec.load.calls = as_int(v[8], "calls", line_no);
        rec.qps = v[9];
        rec.p503 = v[10];
        out.push_back(rec);
    }
    return out;
}

std::vector<TraceRecord> read_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "' for reading");
    return read_csv(f);
}

}  // namespace meshrl::data
