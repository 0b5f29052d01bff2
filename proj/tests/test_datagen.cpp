#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "meshrl/datagen.hpp"
#include "meshrl/errors.hpp"

using namespace meshrl;
using data::Profile;
using data::TraceRecord;

namespace {

Profile degenerate_profile() {
    Profile p;
    p.name = "point";
    p.max_pending_requests = {3, 3};
    p.max_connections = {4, 4};
    p.max_req_per_conn = {2, 2};
    p.max_ejection_pct = {100, 100};
    p.consecutive_errors = {5, 5};
    p.threads = {2, 2};
    p.calls = {50, 50};
    return p;
}

std::string csv_text(const std::vector<TraceRecord>& recs) {
    std::ostringstream out;
    data::write_csv(recs, out);
    return out.str();
}

}  // namespace

TEST_CASE("sample_config draws every field inside its profile range") {
    const auto& s1 = data::profile_by_name("s1");
    rng::Engine gen(3);
    for (int i = 0; i < 500; ++i) {
        const auto [rules, load] = data::sample_config(s1, gen);
        CHECK(rules.max_pending_requests >= 1);
        CHECK(rules.max_pending_requests <= 7);
        CHECK(rules.max_connections >= 1);
        CHECK(rules.max_connections <= 7);
        CHECK(load.calls >= 400);
        CHECK(load.calls <= 450);
        CHECK(load.threads >= 1);
        CHECK(load.threads <= 5);
        CHECK(rules.ejection_time_s == 180.0);
        CHECK(rules.interval_s == 1.0);
        CHECK(rules.max_ejection_pct == 100.0);
    }

    const auto& s5 = data::profile_by_name("s5");
    for (int i = 0; i < 200; ++i) {
        const auto [rules, load] = data::sample_config(s5, gen);
        CHECK(rules.consecutive_errors >= 22);
        CHECK(rules.consecutive_errors <= 30);
        (void)load;
    }
}

TEST_CASE("sample_config on a single-point profile is constant") {
    const auto p = degenerate_profile();
    rng::Engine gen(77);
    for (int i = 0; i < 10; ++i) {
        const auto [rules, load] = data::sample_config(p, gen);
        CHECK(rules.max_pending_requests == 3);
        CHECK(rules.max_connections == 4);
        CHECK(rules.max_req_per_conn == 2);
        CHECK(rules.consecutive_errors == 5);
        CHECK(load.threads == 2);
        CHECK(load.calls == 50);
    }
}

TEST_CASE("generate_dataset of size 1 is exactly one simulator call") {
    const auto p = degenerate_profile();
    sim::BackendConfig cfg;
    const std::uint64_t seed = 99;
    const auto recs = data::generate_dataset(p, 1, seed, cfg);
    REQUIRE(recs.size() == 1);
    const auto resp = sim::simulate(recs[0].rules, recs[0].load, cfg, seed ^ 0ull);
    CHECK(recs[0].qps == resp.qps);
    CHECK(recs[0].p503 == resp.p503);
    CHECK(recs[0].load.threads == 2);
    CHECK(recs[0].load.calls == 50);
}

TEST_CASE("generate_dataset is byte-stable across runs") {
    const auto& s1 = data::profile_by_name("s1");
    sim::BackendConfig cfg;
    const auto a = data::generate_dataset(s1, 2000, 7, cfg);
    const auto b = data::generate_dataset(s1, 2000, 7, cfg);
    CHECK(csv_text(a) == csv_text(b));
}

TEST_CASE("generate_dataset at full scale stays inside the profile box") {
    const auto& s1 = data::profile_by_name("s1");
    sim::BackendConfig cfg;
    const auto recs = data::generate_dataset(s1, 9302, 123, cfg);
    REQUIRE(recs.size() == 9302);
    for (const auto& r : recs) {
        CHECK(r.rules.max_pending_requests >= 1);
        CHECK(r.rules.max_pending_requests <= 7);
        CHECK(r.rules.max_connections >= 1);
        CHECK(r.rules.max_connections <= 7);
        CHECK(r.rules.max_req_per_conn >= 1);
        CHECK(r.rules.max_req_per_conn <= 7);
        CHECK(r.rules.consecutive_errors == 1);
        CHECK(r.load.threads >= 1);
        CHECK(r.load.threads <= 5);
        CHECK(r.load.calls >= 400);
        CHECK(r.load.calls <= 450);
        CHECK(r.p503 >= 0.0);
        CHECK(r.p503 <= 1.0);
        CHECK(r.qps > 0.0);
    }
}

TEST_CASE("split_dataset sizes and determinism") {
    const auto p = degenerate_profile();
    sim::BackendConfig cfg;
    const auto recs10 = data::generate_dataset(p, 10, 5, cfg);

    auto [tr8, te2] = data::split_dataset(recs10, 0.8, 42);
    CHECK(tr8.size() == 8);
    CHECK(te2.size() == 2);

    const auto recs5 = data::generate_dataset(p, 5, 5, cfg);
    auto [tr4, te1] = data::split_dataset(recs5, 0.8, 42);
    CHECK(tr4.size() == 4);
    CHECK(te1.size() == 1);

    auto [a_tr, a_te] = data::split_dataset(recs10, 0.8, 9);
    auto [b_tr, b_te] = data::split_dataset(recs10, 0.8, 9);
    CHECK(csv_text(a_tr) == csv_text(b_tr));
    CHECK(csv_text(a_te) == csv_text(b_te));

    CHECK_THROWS_AS(data::split_dataset(recs10, 0.01, 1), ValidationError);
    CHECK_THROWS_AS(data::split_dataset(recs10, 1.0, 1), ValidationError);
    CHECK_THROWS_AS(data::split_dataset({recs10[0]}, 0.5, 1), ValidationError);
}

TEST_CASE("scaler: constant columns map to zero, two-point columns to +-1") {
    const auto p = degenerate_profile();
    sim::BackendConfig cfg;
    auto recs = data::generate_dataset(p, 4, 17, cfg);
    // Make the pending column a two-point {0, 2} feature; everything else
    // in this degenerate profile stays constant.
    recs[0].rules.max_pending_requests = 0;
    recs[1].rules.max_pending_requests = 2;
    recs[2].rules.max_pending_requests = 0;
    recs[3].rules.max_pending_requests = 2;

    const auto sc = data::fit_scaler(recs);
    CHECK(sc.in_mean[0] == 1.0);
    CHECK(sc.in_std[0] == 1.0);  // population std of {0,2,0,2}
    CHECK(sc.in_std[1] == 1.0);  // constant column falls back to unit scale

    const auto row0 = data::apply_scaler(sc, recs[0]);
    const auto row1 = data::apply_scaler(sc, recs[1]);
    CHECK(row0[0] == -1.0);
    CHECK(row1[0] == 1.0);
    CHECK(row0[1] == 0.0);  // constant feature scaled to zero
    CHECK(row0[3] == 0.0);  // fixed ejection time scaled to zero
}

TEST_CASE("scaler: scale then unscale reproduces the raw values") {
    const auto& s2 = data::profile_by_name("s2");
    sim::BackendConfig cfg;
    const auto recs = data::generate_dataset(s2, 64, 21, cfg);
    const auto sc = data::fit_scaler(recs);
    for (const auto& r : recs) {
        const auto scaled = data::scale_outputs(sc, r.qps, r.p503);
        const auto [q, p] = data::unscale_outputs(sc, scaled);
        CHECK(q == doctest::Approx(r.qps).epsilon(1e-12));
        CHECK(p == doctest::Approx(r.p503).epsilon(1e-12));

        const auto sin = data::scale_inputs(sc, r.inputs());
        for (int j = 0; j < 9; ++j) {
            const double back = sin[static_cast<std::size_t>(j)] *
                                    sc.in_std[static_cast<std::size_t>(j)] +
                                sc.in_mean[static_cast<std::size_t>(j)];
            CHECK(back ==
                  doctest::Approx(r.inputs()[static_cast<std::size_t>(j)]).epsilon(1e-12));
        }
    }
}

TEST_CASE("scaler: standardized training set has zero mean and unit spread") {
    const auto& s3 = data::profile_by_name("s3");
    sim::BackendConfig cfg;
    const auto recs = data::generate_dataset(s3, 400, 31, cfg);
    const auto sc = data::fit_scaler(recs);

    std::array<double, 11> mean{}, sq{};
    for (const auto& r : recs) {
        const auto row = data::apply_scaler(sc, r);
        for (int j = 0; j < 11; ++j) {
            mean[static_cast<std::size_t>(j)] += row[static_cast<std::size_t>(j)];
            sq[static_cast<std::size_t>(j)] += row[static_cast<std::size_t>(j)] *
                                               row[static_cast<std::size_t>(j)];
        }
    }
    const double n = static_cast<double>(recs.size());
    for (int j = 0; j < 11; ++j) {
        const double m = mean[static_cast<std::size_t>(j)] / n;
        const double var = sq[static_cast<std::size_t>(j)] / n - m * m;
        CHECK(std::abs(m) < 1e-9);
        // Constant features (fixed ejection time / interval / pct at s3 scale)
        // scale to all zeros; everything else must be unit variance.
        if (var > 0.5) CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
    }
}

TEST_CASE("csv: write/read round trip is exact") {
    const auto& s4 = data::profile_by_name("s4");
    sim::BackendConfig cfg;
    const auto recs = data::generate_dataset(s4, 50, 8, cfg);

    std::stringstream buf;
    data::write_csv(recs, buf);
    const auto back = data::read_csv(buf);
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(back[i].inputs() == recs[i].inputs());
        CHECK(back[i].qps == recs[i].qps);
        CHECK(back[i].p503 == recs[i].p503);
    }
}

TEST_CASE("csv: header-only input yields an empty dataset") {
    std::istringstream in(std::string(data::kCsvHeader) + "\n");
    CHECK(data::read_csv(in).empty());
}

TEST_CASE("csv: malformed rows are rejected with their line number") {
    std::istringstream short_row(std::string(data::kCsvHeader) +
                                 "\n1,2,3,180,100,1,1,2,50,10.5\n");
    CHECK_THROWS_WITH_AS(data::read_csv(short_row), doctest::Contains("line 2"),
                         FormatError);

    std::istringstream bad_header("threads,calls\n");
    CHECK_THROWS_AS(data::read_csv(bad_header), FormatError);

    std::istringstream bad_number(std::string(data::kCsvHeader) +
                                  "\n1,2,3,180,100,1,1,2,50,abc,0.5\n");
    CHECK_THROWS_WITH_AS(data::read_csv(bad_number), doctest::Contains("line 2"),
                         FormatError);
}
