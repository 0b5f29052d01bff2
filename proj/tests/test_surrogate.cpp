#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "meshrl/datagen.hpp"
#include "meshrl/errors.hpp"
#include "meshrl/surrogate.hpp"

using namespace meshrl;
using data::TraceRecord;
using sim::LoadField;

namespace {

const std::vector<double> kRules7{2.0, 3.0, 4.0, 180.0, 100.0, 1.0, 5.0};

// Model whose net is all zeros, with an identity scaler except where a test
// overrides it; predict() then returns exactly the output means.
surrogate::SurrogateModel zero_model() {
    surrogate::SurrogateModel m;
    m.net.layer_dims = surrogate::kNetDims;
    for (std::size_t l = 0; l + 1 < surrogate::kNetDims.size(); ++l) {
        m.net.weights.emplace_back(
            static_cast<std::size_t>(surrogate::kNetDims[l + 1]),
            static_cast<std::size_t>(surrogate::kNetDims[l]));
        m.net.biases.emplace_back(static_cast<std::size_t>(surrogate::kNetDims[l + 1]), 0.0);
    }
    m.scaler.in_mean.fill(0.0);
    m.scaler.in_std.fill(1.0);
    m.scaler.out_mean = {50.0, 0.25};
    m.scaler.out_std = {10.0, 0.1};
    m.profile = "s1";
    return m;
}

// Every feature varies (a constant column standardizes to zero and makes the
// unregularized normal equations singular); targets are an exact linear map.
std::vector<TraceRecord> linear_records(int n, std::uint64_t seed) {
    rng::Engine gen(seed);
    std::vector<TraceRecord> recs(static_cast<std::size_t>(n));
    for (auto& r : recs) {
        r.rules.max_pending_requests = static_cast<int>(rng::uniform_int(gen, 0, 15));
        r.rules.max_connections = static_cast<int>(rng::uniform_int(gen, 1, 10));
        r.rules.max_req_per_conn = static_cast<int>(rng::uniform_int(gen, 1, 12));
        r.rules.ejection_time_s = 60.0 + 240.0 * rng::uniform(gen);
        r.rules.max_ejection_pct = static_cast<double>(rng::uniform_int(gen, 1, 100));
        r.rules.interval_s = 0.5 + 1.5 * rng::uniform(gen);
        r.rules.consecutive_errors = static_cast<int>(rng::uniform_int(gen, 1, 10));
        r.load.threads = static_cast<int>(rng::uniform_int(gen, 1, 12));
        r.load.calls = r.load.threads + static_cast<int>(rng::uniform_int(gen, 0, 488));
        const auto in = r.inputs();
        r.qps = 3.0 + 2.0 * in[7] - 0.25 * in[8] + 0.5 * in[0];
        r.p503 = 0.1 + 0.01 * in[1] - 0.003 * in[6];
    }
    return recs;
}

}  // namespace

TEST_CASE("concat_input: canonical slots regardless of state/action split") {
    // 8-dim state carrying calls, plus a thread action.
    std::vector<double> state8 = kRules7;
    state8.push_back(435.0);
    const std::array<std::pair<LoadField, double>, 1> thread_act{{{LoadField::Threads, 3.0}}};
    const auto a = surrogate::concat_input(state8, LoadField::Calls, thread_act);
    for (int j = 0; j < 7; ++j)
        CHECK(a[static_cast<std::size_t>(j)] == kRules7[static_cast<std::size_t>(j)]);
    CHECK(a[7] == 3.0);    // threads slot
    CHECK(a[8] == 435.0);  // calls slot

    // 7-dim rules plus two actions, order of the action list irrelevant.
    const std::array<std::pair<LoadField, double>, 2> both{
        {{LoadField::Calls, 200.0}, {LoadField::Threads, 6.0}}};
    const auto b = surrogate::concat_input(kRules7, std::nullopt, both);
    CHECK(b[7] == 6.0);
    CHECK(b[8] == 200.0);

    // Dependent chain: {rules; first action} is an 8-dim state, then the
    // second action completes the nine slots.
    std::vector<double> chained = kRules7;
    chained.push_back(6.0);  // thread action taken first
    const std::array<std::pair<LoadField, double>, 1> call_act{{{LoadField::Calls, 200.0}}};
    const auto c = surrogate::concat_input(chained, LoadField::Threads, call_act);
    CHECK(c == b);
}

TEST_CASE("concat_input: duplicate or missing slots are rejected") {
    std::vector<double> state8 = kRules7;
    state8.push_back(435.0);
    const std::array<std::pair<LoadField, double>, 1> call_act{{{LoadField::Calls, 100.0}}};
    CHECK_THROWS_AS(surrogate::concat_input(state8, LoadField::Calls, call_act),
                    ValidationError);

    const std::array<std::pair<LoadField, double>, 1> thread_act{{{LoadField::Threads, 2.0}}};
    CHECK_THROWS_AS(surrogate::concat_input(kRules7, std::nullopt, thread_act),
                    ValidationError);  // only 8 slots filled

    const std::array<std::pair<LoadField, double>, 2> twice{
        {{LoadField::Threads, 2.0}, {LoadField::Threads, 3.0}}};
    CHECK_THROWS_AS(surrogate::concat_input(state8, LoadField::Calls, twice),
                    ValidationError);
}

TEST_CASE("model_input matches the dataset feature order") {
    const auto& s1 = data::profile_by_name("s1");
    rng::Engine gen(4);
    const auto [rules, load] = data::sample_config(s1, gen);
    TraceRecord rec;
    rec.rules = rules;
    rec.load = load;
    CHECK(surrogate::model_input(rules, load) == rec.inputs());
}

TEST_CASE("predict: zero net returns the unscaled output bias; clamps apply") {
    auto m = zero_model();
    const auto in = surrogate::model_input(sim::TrafficRules{2, 3, 4, 180.0, 100.0, 1.0, 5},
                                           sim::LoadAction{3, 435});
    auto [qps, p503] = surrogate::predict(m, in);
    CHECK(qps == 50.0);
    CHECK(p503 == 0.25);

    m.scaler.out_mean = {-5.0, 1.3};  // raw predictions outside the valid ranges
    auto [q2, p2] = surrogate::predict(m, in);
    CHECK(q2 == 0.0);  // qps clamped to >= 0
    CHECK(p2 == 1.0);  // p503 clamped into [0,1]

    auto bad = in;
    bad[3] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(surrogate::predict(m, bad), ValidationError);
}

TEST_CASE("train_surrogate: constant targets are learned to numerical noise") {
    const auto& s2 = data::profile_by_name("s2");
    rng::Engine gen(13);
    std::vector<TraceRecord> recs(48);
    for (auto& r : recs) {
        const auto [rules, load] = data::sample_config(s2, gen);
        r.rules = rules;
        r.load = load;
        r.qps = 120.0;
        r.p503 = 0.4;
    }
    surrogate::TrainHyper h;
    h.learning_rate = 1e-3;
    h.epochs = 300;
    h.batch_size = 16;
    h.seed = 2;
    const auto res = surrogate::train_surrogate(
        std::span<const TraceRecord>(recs.data(), 40),
        std::span<const TraceRecord>(recs.data() + 40, 8), h, "s2");
    // Adam hovers around the optimum at roughly step-size amplitude, so the
    // floor is ~lr^2; 1e-4 leaves two orders of headroom.
    CHECK(res.curves.best_test_mse < 1e-4);
    CHECK(res.curves.train_mse.size() == 300);
    CHECK(res.curves.test_mse.size() == 300);
}

TEST_CASE("train_surrogate: determinism and best-snapshot retention") {
    const auto& s1 = data::profile_by_name("s1");
    sim::BackendConfig cfg;
    const auto recs = data::generate_dataset(s1, 120, 3, cfg);
    auto [train, test] = data::split_dataset(recs, 0.8, 3);

    surrogate::TrainHyper h;
    h.learning_rate = 1e-4;
    h.epochs = 8;
    h.batch_size = 32;
    h.seed = 5;
    const auto a = surrogate::train_surrogate(train, test, h, "s1");
    const auto b = surrogate::train_surrogate(train, test, h, "s1");
    CHECK(a.curves.train_mse == b.curves.train_mse);
    CHECK(a.curves.test_mse == b.curves.test_mse);

    CHECK(a.curves.best_epoch >= 0);
    CHECK(a.curves.best_test_mse <= a.curves.test_mse.back());
    CHECK(a.curves.best_test_mse ==
          a.curves.test_mse[static_cast<std::size_t>(a.curves.best_epoch)]);
}

TEST_CASE("train_surrogate: divergence names the epoch") {
    const auto& s1 = data::profile_by_name("s1");
    sim::BackendConfig cfg;
    const auto recs = data::generate_dataset(s1, 40, 3, cfg);
    auto [train, test] = data::split_dataset(recs, 0.8, 3);
    surrogate::TrainHyper h;
    // Large enough that the first step sends weights to ~1e155 and the next
    // forward pass overflows to infinity. (A merely huge rate, e.g. 1e12,
    // kills every rectifier instead and the loss plateaus while finite.)
    h.learning_rate = 1e155;
    h.epochs = 10;
    h.batch_size = 8;
    h.seed = 1;
    CHECK_THROWS_WITH_AS(surrogate::train_surrogate(train, test, h, "s1"),
                         doctest::Contains("epoch"), NumericError);
}

TEST_CASE("ridge: ordinary least squares recovers an exact linear map") {
    const auto recs = linear_records(200, 6);
    const auto model = surrogate::ridge_fit(recs, 0.0);
    for (const auto& r : recs) {
        const auto [q, p] = surrogate::ridge_predict(model, r.inputs());
        CHECK(q == doctest::Approx(r.qps).epsilon(1e-8));
        CHECK(p == doctest::Approx(r.p503).epsilon(1e-8));
    }
}

TEST_CASE("ridge: infinite regularization collapses to the training mean") {
    const auto recs = linear_records(100, 7);
    double mq = 0.0, mp = 0.0;
    for (const auto& r : recs) {
        mq += r.qps / static_cast<double>(recs.size());
        mp += r.p503 / static_cast<double>(recs.size());
    }
    const auto model = surrogate::ridge_fit(recs, 1e12);
    const auto [q, p] = surrogate::ridge_predict(model, recs[3].inputs());
    CHECK(q == doctest::Approx(mq).epsilon(1e-6));
    CHECK(p == doctest::Approx(mp).epsilon(1e-6));
}

TEST_CASE("ridge: singular unregularized systems point at lambda") {
    std::vector<TraceRecord> recs(12);
    for (auto& r : recs) {
        r.rules = sim::TrafficRules{2, 3, 4, 180.0, 100.0, 1.0, 5};
        r.load = sim::LoadAction{3, 400};
        r.qps = 10.0;
        r.p503 = 0.5;
    }
    CHECK_THROWS_WITH_AS(surrogate::ridge_fit(recs, 0.0), doctest::Contains("lambda"),
                         NumericError);

    CHECK_THROWS_AS(
        surrogate::ridge_fit(std::span<const TraceRecord>(recs.data(), 1), 0.0),
        ValidationError);
}

TEST_CASE("evaluate_mse: zero for a perfect predictor, one for the mean") {
    const auto& s2 = data::profile_by_name("s2");
    sim::BackendConfig cfg;
    const auto recs = data::generate_dataset(s2, 150, 19, cfg);
    const auto sc = data::fit_scaler(recs);

    std::vector<TraceRecord> constant = recs;
    for (auto& r : constant) {
        r.qps = 77.0;
        r.p503 = 0.3;
    }
    const auto csc = data::fit_scaler(constant);
    const double perfect = surrogate::evaluate_mse(
        [](const std::array<double, 9>&) { return std::pair<double, double>{77.0, 0.3}; },
        constant, csc);
    CHECK(perfect == 0.0);

    const double mean_mse = surrogate::evaluate_mse(
        [&](const std::array<double, 9>&) {
            return std::pair<double, double>{sc.out_mean[0], sc.out_mean[1]};
        },
        recs, sc);
    CHECK(mean_mse == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("model files: round trip preserves predictions exactly") {
    const auto& s3 = data::profile_by_name("s3");
    sim::BackendConfig cfg;
    const auto recs = data::generate_dataset(s3, 80, 23, cfg);
    auto [train, test] = data::split_dataset(recs, 0.8, 23);
    surrogate::TrainHyper h;
    h.learning_rate = 1e-4;
    h.epochs = 3;
    h.batch_size = 16;
    h.seed = 9;
    const auto res = surrogate::train_surrogate(train, test, h, "s3");

    const auto dir = std::filesystem::temp_directory_path();
    const auto path = (dir / "meshrl_surrogate_roundtrip.json").string();
    surrogate::save_model(res.model, path);
    const auto loaded = surrogate::load_model(path);
    CHECK(loaded.profile == "s3");
    for (const auto& r : test) {
        const auto a = surrogate::predict(res.model, r.inputs());
        const auto b = surrogate::predict(loaded, r.inputs());
        CHECK(a.first == b.first);
        CHECK(a.second == b.second);
    }
    std::filesystem::remove(path);
}

TEST_CASE("model files: missing scaler or truncated document is a format error") {
    const auto dir = std::filesystem::temp_directory_path();
    const auto bare = (dir / "meshrl_surrogate_noscaler.json").string();
    const auto net = nn::net_init(surrogate::kNetDims, 2);
    nn::save_net(net, bare);  // weight file without the scaler block
    CHECK_THROWS_WITH_AS(surrogate::load_model(bare), doctest::Contains("scaler"),
                         FormatError);
    std::filesystem::remove(bare);

    const auto full = (dir / "meshrl_surrogate_full.json").string();
    const auto trunc = (dir / "meshrl_surrogate_trunc.json").string();
    surrogate::SurrogateModel m = zero_model();
    surrogate::save_model(m, full);
    std::ifstream in(full);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(trunc);
    out << text.substr(0, text.size() / 3);
    out.close();
    CHECK_THROWS_AS(surrogate::load_model(trunc), FormatError);
    std::filesystem::remove(full);
    std::filesystem::remove(trunc);
}

TEST_SUITE("long") {

// Frozen reference for the full-size training recipe; regenerate by running
// this configuration once and recording curves.best_test_mse. The band
// absorbs cross-platform FP contraction differences.
constexpr double kFrozenBestTestMse = 0.100373;

TEST_CASE("surrogate regression: full-size training beats ridge and stays in band") {
    const auto& s1 = data::profile_by_name("s1");
    sim::BackendConfig cfg;
    const auto recs = data::generate_dataset(s1, 4000, 7, cfg);
    auto [train, test] = data::split_dataset(recs, 0.8, 7);

    surrogate::TrainHyper h;  // defaults: lr 1e-5, 200 epochs, batch 64
    const auto res = surrogate::train_surrogate(train, test, h, "s1");

    CHECK(res.curves.best_test_mse > 0.8 * kFrozenBestTestMse);
    CHECK(res.curves.best_test_mse < 1.2 * kFrozenBestTestMse);

    // Linear baseline loses on the same split.
    const auto ridge = surrogate::ridge_fit(train, 1e-3);
    const double ridge_mse = surrogate::evaluate_mse(
        [&](const std::array<double, 9>& in) { return surrogate::ridge_predict(ridge, in); },
        test, res.model.scaler);
    CHECK(ridge_mse > res.curves.best_test_mse);

    // Held-out error of the returned snapshot is consistent with the curve
    // (clamping can only shrink it), and clamping itself stays rare.
    const double eval = surrogate::evaluate_mse(
        [&](const std::array<double, 9>& in) { return surrogate::predict(res.model, in); },
        test, res.model.scaler);
    CHECK(eval <= res.curves.best_test_mse + 1e-9);

    // Floor clamps are expected on both outputs: true failure rates hug
    // zero, and drain bursts stretch the qps scale so far (median ~1e2,
    // max ~4e4) that the zero floor lies only ~0.02 standardized units
    // below the smallest label.  They must stay a bounded minority, and
    // ceiling clamps on p503 — far from the label mass — must stay rare.
    int q_floor = 0, p_floor = 0, p_ceiling = 0;
    for (const auto& r : test) {
        const auto [q, p] = surrogate::predict(res.model, r.inputs());
        if (q == 0.0) ++q_floor;
        if (p == 0.0) ++p_floor;
        if (p == 1.0) ++p_ceiling;
    }
    CHECK(q_floor < static_cast<int>(test.size()) / 4);
    CHECK(p_ceiling <= static_cast<int>(test.size()) / 20);
    CHECK(p_floor < static_cast<int>(test.size()) / 2);
}

TEST_CASE(
    "surrogate regression: the network beats ridge where the response is "
    "nonlinear and stays competitive everywhere") {
    for (const auto* name : {"s1", "s2", "s3", "s4", "s5"}) {
        const std::string profile_name = name;
        CAPTURE(profile_name);
        const auto& prof = data::profile_by_name(name);
        sim::BackendConfig cfg;
        const auto recs = data::generate_dataset(prof, 1200, 29, cfg);
        auto [train, test] = data::split_dataset(recs, 0.8, 29);

        surrogate::TrainHyper h;
        h.learning_rate = 1e-4;
        h.epochs = 60;
        h.batch_size = 64;
        h.seed = 29;
        const auto res = surrogate::train_surrogate(train, test, h, name);

        const auto ridge = surrogate::ridge_fit(train, 1e-3);
        const double ridge_mse = surrogate::evaluate_mse(
            [&](const std::array<double, 9>& in) {
                return surrogate::ridge_predict(ridge, in);
            },
            test, res.model.scaler);
        // s5's throughput/failure response is nearly linear at this scale:
        // across 1.2k-3k rows the two fits land within +-2% of each other and
        // the best test epoch is always in the opening epochs, so a strict
        // ordering there would pin a coin flip.  The other four profiles have
        // real curvature and the network must win outright.
        if (profile_name == "s5") {
            CHECK(res.curves.best_test_mse < ridge_mse * 1.05);
        } else {
            CHECK(res.curves.best_test_mse < ridge_mse);
        }
    }
}

}  // TEST_SUITE("long")
