#include <cstdint>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "meshrl/agents.hpp"
#include "meshrl/datagen.hpp"
#include "meshrl/errors.hpp"
#include "meshrl/harness.hpp"
#include "meshrl/mesh_sim.hpp"
#include "meshrl/surrogate.hpp"

namespace {

using namespace meshrl;

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

// Dataset profile for the model metadata: the explicit name when given,
// otherwise the unique built-in profile containing every record, otherwise
// empty (usable anywhere, checked nowhere).
std::string resolve_profile_tag(const std::string& given,
                                const std::vector<data::TraceRecord>& records) {
    if (!given.empty()) {
        data::profile_by_name(given);  // throws on unknown
        return given;
    }
    const auto in_range = [](double v, const data::FieldRange& r) {
        return v >= r.lo && v <= r.hi;
    };
    std::vector<std::string> candidates;
    for (const auto& p : data::builtin_profiles()) {
        bool ok = true;
        for (const auto& rec : records) {
            if (!in_range(rec.rules.max_pending_requests, p.max_pending_requests) ||
                !in_range(rec.rules.max_connections, p.max_connections) ||
                !in_range(rec.rules.max_req_per_conn, p.max_req_per_conn) ||
                !in_range(rec.rules.max_ejection_pct, p.max_ejection_pct) ||
                !in_range(rec.rules.consecutive_errors, p.consecutive_errors) ||
                !in_range(rec.load.threads, p.threads) ||
                !in_range(rec.load.calls, p.calls) ||
                rec.rules.ejection_time_s != p.ejection_time_s ||
                rec.rules.interval_s != p.interval_s) {
                ok = false;
                break;
            }
        }
        if (ok) candidates.push_back(p.name);
    }
    return candidates.size() == 1 ? candidates[0] : std::string{};
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Service-mesh resiliency tuning: simulator, surrogate and RL pipeline"};
    app.require_subcommand(1);

    // datagen
    auto* dg = app.add_subcommand("datagen", "Sample configurations and label them with the "
                                             "simulator");
    std::string dg_profile, dg_out, dg_config;
    int dg_size = 0;
    std::uint64_t dg_seed = 1;
    dg->add_option("--profile", dg_profile, "Sampling profile (s1..s5)")->required();
    dg->add_option("--size", dg_size, "Number of records")->required();
    dg->add_option("--seed", dg_seed, "Master seed");
    dg->add_option("--out", dg_out, "Output CSV path")->required();
    dg->add_option("--config", dg_config, "JSON config file (supplies the backend block)");

    // train-surrogate
    auto* ts = app.add_subcommand("train-surrogate", "Fit the dense-net service model on a "
                                                     "trace CSV");
    std::string ts_data, ts_out, ts_baseline, ts_profile;
    double ts_split = 0.8, ts_lr = 1e-5, ts_lambda = 0.0;
    int ts_epochs = 200, ts_batch = 64;
    std::uint64_t ts_seed = 1;
    ts->add_option("--data", ts_data, "Input CSV")->required();
    ts->add_option("--split", ts_split, "Training fraction");
    ts->add_option("--lr", ts_lr, "Learning rate");
    ts->add_option("--epochs", ts_epochs, "Training epochs");
    ts->add_option("--batch", ts_batch, "Mini-batch size");
    ts->add_option("--seed", ts_seed, "Master seed");
    ts->add_option("--out", ts_out, "Output model path")->required();
    ts->add_option("--baseline", ts_baseline, "Also fit a linear baseline (ridge)");
    ts->add_option("--lambda", ts_lambda, "Ridge regularization strength");
    ts->add_option("--profile", ts_profile,
                   "Profile name recorded in the model (inferred when omitted)");

    // train-agent
    auto* ta = app.add_subcommand("train-agent", "Train agents against the surrogate (or the "
                                                 "simulator) and write a run file");
    std::string ta_paradigm, ta_surrogate, ta_profile, ta_out, ta_config, ta_rule;
    int ta_epochs = 0, ta_interactions = 0, ta_repeats = 0, ta_services = 0;
    std::uint64_t ta_seed = 0;
    double ta_beta = 0.0;
    bool ta_desk = false, ta_aux = false, ta_oracle = false;
    ta->add_option("--paradigm", ta_paradigm,
                   "single-thread|single-call|independent|thread-call|call-thread|"
                   "collab-call|collab-thread|collab-both");
    ta->add_option("--surrogate", ta_surrogate, "Model file(s), comma-separated");
    ta->add_option("--profile", ta_profile, "Profile name(s), comma-separated");
    ta->add_option("--services", ta_services, "Service count for collaborative paradigms");
    ta->add_option("--epochs", ta_epochs, "Training epochs");
    ta->add_option("--interactions", ta_interactions, "Rounds per epoch");
    ta->add_option("--repeats", ta_repeats, "Independent repeats");
    ta->add_option("--seed", ta_seed, "Master seed");
    ta->add_option("--beta", ta_beta, "Fleet-average reward weight");
    ta->add_flag("--desk-scale", ta_desk, "Preset: 60 epochs x 200 interactions");
    ta->add_option("--update-rule", ta_rule, "qreg|reinforce");
    ta->add_flag("--snet-aux", ta_aux, "Auxiliary next-state head on the shared block");
    ta->add_flag("--oracle", ta_oracle, "Interact with the simulator directly");
    ta->add_option("--config", ta_config, "JSON config file (flags override its values)");
    ta->add_option("--out", ta_out, "Output run file")->required();

    // validate
    auto* va = app.add_subcommand("validate", "Replay each repeat's best epoch through the "
                                              "simulator and record validated ratios");
    std::string va_run, va_config;
    std::uint64_t va_seed = 1;
    va->add_option("--run", va_run, "Run file from train-agent")->required();
    va->add_option("--seed", va_seed, "Replay seed (ignored by oracle-mode runs)");
    va->add_option("--config", va_config, "JSON config overriding the run's embedded config");

    // report
    auto* rp = app.add_subcommand("report", "Emit summary.json and per-epoch CSV curves");
    std::string rp_run, rp_out;
    rp->add_option("--run", rp_run, "Run file")->required();
    rp->add_option("--out", rp_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (dg->parsed()) {
        sim::BackendConfig backend;
        if (!dg_config.empty())
            backend = harness::config_from_json_file(dg_config).backend;
        const auto& profile = data::profile_by_name(dg_profile);
        const auto records = data::generate_dataset(profile, dg_size, dg_seed, backend);
        data::write_csv(records, dg_out);
        std::cout << "wrote " << records.size() << " records to " << dg_out << "\n";
        return 0;
    }

    if (ts->parsed()) {
        if (!ts_baseline.empty() && ts_baseline != "ridge")
            throw ValidationError("train-surrogate: unknown baseline '" + ts_baseline + "'");
        const auto records = data::read_csv(ts_data);
        const std::string tag = resolve_profile_tag(ts_profile, records);
        auto [train, test] = data::split_dataset(records, ts_split, ts_seed);
        surrogate::TrainHyper hyper;
        hyper.learning_rate = ts_lr;
        hyper.epochs = ts_epochs;
        hyper.batch_size = ts_batch;
        hyper.seed = ts_seed;
        const auto result = surrogate::train_surrogate(train, test, hyper, tag);
        surrogate::save_model(result.model, ts_out);
        std::cout << "model: " << ts_out << (tag.empty() ? "" : " (profile " + tag + ")")
                  << "\n";
        std::cout << "best epoch " << result.curves.best_epoch << ", test mse "
                  << result.curves.best_test_mse << "\n";
        if (ts_baseline == "ridge") {
            const auto ridge = surrogate::ridge_fit(train, ts_lambda);
            const double ridge_mse = surrogate::evaluate_mse(
                [&](const std::array<double, 9>& in) { return surrogate::ridge_predict(ridge, in); },
                test, result.model.scaler);
            std::cout << "ridge(lambda=" << ts_lambda << ") test mse " << ridge_mse << "\n";
        }
        return 0;
    }

    if (ta->parsed()) {
        harness::ExperimentConfig cfg;
        if (!ta_config.empty()) cfg = harness::config_from_json_file(ta_config);
        if (ta->count("--paradigm")) cfg.paradigm = harness::paradigm_from_string(ta_paradigm);
        if (ta->count("--profile")) cfg.profiles = split_commas(ta_profile);
        if (ta->count("--services")) cfg.services = ta_services;
        if (ta->count("--epochs")) cfg.epochs = ta_epochs;
        if (ta->count("--interactions")) cfg.interactions = ta_interactions;
        if (ta->count("--repeats")) cfg.repeats = ta_repeats;
        if (ta->count("--seed")) cfg.seed = ta_seed;
        if (ta->count("--beta")) cfg.reward.beta = ta_beta;
        if (ta->count("--desk-scale")) cfg.desk_scale = true;
        if (ta->count("--update-rule"))
            cfg.update_rule = harness::update_rule_from_string(ta_rule);
        if (ta->count("--snet-aux")) cfg.snet_aux = true;
        if (ta->count("--oracle")) cfg.oracle = true;

        std::vector<surrogate::SurrogateModel> models;
        if (ta->count("--surrogate"))
            for (const auto& path : split_commas(ta_surrogate))
                models.push_back(surrogate::load_model(path));

        const auto result = harness::run_experiment(cfg, models);
        harness::save_run(result, ta_out);
        for (std::size_t r = 0; r < result.repeats.size(); ++r)
            std::cout << "repeat " << (r + 1) << ": sim ratio " << result.repeats[r].sim_ratio
                      << " (best epoch " << result.repeats[r].best_epoch << ")\n";
        std::cout << "mean sim ratio " << result.mean.sim_ratio << "\n";
        std::cout << "run file: " << ta_out << "\n";
        return 0;
    }

    if (va->parsed()) {
        auto result = harness::load_run(va_run);
        auto cfg = result.config;
        if (!va_config.empty()) cfg = harness::config_from_json_file(va_config);
        for (auto& rep : result.repeats)
            rep.val_ratio = harness::validate_best(rep, cfg, va_seed);
        result.mean = harness::aggregate_repeats(result.repeats);
        harness::save_run(result, va_run);
        for (std::size_t r = 0; r < result.repeats.size(); ++r)
            std::cout << "repeat " << (r + 1) << ": validated ratio "
                      << *result.repeats[r].val_ratio << "\n";
        std::cout << "mean validated ratio " << *result.mean.val_ratio << "\n";
        return 0;
    }

    if (rp->parsed()) {
        const auto result = harness::load_run(rp_run);
        harness::emit_report(result, rp_out);
        std::cout << "report written to " << rp_out << " (summary.json, mean.csv, "
                  << result.repeats.size() << " repeat curves)\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const meshrl::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const meshrl::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const meshrl::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
