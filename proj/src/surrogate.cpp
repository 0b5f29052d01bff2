#include "meshrl/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "meshrl/rng.hpp"

namespace meshrl::surrogate {

namespace {

constexpr std::size_t kSlotThreads = 7;
constexpr std::size_t kSlotCalls = 8;

std::size_t slot_of(sim::LoadField f) {
    return f == sim::LoadField::Threads ? kSlotThreads : kSlotCalls;
}

// Standardized full-pass MSE, batched for throughput.
double eval_pass(const nn::DenseNet& net, const std::vector<std::array<double, 9>>& xs,
                 const std::vector<std::array<double, 2>>& ys) {
    constexpr std::size_t kChunk = 256;
    double sum = 0.0;
    for (std::size_t start = 0; start < xs.size(); start += kChunk) {
        const std::size_t b = std::min(kChunk, xs.size() - start);
        nn::Matrix x(9, b);
        for (std::size_t c = 0; c < b; ++c)
            for (std::size_t j = 0; j < 9; ++j) x(j, c) = xs[start + c][j];
        const nn::Matrix out = nn::forward_batch(net, x, nullptr);
        for (std::size_t c = 0; c < b; ++c) {
            const double dq = out(0, c) - ys[start + c][0];
            const double dp = out(1, c) - ys[start + c][1];
            sum += dq * dq + dp * dp;
        }
    }
    return sum / (2.0 * static_cast<double>(xs.size()));
}

}  // namespace

std::array<double, 9> concat_input(std::span<const double> state,
                                   std::optional<sim::LoadField> state_tail,
                                   std::span<const std::pair<sim::LoadField, double>> actions) {
    if (state.size() != 7 && state.size() != 8)
        throw ValidationError("concat_input: state must have 7 or 8 entries (got " +
                              std::to_string(state.size()) + ")");
    if (state.size() == 8 && !state_tail)
        throw ValidationError("concat_input: 8-entry state needs a state_tail tag");
    if (state.size() == 7 && state_tail)
        throw ValidationError("concat_input: state_tail given but state has no 8th entry");

    std::array<double, 9> out{};
    std::array<bool, 9> filled{};
    for (std::size_t i = 0; i < 7; ++i) {
        out[i] = state[i];
        filled[i] = true;
    }
    auto assign = [&](sim::LoadField f, double v) {
        const auto s = slot_of(f);
        if (filled[s])
            throw ValidationError(std::string("concat_input: ") +
                                  (f == sim::LoadField::Threads ? "threads" : "calls") +
                                  " assigned twice");
        out[s] = v;
        filled[s] = true;
    };
    if (state.size() == 8) assign(*state_tail, state[7]);
    for (const auto& [field, value] : actions) assign(field, value);
    if (!filled[kSlotThreads] || !filled[kSlotCalls])
        throw ValidationError("concat_input: threads and calls must both be assigned");
    return out;
}

std::array<double, 9> model_input(const sim::TrafficRules& rules, const sim::LoadAction& load) {
    data::TraceRecord rec;
    rec.rules = rules;
    rec.load = load;
    return rec.inputs();
}

std::pair<double, double> predict(const SurrogateModel& model, const std::array<double, 9>& in) {
    for (std::size_t j = 0; j < in.size(); ++j)
        if (!std::isfinite(in[j]))
            throw ValidationError("predict: non-finite input in slot " + std::to_string(j));
    const auto scaled = data::scale_inputs(model.scaler, in);
    const auto out =
        nn::forward(model.net, std::vector<double>(scaled.begin(), scaled.end()), nullptr);
    const auto [qps, p503] = data::unscale_outputs(model.scaler, {out[0], out[1]});
    return {std::max(0.0, qps), std::clamp(p503, 0.0, 1.0)};
}

TrainResult train_surrogate(std::span<const data::TraceRecord> train,
                            std::span<const data::TraceRecord> test, const TrainHyper& hyper,
                            const std::string& profile) {
    if (train.empty() || test.empty())
        throw ValidationError("train_surrogate: train and test must be non-empty");
    if (!(hyper.learning_rate > 0.0) || !std::isfinite(hyper.learning_rate))
        throw ValidationError("train_surrogate: learning_rate must be finite and > 0");
    if (hyper.epochs < 1) throw ValidationError("train_surrogate: epochs must be >= 1");
    if (hyper.batch_size < 1) throw ValidationError("train_surrogate: batch_size must be >= 1");

    const data::ScalerParams scaler = data::fit_scaler(train);
    auto standardize = [&](std::span<const data::TraceRecord> recs,
                           std::vector<std::array<double, 9>>& xs,
                           std::vector<std::array<double, 2>>& ys) {
        xs.reserve(recs.size());
        ys.reserve(recs.size());
        for (const auto& rec : recs) {
            xs.push_back(data::scale_inputs(scaler, rec.inputs()));
            ys.push_back(data::scale_outputs(scaler, rec.qps, rec.p503));
        }
    };
    std::vector<std::array<double, 9>> xtr, xte;
    std::vector<std::array<double, 2>> ytr, yte;
    standardize(train, xtr, ytr);
    standardize(test, xte, yte);

    nn::DenseNet net = nn::net_init(kNetDims, rng::derive_seed(hyper.seed, 1));
    nn::AdamState adam = nn::adam_init(net, hyper.learning_rate);
    rng::Engine shuffle_gen(rng::derive_seed(hyper.seed, 2));

    std::vector<std::size_t> order(xtr.size());
    std::iota(order.begin(), order.end(), 0);
    const auto bsz = static_cast<std::size_t>(hyper.batch_size);

    TrainCurves curves;
    nn::DenseNet best = net;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            const auto j =
                static_cast<std::size_t>(rng::uniform_int(shuffle_gen, 0, static_cast<long>(i)));
            std::swap(order[i], order[j]);
        }
        try {
            for (std::size_t start = 0; start < order.size(); start += bsz) {
                const std::size_t b = std::min(bsz, order.size() - start);
                nn::Matrix x(9, b);
                for (std::size_t c = 0; c < b; ++c)
                    for (std::size_t j = 0; j < 9; ++j) x(j, c) = xtr[order[start + c]][j];
                nn::BatchCache cache;
                const nn::Matrix out = nn::forward_batch(net, x, &cache);
                // d(mean sample MSE)/d(out): 2 (pred - y) / (outputs * batch)
                nn::Matrix dz(2, b);
                const double inv = 1.0 / (2.0 * static_cast<double>(b));
                for (std::size_t c = 0; c < b; ++c) {
                    dz(0, c) = 2.0 * (out(0, c) - ytr[order[start + c]][0]) * inv;
                    dz(1, c) = 2.0 * (out(1, c) - ytr[order[start + c]][1]) * inv;
                }
                const nn::Grads grads = nn::backward_batch(net, cache, dz);
                nn::adam_step(net, grads, adam);
            }
        } catch (const NumericError& e) {
            throw NumericError("train_surrogate: diverged at epoch " + std::to_string(epoch) +
                               " (" + e.what() + ")");
        }
        const double train_mse = eval_pass(net, xtr, ytr);
        const double test_mse = eval_pass(net, xte, yte);
        if (!std::isfinite(train_mse) || !std::isfinite(test_mse))
            throw NumericError("train_surrogate: loss became non-finite at epoch " +
                               std::to_string(epoch));
        curves.train_mse.push_back(train_mse);
        curves.test_mse.push_back(test_mse);
        if (curves.best_epoch < 0 || test_mse < curves.best_test_mse) {
            curves.best_epoch = epoch;
            curves.best_test_mse = test_mse;
            best = net;
        }
    }

    TrainResult result;
    result.model.net = std::move(best);
    result.model.scaler = scaler;
    result.model.profile = profile;
    result.curves = std::move(curves);
    return result;
}

RidgeModel ridge_fit(std::span<const data::TraceRecord> train, double lambda) {
    if (train.size() < 2) throw ValidationError("ridge_fit: need at least 2 training rows");
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw ValidationError("ridge_fit: lambda must be finite and >= 0");

    const data::ScalerParams scaler = data::fit_scaler(train);
    const double n = static_cast<double>(train.size());

    std::array<double, 9> xbar{};
    std::array<double, 2> ybar{};
    std::vector<std::array<double, 9>> xs;
    std::vector<std::array<double, 2>> ys;
    xs.reserve(train.size());
    ys.reserve(train.size());
    for (const auto& rec : train) {
        xs.push_back(data::scale_inputs(scaler, rec.inputs()));
        ys.push_back(data::scale_outputs(scaler, rec.qps, rec.p503));
        for (std::size_t j = 0; j < 9; ++j) xbar[j] += xs.back()[j];
        for (std::size_t k = 0; k < 2; ++k) ybar[k] += ys.back()[k];
    }
    for (auto& v : xbar) v /= n;
    for (auto& v : ybar) v /= n;

    double g[9][9] = {};
    double r[9][2] = {};
    for (std::size_t row = 0; row < xs.size(); ++row) {
        std::array<double, 9> xc;
        for (std::size_t j = 0; j < 9; ++j) xc[j] = xs[row][j] - xbar[j];
        for (std::size_t i = 0; i < 9; ++i) {
            for (std::size_t j = 0; j < 9; ++j) g[i][j] += xc[i] * xc[j];
            r[i][0] += xc[i] * (ys[row][0] - ybar[0]);
            r[i][1] += xc[i] * (ys[row][1] - ybar[1]);
        }
    }
    double scale_ref = 0.0;
    for (std::size_t i = 0; i < 9; ++i) {
        g[i][i] += lambda;
        for (std::size_t j = 0; j < 9; ++j) scale_ref = std::max(scale_ref, std::fabs(g[i][j]));
    }

    // Gaussian elimination with partial pivoting, both right-hand sides at once.
    double beta[9][2];
    for (std::size_t i = 0; i < 9; ++i) {
        beta[i][0] = r[i][0];
        beta[i][1] = r[i][1];
    }
    for (std::size_t col = 0; col < 9; ++col) {
        std::size_t piv = col;
        for (std::size_t i = col + 1; i < 9; ++i)
            if (std::fabs(g[i][col]) > std::fabs(g[piv][col])) piv = i;
        if (std::fabs(g[piv][col]) <= 1e-12 * scale_ref)
            throw NumericError(
                "ridge_fit: normal equations are singular; retry with lambda > 0");
        if (piv != col) {
            for (std::size_t j = 0; j < 9; ++j) std::swap(g[col][j], g[piv][j]);
            std::swap(beta[col][0], beta[piv][0]);
            std::swap(beta[col][1], beta[piv][1]);
        }
        for (std::size_t i = col + 1; i < 9; ++i) {
            const double f = g[i][col] / g[col][col];
            for (std::size_t j = col; j < 9; ++j) g[i][j] -= f * g[col][j];
            beta[i][0] -= f * beta[col][0];
            beta[i][1] -= f * beta[col][1];
        }
    }
    for (std::size_t col = 9; col-- > 0;) {
        for (std::size_t k = 0; k < 2; ++k) {
            double s = beta[col][k];
            for (std::size_t j = col + 1; j < 9; ++j) s -= g[col][j] * beta[j][k];
            beta[col][k] = s / g[col][col];
        }
    }

    RidgeModel model;
    model.lambda = lambda;
    model.scaler = scaler;
    for (std::size_t k = 0; k < 2; ++k) {
        double b_std = ybar[k];
        for (std::size_t j = 0; j < 9; ++j) b_std -= beta[j][k] * xbar[j];
        double raw_intercept = scaler.out_mean[k] + scaler.out_std[k] * b_std;
        for (std::size_t j = 0; j < 9; ++j) {
            model.coef[j][k] = beta[j][k] * scaler.out_std[k] / scaler.in_std[j];
            raw_intercept -= model.coef[j][k] * scaler.in_mean[j];
        }
        model.intercept[k] = raw_intercept;
    }
    return model;
}

std::pair<double, double> ridge_predict(const RidgeModel& model,
                                        const std::array<double, 9>& in) {
    double q = model.intercept[0], p = model.intercept[1];
    for (std::size_t j = 0; j < 9; ++j) {
        q += model.coef[j][0] * in[j];
        p += model.coef[j][1] * in[j];
    }
    return {q, p};
}

void save_model(const SurrogateModel& model, const std::string& path) {
    if (model.net.layer_dims != kNetDims)
        throw ValidationError("save_model: surrogate shape must be [9,512,512,512,2]");
    nn::ScalerBlock block;
    block.in_mean.assign(model.scaler.in_mean.begin(), model.scaler.in_mean.end());
    block.in_std.assign(model.scaler.in_std.begin(), model.scaler.in_std.end());
    block.out_mean.assign(model.scaler.out_mean.begin(), model.scaler.out_mean.end());
    block.out_std.assign(model.scaler.out_std.begin(), model.scaler.out_std.end());
    nn::save_net(model.net, path, block, model.profile);
}

SurrogateModel load_model(const std::string& path) {
    nn::LoadedNet loaded = nn::load_net(path);
    if (loaded.net.layer_dims != kNetDims)
        throw FormatError("model file '" + path + "': surrogate shape must be [9,512,512,512,2]");
    if (!loaded.scaler)
        throw FormatError("model file '" + path + "': missing required scaler block");
    const auto& s = *loaded.scaler;
    if (s.in_mean.size() != 9 || s.in_std.size() != 9 || s.out_mean.size() != 2 ||
        s.out_std.size() != 2)
        throw FormatError("model file '" + path + "': scaler block has the wrong shape");

    SurrogateModel model;
    model.net = std::move(loaded.net);
    std::copy(s.in_mean.begin(), s.in_mean.end(), model.scaler.in_mean.begin());
    std::copy(s.in_std.begin(), s.in_std.end(), model.scaler.in_std.begin());
    std::copy(s.out_mean.begin(), s.out_mean.end(), model.scaler.out_mean.begin());
    std::copy(s.out_std.begin(), s.out_std.end(), model.scaler.out_std.begin());
    model.profile = std::move(loaded.profile);
    return model;
}

}  // namespace meshrl::surrogate
