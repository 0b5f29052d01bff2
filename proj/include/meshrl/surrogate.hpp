#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meshrl/datagen.hpp"
#include "meshrl/errors.hpp"
#include "meshrl/mesh_sim.hpp"
#include "meshrl/neural.hpp"

// Learned stand-in for the simulator: a fixed-shape dense net mapping the
// nine canonical features to (qps, p503), trained on standardized traces,
// plus a linear ridge baseline for calibration.

namespace meshrl::surrogate {

inline const std::vector<int> kNetDims = {9, 512, 512, 512, 2};

struct SurrogateModel {
    nn::DenseNet net;
    data::ScalerParams scaler;
    std::string profile;  // name of the dataset profile the model was fit on
};

// Canonical nine-feature slot order (the CSV column order): the seven rules
// first, then threads in slot 8 and calls in slot 9, regardless of which of
// the two arrived as state and which as action.
std::array<double, 9> concat_input(std::span<const double> state,
                                   std::optional<sim::LoadField> state_tail,
                                   std::span<const std::pair<sim::LoadField, double>> actions);

// Convenience assembly straight from typed values.
std::array<double, 9> model_input(const sim::TrafficRules& rules, const sim::LoadAction& load);

// scale -> forward -> unscale -> clamp (p503 into [0,1], qps to >= 0).
std::pair<double, double> predict(const SurrogateModel& model, const std::array<double, 9>& in);

struct TrainHyper {
    double learning_rate = 1e-5;
    int epochs = 200;
    int batch_size = 64;
    std::uint64_t seed = 1;
};

struct TrainCurves {
    std::vector<double> train_mse, test_mse;  // standardized, one entry per epoch
    int best_epoch = -1;
    double best_test_mse = 0.0;
};

struct TrainResult {
    SurrogateModel model;
    TrainCurves curves;
};

// Mini-batch Adam on standardized MSE. The returned model carries the
// parameters of the epoch with the lowest test MSE. Throws NumericError,
// reporting the epoch, if the loss stops being finite.
TrainResult train_surrogate(std::span<const data::TraceRecord> train,
                            std::span<const data::TraceRecord> test, const TrainHyper& hyper,
                            const std::string& profile = "");

// Linear baseline fit in standardized space by (X^T X + lambda I) beta =
// X^T Y with a centered intercept; coefficients are stored back in raw
// units. lambda = 0 is ordinary least squares and throws NumericError on a
// singular system.
struct RidgeModel {
    std::array<std::array<double, 2>, 9> coef{};  // coef[feature][output]
    std::array<double, 2> intercept{};
    double lambda = 0.0;
    data::ScalerParams scaler;
};

RidgeModel ridge_fit(std::span<const data::TraceRecord> train, double lambda);
std::pair<double, double> ridge_predict(const RidgeModel& model, const std::array<double, 9>& in);

// Mean over rows and both outputs of the squared standardized error of an
// arbitrary raw-unit predictor.
template <typename Fn>
double evaluate_mse(Fn&& predictor, std::span<const data::TraceRecord> test,
                    const data::ScalerParams& scaler) {
    if (test.empty()) throw ValidationError("evaluate_mse: test set is empty");
    double sum = 0.0;
    for (const auto& rec : test) {
        const auto [qps, p503] = predictor(rec.inputs());
        const double dq = (qps - rec.qps) / scaler.out_std[0];
        const double dp = (p503 - rec.p503) / scaler.out_std[1];
        sum += dq * dq + dp * dp;
    }
    return sum / (2.0 * static_cast<double>(test.size()));
}

// Weight-file round trip; the scaler block and profile name are required on
// load (a surrogate without its scaler cannot predict).
void save_model(const SurrogateModel& model, const std::string& path);
SurrogateModel load_model(const std::string& path);

}  // namespace meshrl::surrogate
