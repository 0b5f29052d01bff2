#include "meshrl/neural.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include <json.hpp>

#include "meshrl/errors.hpp"
#include "meshrl/rng.hpp"

namespace meshrl::nn {

namespace {

using json = nlohmann::json;

void check_dims(const std::vector<int>& dims) {
    if (dims.size() < 2)
        throw ValidationError("layer_dims needs at least an input and an output layer");
    for (const int d : dims)
        if (d < 1)
            throw ValidationError("layer_dims entries must be >= 1 (got " + std::to_string(d) +
                                  ")");
}

// C = A * B. Row-major i-k-j order keeps the inner loop contiguous in both
// B and C.
void gemm_nn(Matrix& c, const Matrix& a, const Matrix& b) {
    const std::size_t m = a.rows, k = a.cols, n = b.cols;
    c.rows = m;
    c.cols = n;
    c.data.assign(m * n, 0.0);
    double* __restrict cd = c.data.data();
    const double* __restrict ad = a.data.data();
    const double* __restrict bd = b.data.data();
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = cd + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ad[i * k + kk];
            const double* brow = bd + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C = A^T * B with A (k x m), B (k x n). The k-i-j order again touches every
// row contiguously.
Matrix gemm_tn(const Matrix& a, const Matrix& b) {
    const std::size_t k = a.rows, m = a.cols, n = b.cols;
    Matrix c(m, n);
    double* __restrict cd = c.data.data();
    const double* __restrict ad = a.data.data();
    const double* __restrict bd = b.data.data();
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* arow = ad + kk * m;
        const double* brow = bd + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = cd + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

bool all_finite(const std::vector<double>& v) {
    for (const double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

std::size_t DenseNet::n_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
        n += weights[l].data.size() + biases[l].size();
    return n;
}

void Grads::add(const Grads& other) {
    for (std::size_t l = 0; l < d_weights.size(); ++l) {
        const auto& src = other.d_weights[l].data;
        auto& dst = d_weights[l].data;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        for (std::size_t i = 0; i < d_biases[l].size(); ++i) d_biases[l][i] += other.d_biases[l][i];
    }
}

DenseNet net_init(const std::vector<int>& layer_dims, std::uint64_t seed) {
    check_dims(layer_dims);
    DenseNet net;
    net.layer_dims = layer_dims;
    rng::Engine gen(seed);
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        const auto fan_in = static_cast<std::size_t>(layer_dims[l]);
        const auto fan_out = static_cast<std::size_t>(layer_dims[l + 1]);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Matrix w(fan_out, fan_in);
        for (auto& x : w.data) x = (2.0 * rng::uniform(gen) - 1.0) * bound;
        net.weights.push_back(std::move(w));
        net.biases.emplace_back(fan_out, 0.0);
    }
    return net;
}

std::vector<double> forward(const DenseNet& net, const std::vector<double>& x, Cache* cache) {
    if (x.size() != static_cast<std::size_t>(net.layer_dims.front()))
        throw ValidationError("forward: input size " + std::to_string(x.size()) +
                              " does not match layer_dims[0]=" +
                              std::to_string(net.layer_dims.front()));
    if (cache != nullptr) {
        cache->acts.clear();
        cache->acts.push_back(x);
    }
    std::vector<double> a = x;
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        const Matrix& w = net.weights[l];
        std::vector<double> z = net.biases[l];
        const double* __restrict av = a.data();
        for (std::size_t i = 0; i < w.rows; ++i) {
            const double* __restrict row = w.data.data() + i * w.cols;
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            std::size_t j = 0;
            for (; j + 4 <= w.cols; j += 4) {
                s0 += row[j] * av[j];
                s1 += row[j + 1] * av[j + 1];
                s2 += row[j + 2] * av[j + 2];
                s3 += row[j + 3] * av[j + 3];
            }
            for (; j < w.cols; ++j) s0 += row[j] * av[j];
            z[i] += ((s0 + s1) + (s2 + s3));
        }
        if (l + 1 < net.n_layers())
            for (auto& v : z) v = v > 0.0 ? v : 0.0;
        a = std::move(z);
        if (cache != nullptr) cache->acts.push_back(a);
    }
    return a;
}

Matrix forward_batch(const DenseNet& net, const Matrix& x, BatchCache* cache) {
    if (x.rows != static_cast<std::size_t>(net.layer_dims.front()))
        throw ValidationError("forward_batch: input rows " + std::to_string(x.rows) +
                              " do not match layer_dims[0]=" +
                              std::to_string(net.layer_dims.front()));
    if (cache != nullptr) {
        cache->acts.clear();
        cache->acts.push_back(x);
    }
    Matrix a = x;
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        Matrix z;
        gemm_nn(z, net.weights[l], a);
        const auto& b = net.biases[l];
        for (std::size_t i = 0; i < z.rows; ++i) {
            double* row = z.data.data() + i * z.cols;
            for (std::size_t j = 0; j < z.cols; ++j) row[j] += b[i];
        }
        if (l + 1 < net.n_layers())
            for (auto& v : z.data) v = v > 0.0 ? v : 0.0;
        a = std::move(z);
        if (cache != nullptr) cache->acts.push_back(a);
    }
    return a;
}

Grads backward(const DenseNet& net, const Cache& cache, const std::vector<double>& d_out) {
    const std::size_t L = net.n_layers();
    if (cache.acts.size() != L + 1)
        throw ValidationError("backward: cache does not match the network");
    if (d_out.size() != static_cast<std::size_t>(net.layer_dims.back()))
        throw ValidationError("backward: d_out size does not match the output layer");

    Grads g;
    g.d_weights.resize(L);
    g.d_biases.resize(L);
    std::vector<double> delta = d_out;
    for (std::size_t l = L; l-- > 0;) {
        const Matrix& w = net.weights[l];
        const auto& a_in = cache.acts[l];
        Matrix dw(w.rows, w.cols);
        for (std::size_t i = 0; i < w.rows; ++i) {
            const double d = delta[i];
            double* row = dw.data.data() + i * w.cols;
            for (std::size_t j = 0; j < w.cols; ++j) row[j] = d * a_in[j];
        }
        g.d_weights[l] = std::move(dw);
        g.d_biases[l] = delta;

        std::vector<double> prev(w.cols, 0.0);
        for (std::size_t i = 0; i < w.rows; ++i) {
            const double d = delta[i];
            const double* row = w.data.data() + i * w.cols;
            for (std::size_t j = 0; j < w.cols; ++j) prev[j] += d * row[j];
        }
        if (l > 0)
            for (std::size_t j = 0; j < prev.size(); ++j)
                if (cache.acts[l][j] <= 0.0) prev[j] = 0.0;
        delta = std::move(prev);
    }
    g.d_input = std::move(delta);
    return g;
}

Grads backward_batch(const DenseNet& net, const BatchCache& cache, const Matrix& d_out) {
    const std::size_t L = net.n_layers();
    if (cache.acts.size() != L + 1)
        throw ValidationError("backward_batch: cache does not match the network");

    Grads g;
    g.d_weights.resize(L);
    g.d_biases.resize(L);
    Matrix delta = d_out;
    for (std::size_t l = L; l-- > 0;) {
        const Matrix& w = net.weights[l];
        // dW = delta * acts^T; transpose once so the kernel streams rows.
        Matrix dw;
        gemm_nn(dw, delta, transpose(cache.acts[l]));
        g.d_weights[l] = std::move(dw);
        auto& db = g.d_biases[l];
        db.assign(delta.rows, 0.0);
        for (std::size_t i = 0; i < delta.rows; ++i) {
            const double* row = delta.data.data() + i * delta.cols;
            double s = 0;
            for (std::size_t j = 0; j < delta.cols; ++j) s += row[j];
            db[i] = s;
        }
        Matrix prev = gemm_tn(w, delta);
        if (l > 0) {
            const auto& act = cache.acts[l];
            for (std::size_t i = 0; i < prev.data.size(); ++i)
                if (act.data[i] <= 0.0) prev.data[i] = 0.0;
        }
        delta = std::move(prev);
    }
    g.d_input.assign(delta.data.begin(), delta.data.end());
    return g;
}

std::pair<double, std::vector<double>> mse(const std::vector<double>& pred,
                                           const std::vector<double>& target) {
    if (pred.empty() || pred.size() != target.size())
        throw ValidationError("mse: pred and target must be non-empty and equal-sized");
    const double n = static_cast<double>(pred.size());
    double loss = 0.0;
    std::vector<double> grad(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        loss += d * d;
        grad[i] = 2.0 * d / n;
    }
    return {loss / n, std::move(grad)};
}

AdamState adam_init(const DenseNet& net, double learning_rate) {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ValidationError("adam_init: learning_rate must be finite and > 0");
    AdamState s;
    s.learning_rate = learning_rate;
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        s.m_w.emplace_back(net.weights[l].rows, net.weights[l].cols);
        s.v_w.emplace_back(net.weights[l].rows, net.weights[l].cols);
        s.m_b.emplace_back(net.biases[l].size(), 0.0);
        s.v_b.emplace_back(net.biases[l].size(), 0.0);
    }
    return s;
}

namespace {

void adam_update(std::vector<double>& theta, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, const AdamState& s,
                 double bc1, double bc2) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double gi = grad[i];
        m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gi;
        v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.eps);
    }
}

}  // namespace

void adam_step(DenseNet& net, const Grads& grads, AdamState& state) {
    if (grads.d_weights.size() != net.n_layers())
        throw ValidationError("adam_step: gradient layer count does not match the network");
    for (std::size_t l = 0; l < net.n_layers(); ++l)
        if (!all_finite(grads.d_weights[l].data) || !all_finite(grads.d_biases[l]))
            throw NumericError("adam_step: non-finite gradient in layer " + std::to_string(l));

    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        adam_update(net.weights[l].data, grads.d_weights[l].data, state.m_w[l].data,
                    state.v_w[l].data, state, bc1, bc2);
        adam_update(net.biases[l], grads.d_biases[l], state.m_b[l], state.v_b[l], state, bc1,
                    bc2);
    }
}

double grad_check(const DenseNet& net, const std::vector<double>& x,
                  const std::vector<double>& target) {
    if (net.n_params() > 10000)
        throw ValidationError("grad_check: refusing nets above 10^4 parameters (got " +
                              std::to_string(net.n_params()) + ")");
    Cache cache;
    const auto out = forward(net, x, &cache);
    const auto [loss, d_out] = mse(out, target);
    (void)loss;
    const Grads analytic = backward(net, cache, d_out);

    DenseNet probe = net;
    const double h = 1e-5;
    double worst = 0.0;
    auto loss_at = [&]() {
        const auto y = forward(probe, x, nullptr);
        return mse(y, target).first;
    };
    auto check_one = [&](double& slot, double analytic_g) {
        const double saved = slot;
        slot = saved + h;
        const double up = loss_at();
        slot = saved - h;
        const double down = loss_at();
        slot = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::fabs(analytic_g), std::fabs(numeric), 1e-8});
        worst = std::max(worst, std::fabs(analytic_g - numeric) / denom);
    };
    for (std::size_t l = 0; l < probe.n_layers(); ++l) {
        for (std::size_t i = 0; i < probe.weights[l].data.size(); ++i)
            check_one(probe.weights[l].data[i], analytic.d_weights[l].data[i]);
        for (std::size_t i = 0; i < probe.biases[l].size(); ++i)
            check_one(probe.biases[l][i], analytic.d_biases[l][i]);
    }
    return worst;
}

void save_net(const DenseNet& net, const std::string& path,
              const std::optional<ScalerBlock>& scaler, const std::string& profile) {
    json doc;
    doc["format"] = "meshrl-densenet-v1";
    doc["layer_dims"] = net.layer_dims;
    doc["hidden_activation"] = "relu";
    json weights = json::array();
    json biases = json::array();
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        weights.push_back(net.weights[l].data);  // row-major
        biases.push_back(net.biases[l]);
    }
    doc["weights"] = std::move(weights);
    doc["biases"] = std::move(biases);
    if (scaler) {
        doc["scaler"] = {{"in_mean", scaler->in_mean},
                         {"in_std", scaler->in_std},
                         {"out_mean", scaler->out_mean},
                         {"out_std", scaler->out_std}};
    }
    if (!profile.empty()) doc["profile"] = profile;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "' for writing");
    f << doc.dump();
    f << '\n';
    if (!f) throw FormatError("failed writing '" + path + "'");
}

LoadedNet load_net(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "' for reading");
    json doc;
    try {
        doc = json::parse(f);
    } catch (const json::exception& e) {
        throw FormatError("weight file '" + path + "' is truncated or malformed: " + e.what());
    }

    LoadedNet out;
    try {
        if (doc.at("format") != "meshrl-densenet-v1")
            throw FormatError("weight file '" + path + "': unknown format tag");
        if (doc.at("hidden_activation") != "relu")
            throw FormatError("weight file '" + path + "': unsupported activation");
        out.net.layer_dims = doc.at("layer_dims").get<std::vector<int>>();
        check_dims(out.net.layer_dims);
        const auto& weights = doc.at("weights");
        const auto& biases = doc.at("biases");
        const std::size_t L = out.net.layer_dims.size() - 1;
        if (weights.size() != L || biases.size() != L)
            throw FormatError("weight file '" + path + "': layer count mismatch");
        for (std::size_t l = 0; l < L; ++l) {
            const auto rows = static_cast<std::size_t>(out.net.layer_dims[l + 1]);
            const auto cols = static_cast<std::size_t>(out.net.layer_dims[l]);
            Matrix w(rows, cols);
            w.data = weights[l].get<std::vector<double>>();
            if (w.data.size() != rows * cols)
                throw FormatError("weight file '" + path + "': weights[" + std::to_string(l) +
                                  "] has the wrong size");
            auto b = biases[l].get<std::vector<double>>();
            if (b.size() != rows)
                throw FormatError("weight file '" + path + "': biases[" + std::to_string(l) +
                                  "] has the wrong size");
            out.net.weights.push_back(std::move(w));
            out.net.biases.push_back(std::move(b));
        }
        if (doc.contains("scaler")) {
            const auto& s = doc.at("scaler");
            ScalerBlock block;
            block.in_mean = s.at("in_mean").get<std::vector<double>>();
            block.in_std = s.at("in_std").get<std::vector<double>>();
            block.out_mean = s.at("out_mean").get<std::vector<double>>();
            block.out_std = s.at("out_std").get<std::vector<double>>();
            out.scaler = std::move(block);
        }
        if (doc.contains("profile")) out.profile = doc.at("profile").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError("weight file '" + path + "': " + e.what());
    }
    return out;
}

}  // namespace meshrl::nn
