#include "shm/calibration.hpp"

#include <cmath>

namespace shm {

const char* variant_name(CalibrationVariant v) {
    switch (v) {
        case CalibrationVariant::ShmRandomTheta: return "shm_random_theta";
        case CalibrationVariant::AllOnes: return "all_ones";
        case CalibrationVariant::RandomC: return "random_c";
        case CalibrationVariant::FixedC: return "fixed_c";
        case CalibrationVariant::FixedTheta: return "fixed_theta";
        case CalibrationVariant::NeuralTheta: return "neural_theta";
    }
    throw ConfigError("variant_name: unknown calibration variant tag");
}

CalibrationVariant variant_from_name(const std::string& name) {
    for (auto v : {CalibrationVariant::ShmRandomTheta, CalibrationVariant::AllOnes,
                   CalibrationVariant::RandomC, CalibrationVariant::FixedC,
                   CalibrationVariant::FixedTheta, CalibrationVariant::NeuralTheta}) {
        if (name == variant_name(v)) return v;
    }
    throw ConfigError("unknown calibration variant: " + name);
}

Vec AffineMap::apply(const Vec& x) const {
    Vec out = matvec(w, x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Vec FeedForward::apply(const Vec& x) const {
    Vec hidden = l1.apply(x);
    for (real& v : hidden) v = tanh_clamped(v);
    return l2.apply(hidden);
}

real sigmoid(real x) {
    if (x >= real(0)) {
        real e = std::exp(-x);
        return real(1) / (real(1) + e);
    }
    real e = std::exp(x);
    return e / (real(1) + e);
}

real tanh_clamped(real x) {
    real t = std::tanh(x);
    const real lim = real(1) - kTanhClampEps;
    if (t > lim) return lim;
    if (t < -lim) return -lim;
    return t;
}

ThetaDraw sample_theta_row(const ShmParams& p, Rng& rng) {
    if (p.dims.l < 1) throw ConfigError("sample_theta_row: L must be >= 1");
    ThetaDraw d;
    d.row = static_cast<int>(rng.uniform_int(static_cast<std::uint32_t>(p.dims.l)));
    d.draw_index = rng.draws_consumed();
    return d;
}

namespace {

// Shared kernel for every Eq-style calibration: C[i][j] = 1 + tanh(row[i] * col[j]).
// Both the plain path and the autograd tape route through this so traces
// replay bit-identically.
CalMatrix one_plus_tanh_outer(const Vec& row, const Vec& col) {
    CalMatrix out;
    out.c = Matrix(static_cast<int>(row.size()), static_cast<int>(col.size()));
    for (std::size_t i = 0; i < row.size(); ++i)
        for (std::size_t j = 0; j < col.size(); ++j)
            out.c(static_cast<int>(i), static_cast<int>(j)) =
                real(1) + tanh_clamped(row[i] * col[j]);
    return out;
}

Vec theta_row(const ShmParams& p, int row) {
    Vec r(static_cast<std::size_t>(p.dims.h));
    for (int j = 0; j < p.dims.h; ++j) r[static_cast<std::size_t>(j)] = p.theta(row, j);
    return r;
}

}  // namespace

CalMatrix shm_calibration(const ShmParams& p, const ContextInput& x, const ThetaDraw& draw) {
    if (draw.row < 0 || draw.row >= p.dims.l) throw ConfigError("shm_calibration: theta row out of range");
    return one_plus_tanh_outer(theta_row(p, draw.row), p.w_vc.apply(x.x));
}

CalMatrix variant_calibration(const ShmParams& p, const ContextInput& x, std::int64_t /*step*/,
                              Rng& rng, ThetaDraw* draw_out) {
    if (draw_out) *draw_out = ThetaDraw{};
    switch (p.variant) {
        case CalibrationVariant::ShmRandomTheta: {
            ThetaDraw d = sample_theta_row(p, rng);
            if (draw_out) *draw_out = d;
            return shm_calibration(p, x, d);
        }
        case CalibrationVariant::AllOnes: {
            CalMatrix c;
            c.c = Matrix::ones(p.dims.h, p.dims.h);
            return c;
        }
        case CalibrationVariant::RandomC: {
            CalMatrix c;
            c.c = Matrix(p.dims.h, p.dims.h);
            for (real& v : c.c.raw()) v = real(1) + tanh_clamped(rng.normal());
            return c;
        }
        case CalibrationVariant::FixedC: {
            CalMatrix c;
            c.c = p.fixed_c;
            return c;
        }
        case CalibrationVariant::FixedTheta:
            return one_plus_tanh_outer(p.fixed_theta, p.w_vc.apply(x.x));
        case CalibrationVariant::NeuralTheta:
            return one_plus_tanh_outer(p.neural_theta.apply(x.x), p.w_vc.apply(x.x));
    }
    throw ConfigError("variant_calibration: unknown calibration variant tag");
}

UpdMatrix update_matrix(const ShmParams& p, const ContextInput& x) {
    Vec value = p.w_v.apply(x.x);
    Vec key = p.w_k.apply(x.x);
    real gate = sigmoid(p.eta.apply(x.x)[0]);
    UpdMatrix out;
    out.u = Matrix(p.dims.h, p.dims.h);
    for (int i = 0; i < p.dims.h; ++i)
        for (int j = 0; j < p.dims.h; ++j)
            out.u(i, j) = gate * (value[static_cast<std::size_t>(i)] * key[static_cast<std::size_t>(j)]);
    return out;
}

AffineMap init_affine_map(int out, int in, Rng& rng) {
    AffineMap m;
    m.w = Matrix(out, in);
    real bound = real(1) / std::sqrt(static_cast<real>(in));
    for (real& v : m.w.raw()) v = rng.uniform(-bound, bound);
    m.b.assign(static_cast<std::size_t>(out), real(0));
    return m;
}

ShmParams init_params(const Dims& dims, CalibrationVariant variant, std::uint64_t seed) {
    if (dims.d < 1 || dims.h < 1 || dims.l < 1)
        throw ConfigError("init_params: dims must all be >= 1");
    Rng rng = Rng::stream(seed, "init");

    ShmParams p;
    p.dims = dims;
    p.variant = variant;

    p.theta = Matrix(dims.l, dims.h);
    real tb = real(1) / std::sqrt(static_cast<real>(dims.h));
    for (real& v : p.theta.raw()) v = rng.uniform(-tb, tb);

    p.w_vc = init_affine_map(dims.h, dims.d, rng);
    p.w_k = init_affine_map(dims.h, dims.d, rng);
    p.w_v = init_affine_map(dims.h, dims.d, rng);
    p.w_q = init_affine_map(dims.h, dims.d, rng);
    p.eta = init_affine_map(1, dims.d, rng);  // zero bias: gate starts at 0.5

    switch (variant) {
        case CalibrationVariant::FixedC: {
            // one draw from the RandomC distribution, then held fixed
            p.fixed_c = Matrix(dims.h, dims.h);
            for (real& v : p.fixed_c.raw()) v = real(1) + tanh_clamped(rng.normal());
            break;
        }
        case CalibrationVariant::FixedTheta: {
            p.fixed_theta.resize(static_cast<std::size_t>(dims.h));
            for (real& v : p.fixed_theta) v = rng.uniform(-tb, tb);
            break;
        }
        case CalibrationVariant::NeuralTheta: {
            p.neural_theta.l1 = init_affine_map(dims.h, dims.d, rng);
            p.neural_theta.l2 = init_affine_map(dims.h, dims.h, rng);
            break;
        }
        default:
            break;
    }
    return p;
}

std::vector<TensorRef> param_tensors(ShmParams& p) {
    std::vector<TensorRef> out;
    auto push_mat = [&](const std::string& name, Matrix& m) {
        out.push_back({name, m.data(), m.size()});
    };
    auto push_vec = [&](const std::string& name, Vec& v) {
        out.push_back({name, v.data(), v.size()});
    };
    push_mat("theta", p.theta);
    push_mat("w_vc.w", p.w_vc.w);
    push_vec("w_vc.b", p.w_vc.b);
    push_mat("w_k.w", p.w_k.w);
    push_vec("w_k.b", p.w_k.b);
    push_mat("w_v.w", p.w_v.w);
    push_vec("w_v.b", p.w_v.b);
    push_mat("w_q.w", p.w_q.w);
    push_vec("w_q.b", p.w_q.b);
    push_mat("eta.w", p.eta.w);
    push_vec("eta.b", p.eta.b);
    switch (p.variant) {
        case CalibrationVariant::FixedC:
            push_mat("fixed_c", p.fixed_c);
            break;
        case CalibrationVariant::FixedTheta:
            push_vec("fixed_theta", p.fixed_theta);
            break;
        case CalibrationVariant::NeuralTheta:
            push_mat("neural_theta.l1.w", p.neural_theta.l1.w);
            push_vec("neural_theta.l1.b", p.neural_theta.l1.b);
            push_mat("neural_theta.l2.w", p.neural_theta.l2.w);
            push_vec("neural_theta.l2.b", p.neural_theta.l2.b);
            break;
        default:
            break;
    }
    return out;
}

std::size_t param_count(const ShmParams& p) {
    std::size_t n = 0;
    for (const auto& t : param_tensors(const_cast<ShmParams&>(p))) n += t.size;
    return n;
}

}  // namespace shm
