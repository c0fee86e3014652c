#include "shm/episode.hpp"

#include <cmath>

namespace shm {

namespace {

void validate_inputs(const ShmParams& params, std::span<const ContextInput> xs) {
    for (std::size_t t = 0; t < xs.size(); ++t) {
        if (static_cast<int>(xs[t].x.size()) != params.dims.d)
            throw DimError("run_sequence: context at step " + std::to_string(t + 1) +
                           " has length " + std::to_string(xs[t].x.size()) + ", expected " +
                           std::to_string(params.dims.d));
        if (!all_finite(xs[t].x))
            throw NumericError("run_sequence: non-finite context at step " + std::to_string(t + 1));
    }
}

// Leaf ids for every parameter tensor, registered in canonical order.
struct ParamLeaves {
    int theta = -1;
    int vc_w = -1, vc_b = -1;
    int k_w = -1, k_b = -1;
    int v_w = -1, v_b = -1;
    int q_w = -1, q_b = -1;
    int eta_w = -1, eta_b = -1;
    int fixed_c = -1;
    int fixed_theta = -1;
    int nt1_w = -1, nt1_b = -1, nt2_w = -1, nt2_b = -1;
};

Matrix vec_as_column(const Vec& v) {
    Matrix m(static_cast<int>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m.raw()[i] = v[i];
    return m;
}

ParamLeaves register_leaves(TapedEpisode& te, const ShmParams& p) {
    ParamLeaves ids;
    auto mat_leaf = [&](const char* name, const Matrix& m) {
        te.tensor_names.push_back(name);
        int id = te.tape.leaf(m);
        te.leaves.push_back(id);
        return id;
    };
    auto vec_leaf = [&](const char* name, const Vec& v) {
        te.tensor_names.push_back(name);
        int id = te.tape.leaf(vec_as_column(v));
        te.leaves.push_back(id);
        return id;
    };
    ids.theta = mat_leaf("theta", p.theta);
    ids.vc_w = mat_leaf("w_vc.w", p.w_vc.w);
    ids.vc_b = vec_leaf("w_vc.b", p.w_vc.b);
    ids.k_w = mat_leaf("w_k.w", p.w_k.w);
    ids.k_b = vec_leaf("w_k.b", p.w_k.b);
    ids.v_w = mat_leaf("w_v.w", p.w_v.w);
    ids.v_b = vec_leaf("w_v.b", p.w_v.b);
    ids.q_w = mat_leaf("w_q.w", p.w_q.w);
    ids.q_b = vec_leaf("w_q.b", p.w_q.b);
    ids.eta_w = mat_leaf("eta.w", p.eta.w);
    ids.eta_b = vec_leaf("eta.b", p.eta.b);
    switch (p.variant) {
        case CalibrationVariant::FixedC:
            ids.fixed_c = mat_leaf("fixed_c", p.fixed_c);
            break;
        case CalibrationVariant::FixedTheta:
            ids.fixed_theta = vec_leaf("fixed_theta", p.fixed_theta);
            break;
        case CalibrationVariant::NeuralTheta:
            ids.nt1_w = mat_leaf("neural_theta.l1.w", p.neural_theta.l1.w);
            ids.nt1_b = vec_leaf("neural_theta.l1.b", p.neural_theta.l1.b);
            ids.nt2_w = mat_leaf("neural_theta.l2.w", p.neural_theta.l2.w);
            ids.nt2_b = vec_leaf("neural_theta.l2.b", p.neural_theta.l2.b);
            break;
        default:
            break;
    }
    return ids;
}

// Same draw pattern as variant_calibration, so taped and plain paths consume
// the stream identically.
Matrix random_c_matrix(int h, Rng& rng) {
    Matrix m(h, h);
    for (real& v : m.raw()) v = real(1) + tanh_clamped(rng.normal());
    return m;
}

Vec column_as_vec(const Matrix& m) {
    Vec v(m.raw().begin(), m.raw().end());
    return v;
}

}  // namespace

struct EpisodeBuilder::Impl {
    const ShmParams& params;
    Rng& rng;
    EpisodeTrace trace;
    std::shared_ptr<TapedEpisode> te;
    ParamLeaves ids;
    int m_prev = -1;

    Impl(const ShmParams& p, Rng& r) : params(p), rng(r), te(std::make_shared<TapedEpisode>()) {
        trace.variant = p.variant;
        trace.m0 = MemoryState(p.dims.h);
        ids = register_leaves(*te, p);
        m_prev = te->tape.constant(trace.m0.m);
    }
};

EpisodeBuilder::EpisodeBuilder(const ShmParams& params, Rng& rng)
    : impl_(std::make_unique<Impl>(params, rng)) {}

EpisodeBuilder::~EpisodeBuilder() = default;

std::size_t EpisodeBuilder::steps() const { return impl_->trace.steps.size(); }

const Vec& EpisodeBuilder::step(const ContextInput& x) {
    const ShmParams& params = impl_->params;
    if (static_cast<int>(x.x.size()) != params.dims.d)
        throw DimError("EpisodeBuilder: context has length " + std::to_string(x.x.size()) +
                       ", expected " + std::to_string(params.dims.d));
    if (!all_finite(x.x))
        throw NumericError("EpisodeBuilder: non-finite context at step " +
                           std::to_string(impl_->trace.steps.size() + 1));

    TapedEpisode& te = *impl_->te;
    Tape& tape = te.tape;
    const ParamLeaves& ids = impl_->ids;
    Rng& rng = impl_->rng;
    const std::size_t t = impl_->trace.steps.size();

    StepRecord rec;
    rec.x = x;
    int x_id = tape.constant_vec(x.x);

    // calibration matrix
    int c_id = -1;
    switch (params.variant) {
        case CalibrationVariant::ShmRandomTheta: {
            ThetaDraw d = sample_theta_row(params, rng);
            rec.theta_row = d.row;
            int vc = tape.affine(ids.vc_w, ids.vc_b, x_id);
            int row = tape.row_select(ids.theta, d.row);
            c_id = tape.one_plus(tape.tanh_clamped_op(tape.outer_op(row, vc)));
            break;
        }
        case CalibrationVariant::AllOnes:
            c_id = tape.constant(Matrix::ones(params.dims.h, params.dims.h));
            break;
        case CalibrationVariant::RandomC:
            c_id = tape.constant(random_c_matrix(params.dims.h, rng));
            break;
        case CalibrationVariant::FixedC:
            c_id = ids.fixed_c;
            break;
        case CalibrationVariant::FixedTheta: {
            int vc = tape.affine(ids.vc_w, ids.vc_b, x_id);
            c_id = tape.one_plus(tape.tanh_clamped_op(tape.outer_op(ids.fixed_theta, vc)));
            break;
        }
        case CalibrationVariant::NeuralTheta: {
            int vc = tape.affine(ids.vc_w, ids.vc_b, x_id);
            int h1 = tape.tanh_clamped_op(tape.affine(ids.nt1_w, ids.nt1_b, x_id));
            int th = tape.affine(ids.nt2_w, ids.nt2_b, h1);
            c_id = tape.one_plus(tape.tanh_clamped_op(tape.outer_op(th, vc)));
            break;
        }
    }

    // update matrix
    int v_id = tape.affine(ids.v_w, ids.v_b, x_id);
    int k_id = tape.affine(ids.k_w, ids.k_b, x_id);
    int gate = tape.sigmoid_op(tape.affine(ids.eta_w, ids.eta_b, x_id));
    int u_id = tape.scale_op(gate, tape.outer_op(v_id, k_id));

    // write, then read
    int m_id = tape.add_op(tape.hadamard_op(impl_->m_prev, c_id), u_id);
    int q_id = tape.affine(ids.q_w, ids.q_b, x_id);
    int h_id = tape.matvec_op(m_id, q_id);

    rec.c.c = tape.value(c_id);
    rec.u.u = tape.value(u_id);
    rec.m = MemoryState(tape.value(m_id), static_cast<std::int64_t>(t) + 1);
    rec.h = column_as_vec(tape.value(h_id));
    if (!all_finite(rec.m.m) || !all_finite(rec.h))
        throw NumericError("run_sequence: non-finite value at step " + std::to_string(t + 1));

    te.c_ids.push_back(c_id);
    te.u_ids.push_back(u_id);
    te.m_ids.push_back(m_id);
    te.h_ids.push_back(h_id);
    impl_->trace.steps.push_back(std::move(rec));
    impl_->m_prev = m_id;
    return impl_->trace.steps.back().h;
}

EpisodeTrace EpisodeBuilder::finish() {
    EpisodeTrace out = std::move(impl_->trace);
    out.taped = std::move(impl_->te);
    return out;
}

EpisodeTrace run_sequence(const ShmParams& params, std::span<const ContextInput> xs, Rng& rng,
                          const RunOptions& opts) {
    validate_inputs(params, xs);
    if (opts.mode == EvalMode::Sequential && opts.record_tape) {
        EpisodeBuilder builder(params, rng);
        for (const ContextInput& x : xs) builder.step(x);
        return builder.finish();
    }

    EpisodeTrace trace;
    trace.variant = params.variant;
    trace.m0 = MemoryState(params.dims.h);
    if (xs.empty()) return trace;

    const std::size_t t_max = xs.size();
    std::vector<CalMatrix> cs(t_max);
    std::vector<UpdMatrix> us(t_max);
    std::vector<int> rows(t_max, -1);
    for (std::size_t t = 0; t < t_max; ++t) {
        ThetaDraw draw;
        cs[t] = variant_calibration(params, xs[t], static_cast<std::int64_t>(t) + 1, rng, &draw);
        rows[t] = draw.row;
        us[t] = update_matrix(params, xs[t]);
    }

    std::vector<MemoryState> ms;
    switch (opts.mode) {
        case EvalMode::Sequential: {
            ms.reserve(t_max);
            MemoryState cur = trace.m0;
            for (std::size_t t = 0; t < t_max; ++t) {
                cur = write_step(cur, cs[t], us[t]);
                ms.push_back(cur);
            }
            break;
        }
        case EvalMode::ClosedForm:
            ms = unroll_closed_form(trace.m0, cs, us);
            break;
        case EvalMode::Scan:
            ms = parallel_scan(trace.m0, cs, us, &trace.scan_stats, opts.scan_threads);
            break;
    }

    trace.steps.resize(t_max);
    for (std::size_t t = 0; t < t_max; ++t) {
        StepRecord& rec = trace.steps[t];
        rec.x = xs[t];
        rec.theta_row = rows[t];
        rec.c = std::move(cs[t]);
        rec.u = std::move(us[t]);
        rec.m = std::move(ms[t]);
        rec.h = read(rec.m, params.w_q.apply(rec.x.x));
        if (!all_finite(rec.h))
            throw NumericError("run_sequence: non-finite read at step " + std::to_string(t + 1));
    }
    return trace;
}

GradReport backward(const EpisodeTrace& trace, std::span<const Vec> loss_grad_at_h) {
    if (!trace.taped)
        throw ConfigError("backward: trace was not recorded with taping enabled");
    const TapedEpisode& te = *trace.taped;
    if (loss_grad_at_h.size() != te.h_ids.size())
        throw DimError("backward: need one loss gradient per step");

    std::vector<std::pair<int, Matrix>> seeds;
    seeds.reserve(loss_grad_at_h.size());
    for (std::size_t t = 0; t < loss_grad_at_h.size(); ++t) {
        seeds.emplace_back(te.h_ids[t], vec_as_column(loss_grad_at_h[t]));
    }
    std::vector<Matrix> adj = te.tape.backward(seeds, te.leaves);

    GradReport report;
    for (std::size_t i = 0; i < adj.size(); ++i) {
        report.names.push_back(te.tensor_names[i]);
        report.grads.emplace_back(adj[i].raw().begin(), adj[i].raw().end());
    }
    for (const auto& g : report.grads)
        for (real v : g)
            if (!std::isfinite(v))
                throw NumericError("backward: non-finite gradient before clipping");
    report.global_norm = report.compute_global_norm();
    return report;
}

GradReport finite_difference_oracle(const ShmParams& params, std::span<const ContextInput> xs,
                                    std::uint64_t rng_seed, const RunOptions& opts,
                                    const EpisodeLossFn& loss_fn, real step) {
    if (step <= real(0)) throw ConfigError("finite_difference_oracle: step must be positive");

    ShmParams work = params;
    auto tensors = param_tensors(work);
    RunOptions eval_opts = opts;
    eval_opts.record_tape = false;

    auto eval_loss = [&]() {
        // fresh stream each evaluation: both perturbation sides see the same draws
        Rng rng(rng_seed);
        EpisodeTrace tr = run_sequence(work, xs, rng, eval_opts);
        return loss_fn(tr);
    };

    GradReport report;
    for (auto& t : tensors) {
        report.add(t.name, t.size);
        auto& g = report.grads.back();
        for (std::size_t i = 0; i < t.size; ++i) {
            real saved = t.data[i];
            t.data[i] = saved + step;
            real up = eval_loss();
            t.data[i] = saved - step;
            real down = eval_loss();
            t.data[i] = saved;
            g[i] = (up - down) / (real(2) * step);
        }
    }
    report.global_norm = report.compute_global_norm();
    return report;
}

}  // namespace shm
