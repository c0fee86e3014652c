#include "shm/autograd.hpp"

#include <cmath>

#include "shm/calibration.hpp"

namespace shm {

int Tape::push(TapeNode n) {
    if (n.op != Op::Leaf && n.op != Op::Const) n.out = eval(n);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Matrix v) {
    TapeNode n;
    n.op = Op::Leaf;
    n.out = std::move(v);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::constant(Matrix v) {
    TapeNode n;
    n.op = Op::Const;
    n.out = std::move(v);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::constant_vec(const Vec& v) {
    Matrix m(static_cast<int>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m.raw()[i] = v[i];
    return constant(std::move(m));
}

int Tape::affine(int w, int b, int x) { return push({Op::Affine, w, b, x, 0, {}}); }
int Tape::tanh_clamped_op(int x) { return push({Op::TanhClamped, x, -1, -1, 0, {}}); }
int Tape::sigmoid_op(int x) { return push({Op::Sigmoid, x, -1, -1, 0, {}}); }
int Tape::hadamard_op(int a, int b) { return push({Op::Hadamard, a, b, -1, 0, {}}); }
int Tape::outer_op(int u, int v) { return push({Op::Outer, u, v, -1, 0, {}}); }
int Tape::matvec_op(int m, int x) { return push({Op::MatVec, m, x, -1, 0, {}}); }
int Tape::add_op(int a, int b) { return push({Op::Add, a, b, -1, 0, {}}); }
int Tape::one_plus(int x) { return push({Op::OnePlus, x, -1, -1, 0, {}}); }
int Tape::scale_op(int s, int m) { return push({Op::Scale, s, m, -1, 0, {}}); }
int Tape::row_select(int m, int row) { return push({Op::RowSelect, m, -1, -1, row, {}}); }

Matrix Tape::eval(const TapeNode& n) const {
    auto& v0 = n.a0 >= 0 ? nodes_[static_cast<std::size_t>(n.a0)].out : nodes_[0].out;
    switch (n.op) {
        case Op::Leaf:
        case Op::Const:
            return n.out;
        case Op::Affine: {
            const Matrix& w = v0;
            const Matrix& b = nodes_[static_cast<std::size_t>(n.a1)].out;
            const Matrix& x = nodes_[static_cast<std::size_t>(n.a2)].out;
            Matrix out(w.rows(), 1);
            for (int i = 0; i < w.rows(); ++i) {
                real acc = 0;
                for (int j = 0; j < w.cols(); ++j) acc += w(i, j) * x(j, 0);
                out(i, 0) = acc;
            }
            for (int i = 0; i < w.rows(); ++i) out(i, 0) += b(i, 0);
            return out;
        }
        case Op::TanhClamped: {
            Matrix out = v0;
            for (real& v : out.raw()) v = tanh_clamped(v);
            return out;
        }
        case Op::Sigmoid: {
            Matrix out = v0;
            for (real& v : out.raw()) v = sigmoid(v);
            return out;
        }
        case Op::Hadamard:
            return shm::hadamard(v0, nodes_[static_cast<std::size_t>(n.a1)].out);
        case Op::Outer: {
            const Matrix& u = v0;
            const Matrix& v = nodes_[static_cast<std::size_t>(n.a1)].out;
            Matrix out(u.rows(), v.rows());
            for (int i = 0; i < u.rows(); ++i)
                for (int j = 0; j < v.rows(); ++j) out(i, j) = u(i, 0) * v(j, 0);
            return out;
        }
        case Op::MatVec: {
            const Matrix& m = v0;
            const Matrix& x = nodes_[static_cast<std::size_t>(n.a1)].out;
            Matrix out(m.rows(), 1);
            for (int i = 0; i < m.rows(); ++i) {
                real acc = 0;
                for (int j = 0; j < m.cols(); ++j) acc += m(i, j) * x(j, 0);
                out(i, 0) = acc;
            }
            return out;
        }
        case Op::Add:
            return shm::add(v0, nodes_[static_cast<std::size_t>(n.a1)].out);
        case Op::OnePlus: {
            Matrix out = v0;
            for (real& v : out.raw()) v = real(1) + v;
            return out;
        }
        case Op::Scale: {
            real s = v0(0, 0);
            Matrix out = nodes_[static_cast<std::size_t>(n.a1)].out;
            for (real& v : out.raw()) v = s * v;
            return out;
        }
        case Op::RowSelect: {
            Matrix out(v0.cols(), 1);
            for (int j = 0; j < v0.cols(); ++j) out(j, 0) = v0(n.extra, j);
            return out;
        }
    }
    throw Error("tape: unknown op");
}

std::vector<Matrix> Tape::backward(const std::vector<std::pair<int, Matrix>>& seeds,
                                   const std::vector<int>& wrt) const {
    std::vector<Matrix> adj(nodes_.size());
    std::vector<bool> live(nodes_.size(), false);

    auto accumulate = [&](int id, const Matrix& g) {
        auto idx = static_cast<std::size_t>(id);
        if (!live[idx]) {
            adj[idx] = g;
            live[idx] = true;
        } else {
            for (std::size_t k = 0; k < g.size(); ++k) adj[idx].raw()[k] += g.raw()[k];
        }
    };

    for (const auto& [id, g] : seeds) {
        if (!g.same_shape(nodes_[static_cast<std::size_t>(id)].out))
            throw DimError("tape backward: seed shape mismatch");
        accumulate(id, g);
    }

    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        auto idx = static_cast<std::size_t>(id);
        if (!live[idx]) continue;
        const TapeNode& n = nodes_[idx];
        const Matrix& g = adj[idx];
        switch (n.op) {
            case Op::Leaf:
            case Op::Const:
                break;
            case Op::Affine: {
                const Matrix& w = nodes_[static_cast<std::size_t>(n.a0)].out;
                const Matrix& x = nodes_[static_cast<std::size_t>(n.a2)].out;
                Matrix dw(w.rows(), w.cols());
                for (int i = 0; i < w.rows(); ++i)
                    for (int j = 0; j < w.cols(); ++j) dw(i, j) = g(i, 0) * x(j, 0);
                accumulate(n.a0, dw);
                accumulate(n.a1, g);
                Matrix dx(w.cols(), 1);
                for (int i = 0; i < w.rows(); ++i)
                    for (int j = 0; j < w.cols(); ++j) dx(j, 0) += w(i, j) * g(i, 0);
                accumulate(n.a2, dx);
                break;
            }
            case Op::TanhClamped: {
                Matrix d = g;
                const Matrix& out = n.out;
                for (std::size_t k = 0; k < d.size(); ++k)
                    d.raw()[k] *= real(1) - out.raw()[k] * out.raw()[k];
                accumulate(n.a0, d);
                break;
            }
            case Op::Sigmoid: {
                Matrix d = g;
                const Matrix& out = n.out;
                for (std::size_t k = 0; k < d.size(); ++k)
                    d.raw()[k] *= out.raw()[k] * (real(1) - out.raw()[k]);
                accumulate(n.a0, d);
                break;
            }
            case Op::Hadamard: {
                accumulate(n.a0, hadamard(g, nodes_[static_cast<std::size_t>(n.a1)].out));
                accumulate(n.a1, hadamard(g, nodes_[static_cast<std::size_t>(n.a0)].out));
                break;
            }
            case Op::Outer: {
                const Matrix& u = nodes_[static_cast<std::size_t>(n.a0)].out;
                const Matrix& v = nodes_[static_cast<std::size_t>(n.a1)].out;
                Matrix du(u.rows(), 1);
                Matrix dv(v.rows(), 1);
                for (int i = 0; i < u.rows(); ++i)
                    for (int j = 0; j < v.rows(); ++j) {
                        du(i, 0) += g(i, j) * v(j, 0);
                        dv(j, 0) += g(i, j) * u(i, 0);
                    }
                accumulate(n.a0, du);
                accumulate(n.a1, dv);
                break;
            }
            case Op::MatVec: {
                const Matrix& m = nodes_[static_cast<std::size_t>(n.a0)].out;
                const Matrix& x = nodes_[static_cast<std::size_t>(n.a1)].out;
                Matrix dm(m.rows(), m.cols());
                for (int i = 0; i < m.rows(); ++i)
                    for (int j = 0; j < m.cols(); ++j) dm(i, j) = g(i, 0) * x(j, 0);
                accumulate(n.a0, dm);
                Matrix dx(m.cols(), 1);
                for (int i = 0; i < m.rows(); ++i)
                    for (int j = 0; j < m.cols(); ++j) dx(j, 0) += m(i, j) * g(i, 0);
                accumulate(n.a1, dx);
                break;
            }
            case Op::Add:
                accumulate(n.a0, g);
                accumulate(n.a1, g);
                break;
            case Op::OnePlus:
                accumulate(n.a0, g);
                break;
            case Op::Scale: {
                const Matrix& m = nodes_[static_cast<std::size_t>(n.a1)].out;
                real s = nodes_[static_cast<std::size_t>(n.a0)].out(0, 0);
                Matrix ds(1, 1);
                for (std::size_t k = 0; k < g.size(); ++k) ds(0, 0) += g.raw()[k] * m.raw()[k];
                accumulate(n.a0, ds);
                accumulate(n.a1, scale(s, g));
                break;
            }
            case Op::RowSelect: {
                const Matrix& src = nodes_[static_cast<std::size_t>(n.a0)].out;
                Matrix d(src.rows(), src.cols());
                for (int j = 0; j < src.cols(); ++j) d(n.extra, j) = g(j, 0);
                accumulate(n.a0, d);
                break;
            }
        }
    }

    std::vector<Matrix> out;
    out.reserve(wrt.size());
    for (int id : wrt) {
        auto idx = static_cast<std::size_t>(id);
        if (live[idx]) {
            out.push_back(adj[idx]);
        } else {
            const Matrix& v = nodes_[idx].out;
            out.push_back(Matrix(v.rows(), v.cols()));
        }
    }
    return out;
}

bool Tape::replay_matches() const {
    for (const TapeNode& n : nodes_) {
        if (n.op == Op::Leaf || n.op == Op::Const) continue;
        if (!(eval(n) == n.out)) return false;
    }
    return true;
}

real GradReport::compute_global_norm() const {
    double acc = 0;
    for (const auto& g : grads)
        for (real v : g) acc += static_cast<double>(v) * static_cast<double>(v);
    return static_cast<real>(std::sqrt(acc));
}

bool GradReport::all_finite() const {
    for (const auto& g : grads)
        for (real v : g)
            if (!std::isfinite(v)) return false;
    return true;
}

GradReport clip_gradients(GradReport report, real max_norm) {
    if (max_norm <= real(0)) throw ConfigError("clip_gradients: max_norm must be positive");
    real norm = report.compute_global_norm();
    if (norm > max_norm) {
        real s = max_norm / norm;
        for (auto& g : report.grads)
            for (real& v : g) v *= s;
        report.clip_events += 1;
    }
    report.global_norm = report.compute_global_norm();
    return report;
}

std::pair<real, real> critical_gradients_fixed_c(real theta, int span) {
    if (span < 1) throw ConfigError("critical_gradients_fixed_c: span must be >= 1");
    real g2 = std::pow(theta, static_cast<real>(span));
    real g1 = static_cast<real>(span) * std::pow(theta, static_cast<real>(span - 1));
    return {g1, g2};
}

}  // namespace shm
