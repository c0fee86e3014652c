#pragma once

// Reverse-mode differentiation over a tape of primitive ops (affine, tanh,
// sigmoid, Hadamard, outer product, matrix-vector, add, ...). Values are
// whole vectors/matrices, not scalars; vectors are stored as n x 1. Forward
// values are cached eagerly at node creation through the same kernel that
// replay() uses, so replaying the tape reproduces them bit-identically.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "shm/matrix.hpp"

namespace shm {

enum class Op : std::uint8_t {
    Leaf,         // trainable parameter
    Const,        // non-differentiable input
    Affine,       // a0=W (m x n), a1=b (m x 1), a2=x (n x 1) -> m x 1
    TanhClamped,  // elementwise, clamped to [-1+eps, 1-eps]
    Sigmoid,      // elementwise
    Hadamard,     // a0 (*) a1
    Outer,        // a0 (m x 1) (x) a1 (n x 1) -> m x n
    MatVec,       // a0 (m x n) * a1 (n x 1) -> m x 1
    Add,          // a0 + a1
    OnePlus,      // 1 + a0, elementwise
    Scale,        // a0 (1 x 1) * a1 (elementwise)
    RowSelect,    // row `extra` of a0, as a column vector
};

struct TapeNode {
    Op op = Op::Const;
    int a0 = -1, a1 = -1, a2 = -1;
    int extra = 0;
    Matrix out;
};

class Tape {
  public:
    int leaf(Matrix v);
    int constant(Matrix v);
    int constant_vec(const Vec& v);

    int affine(int w, int b, int x);
    int tanh_clamped_op(int x);
    int sigmoid_op(int x);
    int hadamard_op(int a, int b);
    int outer_op(int u, int v);
    int matvec_op(int m, int x);
    int add_op(int a, int b);
    int one_plus(int x);
    int scale_op(int s, int m);
    int row_select(int m, int row);

    const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].out; }
    std::size_t size() const { return nodes_.size(); }
    const TapeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    // Accumulates the given output adjoints backwards through the tape and
    // returns the adjoints of the requested nodes (typically the leaves).
    std::vector<Matrix> backward(const std::vector<std::pair<int, Matrix>>& seeds,
                                 const std::vector<int>& wrt) const;

    // Recomputes every non-input node from its arguments; true iff all cached
    // forward values are reproduced bit-for-bit.
    bool replay_matches() const;

  private:
    int push(TapeNode n);
    Matrix eval(const TapeNode& n) const;

    std::vector<TapeNode> nodes_;
};

// Per-parameter gradient arrays in the canonical param_tensors order (plus,
// for training, any extra head tensors appended by the caller).
struct GradReport {
    std::vector<std::string> names;
    std::vector<std::vector<real>> grads;
    real global_norm = 0;
    int clip_events = 0;

    void add(std::string name, std::size_t size) {
        names.push_back(std::move(name));
        grads.emplace_back(size, real(0));
    }
    real compute_global_norm() const;
    bool all_finite() const;
};

// Scales every gradient by max_norm/norm when the global L2 norm exceeds
// max_norm; records the clip event.
GradReport clip_gradients(GradReport report, real max_norm);

// Closed-form critical gradients for a fixed (input-independent) scalar
// calibration entry theta over a span of t-i steps:
//   g1 = (t-i) * theta^(t-i-1),  g2 = theta^(t-i)
std::pair<real, real> critical_gradients_fixed_c(real theta, int span);

}  // namespace shm
