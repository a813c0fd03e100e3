#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dgdi/sparse.hpp"
#include "dgdi/tensor.hpp"

namespace dgdi {

// Reverse-mode automatic differentiation on an append-only tape of dense
// tensors. The op catalog is exactly what the model needs: a node is created
// eagerly with its forward value, backward() then fills adjoints for every
// node reachable from a scalar loss.

using NodeId = int;

enum class OpKind {
    leaf,
    matmul,
    add,
    mul,
    gather_rows,
    relu,
    sigmoid,
    softmax_lastdim,
    log,
    exp,
    mean_rows,
    inner_product,
    scale,
    concat_rows,
    spmm,  // sparse @ dense; linear, backward multiplies by the transpose
};

const char* op_name(OpKind k);

struct TensorNode {
    Tensor value;
    std::vector<double> adjoint;  // same length as value.data once backward ran
    OpKind op = OpKind::leaf;
    std::vector<NodeId> parents;

    // per-op attributes
    std::vector<int> indices;          // gather_rows
    bool squeeze = false;              // gather_rows single-index form
    double factor = 1.0;               // scale
    const CsrMatrix* sparse = nullptr; // spmm; not owned, must outlive the tape
};

class Tape {
public:
    explicit Tape(std::uint64_t rng_seed = 0) : rng_seed_(rng_seed) {}

    NodeId leaf(Tensor t);

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    // Rank-2 input: selects rows. Rank-1 input: selects elements.
    NodeId gather_rows(NodeId a, std::vector<int> indices);
    // Single-row form, drops the leading axis (row of a matrix -> vector).
    NodeId gather_row(NodeId a, int index);
    NodeId relu(NodeId a);
    NodeId sigmoid(NodeId a);
    NodeId softmax_lastdim(NodeId a);
    NodeId log(NodeId a);
    NodeId exp(NodeId a);
    // Mean over the leading axis: (m x n) -> (n), (m) -> scalar.
    NodeId mean_rows(NodeId a);
    NodeId inner_product(NodeId a, NodeId b);
    NodeId scale(NodeId a, double factor);
    NodeId concat_rows(std::span<const NodeId> parts);
    NodeId spmm(const CsrMatrix& m, NodeId x);

    // Seeds d(loss)/d(loss) = 1 and accumulates adjoints in reverse tape
    // order. Fan-out adds; unreachable nodes keep zero adjoints.
    void backward(NodeId loss);

    const Tensor& value(NodeId id) const { return node(id).value; }
    const std::vector<double>& adjoint(NodeId id) const { return node(id).adjoint; }
    Tensor adjoint_tensor(NodeId id) const;

    const TensorNode& node(NodeId id) const;
    std::size_t size() const { return nodes_.size(); }
    std::uint64_t rng_seed() const { return rng_seed_; }

private:
    NodeId push(TensorNode n);
    TensorNode& mutable_node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
    void backprop_node(NodeId id);

    std::deque<TensorNode> nodes_;
    std::uint64_t rng_seed_ = 0;
};

// Loss builder used by the gradient checker: fills `grad` (when non-null)
// with d(loss)/d(theta) and returns the loss value.
using LossFn = std::function<double(std::span<const double> theta, std::vector<double>* grad)>;

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|), with steps f(theta +/- eps * e_i).
double grad_check(const LossFn& f, std::span<const double> theta, double eps);

}  // namespace dgdi
