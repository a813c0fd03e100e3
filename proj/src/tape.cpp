#include "dgdi/tape.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dgdi/errors.hpp"

namespace dgdi {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::gather_rows: return "gather_rows";
        case OpKind::relu: return "relu";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::softmax_lastdim: return "softmax_lastdim";
        case OpKind::log: return "log";
        case OpKind::exp: return "exp";
        case OpKind::mean_rows: return "mean_rows";
        case OpKind::inner_product: return "inner_product";
        case OpKind::scale: return "scale";
        case OpKind::concat_rows: return "concat_rows";
        case OpKind::spmm: return "spmm";
    }
    return "?";
}

namespace {

[[noreturn]] void shape_fail(OpKind op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op_name(op)) + ": shapes do not conform (" + shape_str(a) +
                     " vs " + shape_str(b) + ")");
}

[[noreturn]] void shape_fail(OpKind op, const Shape& a) {
    throw ShapeError(std::string(op_name(op)) + ": unsupported shape " + shape_str(a));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

const TensorNode& Tape::node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
        throw IndexError("tape: node id " + std::to_string(id) + " out of range");
    }
    return nodes_[static_cast<std::size_t>(id)];
}

NodeId Tape::push(TensorNode n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor t) {
    TensorNode n;
    n.value = std::move(t);
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    TensorNode n;
    n.op = OpKind::matmul;
    n.parents = {a, b};
    if (A.rank() == 2 && B.rank() == 2) {
        if (A.shape[1] != B.shape[0]) shape_fail(OpKind::matmul, A.shape, B.shape);
        const int m = A.shape[0], k = A.shape[1], p = B.shape[1];
        Tensor out({m, p});
        for (int i = 0; i < m; ++i) {
            for (int l = 0; l < k; ++l) {
                const double av = A.at(i, l);
                if (av == 0.0) continue;
                for (int j = 0; j < p; ++j) out.at(i, j) += av * B.at(l, j);
            }
        }
        n.value = std::move(out);
    } else if (A.rank() == 2 && B.rank() == 1) {
        if (A.shape[1] != B.shape[0]) shape_fail(OpKind::matmul, A.shape, B.shape);
        const int m = A.shape[0], k = A.shape[1];
        Tensor out({m});
        for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += A.at(i, l) * B.at(l);
            out.at(i) = s;
        }
        n.value = std::move(out);
    } else if (A.rank() == 1 && B.rank() == 2) {
        if (A.shape[0] != B.shape[0]) shape_fail(OpKind::matmul, A.shape, B.shape);
        const int k = A.shape[0], p = B.shape[1];
        Tensor out({p});
        for (int l = 0; l < k; ++l) {
            const double av = A.at(l);
            if (av == 0.0) continue;
            for (int j = 0; j < p; ++j) out.at(j) += av * B.at(l, j);
        }
        n.value = std::move(out);
    } else {
        shape_fail(OpKind::matmul, A.shape, B.shape);
    }
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    TensorNode n;
    n.op = OpKind::add;
    n.parents = {a, b};
    if (A.shape == B.shape) {
        Tensor out(A.shape);
        for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] + B.data[i];
        n.value = std::move(out);
    } else if (A.rank() == 2 && B.rank() == 1 && A.shape[1] == B.shape[0]) {
        // row broadcast: add B to every row of A
        Tensor out(A.shape);
        for (int i = 0; i < A.shape[0]; ++i)
            for (int j = 0; j < A.shape[1]; ++j) out.at(i, j) = A.at(i, j) + B.at(j);
        n.value = std::move(out);
    } else {
        shape_fail(OpKind::add, A.shape, B.shape);
    }
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape != B.shape) shape_fail(OpKind::mul, A.shape, B.shape);
    TensorNode n;
    n.op = OpKind::mul;
    n.parents = {a, b};
    Tensor out(A.shape);
    for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] * B.data[i];
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::gather_rows(NodeId a, std::vector<int> indices) {
    const Tensor& A = value(a);
    TensorNode n;
    n.op = OpKind::gather_rows;
    n.parents = {a};
    const int limit = A.rank() >= 1 ? A.shape[0] : 0;
    for (int idx : indices) {
        if (idx < 0 || idx >= limit) {
            throw IndexError("gather_rows: index " + std::to_string(idx) +
                             " out of range for input " + shape_str(A.shape));
        }
    }
    const int k = static_cast<int>(indices.size());
    if (A.rank() == 2) {
        const int f = A.shape[1];
        Tensor out({k, f});
        for (int t = 0; t < k; ++t)
            for (int j = 0; j < f; ++j) out.at(t, j) = A.at(indices[t], j);
        n.value = std::move(out);
    } else if (A.rank() == 1) {
        Tensor out({k});
        for (int t = 0; t < k; ++t) out.at(t) = A.at(indices[t]);
        n.value = std::move(out);
    } else {
        shape_fail(OpKind::gather_rows, A.shape);
    }
    n.indices = std::move(indices);
    return push(std::move(n));
}

NodeId Tape::gather_row(NodeId a, int index) {
    NodeId id = gather_rows(a, {index});
    TensorNode& n = mutable_node(id);
    n.squeeze = true;
    if (n.value.rank() == 2) {
        n.value.shape = {n.value.shape[1]};
    } else {
        n.value.shape = {};
    }
    return id;
}

NodeId Tape::relu(NodeId a) {
    const Tensor& A = value(a);
    TensorNode n;
    n.op = OpKind::relu;
    n.parents = {a};
    Tensor out(A.shape);
    for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = A.data[i] > 0.0 ? A.data[i] : 0.0;
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId a) {
    const Tensor& A = value(a);
    TensorNode n;
    n.op = OpKind::sigmoid;
    n.parents = {a};
    Tensor out(A.shape);
    for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = stable_sigmoid(A.data[i]);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::softmax_lastdim(NodeId a) {
    const Tensor& A = value(a);
    if (A.rank() < 1) shape_fail(OpKind::softmax_lastdim, A.shape);
    TensorNode n;
    n.op = OpKind::softmax_lastdim;
    n.parents = {a};
    Tensor out(A.shape);
    const int rows = A.rank() == 2 ? A.shape[0] : 1;
    const int cols = A.rank() == 2 ? A.shape[1] : A.shape[0];
    for (int i = 0; i < rows; ++i) {
        const double* x = A.data.data() + static_cast<std::size_t>(i) * cols;
        double* y = out.data.data() + static_cast<std::size_t>(i) * cols;
        double mx = x[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int j = 0; j < cols; ++j) y[j] /= sum;
    }
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::log(NodeId a) {
    const Tensor& A = value(a);
    TensorNode n;
    n.op = OpKind::log;
    n.parents = {a};
    Tensor out(A.shape);
    for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = std::log(A.data[i]);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::exp(NodeId a) {
    const Tensor& A = value(a);
    TensorNode n;
    n.op = OpKind::exp;
    n.parents = {a};
    Tensor out(A.shape);
    for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = std::exp(A.data[i]);
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::mean_rows(NodeId a) {
    const Tensor& A = value(a);
    TensorNode n;
    n.op = OpKind::mean_rows;
    n.parents = {a};
    if (A.rank() == 2) {
        const int m = A.shape[0], f = A.shape[1];
        Tensor out({f});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < f; ++j) out.at(j) += A.at(i, j);
        for (int j = 0; j < f; ++j) out.at(j) /= m;
        n.value = std::move(out);
    } else if (A.rank() == 1) {
        double s = 0.0;
        for (double v : A.data) s += v;
        n.value = Tensor::scalar(s / static_cast<double>(A.shape[0]));
    } else {
        shape_fail(OpKind::mean_rows, A.shape);
    }
    return push(std::move(n));
}

NodeId Tape::inner_product(NodeId a, NodeId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 1 || B.rank() != 1 || A.shape != B.shape) {
        shape_fail(OpKind::inner_product, A.shape, B.shape);
    }
    TensorNode n;
    n.op = OpKind::inner_product;
    n.parents = {a, b};
    double s = 0.0;
    for (std::size_t i = 0; i < A.numel(); ++i) s += A.data[i] * B.data[i];
    n.value = Tensor::scalar(s);
    return push(std::move(n));
}

NodeId Tape::scale(NodeId a, double factor) {
    const Tensor& A = value(a);
    TensorNode n;
    n.op = OpKind::scale;
    n.parents = {a};
    n.factor = factor;
    Tensor out(A.shape);
    for (std::size_t i = 0; i < A.numel(); ++i) out.data[i] = factor * A.data[i];
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::concat_rows(std::span<const NodeId> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    TensorNode n;
    n.op = OpKind::concat_rows;
    int cols = -1;
    int rows = 0;
    for (NodeId p : parts) {
        const Tensor& t = value(p);
        int c;
        if (t.rank() == 2) {
            c = t.shape[1];
            rows += t.shape[0];
        } else if (t.rank() == 1) {
            c = t.shape[0];
            rows += 1;
        } else {
            shape_fail(OpKind::concat_rows, t.shape);
        }
        if (cols == -1) cols = c;
        if (c != cols) shape_fail(OpKind::concat_rows, value(parts[0]).shape, t.shape);
        n.parents.push_back(p);
    }
    Tensor out({rows, cols});
    int r = 0;
    for (NodeId p : parts) {
        const Tensor& t = value(p);
        std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<std::size_t>(r) * cols);
        r += t.rank() == 2 ? t.shape[0] : 1;
    }
    n.value = std::move(out);
    return push(std::move(n));
}

NodeId Tape::spmm(const CsrMatrix& m, NodeId x) {
    const Tensor& X = value(x);
    if (X.rank() != 2 || X.shape[0] != m.n) {
        throw ShapeError(std::string("spmm: matrix of size ") + std::to_string(m.n) +
                         " cannot multiply input " + shape_str(X.shape));
    }
    TensorNode n;
    n.op = OpKind::spmm;
    n.parents = {x};
    n.sparse = &m;
    const int f = X.shape[1];
    Tensor out({m.n, f});
    for (int i = 0; i < m.n; ++i) {
        double* yi = out.data.data() + static_cast<std::size_t>(i) * f;
        for (int k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k) {
            const double a = m.val[k];
            const double* xr = X.data.data() + static_cast<std::size_t>(m.col[k]) * f;
            for (int j = 0; j < f; ++j) yi[j] += a * xr[j];
        }
    }
    n.value = std::move(out);
    return push(std::move(n));
}

Tensor Tape::adjoint_tensor(NodeId id) const {
    const TensorNode& n = node(id);
    Tensor t(n.value.shape);
    if (!n.adjoint.empty()) t.data = n.adjoint;
    return t;
}

void Tape::backward(NodeId loss) {
    const TensorNode& ln = node(loss);
    if (ln.value.numel() != 1 || ln.value.rank() > 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(ln.value.shape));
    }
    for (auto& n : nodes_) {
        n.adjoint.assign(n.value.numel(), 0.0);
    }
    mutable_node(loss).adjoint[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
        backprop_node(id);
    }
}

void Tape::backprop_node(NodeId id) {
    TensorNode& n = mutable_node(id);
    if (n.op == OpKind::leaf) return;
    const std::vector<double>& g = n.adjoint;
    bool all_zero = true;
    for (double v : g) {
        if (v != 0.0) {
            all_zero = false;
            break;
        }
    }
    if (all_zero) return;

    switch (n.op) {
        case OpKind::matmul: {
            const Tensor& A = nodes_[n.parents[0]].value;
            const Tensor& B = nodes_[n.parents[1]].value;
            std::vector<double>& da = nodes_[n.parents[0]].adjoint;
            std::vector<double>& db = nodes_[n.parents[1]].adjoint;
            if (A.rank() == 2 && B.rank() == 2) {
                const int m = A.shape[0], k = A.shape[1], p = B.shape[1];
                // dA = G B^T and dB = A^T G, both with row-contiguous loops
                for (int i = 0; i < m; ++i) {
                    const double* gi = g.data() + static_cast<std::size_t>(i) * p;
                    for (int l = 0; l < k; ++l) {
                        const double* bl = B.data.data() + static_cast<std::size_t>(l) * p;
                        double s = 0.0;
                        for (int j = 0; j < p; ++j) s += gi[j] * bl[j];
                        da[static_cast<std::size_t>(i) * k + l] += s;
                    }
                }
                for (int i = 0; i < m; ++i) {
                    const double* gi = g.data() + static_cast<std::size_t>(i) * p;
                    for (int l = 0; l < k; ++l) {
                        const double av = A.at(i, l);
                        if (av == 0.0) continue;
                        double* dbl = db.data() + static_cast<std::size_t>(l) * p;
                        for (int j = 0; j < p; ++j) dbl[j] += av * gi[j];
                    }
                }
            } else if (A.rank() == 2 && B.rank() == 1) {
                const int m = A.shape[0], k = A.shape[1];
                for (int i = 0; i < m; ++i) {
                    const double gv = g[static_cast<std::size_t>(i)];
                    if (gv == 0.0) continue;
                    for (int l = 0; l < k; ++l) {
                        da[static_cast<std::size_t>(i) * k + l] += gv * B.at(l);
                        db[static_cast<std::size_t>(l)] += gv * A.at(i, l);
                    }
                }
            } else {  // vec x mat
                const int k = A.shape[0], p = B.shape[1];
                for (int j = 0; j < p; ++j) {
                    const double gv = g[static_cast<std::size_t>(j)];
                    if (gv == 0.0) continue;
                    for (int l = 0; l < k; ++l) {
                        da[static_cast<std::size_t>(l)] += gv * B.at(l, j);
                        db[static_cast<std::size_t>(l) * p + j] += gv * A.at(l);
                    }
                }
            }
            break;
        }
        case OpKind::add: {
            const Tensor& A = nodes_[n.parents[0]].value;
            const Tensor& B = nodes_[n.parents[1]].value;
            std::vector<double>& da = nodes_[n.parents[0]].adjoint;
            std::vector<double>& db = nodes_[n.parents[1]].adjoint;
            if (A.shape == B.shape) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    da[i] += g[i];
                    db[i] += g[i];
                }
            } else {  // row broadcast
                const int m = A.shape[0], f = A.shape[1];
                for (int i = 0; i < m; ++i) {
                    for (int j = 0; j < f; ++j) {
                        const double gv = g[static_cast<std::size_t>(i) * f + j];
                        da[static_cast<std::size_t>(i) * f + j] += gv;
                        db[static_cast<std::size_t>(j)] += gv;
                    }
                }
            }
            break;
        }
        case OpKind::mul: {
            const Tensor& A = nodes_[n.parents[0]].value;
            const Tensor& B = nodes_[n.parents[1]].value;
            std::vector<double>& da = nodes_[n.parents[0]].adjoint;
            std::vector<double>& db = nodes_[n.parents[1]].adjoint;
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i] * B.data[i];
                db[i] += g[i] * A.data[i];
            }
            break;
        }
        case OpKind::gather_rows: {
            const Tensor& A = nodes_[n.parents[0]].value;
            std::vector<double>& da = nodes_[n.parents[0]].adjoint;
            if (A.rank() == 2) {
                const int f = A.shape[1];
                for (std::size_t t = 0; t < n.indices.size(); ++t) {
                    const std::size_t src = t * static_cast<std::size_t>(f);
                    const std::size_t dst = static_cast<std::size_t>(n.indices[t]) * f;
                    for (int j = 0; j < f; ++j) da[dst + j] += g[src + j];
                }
            } else {
                for (std::size_t t = 0; t < n.indices.size(); ++t) {
                    da[static_cast<std::size_t>(n.indices[t])] += g[t];
                }
            }
            break;
        }
        case OpKind::relu: {
            const Tensor& A = nodes_[n.parents[0]].value;
            std::vector<double>& da = nodes_[n.parents[0]].adjoint;
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (A.data[i] > 0.0) da[i] += g[i];
            }
            break;
        }
        case OpKind::sigmoid: {
            std::vector<double>& da = nodes_[n.parents[0]].adjoint;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double y = n.value.data[i];
                da[i] += g[i] * y * (1.0 - y);
            }
            break;
        }
        case OpKind::softmax_lastdim: {
            const Tensor& Y = n.value;
            std::vector<double>& da = nodes_[n.parents[0]].adjoint;
            const int rows = Y.rank() == 2 ? Y.shape[0] : 1;
            const int cols = Y.rank() == 2 ? Y.shape[1] : Y.shape[0];
            for (int i = 0; i < rows; ++i) {
                const double* y = Y.data.data() + static_cast<std::size_t>(i) * cols;
                const double* gr = g.data() + static_cast<std::size_t>(i) * cols;
                double dot = 0.0;
                for (int j = 0; j < cols; ++j) dot += gr[j] * y[j];
                double* dr = da.data() + static_cast<std::size_t>(i) * cols;
                for (int j = 0; j < cols; ++j) dr[j] += y[j] * (gr[j] - dot);
            }
            break;
        }
        case OpKind::log: {
            const Tensor& A = nodes_[n.parents[0]].value;
            std::vector<double>& da = nodes_[n.parents[0]].adjoint;
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / A.data[i];
            break;
        }
        case OpKind::exp: {
            std::vector<double>& da = nodes_[n.parents[0]].adjoint;
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * n.value.data[i];
            break;
        }
        case OpKind::mean_rows: {
            const Tensor& A = nodes_[n.parents[0]].value;
            std::vector<double>& da = nodes_[n.parents[0]].adjoint;
            if (A.rank() == 2) {
                const int m = A.shape[0], f = A.shape[1];
                const double inv = 1.0 / m;
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < f; ++j)
                        da[static_cast<std::size_t>(i) * f + j] += g[static_cast<std::size_t>(j)] * inv;
            } else {
                const double inv = 1.0 / A.shape[0];
                for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[0] * inv;
            }
            break;
        }
        case OpKind::inner_product: {
            const Tensor& A = nodes_[n.parents[0]].value;
            const Tensor& B = nodes_[n.parents[1]].value;
            std::vector<double>& da = nodes_[n.parents[0]].adjoint;
            std::vector<double>& db = nodes_[n.parents[1]].adjoint;
            const double gv = g[0];
            for (std::size_t i = 0; i < A.numel(); ++i) {
                da[i] += gv * B.data[i];
                db[i] += gv * A.data[i];
            }
            break;
        }
        case OpKind::scale: {
            std::vector<double>& da = nodes_[n.parents[0]].adjoint;
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += n.factor * g[i];
            break;
        }
        case OpKind::concat_rows: {
            const int cols = n.value.shape[1];
            std::size_t off = 0;
            for (NodeId p : n.parents) {
                std::vector<double>& dp = nodes_[p].adjoint;
                for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g[off + i];
                off += dp.size();
            }
            (void)cols;
            break;
        }
        case OpKind::spmm: {
            const CsrMatrix& m = *n.sparse;
            std::vector<double>& dx = nodes_[n.parents[0]].adjoint;
            const int f = n.value.shape[1];
            // transpose product: dX[col] += val * g[row]
            for (int i = 0; i < m.n; ++i) {
                const double* gi = g.data() + static_cast<std::size_t>(i) * f;
                for (int k = m.row_ptr[i]; k < m.row_ptr[i + 1]; ++k) {
                    const double a = m.val[k];
                    double* dr = dx.data() + static_cast<std::size_t>(m.col[k]) * f;
                    for (int j = 0; j < f; ++j) dr[j] += a * gi[j];
                }
            }
            break;
        }
        case OpKind::leaf:
            break;
    }
}

double grad_check(const LossFn& f, std::span<const double> theta, double eps) {
    if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
    std::vector<double> point(theta.begin(), theta.end());
    std::vector<double> analytic;
    const double base = f(point, &analytic);
    if (!std::isfinite(base)) throw NumericError("grad_check: loss is not finite at theta");
    if (analytic.size() != point.size()) {
        throw ContractError("grad_check: gradient size mismatch");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double saved = point[i];
        point[i] = saved + eps;
        const double up = f(point, nullptr);
        point[i] = saved - eps;
        const double down = f(point, nullptr);
        point[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("grad_check: loss is not finite near theta");
        }
        const double fd = (up - down) / (2.0 * eps);
        const double rel = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace dgdi
