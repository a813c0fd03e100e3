#include "dgdi/objective.hpp"

#include <cmath>

#include "dgdi/errors.hpp"
#include "dgdi/geograph.hpp"
#include "dgdi/rng.hpp"

namespace dgdi {

Mode mode_from_string(const std::string& name) {
    if (name == "default") return Mode::dgdi_default;
    if (name == "lambda1_zero") return Mode::lambda1_zero;
    if (name == "remove_gnn") return Mode::remove_gnn;
    throw ConfigError("unknown mode '" + name + "' (expected default|lambda1_zero|remove_gnn)");
}

std::string mode_to_string(Mode mode) {
    switch (mode) {
        case Mode::dgdi_default: return "default";
        case Mode::lambda1_zero: return "lambda1_zero";
        case Mode::remove_gnn: return "remove_gnn";
    }
    return "?";
}

void Hyperparams::validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("lambda weights must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (dim < 2 || dim % 2 != 0) throw ConfigError("dim must be even and >= 2");
    if (n_layers < 1 || n_layers > 2) throw ConfigError("n_layers must be 1 or 2");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (patience < 0) throw ConfigError("patience must be >= 0");
    if (k_list.empty()) throw ConfigError("k_list must not be empty");
    for (int k : k_list)
        if (k < 1) throw ConfigError("k values must be >= 1");
}

NodeId infonce_loss(Tape& tape, NodeId h, int target, NodeId embeddings, double tau) {
    if (!(tau > 0.0)) throw ConfigError("infonce_loss: tau must be positive");
    const int n = tape.value(embeddings).shape[0];
    if (target < 0 || target >= n) {
        throw IndexError("infonce_loss: target " + std::to_string(target) + " out of range");
    }
    NodeId scores = tape.matmul(embeddings, h);                 // (N)
    NodeId probs = tape.softmax_lastdim(tape.scale(scores, 1.0 / tau));
    NodeId target_prob = tape.gather_row(probs, target);        // scalar
    return tape.scale(tape.log(target_prob), -1.0);
}

NodeId dgi_loss(Tape& tape, std::span<const NodeId> hs, NodeId g, NodeId g_hat) {
    if (hs.empty()) throw ContractError("dgi_loss: empty batch");
    NodeId sum = -1;
    for (NodeId h : hs) {
        // log(1 - sigma(x)) = log sigma(-x)
        NodeId pos = tape.log(tape.sigmoid(tape.inner_product(h, g)));
        NodeId neg = tape.log(tape.sigmoid(tape.scale(tape.inner_product(h, g_hat), -1.0)));
        NodeId pair = tape.add(pos, neg);
        sum = sum < 0 ? pair : tape.add(sum, pair);
    }
    return tape.scale(sum, -1.0 / static_cast<double>(hs.size()));
}

BatchLoss total_loss(Tape& tape, const CsrMatrix& norm_adj,
                     const std::vector<Diffusion>& diffusions,
                     std::span<const PrefixInstance> batch, const ModelParams& params,
                     const Hyperparams& hp, Mode mode, std::uint64_t corrupt_seed) {
    if (batch.empty()) throw ContractError("total_loss: empty batch");
    hp.validate();

    BatchLoss out;
    out.params = stage_params(tape, params);

    const bool use_gnn = mode != Mode::remove_gnn;
    const double lambda1 = mode == Mode::dgdi_default ? hp.lambda1 : 0.0;

    NodeId z = use_gnn ? gcn_forward(tape, norm_adj, out.params.embeddings,
                                     out.params.gcn_weights)
                       : out.params.embeddings;

    std::vector<NodeId> hs;
    hs.reserve(batch.size());
    NodeId infonce_sum = -1;
    for (const PrefixInstance& inst : batch) {
        const auto& visits = diffusions[static_cast<std::size_t>(inst.diffusion)].visits;
        if (inst.prefix_len < 1 || inst.prefix_len >= static_cast<int>(visits.size())) {
            throw ContractError("total_loss: prefix length out of range");
        }
        std::vector<int> prefix;
        prefix.reserve(static_cast<std::size_t>(inst.prefix_len));
        for (int i = 0; i < inst.prefix_len; ++i) prefix.push_back(visits[static_cast<std::size_t>(i)].first);
        NodeId h = diffusion_encode(tape, z, prefix, out.params);
        hs.push_back(h);
        NodeId li = infonce_loss(tape, h, inst.target, out.params.embeddings, hp.tau);
        infonce_sum = infonce_sum < 0 ? li : tape.add(infonce_sum, li);
    }
    NodeId infonce_mean = tape.scale(infonce_sum, 1.0 / static_cast<double>(batch.size()));
    out.infonce = tape.value(infonce_mean).data[0];

    NodeId dgi_mean = -1;
    if (lambda1 != 0.0) {
        NodeId g = graph_pool(tape, z);
        const auto perm = corruption_permutation(params.n_nodes(), corrupt_seed);
        NodeId corrupted = tape.gather_rows(out.params.embeddings, perm);
        NodeId z_hat = gcn_forward(tape, norm_adj, corrupted, out.params.gcn_weights);
        NodeId g_hat = graph_pool(tape, z_hat);
        dgi_mean = dgi_loss(tape, hs, g, g_hat);
        out.dgi = tape.value(dgi_mean).data[0];
        out.has_dgi = true;
    }

    if (lambda1 != 0.0 && hp.lambda2 != 0.0) {
        out.node = tape.add(tape.scale(dgi_mean, lambda1), tape.scale(infonce_mean, hp.lambda2));
    } else if (lambda1 != 0.0) {
        out.node = tape.scale(dgi_mean, lambda1);
    } else if (hp.lambda2 != 0.0) {
        out.node = tape.scale(infonce_mean, hp.lambda2);
    } else {
        out.node = tape.leaf(Tensor::scalar(0.0));
    }
    out.total = tape.value(out.node).data[0];
    return out;
}

double total_loss_value(const CsrMatrix& norm_adj, const std::vector<Diffusion>& diffusions,
                        std::span<const PrefixInstance> batch, const ModelParams& params,
                        const Hyperparams& hp, Mode mode, std::uint64_t corrupt_seed) {
    Tape tape;
    return total_loss(tape, norm_adj, diffusions, batch, params, hp, mode, corrupt_seed).total;
}

Gradients collect_gradients(const Tape& tape, const ParamNodes& nodes) {
    Gradients out;
    for (NodeId id : nodes.ordered()) {
        out.tensors.push_back(tape.adjoint_tensor(id));
    }
    return out;
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, double lr) {
    auto named = params.named_tensors();
    if (grads.tensors.size() != named.size()) {
        throw ContractError("adam_step: gradient tensor count mismatch");
    }
    if (state.m.empty()) {
        for (const auto& [name, t] : named) {
            state.m.emplace_back(t->shape);
            state.v.emplace_back(t->shape);
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < named.size(); ++i) {
        Tensor& theta = *named[i].second;
        const Tensor& g = grads.tensors[i];
        if (g.shape != theta.shape) {
            throw ContractError("adam_step: gradient shape mismatch for " + named[i].first);
        }
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < theta.numel(); ++j) {
            const double gj = g.data[j];
            if (!std::isfinite(gj)) {
                throw NumericError("adam_step: non-finite gradient in tensor '" + named[i].first +
                                   "'");
            }
            m.data[j] = state.beta1 * m.data[j] + (1.0 - state.beta1) * gj;
            v.data[j] = state.beta2 * v.data[j] + (1.0 - state.beta2) * gj * gj;
            const double m_hat = m.data[j] / bc1;
            const double v_hat = v.data[j] / bc2;
            theta.data[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

}  // namespace dgdi
