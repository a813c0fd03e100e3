#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dgdi/dataio.hpp"
#include "dgdi/model.hpp"
#include "dgdi/tape.hpp"

namespace dgdi {

// Ablation switch: the full model, the InfoNCE-only variant, or attention
// straight over the embedding table (no graph propagation, no DGI term).
enum class Mode {
    dgdi_default,
    lambda1_zero,
    remove_gnn,
};

Mode mode_from_string(const std::string& name);
std::string mode_to_string(Mode mode);

struct Hyperparams {
    double lambda1 = 0.3;
    double lambda2 = 1.0;
    double tau = 0.75;
    double lr = 0.001;
    int batch_size = 16;
    int dim = 32;
    int n_layers = 2;
    int epochs = 100;
    int patience = 0;  // epochs without validation improvement; 0 disables
    std::uint64_t seed = 1;
    std::vector<int> k_list{3, 5, 10};

    void validate() const;
};

// -log softmax probability of the target location, temperature-scaled inner
// products against the whole table.
NodeId infonce_loss(Tape& tape, NodeId h, int target, NodeId embeddings, double tau);

// Negated mean of log sigma(<h,g>) + log(1 - sigma(<h,g_hat>)) over the batch.
NodeId dgi_loss(Tape& tape, std::span<const NodeId> hs, NodeId g, NodeId g_hat);

struct BatchLoss {
    NodeId node = -1;      // scalar loss on the tape
    ParamNodes params;
    double total = 0.0;
    double infonce = 0.0;
    double dgi = 0.0;
    bool has_dgi = false;  // false when the term is dropped (lambda1 = 0 / remove_gnn)
};

// One full forward pass over a batch of prefix instances. The corruption
// permutation is drawn from corrupt_seed, so a batch is reproducible in
// isolation.
BatchLoss total_loss(Tape& tape, const CsrMatrix& norm_adj,
                     const std::vector<Diffusion>& diffusions,
                     std::span<const PrefixInstance> batch, const ModelParams& params,
                     const Hyperparams& hp, Mode mode, std::uint64_t corrupt_seed);

// Loss value only (no backward); used for finite differencing.
double total_loss_value(const CsrMatrix& norm_adj, const std::vector<Diffusion>& diffusions,
                        std::span<const PrefixInstance> batch, const ModelParams& params,
                        const Hyperparams& hp, Mode mode, std::uint64_t corrupt_seed);

struct Gradients {
    std::vector<Tensor> tensors;  // named_tensors() order
};

Gradients collect_gradients(const Tape& tape, const ParamNodes& nodes);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<Tensor> m, v;  // allocated on the first step
};

// Bias-corrected Adam update, applied tensor by tensor in the fixed
// named_tensors() order. A non-finite gradient aborts, naming the tensor.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, double lr);

}  // namespace dgdi
