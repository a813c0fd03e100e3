#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dgdi/sparse.hpp"
#include "dgdi/tape.hpp"
#include "dgdi/tensor.hpp"

namespace dgdi {

// All learnable state: the location embedding table, per-layer GCN weights,
// the single-head attention projections and the two-layer MLP head.
struct ModelParams {
    Tensor embeddings;                 // N x F
    std::vector<Tensor> gcn_weights;   // n_layers of F x F
    Tensor attn_q, attn_k, attn_v;     // F x F, no bias
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // F x F, F, F x F, F

    int n_nodes() const { return embeddings.shape[0]; }
    int dim() const { return embeddings.shape[1]; }
    int n_layers() const { return static_cast<int>(gcn_weights.size()); }

    // Fixed iteration order shared by the optimizer, checkpoints and the
    // gradient checker.
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;

    std::size_t parameter_count() const;
    std::vector<double> flatten() const;
    void unflatten(std::span<const double> theta);
};

// Embeddings ~ Normal(0, 1/F); weights Glorot-uniform; biases zero.
ModelParams init_params(int n_nodes, int dim, int n_layers, std::uint64_t seed);

// Leaf ids of every parameter on a tape, in named_tensors() order.
struct ParamNodes {
    NodeId embeddings;
    std::vector<NodeId> gcn_weights;
    NodeId attn_q, attn_k, attn_v;
    NodeId mlp_w1, mlp_b1, mlp_w2, mlp_b2;

    std::vector<NodeId> ordered() const;
};

ParamNodes stage_params(Tape& tape, const ModelParams& params);

// Z^(l) = ReLU(A_hat Z^(l-1) W^(l-1)), Z^(0) = embeddings.
NodeId gcn_forward(Tape& tape, const CsrMatrix& norm_adj, NodeId embeddings,
                   std::span<const NodeId> gcn_weights);

// Sinusoidal encoding of a single position (even entries sine, odd cosine,
// frequency 10000^(2i/L)). Positions are 1-based in the encoder; k = 0 is
// still well defined.
Tensor positional_encoding(int position, int dim);

// Rows 1..k stacked, for a prefix of length k.
Tensor positional_encoding_rows(int k, int dim);

// Attention over the prefix with the last position as query, then the MLP
// head. Returns the diffusion representation h (rank-1, F).
NodeId diffusion_encode(Tape& tape, NodeId z, std::span<const int> prefix, const ParamNodes& p);

// Mean over node rows.
NodeId graph_pool(Tape& tape, NodeId z);

// Tape-free forward path used by evaluation and finite differencing.
Tensor gcn_forward_plain(const CsrMatrix& norm_adj, const Tensor& embeddings,
                         std::span<const Tensor> gcn_weights);
Tensor diffusion_encode_plain(const Tensor& z, std::span<const int> prefix,
                              const ModelParams& params);

// Checkpoint: "DGDI" magic, u32 LE version, JSON header (tensor name ->
// shape and byte offset) space-padded to 8 bytes, then row-major f64 LE
// blobs. Round trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace dgdi
