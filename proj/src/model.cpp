#include "dgdi/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dgdi/errors.hpp"
#include "dgdi/rng.hpp"
#include "json.hpp"

namespace dgdi {

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("embeddings", &embeddings);
    for (std::size_t l = 0; l < gcn_weights.size(); ++l) {
        out.emplace_back("gcn.w" + std::to_string(l), &gcn_weights[l]);
    }
    out.emplace_back("attn.wq", &attn_q);
    out.emplace_back("attn.wk", &attn_k);
    out.emplace_back("attn.wv", &attn_v);
    out.emplace_back("mlp.w1", &mlp_w1);
    out.emplace_back("mlp.b1", &mlp_b1);
    out.emplace_back("mlp.w2", &mlp_w2);
    out.emplace_back("mlp.b2", &mlp_b2);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<ModelParams*>(this)->named_tensors()) {
        out.emplace_back(name, t);
    }
    return out;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_tensors()) n += t->numel();
    return n;
}

std::vector<double> ModelParams::flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& [name, t] : named_tensors()) {
        out.insert(out.end(), t->data.begin(), t->data.end());
    }
    return out;
}

void ModelParams::unflatten(std::span<const double> theta) {
    std::size_t off = 0;
    for (auto& [name, t] : named_tensors()) {
        if (off + t->numel() > theta.size()) {
            throw ContractError("unflatten: parameter vector too short");
        }
        std::copy(theta.begin() + static_cast<std::ptrdiff_t>(off),
                  theta.begin() + static_cast<std::ptrdiff_t>(off + t->numel()), t->data.begin());
        off += t->numel();
    }
    if (off != theta.size()) throw ContractError("unflatten: parameter vector too long");
}

namespace {

Tensor glorot_uniform(int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t({fan_in, fan_out});
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

ModelParams init_params(int n_nodes, int dim, int n_layers, std::uint64_t seed) {
    if (dim < 1) throw ConfigError("init_params: dim must be >= 1");
    if (dim % 2 != 0) throw ConfigError("init_params: dim must be even (positional encoding)");
    if (n_layers < 1 || n_layers > 2) throw ConfigError("init_params: n_layers must be 1 or 2");
    if (n_nodes < 1) throw ConfigError("init_params: need at least one node");

    ModelParams p;
    Rng emb_rng = stream(seed, "init.embeddings");
    p.embeddings = Tensor({n_nodes, dim});
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(dim));
    for (auto& v : p.embeddings.data) v = std_dev * emb_rng.normal();

    Rng w_rng = stream(seed, "init.weights");
    for (int l = 0; l < n_layers; ++l) p.gcn_weights.push_back(glorot_uniform(dim, dim, w_rng));
    p.attn_q = glorot_uniform(dim, dim, w_rng);
    p.attn_k = glorot_uniform(dim, dim, w_rng);
    p.attn_v = glorot_uniform(dim, dim, w_rng);
    p.mlp_w1 = glorot_uniform(dim, dim, w_rng);
    p.mlp_b1 = Tensor({dim});
    p.mlp_w2 = glorot_uniform(dim, dim, w_rng);
    p.mlp_b2 = Tensor({dim});
    return p;
}

std::vector<NodeId> ParamNodes::ordered() const {
    std::vector<NodeId> out{embeddings};
    out.insert(out.end(), gcn_weights.begin(), gcn_weights.end());
    for (NodeId id : {attn_q, attn_k, attn_v, mlp_w1, mlp_b1, mlp_w2, mlp_b2}) out.push_back(id);
    return out;
}

ParamNodes stage_params(Tape& tape, const ModelParams& params) {
    ParamNodes n;
    n.embeddings = tape.leaf(params.embeddings);
    for (const auto& w : params.gcn_weights) n.gcn_weights.push_back(tape.leaf(w));
    n.attn_q = tape.leaf(params.attn_q);
    n.attn_k = tape.leaf(params.attn_k);
    n.attn_v = tape.leaf(params.attn_v);
    n.mlp_w1 = tape.leaf(params.mlp_w1);
    n.mlp_b1 = tape.leaf(params.mlp_b1);
    n.mlp_w2 = tape.leaf(params.mlp_w2);
    n.mlp_b2 = tape.leaf(params.mlp_b2);
    return n;
}

NodeId gcn_forward(Tape& tape, const CsrMatrix& norm_adj, NodeId embeddings,
                   std::span<const NodeId> gcn_weights) {
    NodeId z = embeddings;
    for (NodeId w : gcn_weights) {
        z = tape.relu(tape.matmul(tape.spmm(norm_adj, z), w));
    }
    return z;
}

Tensor positional_encoding(int position, int dim) {
    if (dim < 2 || dim % 2 != 0) {
        throw ConfigError("positional_encoding: dim must be even and >= 2");
    }
    if (position < 0) throw ContractError("positional_encoding: negative position");
    Tensor out({dim});
    for (int i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / dim);
        out.at(2 * i) = std::sin(position * freq);
        out.at(2 * i + 1) = std::cos(position * freq);
    }
    return out;
}

Tensor positional_encoding_rows(int k, int dim) {
    Tensor out({k, dim});
    for (int j = 1; j <= k; ++j) {
        Tensor row = positional_encoding(j, dim);
        std::copy(row.data.begin(), row.data.end(),
                  out.data.begin() + static_cast<std::size_t>(j - 1) * dim);
    }
    return out;
}

NodeId diffusion_encode(Tape& tape, NodeId z, std::span<const int> prefix, const ParamNodes& p) {
    if (prefix.empty()) throw ContractError("diffusion_encode: empty prefix");
    const int k = static_cast<int>(prefix.size());
    const int dim = tape.value(z).shape[1];

    NodeId rows = tape.gather_rows(z, std::vector<int>(prefix.begin(), prefix.end()));
    NodeId zp = tape.add(rows, tape.leaf(positional_encoding_rows(k, dim)));

    NodeId query = tape.matmul(tape.gather_row(zp, k - 1), p.attn_q);  // last position
    NodeId keys = tape.matmul(zp, p.attn_k);
    NodeId weights = tape.softmax_lastdim(tape.matmul(keys, query));
    NodeId pooled = tape.matmul(weights, tape.matmul(zp, p.attn_v));

    NodeId hidden = tape.relu(tape.add(tape.matmul(pooled, p.mlp_w1), p.mlp_b1));
    return tape.add(tape.matmul(hidden, p.mlp_w2), p.mlp_b2);
}

NodeId graph_pool(Tape& tape, NodeId z) {
    return tape.mean_rows(z);
}

Tensor gcn_forward_plain(const CsrMatrix& norm_adj, const Tensor& embeddings,
                         std::span<const Tensor> gcn_weights) {
    Tape tape;
    std::vector<NodeId> ws;
    for (const auto& w : gcn_weights) ws.push_back(tape.leaf(w));
    NodeId z = gcn_forward(tape, norm_adj, tape.leaf(embeddings), ws);
    return tape.value(z);
}

Tensor diffusion_encode_plain(const Tensor& z, std::span<const int> prefix,
                              const ModelParams& params) {
    Tape tape;
    ParamNodes nodes = stage_params(tape, params);
    NodeId h = diffusion_encode(tape, tape.leaf(z), prefix, nodes);
    return tape.value(h);
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const std::string& s, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    }
    return v;
}

void append_f64_le(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double read_f64_le(const std::string& s, std::size_t off) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
    }
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    const auto tensors = params.named_tensors();

    // header JSON needs final offsets; its own length shifts them, so size the
    // padded header first with placeholder offsets of the right magnitude
    nlohmann::ordered_json header;
    for (const auto& [name, t] : tensors) {
        header[name] = {{"shape", t->shape}, {"offset", 0}};
    }
    std::size_t header_len = header.dump().size();
    std::size_t payload_start = 0;
    for (int pass = 0; pass < 8; ++pass) {
        std::size_t padded = (8 + header_len + 7) / 8 * 8;
        std::size_t off = padded;
        for (const auto& [name, t] : tensors) {
            header[name]["offset"] = off;
            off += t->numel() * 8;
        }
        const std::size_t new_len = header.dump().size();
        if (new_len == header_len) {
            payload_start = padded;
            break;
        }
        header_len = new_len;
    }
    if (payload_start == 0) throw NumericError("save_checkpoint: header did not stabilize");

    std::string blob;
    blob += "DGDI";
    put_u32_le(blob, kCheckpointVersion);
    blob += header.dump();
    blob.resize(payload_start, ' ');
    for (const auto& [name, t] : tensors) {
        for (double v : t->data) append_f64_le(blob, v);
    }

    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot write checkpoint: " + path.string());
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (blob.size() < 9 || blob.compare(0, 4, "DGDI") != 0) {
        throw ParseError(path.string() + ": not a DGDI checkpoint");
    }
    const std::uint32_t version = get_u32_le(blob, 4);
    if (version != kCheckpointVersion) {
        throw ParseError(path.string() + ": unsupported checkpoint version " +
                         std::to_string(version));
    }
    // the JSON header is brace-balanced; scan past it, respecting strings
    std::size_t pos = 8;
    int depth = 0;
    bool in_string = false, escaped = false;
    std::size_t header_end = 0;
    for (; pos < blob.size(); ++pos) {
        const char c = blob[pos];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') ++depth;
        else if (c == '}') {
            if (--depth == 0) {
                header_end = pos + 1;
                break;
            }
        }
    }
    if (header_end == 0) throw ParseError(path.string() + ": unterminated checkpoint header");
    nlohmann::ordered_json header = nlohmann::ordered_json::parse(blob.substr(8, header_end - 8));

    auto read_tensor = [&](const std::string& name) {
        if (!header.contains(name)) {
            throw ParseError(path.string() + ": checkpoint missing tensor '" + name + "'");
        }
        const auto& meta = header[name];
        Shape shape = meta["shape"].get<Shape>();
        const std::size_t offset = meta["offset"].get<std::size_t>();
        Tensor t(shape);
        if (offset + t.numel() * 8 > blob.size()) {
            throw ParseError(path.string() + ": tensor '" + name + "' overruns the file");
        }
        for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = read_f64_le(blob, offset + i * 8);
        return t;
    };

    ModelParams p;
    p.embeddings = read_tensor("embeddings");
    for (int l = 0; header.contains("gcn.w" + std::to_string(l)); ++l) {
        p.gcn_weights.push_back(read_tensor("gcn.w" + std::to_string(l)));
    }
    p.attn_q = read_tensor("attn.wq");
    p.attn_k = read_tensor("attn.wk");
    p.attn_v = read_tensor("attn.wv");
    p.mlp_w1 = read_tensor("mlp.w1");
    p.mlp_b1 = read_tensor("mlp.b1");
    p.mlp_w2 = read_tensor("mlp.w2");
    p.mlp_b2 = read_tensor("mlp.b2");
    return p;
}

}  // namespace dgdi
