#include "dgdi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "dgdi/errors.hpp"
#include "json.hpp"

namespace dgdi {

namespace {

std::vector<double> score_against_table(const Tensor& h, const Tensor& table) {
    const int n = table.shape[0];
    const int f = table.shape[1];
    std::vector<double> scores(static_cast<std::size_t>(n), 0.0);
    for (int v = 0; v < n; ++v) {
        double s = 0.0;
        for (int j = 0; j < f; ++j) s += table.at(v, j) * h.at(j);
        scores[static_cast<std::size_t>(v)] = s;
    }
    return scores;
}

// 1-based rank of `target` under (score desc, index asc) without sorting the
// whole candidate list.
int rank_of_target(const std::vector<double>& scores, const std::vector<bool>& visited,
                   int target) {
    const double st = scores[static_cast<std::size_t>(target)];
    int rank = 1;
    for (int v = 0; v < static_cast<int>(scores.size()); ++v) {
        if (v == target || visited[static_cast<std::size_t>(v)]) continue;
        const double sv = scores[static_cast<std::size_t>(v)];
        if (sv > st || (sv == st && v < target)) ++rank;
    }
    return rank;
}

double mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double mu = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

void check_scored(std::span<const RankedPrediction> ranks, int k) {
    if (k < 1) throw ConfigError("metric: k must be >= 1");
    bool any = false;
    for (const auto& r : ranks) {
        if (!r.skipped) {
            any = true;
            break;
        }
    }
    if (!any) throw ValidationError("metric: no scored instances (undefined)");
}

}  // namespace

std::vector<int> rank_candidates(const Tensor& h, const Tensor& table,
                                 const std::vector<bool>& visited) {
    if (table.rank() != 2 || h.rank() != 1 || h.shape[0] != table.shape[1]) {
        throw ShapeError("rank_candidates: h and table shapes do not conform");
    }
    if (static_cast<int>(visited.size()) != table.shape[0]) {
        throw ShapeError("rank_candidates: visited mask size mismatch");
    }
    const auto scores = score_against_table(h, table);
    std::vector<int> candidates;
    for (int v = 0; v < table.shape[0]; ++v) {
        if (!visited[static_cast<std::size_t>(v)]) candidates.push_back(v);
    }
    if (candidates.empty()) throw ValidationError("rank_candidates: every node is visited");
    std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
        const double sa = scores[static_cast<std::size_t>(a)];
        const double sb = scores[static_cast<std::size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    });
    return candidates;
}

double recall_at_k(std::span<const RankedPrediction> ranks, int k) {
    check_scored(ranks, k);
    std::size_t hits = 0, total = 0;
    for (const auto& r : ranks) {
        if (r.skipped) continue;
        ++total;
        if (r.rank <= k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

double map_at_k(std::span<const RankedPrediction> ranks, int k) {
    check_scored(ranks, k);
    double sum = 0.0;
    std::size_t total = 0;
    for (const auto& r : ranks) {
        if (r.skipped) continue;
        ++total;
        if (r.rank <= k) sum += 1.0 / static_cast<double>(r.rank);
    }
    return sum / static_cast<double>(total);
}

BucketReport bucket_report(std::span<const RankedPrediction> ranks,
                           const std::vector<long long>& train_freq, std::span<const int> edges,
                           int k) {
    if (k < 1) throw ConfigError("bucket_report: k must be >= 1");
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (edges[i] <= edges[i - 1]) throw ConfigError("bucket_report: edges must ascend");
    }
    BucketReport out;
    out.edges.assign(edges.begin(), edges.end());
    out.k = k;
    const std::size_t n_buckets = edges.size() + 1;
    out.counts.assign(n_buckets, 0);
    out.recall_contrib.assign(n_buckets, 0.0);
    out.map_contrib.assign(n_buckets, 0.0);

    std::size_t total = 0;
    for (const auto& r : ranks) {
        if (!r.skipped) ++total;
    }
    if (total == 0) throw ValidationError("bucket_report: no scored instances");

    for (const auto& r : ranks) {
        if (r.skipped) continue;
        const long long f =
            r.target < static_cast<int>(train_freq.size()) ? train_freq[static_cast<std::size_t>(r.target)] : 0;
        std::size_t bucket = 0;
        for (int e : edges) {
            if (f >= e) ++bucket;
        }
        ++out.counts[bucket];
        if (r.rank <= k) {
            out.recall_contrib[bucket] += 1.0 / static_cast<double>(total);
            out.map_contrib[bucket] += 1.0 / (static_cast<double>(r.rank) * static_cast<double>(total));
        }
    }
    return out;
}

FmcModel fmc_train(const std::vector<Diffusion>& train, int n_nodes) {
    if (train.empty()) throw ValidationError("fmc_train: empty training set");
    FmcModel m;
    m.n_nodes = n_nodes;
    m.transitions.resize(static_cast<std::size_t>(n_nodes));
    m.global_freq.assign(static_cast<std::size_t>(n_nodes), 0);
    for (const auto& d : train) {
        for (std::size_t i = 0; i < d.visits.size(); ++i) {
            ++m.global_freq[static_cast<std::size_t>(d.visits[i].first)];
            if (i + 1 < d.visits.size()) {
                ++m.transitions[static_cast<std::size_t>(d.visits[i].first)]
                               [d.visits[i + 1].first];
            }
        }
    }
    return m;
}

std::vector<int> fmc_rank(const FmcModel& model, std::span<const int> prefix,
                          const std::vector<bool>& visited) {
    if (prefix.empty()) throw ContractError("fmc_rank: empty prefix");
    const int last = prefix.back();
    const auto& row = model.transitions[static_cast<std::size_t>(last)];
    std::vector<int> candidates;
    for (int v = 0; v < model.n_nodes; ++v) {
        if (!visited[static_cast<std::size_t>(v)]) candidates.push_back(v);
    }
    auto count_of = [&](int v) {
        auto it = row.find(v);
        return it == row.end() ? 0LL : it->second;
    };
    std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
        // score = count + 1e-9: order by count, popularity, then index
        const long long ca = count_of(a), cb = count_of(b);
        if (ca != cb) return ca > cb;
        const long long fa = model.global_freq[static_cast<std::size_t>(a)];
        const long long fb = model.global_freq[static_cast<std::size_t>(b)];
        if (fa != fb) return fa > fb;
        return a < b;
    });
    return candidates;
}

namespace {

// instance list shared by the model and FMC evaluation paths
struct EvalInstance {
    int diffusion;
    int prefix_len;
    int target;
};

std::vector<EvalInstance> eval_instances(const std::vector<Diffusion>& eval_set,
                                         bool every_prefix) {
    std::vector<EvalInstance> out;
    for (std::size_t d = 0; d < eval_set.size(); ++d) {
        const int len = eval_set[d].length();
        const int first_k = every_prefix ? 1 : len - 1;
        for (int k = first_k; k < len; ++k) {
            out.push_back({static_cast<int>(d), k,
                           eval_set[d].visits[static_cast<std::size_t>(k)].first});
        }
    }
    return out;
}

}  // namespace

std::vector<RankedPrediction> rank_with_model(const GeometricGraph& graph,
                                              const std::vector<Diffusion>& eval_set,
                                              const ModelParams& params, Mode mode,
                                              const EvalOptions& options) {
    const Tensor z = mode == Mode::remove_gnn
                         ? params.embeddings
                         : gcn_forward_plain(graph.norm_adj, params.embeddings, params.gcn_weights);
    const auto instances = eval_instances(eval_set, options.every_prefix);
    std::vector<RankedPrediction> out(instances.size());

    auto process = [&](std::size_t begin, std::size_t end) {
        std::vector<bool> visited(static_cast<std::size_t>(graph.n_nodes), false);
        std::vector<int> prefix;
        for (std::size_t i = begin; i < end; ++i) {
            const auto& inst = instances[i];
            const auto& visits = eval_set[static_cast<std::size_t>(inst.diffusion)].visits;
            prefix.clear();
            std::fill(visited.begin(), visited.end(), false);
            int distinct = 0;
            for (int k = 0; k < inst.prefix_len; ++k) {
                const int v = visits[static_cast<std::size_t>(k)].first;
                prefix.push_back(v);
                if (!visited[static_cast<std::size_t>(v)]) {
                    visited[static_cast<std::size_t>(v)] = true;
                    ++distinct;
                }
            }
            RankedPrediction r;
            r.diffusion = inst.diffusion;
            r.prefix_len = inst.prefix_len;
            r.target = inst.target;
            r.n_candidates = graph.n_nodes - distinct;
            if (visited[static_cast<std::size_t>(inst.target)]) {
                r.skipped = true;
            } else {
                const Tensor h = diffusion_encode_plain(z, prefix, params);
                const auto scores = score_against_table(h, params.embeddings);
                r.rank = rank_of_target(scores, visited, inst.target);
            }
            out[i] = r;
        }
    };

    const int workers = std::max(1, options.workers);
    if (workers == 1 || instances.size() < 32) {
        process(0, instances.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (instances.size() + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const std::size_t begin = std::min(instances.size(), w * chunk);
            const std::size_t end = std::min(instances.size(), begin + chunk);
            if (begin < end) pool.emplace_back(process, begin, end);
        }
        for (auto& t : pool) t.join();
    }
    return out;
}

std::vector<RankedPrediction> rank_with_fmc(const FmcModel& model,
                                            const std::vector<Diffusion>& eval_set,
                                            const EvalOptions& options) {
    const auto instances = eval_instances(eval_set, options.every_prefix);
    std::vector<RankedPrediction> out;
    out.reserve(instances.size());
    std::vector<bool> visited(static_cast<std::size_t>(model.n_nodes), false);
    std::vector<int> prefix;
    for (const auto& inst : instances) {
        const auto& visits = eval_set[static_cast<std::size_t>(inst.diffusion)].visits;
        prefix.clear();
        std::fill(visited.begin(), visited.end(), false);
        int distinct = 0;
        for (int k = 0; k < inst.prefix_len; ++k) {
            const int v = visits[static_cast<std::size_t>(k)].first;
            prefix.push_back(v);
            if (!visited[static_cast<std::size_t>(v)]) {
                visited[static_cast<std::size_t>(v)] = true;
                ++distinct;
            }
        }
        RankedPrediction r;
        r.diffusion = inst.diffusion;
        r.prefix_len = inst.prefix_len;
        r.target = inst.target;
        r.n_candidates = model.n_nodes - distinct;
        if (visited[static_cast<std::size_t>(inst.target)]) {
            r.skipped = true;
        } else {
            const auto ranking = fmc_rank(model, prefix, visited);
            for (std::size_t pos = 0; pos < ranking.size(); ++pos) {
                if (ranking[pos] == inst.target) {
                    r.rank = static_cast<int>(pos) + 1;
                    break;
                }
            }
        }
        out.push_back(r);
    }
    return out;
}

std::string metrics_to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["dataset"] = report.dataset;
    j["mode"] = report.mode;
    j["seeds"] = report.seeds;
    nlohmann::ordered_json per_k;
    for (std::size_t i = 0; i < report.k_list.size(); ++i) {
        nlohmann::ordered_json entry;
        entry["recall"] = report.recall_mean[i];
        entry["recall_std"] = report.recall_std[i];
        entry["map"] = report.map_mean[i];
        entry["map_std"] = report.map_std[i];
        entry["recall_per_seed"] = report.recall_per_seed[i];
        entry["map_per_seed"] = report.map_per_seed[i];
        per_k[std::to_string(report.k_list[i])] = entry;
    }
    j["per_k"] = per_k;
    nlohmann::ordered_json buckets;
    buckets["edges"] = report.bucket_edges;
    buckets["counts"] = report.bucket_counts;
    nlohmann::ordered_json brec, bmap;
    for (std::size_t i = 0; i < report.k_list.size(); ++i) {
        brec[std::to_string(report.k_list[i])] = report.bucket_recall_mean[i];
        bmap[std::to_string(report.k_list[i])] = report.bucket_map_mean[i];
    }
    buckets["recall"] = brec;
    buckets["map"] = bmap;
    j["buckets"] = buckets;
    j["evaluated"] = report.evaluated;
    j["skipped"] = report.skipped;
    return j.dump(2) + "\n";
}

void write_metrics_files(const std::filesystem::path& json_path,
                         const std::filesystem::path& tsv_path, const MetricsReport& report) {
    {
        std::ofstream os(json_path);
        if (!os) throw ValidationError("cannot write metrics: " + json_path.string());
        os << metrics_to_json(report);
    }
    std::ofstream os(tsv_path);
    if (!os) throw ValidationError("cannot write metrics: " + tsv_path.string());
    os << "metric\tk\tmean\tstd\n";
    char line[160];
    for (std::size_t i = 0; i < report.k_list.size(); ++i) {
        std::snprintf(line, sizeof(line), "recall\t%d\t%.9g\t%.9g\n", report.k_list[i],
                      report.recall_mean[i], report.recall_std[i]);
        os << line;
        std::snprintf(line, sizeof(line), "map\t%d\t%.9g\t%.9g\n", report.k_list[i],
                      report.map_mean[i], report.map_std[i]);
        os << line;
    }
    for (std::size_t i = 0; i < report.k_list.size(); ++i) {
        for (std::size_t b = 0; b < report.bucket_recall_mean[i].size(); ++b) {
            std::snprintf(line, sizeof(line), "bucket_recall\t%d\t%zu\t%.9g\n", report.k_list[i], b,
                          report.bucket_recall_mean[i][b]);
            os << line;
        }
    }
}

PreparedData prepare_data(const std::vector<GeoLocation>& locations,
                          std::vector<Diffusion> diffusions, const RunConfig& cfg) {
    PreparedData out;
    out.graph = build_graph(locations, cfg.threshold_km);
    out.split = temporal_split(std::move(diffusions), cfg.train_frac, cfg.val_frac, cfg.test_frac);
    out.train_freq.assign(static_cast<std::size_t>(out.graph.n_nodes), 0);
    for (const auto& d : out.split.train) {
        for (const auto& [v, t] : d.visits) ++out.train_freq[static_cast<std::size_t>(v)];
    }
    return out;
}

namespace {

MetricsReport aggregate_runs(const std::vector<std::vector<RankedPrediction>>& per_seed_ranks,
                             const PreparedData& data, const RunConfig& cfg,
                             const std::string& mode_name) {
    MetricsReport report;
    report.dataset = cfg.dataset_name;
    report.mode = mode_name;
    report.seeds = cfg.seeds;
    report.k_list = cfg.hp.k_list;
    report.bucket_edges = cfg.bucket_edges;

    const std::size_t n_k = report.k_list.size();
    report.recall_per_seed.assign(n_k, {});
    report.map_per_seed.assign(n_k, {});
    report.bucket_recall_mean.assign(n_k, std::vector<double>(cfg.bucket_edges.size() + 1, 0.0));
    report.bucket_map_mean.assign(n_k, std::vector<double>(cfg.bucket_edges.size() + 1, 0.0));

    for (const auto& ranks : per_seed_ranks) {
        std::size_t evaluated = 0, skipped = 0;
        for (const auto& r : ranks) {
            if (r.skipped) ++skipped;
            else ++evaluated;
        }
        report.evaluated = evaluated;  // identical across seeds: skips depend on data only
        report.skipped = skipped;
        for (std::size_t i = 0; i < n_k; ++i) {
            const int k = report.k_list[i];
            report.recall_per_seed[i].push_back(recall_at_k(ranks, k));
            report.map_per_seed[i].push_back(map_at_k(ranks, k));
            BucketReport b = bucket_report(ranks, data.train_freq, cfg.bucket_edges, k);
            if (report.bucket_counts.empty()) report.bucket_counts = b.counts;
            for (std::size_t bi = 0; bi < b.recall_contrib.size(); ++bi) {
                report.bucket_recall_mean[i][bi] += b.recall_contrib[bi] / per_seed_ranks.size();
                report.bucket_map_mean[i][bi] += b.map_contrib[bi] / per_seed_ranks.size();
            }
        }
    }
    for (std::size_t i = 0; i < n_k; ++i) {
        report.recall_mean.push_back(mean(report.recall_per_seed[i]));
        report.recall_std.push_back(sample_std(report.recall_per_seed[i]));
        report.map_mean.push_back(mean(report.map_per_seed[i]));
        report.map_std.push_back(sample_std(report.map_per_seed[i]));
    }
    return report;
}

}  // namespace

MetricsReport evaluate_single(const PreparedData& data, const ModelParams& params, Mode mode,
                              const RunConfig& cfg, std::uint64_t seed) {
    EvalOptions opt;
    opt.every_prefix = cfg.every_prefix;
    opt.workers = cfg.workers;
    auto ranks = rank_with_model(data.graph, data.split.test, params, mode, opt);
    RunConfig one = cfg;
    one.seeds = {seed};
    return aggregate_runs({std::move(ranks)}, data, one, mode_to_string(mode));
}

MetricsReport run_ablation(Mode mode, const std::vector<GeoLocation>& locations,
                           const std::vector<Diffusion>& diffusions, const RunConfig& cfg) {
    if (cfg.seeds.empty()) throw ConfigError("run_ablation: seed list is empty");
    PreparedData data = prepare_data(locations, diffusions, cfg);
    EvalOptions opt;
    opt.every_prefix = cfg.every_prefix;
    opt.workers = cfg.workers;

    std::vector<std::vector<RankedPrediction>> per_seed;
    for (std::uint64_t seed : cfg.seeds) {
        Hyperparams hp = cfg.hp;
        hp.seed = seed;
        ValMetricFn val_metric;
        if (hp.patience > 0 && !data.split.val.empty()) {
            val_metric = [&](const ModelParams& p) {
                auto ranks = rank_with_model(data.graph, data.split.val, p, mode, opt);
                return recall_at_k(ranks, 10);
            };
        }
        TrainResult tr = train_model(data.graph, data.split.train, hp, mode, {}, val_metric);
        per_seed.push_back(rank_with_model(data.graph, data.split.test, tr.params, mode, opt));
    }
    return aggregate_runs(per_seed, data, cfg, mode_to_string(mode));
}

MetricsReport run_fmc_baseline(const std::vector<GeoLocation>& locations,
                               const std::vector<Diffusion>& diffusions, const RunConfig& cfg) {
    PreparedData data = prepare_data(locations, diffusions, cfg);
    EvalOptions opt;
    opt.every_prefix = cfg.every_prefix;
    opt.workers = cfg.workers;
    FmcModel model = fmc_train(data.split.train, data.graph.n_nodes);
    auto ranks = rank_with_fmc(model, data.split.test, opt);
    std::vector<std::vector<RankedPrediction>> per_seed(cfg.seeds.size(), ranks);
    MetricsReport report = aggregate_runs(per_seed, data, cfg, "fmc");
    return report;
}

}  // namespace dgdi
