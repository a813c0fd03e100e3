// dgdi: train and evaluate the graph diffusion next-location model.
//
// Subcommands: synth | build-graph | train | evaluate | ablate | gradcheck.
// Every option can also come from a `key = value` config file (--config);
// command-line flags win over config keys, which win over defaults. Each run
// drops a copy of its resolved configuration into the output directory.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "dgdi/config.hpp"
#include "dgdi/dataio.hpp"
#include "dgdi/errors.hpp"
#include "dgdi/eval.hpp"
#include "dgdi/fixture.hpp"
#include "dgdi/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace dgdi;

namespace {

// Config-file plumbing: each option is bound by key so a `key = value` line
// can fill it when the flag was not given, and so the resolved value can be
// dumped back out.
struct Binding {
    CLI::Option* opt;
    std::function<void(const std::string&)> apply;
    std::function<std::string()> dump;
};

struct ConfigRegistry {
    std::map<std::string, Binding> bindings;
    std::string config_path;

    template <typename T>
    void bind(CLI::Option* opt, T& target, const std::string& key) {
        Binding b;
        b.opt = opt;
        b.apply = [&target, key](const std::string& raw) {
            std::istringstream is(raw);
            T value;
            if constexpr (std::is_same_v<T, bool>) {
                std::string word;
                is >> word;
                if (word == "true" || word == "1") value = true;
                else if (word == "false" || word == "0") value = false;
                else throw ConfigError("config key '" + key + "': expected true/false");
            } else {
                if (!(is >> value)) throw ConfigError("config key '" + key + "': bad value '" + raw + "'");
            }
            std::string rest;
            if (is >> rest) throw ConfigError("config key '" + key + "': trailing text '" + rest + "'");
            target = value;
        };
        b.dump = [&target] {
            std::ostringstream os;
            os.precision(17);
            if constexpr (std::is_same_v<T, bool>) os << (target ? "true" : "false");
            else os << target;
            return os.str();
        };
        bindings.emplace(key, std::move(b));
    }

    template <typename T>
    void bind_list(CLI::Option* opt, std::vector<T>& target, const std::string& key) {
        Binding b;
        b.opt = opt;
        b.apply = [&target, key](const std::string& raw) {
            std::vector<T> values;
            std::string token;
            std::istringstream is(raw);
            while (std::getline(is, token, ',')) {
                std::istringstream item(token);
                T v;
                if (!(item >> v)) throw ConfigError("config key '" + key + "': bad value '" + token + "'");
                values.push_back(v);
            }
            if (values.empty()) throw ConfigError("config key '" + key + "': empty list");
            target = std::move(values);
        };
        b.dump = [&target] {
            std::ostringstream os;
            for (std::size_t i = 0; i < target.size(); ++i) {
                if (i) os << ',';
                os << target[i];
            }
            return os.str();
        };
        bindings.emplace(key, std::move(b));
    }

    // Fill unset options from the file; unknown keys are config errors.
    void load() {
        if (config_path.empty()) return;
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot open config file: " + config_path);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto eq = line.find('=');
            auto strip = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                if (b == std::string::npos) return std::string();
                const auto e = s.find_last_not_of(" \t\r");
                return s.substr(b, e - b + 1);
            };
            if (eq == std::string::npos) {
                if (!strip(line).empty()) {
                    throw ConfigError(config_path + ": line " + std::to_string(line_no) +
                                      ": expected 'key = value'");
                }
                continue;
            }
            const std::string key = strip(line.substr(0, eq));
            const std::string value = strip(line.substr(eq + 1));
            auto it = bindings.find(key);
            if (it == bindings.end()) {
                throw ConfigError(config_path + ": line " + std::to_string(line_no) +
                                  ": unknown key '" + key + "'");
            }
            if (it->second.opt->count() == 0) it->second.apply(value);
        }
    }

    void write_resolved(const fs::path& path) const {
        std::ofstream os(path);
        for (const auto& [key, b] : bindings) os << key << " = " << b.dump() << "\n";
    }
};

struct CommandContext {
    CLI::App* cmd = nullptr;
    ConfigRegistry registry;

    void add_config_option() {
        cmd->add_option("--config", registry.config_path, "Config file with key = value lines");
    }
};

void add_data_options(CommandContext& ctx, RunConfig& cfg, bool required) {
    auto* loc = ctx.cmd->add_option("--locations", cfg.locations_path,
                                    "Locations CSV (id,lat,lon[,name])");
    auto* dif = ctx.cmd->add_option("--diffusions", cfg.diffusions_path,
                                    "Diffusions CSV (case_id,location_id,timestamp)");
    ctx.registry.bind(loc, cfg.locations_path, "locations");
    ctx.registry.bind(dif, cfg.diffusions_path, "diffusions");
    if (required) {
        // presence is validated after the config file had its chance
    }
    auto* ds = ctx.cmd->add_option("--dataset", cfg.dataset_name, "Dataset label used in reports");
    ctx.registry.bind(ds, cfg.dataset_name, "dataset");
    auto* thr = ctx.cmd->add_option("--threshold-km", cfg.threshold_km,
                                    "Edge distance threshold in km");
    ctx.registry.bind(thr, cfg.threshold_km, "threshold-km");
}

void add_out_option(CommandContext& ctx, RunConfig& cfg) {
    auto* o = ctx.cmd->add_option("--out,-o", cfg.out_dir, "Output directory")->envname("DGDI_OUT");
    ctx.registry.bind(o, cfg.out_dir, "out");
}

void add_split_options(CommandContext& ctx, RunConfig& cfg) {
    ctx.registry.bind(ctx.cmd->add_option("--train-frac", cfg.train_frac, "Training fraction"),
                      cfg.train_frac, "train-frac");
    ctx.registry.bind(ctx.cmd->add_option("--val-frac", cfg.val_frac, "Validation fraction"),
                      cfg.val_frac, "val-frac");
    ctx.registry.bind(ctx.cmd->add_option("--test-frac", cfg.test_frac, "Test fraction"),
                      cfg.test_frac, "test-frac");
}

void add_hyper_options(CommandContext& ctx, RunConfig& cfg) {
    auto& r = ctx.registry;
    r.bind(ctx.cmd->add_option("--lambda1", cfg.hp.lambda1, "Weight of the graph MI term"),
           cfg.hp.lambda1, "lambda1");
    r.bind(ctx.cmd->add_option("--lambda2", cfg.hp.lambda2, "Weight of the location MI term"),
           cfg.hp.lambda2, "lambda2");
    r.bind(ctx.cmd->add_option("--tau", cfg.hp.tau, "InfoNCE temperature"), cfg.hp.tau, "tau");
    r.bind(ctx.cmd->add_option("--lr", cfg.hp.lr, "Adam learning rate"), cfg.hp.lr, "lr");
    r.bind(ctx.cmd->add_option("--batch-size", cfg.hp.batch_size, "Mini-batch size"),
           cfg.hp.batch_size, "batch-size");
    r.bind(ctx.cmd->add_option("--dim", cfg.hp.dim, "Embedding dimension"), cfg.hp.dim, "dim");
    r.bind(ctx.cmd->add_option("--layers", cfg.hp.n_layers, "GCN layer count (1 or 2)"),
           cfg.hp.n_layers, "layers");
    r.bind(ctx.cmd->add_option("--epochs", cfg.hp.epochs, "Training epochs"), cfg.hp.epochs,
           "epochs");
    r.bind(ctx.cmd->add_option("--patience", cfg.hp.patience,
                               "Early-stopping patience on validation Recall@10 (0 = off)"),
           cfg.hp.patience, "patience");
}

void add_eval_options(CommandContext& ctx, RunConfig& cfg) {
    auto& r = ctx.registry;
    r.bind_list(ctx.cmd->add_option("--k-list", cfg.hp.k_list, "Ranking cutoffs for Recall/MAP")->delimiter(','),
                cfg.hp.k_list, "k-list");
    r.bind_list(ctx.cmd->add_option("--bucket-edges", cfg.bucket_edges,
                                    "Ascending frequency edges of the sparsity buckets")
                    ->delimiter(','),
                cfg.bucket_edges, "bucket-edges");
    r.bind(ctx.cmd->add_flag("--every-prefix,!--final-only", cfg.every_prefix,
                             "Score every prefix (default) or only the final one"),
           cfg.every_prefix, "every-prefix");
    r.bind(ctx.cmd->add_option("--workers", cfg.workers, "Worker threads for evaluation"),
           cfg.workers, "workers");
}

void add_seed_option(CommandContext& ctx, RunConfig& cfg, const char* help) {
    ctx.registry.bind(ctx.cmd->add_option("--seed", cfg.hp.seed, help), cfg.hp.seed, "seed");
}

fs::path ensure_out_dir(const RunConfig& cfg) {
    if (cfg.out_dir.empty()) throw ConfigError("no output directory (--out or DGDI_OUT)");
    fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    return dir;
}

void require_paths(const RunConfig& cfg) {
    if (cfg.locations_path.empty()) throw ConfigError("missing --locations");
    if (cfg.diffusions_path.empty()) throw ConfigError("missing --diffusions");
    if (!fs::exists(cfg.locations_path)) {
        throw ValidationError("locations file does not exist: " + cfg.locations_path);
    }
    if (!fs::exists(cfg.diffusions_path)) {
        throw ValidationError("diffusions file does not exist: " + cfg.diffusions_path);
    }
}

struct LoadedCorpus {
    std::vector<GeoLocation> locations;
    std::vector<Diffusion> diffusions;
};

LoadedCorpus load_corpus(const RunConfig& cfg) {
    require_paths(cfg);
    LoadedCorpus c;
    LoadReport report;
    c.locations = load_locations(cfg.locations_path);
    c.diffusions = load_diffusions(cfg.diffusions_path, index_by_id(c.locations), &report);
    if (report.dropped_short_cases > 0) {
        std::cerr << "note: dropped " << report.dropped_short_cases
                  << " cases with fewer than 2 resolved visits\n";
    }
    return c;
}

int cmd_synth(const CommandContext& ctx, const RunConfig& cfg, const SynthConfig& synth) {
    fs::path dir = ensure_out_dir(cfg);
    auto result = synth_generate(synth);
    write_locations(dir / "locations.csv", result.locations);
    write_diffusions(dir / "diffusions.csv", result.diffusions, result.locations);
    write_synth_manifest(dir / "manifest.txt", synth);
    ctx.registry.write_resolved(dir / "resolved_config.cfg");
    std::cout << "synth: wrote " << result.locations.size() << " locations, "
              << result.diffusions.size() << " diffusions to " << dir.string() << "\n";
    return 0;
}

int cmd_build_graph(const CommandContext& ctx, const RunConfig& cfg) {
    if (cfg.locations_path.empty()) throw ConfigError("missing --locations");
    if (!fs::exists(cfg.locations_path)) {
        throw ValidationError("locations file does not exist: " + cfg.locations_path);
    }
    fs::path dir = ensure_out_dir(cfg);
    auto locations = load_locations(cfg.locations_path);
    auto graph = build_graph(locations, cfg.threshold_km);

    std::vector<int> degree(static_cast<std::size_t>(graph.n_nodes), 0);
    for (auto [i, j] : graph.edges) {
        ++degree[static_cast<std::size_t>(i)];
        ++degree[static_cast<std::size_t>(j)];
    }
    std::size_t isolated = 0;
    for (int d : degree)
        if (d == 0) ++isolated;

    nlohmann::ordered_json stats;
    stats["n_nodes"] = graph.n_nodes;
    stats["n_edges"] = graph.edges.size();
    stats["threshold_km"] = cfg.threshold_km;
    stats["isolated_nodes"] = isolated;
    stats["avg_degree"] =
        graph.n_nodes > 0 ? 2.0 * static_cast<double>(graph.edges.size()) / graph.n_nodes : 0.0;
    {
        std::ofstream os(dir / "graph_stats.json");
        os << stats.dump(2) << "\n";
    }
    {
        std::ofstream os(dir / "edges.tsv");
        os << "i\tj\tkm\n";
        char line[96];
        for (auto [i, j] : graph.edges) {
            const double km = haversine_km(graph.coords[static_cast<std::size_t>(i)].first,
                                           graph.coords[static_cast<std::size_t>(i)].second,
                                           graph.coords[static_cast<std::size_t>(j)].first,
                                           graph.coords[static_cast<std::size_t>(j)].second);
            std::snprintf(line, sizeof(line), "%d\t%d\t%.6f\n", i, j, km);
            os << line;
        }
    }
    ctx.registry.write_resolved(dir / "resolved_config.cfg");
    std::cout << "build-graph: " << graph.n_nodes << " nodes, " << graph.edges.size() << " edges ("
              << isolated << " isolated)\n";
    return 0;
}

int cmd_train(const CommandContext& ctx, const RunConfig& cfg) {
    fs::path dir = ensure_out_dir(cfg);
    cfg.hp.validate();
    LoadedCorpus corpus = load_corpus(cfg);
    PreparedData data = prepare_data(corpus.locations, corpus.diffusions, cfg);

    EvalOptions opt;
    opt.every_prefix = cfg.every_prefix;
    opt.workers = cfg.workers;
    ValMetricFn val_metric;
    if (cfg.hp.patience > 0 && !data.split.val.empty()) {
        val_metric = [&](const ModelParams& p) {
            auto ranks = rank_with_model(data.graph, data.split.val, p, Mode::dgdi_default, opt);
            return recall_at_k(ranks, 10);
        };
    }

    TrainResult result = train_model(data.graph, data.split.train, cfg.hp, Mode::dgdi_default,
                                     dir / "train_log.tsv", val_metric);
    save_checkpoint(dir / "checkpoint.dgdi", result.params);
    ctx.registry.write_resolved(dir / "resolved_config.cfg");
    std::cout << "train: " << result.epochs.size() << " epochs, final loss "
              << result.epochs.back().total << ", checkpoint "
              << (dir / "checkpoint.dgdi").string() << "\n";
    if (result.best_epoch >= 0) {
        std::cout << "train: early stopping kept epoch " << result.best_epoch << " (val Recall@10 "
                  << result.best_val_metric << ")\n";
    }
    return 0;
}

int cmd_evaluate(const CommandContext& ctx, RunConfig& cfg, bool use_fmc,
                 const std::string& mode_name) {
    fs::path dir = ensure_out_dir(cfg);
    LoadedCorpus corpus = load_corpus(cfg);

    MetricsReport report;
    if (use_fmc) {
        report = run_fmc_baseline(corpus.locations, corpus.diffusions, cfg);
    } else {
        if (cfg.checkpoint_path.empty()) throw ConfigError("evaluate: need --checkpoint (or --fmc)");
        if (!fs::exists(cfg.checkpoint_path)) {
            throw ValidationError("checkpoint does not exist: " + cfg.checkpoint_path);
        }
        PreparedData data = prepare_data(corpus.locations, corpus.diffusions, cfg);
        ModelParams params = load_checkpoint(cfg.checkpoint_path);
        report = evaluate_single(data, params, mode_from_string(mode_name), cfg, cfg.hp.seed);
    }
    write_metrics_files(dir / "metrics.json", dir / "metrics.tsv", report);
    ctx.registry.write_resolved(dir / "resolved_config.cfg");
    for (std::size_t i = 0; i < report.k_list.size(); ++i) {
        std::cout << "recall@" << report.k_list[i] << " " << report.recall_mean[i] << "  map@"
                  << report.k_list[i] << " " << report.map_mean[i] << "\n";
    }
    return 0;
}

int cmd_ablate(const CommandContext& ctx, RunConfig& cfg, const std::vector<std::string>& mode_names,
               bool with_fmc) {
    fs::path dir = ensure_out_dir(cfg);
    LoadedCorpus corpus = load_corpus(cfg);
    for (const std::string& name : mode_names) {
        Mode mode = mode_from_string(name);
        MetricsReport report = run_ablation(mode, corpus.locations, corpus.diffusions, cfg);
        write_metrics_files(dir / ("metrics_" + name + ".json"),
                            dir / ("metrics_" + name + ".tsv"), report);
        std::cout << name << ": recall@10 " << report.recall_mean.back() << " +- "
                  << report.recall_std.back() << "\n";
    }
    if (with_fmc) {
        MetricsReport report = run_fmc_baseline(corpus.locations, corpus.diffusions, cfg);
        write_metrics_files(dir / "metrics_fmc.json", dir / "metrics_fmc.tsv", report);
        std::cout << "fmc: recall@10 " << report.recall_mean.back() << "\n";
    }
    ctx.registry.write_resolved(dir / "resolved_config.cfg");
    return 0;
}

int cmd_gradcheck(const CommandContext& ctx, const RunConfig& cfg, double eps, double tolerance) {
    const double err = run_gradcheck(cfg.hp.seed, eps);
    std::cout << "gradcheck: max relative error " << err << " (eps " << eps << ", tolerance "
              << tolerance << ")\n";
    if (!cfg.out_dir.empty()) {
        fs::path dir = ensure_out_dir(cfg);
        std::ofstream os(dir / "gradcheck.txt");
        os << err << "\n";
        ctx.registry.write_resolved(dir / "resolved_config.cfg");
    }
    return err < tolerance ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DGDI: next-location prediction over geometric diffusion graphs"};
    app.require_subcommand(1);

    RunConfig cfg;
    SynthConfig synth;
    bool use_fmc = false;
    bool with_fmc = false;
    std::string eval_mode = "default";
    std::vector<std::string> mode_names{"default", "lambda1_zero", "remove_gnn"};
    double gc_eps = 1e-5;
    double gc_tolerance = 1e-4;

    CommandContext synth_ctx, graph_ctx, train_ctx, eval_ctx, ablate_ctx, gc_ctx;

    synth_ctx.cmd = app.add_subcommand("synth", "Generate a synthetic diffusion corpus");
    synth_ctx.add_config_option();
    add_out_option(synth_ctx, cfg);
    {
        auto& r = synth_ctx.registry;
        auto* c = synth_ctx.cmd;
        r.bind(c->add_option("--nodes", synth.n_nodes, "Number of locations"), synth.n_nodes, "nodes");
        r.bind(c->add_option("--diffusions", synth.n_diffusions, "Number of diffusions"),
               synth.n_diffusions, "diffusions");
        r.bind(c->add_option("--lat-min", synth.lat_min, "Box south edge"), synth.lat_min, "lat-min");
        r.bind(c->add_option("--lat-max", synth.lat_max, "Box north edge"), synth.lat_max, "lat-max");
        r.bind(c->add_option("--lon-min", synth.lon_min, "Box west edge"), synth.lon_min, "lon-min");
        r.bind(c->add_option("--lon-max", synth.lon_max, "Box east edge"), synth.lon_max, "lon-max");
        r.bind(c->add_option("--threshold-km", synth.threshold_km, "Threshold in the manifest"),
               synth.threshold_km, "threshold-km");
        r.bind(c->add_option("--zipf", synth.zipf_exponent, "Popularity Zipf exponent"),
               synth.zipf_exponent, "zipf");
        r.bind(c->add_option("--locality", synth.locality_weight, "Distance decay of transitions"),
               synth.locality_weight, "locality");
        r.bind(c->add_option("--seed", synth.seed, "Generator seed"), synth.seed, "seed");
    }

    graph_ctx.cmd = app.add_subcommand("build-graph", "Build and summarize the geometric graph");
    graph_ctx.add_config_option();
    add_out_option(graph_ctx, cfg);
    graph_ctx.registry.bind(graph_ctx.cmd->add_option("--locations", cfg.locations_path,
                                                      "Locations CSV"),
                            cfg.locations_path, "locations");
    graph_ctx.registry.bind(graph_ctx.cmd->add_option("--threshold-km", cfg.threshold_km,
                                                      "Edge distance threshold in km"),
                            cfg.threshold_km, "threshold-km");

    train_ctx.cmd = app.add_subcommand("train", "Train DGDI and write a checkpoint");
    train_ctx.add_config_option();
    add_data_options(train_ctx, cfg, true);
    add_out_option(train_ctx, cfg);
    add_split_options(train_ctx, cfg);
    add_hyper_options(train_ctx, cfg);
    add_eval_options(train_ctx, cfg);
    add_seed_option(train_ctx, cfg, "Root seed for this run");

    eval_ctx.cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint (or FMC) on the test split");
    eval_ctx.add_config_option();
    add_data_options(eval_ctx, cfg, true);
    add_out_option(eval_ctx, cfg);
    add_split_options(eval_ctx, cfg);
    add_eval_options(eval_ctx, cfg);
    eval_ctx.registry.bind(eval_ctx.cmd->add_option("--checkpoint", cfg.checkpoint_path,
                                                    "Checkpoint file from `train`"),
                           cfg.checkpoint_path, "checkpoint");
    eval_ctx.registry.bind(
        eval_ctx.cmd
            ->add_option("--mode", eval_mode, "Model variant the checkpoint was trained with")
            ->check(CLI::IsMember({"default", "lambda1_zero", "remove_gnn"})),
        eval_mode, "mode");
    eval_ctx.cmd->add_flag("--fmc", use_fmc, "Evaluate the first-order Markov baseline instead");
    add_seed_option(eval_ctx, cfg, "Seed label recorded in the report");

    ablate_ctx.cmd = app.add_subcommand("ablate", "Train and evaluate the ablation grid");
    ablate_ctx.add_config_option();
    add_data_options(ablate_ctx, cfg, true);
    add_out_option(ablate_ctx, cfg);
    add_split_options(ablate_ctx, cfg);
    add_hyper_options(ablate_ctx, cfg);
    add_eval_options(ablate_ctx, cfg);
    ablate_ctx.registry.bind_list(ablate_ctx.cmd->add_option("--modes", mode_names,
                                                             "Ablation modes to run")
                                      ->delimiter(','),
                                  mode_names, "modes");
    ablate_ctx.registry.bind_list(ablate_ctx.cmd->add_option("--seeds", cfg.seeds,
                                                             "Seed list shared by every mode")
                                      ->delimiter(','),
                                  cfg.seeds, "seeds");
    ablate_ctx.cmd->add_flag("--with-fmc", with_fmc, "Also report the FMC baseline");

    gc_ctx.cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full loss gradient");
    gc_ctx.add_config_option();
    add_out_option(gc_ctx, cfg);
    add_seed_option(gc_ctx, cfg, "Fixture seed");
    gc_ctx.registry.bind(gc_ctx.cmd->add_option("--eps", gc_eps, "Central difference step"), gc_eps,
                         "eps");
    gc_ctx.registry.bind(gc_ctx.cmd->add_option("--tolerance", gc_tolerance,
                                                "Pass threshold on the max relative error"),
                         gc_tolerance, "tolerance");

    CLI11_PARSE(app, argc, argv);

    try {
        for (CommandContext* ctx :
             {&synth_ctx, &graph_ctx, &train_ctx, &eval_ctx, &ablate_ctx, &gc_ctx}) {
            if (ctx->cmd->parsed()) ctx->registry.load();
        }
        if (synth_ctx.cmd->parsed()) return cmd_synth(synth_ctx, cfg, synth);
        if (graph_ctx.cmd->parsed()) return cmd_build_graph(graph_ctx, cfg);
        if (train_ctx.cmd->parsed()) return cmd_train(train_ctx, cfg);
        if (eval_ctx.cmd->parsed()) return cmd_evaluate(eval_ctx, cfg, use_fmc, eval_mode);
        if (ablate_ctx.cmd->parsed()) return cmd_ablate(ablate_ctx, cfg, mode_names, with_fmc);
        if (gc_ctx.cmd->parsed()) return cmd_gradcheck(gc_ctx, cfg, gc_eps, gc_tolerance);
    } catch (const Error& e) {
        std::cerr << "dgdi: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "dgdi: unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
