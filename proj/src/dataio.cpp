#include "dgdi/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dgdi/errors.hpp"
#include "dgdi/rng.hpp"

namespace dgdi {

namespace {

std::string strip(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Plain comma split; the formats carry no quoting. `max_fields` folds any
// extra commas into the last field (free-text location names).
std::vector<std::string> split_csv(const std::string& line, std::size_t max_fields) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (out.size() + 1 < max_fields) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) break;
        out.push_back(strip(line.substr(start, comma - start)));
        start = comma + 1;
    }
    out.push_back(strip(line.substr(start)));
    return out;
}

double parse_double(const std::string& s, const char* what, int line_no) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(std::string("line ") + std::to_string(line_no) + ": bad " + what + " '" +
                         s + "'");
    }
}

std::int64_t parse_i64(const std::string& s, const char* what, int line_no) {
    try {
        std::size_t used = 0;
        long long v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(std::string("line ") + std::to_string(line_no) + ": bad " + what + " '" +
                         s + "'");
    }
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path.string());
    return in;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::vector<GeoLocation> load_locations(const std::filesystem::path& path) {
    std::ifstream in = open_or_throw(path);
    std::string line;
    int line_no = 0;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    ++line_no;
    auto header = split_csv(line, 4);
    if (header.size() < 3 || header[0] != "id" || header[1] != "lat" || header[2] != "lon") {
        throw ParseError(path.string() + ": line 1: expected header 'id,lat,lon[,name]'");
    }
    std::vector<GeoLocation> out;
    std::map<std::string, int> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (strip(line).empty()) continue;
        auto fields = split_csv(line, 4);
        if (fields.size() < 3) {
            throw ParseError("line " + std::to_string(line_no) + ": expected id,lat,lon[,name]");
        }
        GeoLocation loc;
        loc.id = fields[0];
        if (loc.id.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty id");
        loc.lat = parse_double(fields[1], "lat", line_no);
        loc.lon = parse_double(fields[2], "lon", line_no);
        if (fields.size() > 3) loc.name = fields[3];
        if (loc.lat < -90.0 || loc.lat > 90.0) {
            throw ValidationError("line " + std::to_string(line_no) + ": latitude " +
                                  fields[1] + " outside [-90, 90]");
        }
        if (loc.lon < -180.0 || loc.lon > 180.0) {
            throw ValidationError("line " + std::to_string(line_no) + ": longitude " +
                                  fields[2] + " outside [-180, 180]");
        }
        if (!seen.emplace(loc.id, line_no).second) {
            throw ValidationError("line " + std::to_string(line_no) + ": duplicate id '" +
                                  loc.id + "'");
        }
        loc.index = static_cast<int>(out.size());
        out.push_back(std::move(loc));
    }
    if (out.empty()) throw ValidationError(path.string() + ": no locations (empty corpus)");
    return out;
}

std::map<std::string, int> index_by_id(const std::vector<GeoLocation>& locations) {
    std::map<std::string, int> out;
    for (const auto& l : locations) out[l.id] = l.index;
    return out;
}

std::vector<Diffusion> load_diffusions(const std::filesystem::path& path,
                                       const std::map<std::string, int>& id_to_index,
                                       LoadReport* report) {
    std::ifstream in = open_or_throw(path);
    std::string line;
    int line_no = 0;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    ++line_no;
    auto header = split_csv(line, 3);
    if (header.size() != 3 || header[0] != "case_id" || header[1] != "location_id" ||
        header[2] != "timestamp") {
        throw ParseError(path.string() + ": line 1: expected header 'case_id,location_id,timestamp'");
    }
    // group rows by case, keeping cases in first-appearance order
    std::vector<Diffusion> cases;
    std::map<std::string, std::size_t> case_slot;
    while (std::getline(in, line)) {
        ++line_no;
        if (strip(line).empty()) continue;
        auto fields = split_csv(line, 3);
        if (fields.size() != 3) {
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected case_id,location_id,timestamp");
        }
        auto loc = id_to_index.find(fields[1]);
        if (loc == id_to_index.end()) {
            throw ValidationError("line " + std::to_string(line_no) + ": unknown location id '" +
                                  fields[1] + "'");
        }
        const std::int64_t ts = parse_i64(fields[2], "timestamp", line_no);
        auto [it, fresh] = case_slot.emplace(fields[0], cases.size());
        if (fresh) cases.push_back({fields[0], {}});
        cases[it->second].visits.emplace_back(loc->second, ts);
    }
    int dropped = 0;
    std::vector<Diffusion> out;
    for (auto& c : cases) {
        std::stable_sort(c.visits.begin(), c.visits.end(),
                         [](const auto& a, const auto& b) { return a.second < b.second; });
        if (c.visits.size() < 2) {
            ++dropped;
            continue;
        }
        out.push_back(std::move(c));
    }
    if (report) report->dropped_short_cases = dropped;
    return out;
}

CorpusSplit temporal_split(std::vector<Diffusion> diffusions, double train_frac, double val_frac,
                           double test_frac) {
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
        throw ConfigError("temporal_split: fractions must sum to 1");
    }
    if (train_frac < 0.0 || val_frac < 0.0 || test_frac < 0.0) {
        throw ConfigError("temporal_split: fractions must be non-negative");
    }
    if (diffusions.size() < 3) {
        throw ValidationError("temporal_split: need at least 3 diffusions");
    }
    std::sort(diffusions.begin(), diffusions.end(), [](const Diffusion& a, const Diffusion& b) {
        if (a.start_time() != b.start_time()) return a.start_time() < b.start_time();
        return a.case_id < b.case_id;
    });
    const std::size_t m = diffusions.size();
    const std::size_t n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(m)));
    const std::size_t n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(m)));
    CorpusSplit split;
    split.train.assign(diffusions.begin(), diffusions.begin() + n_train);
    split.val.assign(diffusions.begin() + n_train, diffusions.begin() + n_train + n_val);
    split.test.assign(diffusions.begin() + n_train + n_val, diffusions.end());
    return split;
}

std::vector<PrefixInstance> make_prefix_instances(const std::vector<Diffusion>& diffusions) {
    std::vector<PrefixInstance> out;
    for (std::size_t d = 0; d < diffusions.size(); ++d) {
        const int len = diffusions[d].length();
        for (int k = 1; k < len; ++k) {
            out.push_back({static_cast<int>(d), k, diffusions[d].visits[static_cast<std::size_t>(k)].first});
        }
    }
    return out;
}

SynthResult synth_generate(const SynthConfig& cfg) {
    if (cfg.n_nodes < 2) throw ConfigError("synth: need at least 2 nodes");
    if (cfg.n_diffusions < 1) throw ConfigError("synth: need at least 1 diffusion");
    if (!(cfg.lat_max > cfg.lat_min) || !(cfg.lon_max > cfg.lon_min)) {
        throw ConfigError("synth: degenerate bounding box");
    }
    const double diagonal_km =
        haversine_km(cfg.lat_min, cfg.lon_min, cfg.lat_max, cfg.lon_max);
    if (diagonal_km < cfg.threshold_km) {
        throw ConfigError("synth: bounding box diagonal (" + std::to_string(diagonal_km) +
                          " km) is smaller than the graph threshold");
    }

    SynthResult out;
    Rng node_rng = stream(cfg.seed, "synth.nodes");
    for (int i = 0; i < cfg.n_nodes; ++i) {
        GeoLocation loc;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "L%04d", i);
        loc.id = buf;
        loc.index = i;
        loc.lat = node_rng.uniform(cfg.lat_min, cfg.lat_max);
        loc.lon = node_rng.uniform(cfg.lon_min, cfg.lon_max);
        out.locations.push_back(std::move(loc));
    }

    // Zipf popularity over a randomly permuted rank order.
    std::vector<double> popularity(static_cast<std::size_t>(cfg.n_nodes));
    {
        std::vector<int> rank_of(static_cast<std::size_t>(cfg.n_nodes));
        for (int i = 0; i < cfg.n_nodes; ++i) rank_of[static_cast<std::size_t>(i)] = i;
        Rng rank_rng = stream(cfg.seed, "synth.ranks");
        rank_rng.shuffle(rank_of);
        for (int i = 0; i < cfg.n_nodes; ++i) {
            popularity[static_cast<std::size_t>(i)] =
                std::pow(static_cast<double>(rank_of[static_cast<std::size_t>(i)] + 1),
                         -cfg.zipf_exponent);
        }
    }

    auto dist = [&](int a, int b) {
        return haversine_km(out.locations[static_cast<std::size_t>(a)].lat,
                            out.locations[static_cast<std::size_t>(a)].lon,
                            out.locations[static_cast<std::size_t>(b)].lat,
                            out.locations[static_cast<std::size_t>(b)].lon);
    };

    Rng walk_rng = stream(cfg.seed, "synth.walks");
    std::int64_t base_time = 1577836800;  // 2020-01-01
    std::vector<char> visited(static_cast<std::size_t>(cfg.n_nodes));
    for (int d = 0; d < cfg.n_diffusions; ++d) {
        Diffusion diff;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "C%05d", d);
        diff.case_id = buf;
        for (int attempt = 0; attempt < 64 && diff.visits.size() < 2; ++attempt) {
            diff.visits.clear();
            std::fill(visited.begin(), visited.end(), 0);
            const int target_len = 2 + static_cast<int>(walk_rng.below(7));  // uniform in [2, 8]

            // start node by popularity
            double total = 0.0;
            for (double p : popularity) total += p;
            double pick = walk_rng.uniform() * total;
            int current = cfg.n_nodes - 1;
            for (int v = 0; v < cfg.n_nodes; ++v) {
                pick -= popularity[static_cast<std::size_t>(v)];
                if (pick <= 0.0) {
                    current = v;
                    break;
                }
            }
            std::int64_t t = base_time + static_cast<std::int64_t>(d) * 86400;
            diff.visits.emplace_back(current, t);
            visited[static_cast<std::size_t>(current)] = 1;

            while (diff.length() < target_len) {
                double denom = 0.0;
                bool any_unvisited = false;
                for (int v = 0; v < cfg.n_nodes; ++v) {
                    if (visited[static_cast<std::size_t>(v)]) continue;
                    any_unvisited = true;
                    denom += popularity[static_cast<std::size_t>(v)] *
                             std::exp(-cfg.locality_weight * dist(current, v));
                }
                if (!any_unvisited) break;  // walk exhausted the node set: truncate
                int next = -1;
                if (denom > 0.0) {
                    double draw = walk_rng.uniform() * denom;
                    for (int v = 0; v < cfg.n_nodes; ++v) {
                        if (visited[static_cast<std::size_t>(v)]) continue;
                        draw -= popularity[static_cast<std::size_t>(v)] *
                                std::exp(-cfg.locality_weight * dist(current, v));
                        if (draw <= 0.0) {
                            next = v;
                            break;
                        }
                    }
                }
                if (next < 0) {  // every weight underflowed (huge locality): nearest unvisited
                    double best = 0.0;
                    for (int v = 0; v < cfg.n_nodes; ++v) {
                        if (visited[static_cast<std::size_t>(v)]) continue;
                        const double dv = dist(current, v);
                        if (next < 0 || dv < best) {
                            next = v;
                            best = dv;
                        }
                    }
                }
                if (next < 0) break;
                t += 3600 + static_cast<std::int64_t>(walk_rng.below(3600));
                diff.visits.emplace_back(next, t);
                visited[static_cast<std::size_t>(next)] = 1;
                current = next;
            }
        }
        if (diff.visits.size() < 2) {
            throw NumericError("synth: failed to draw a walk of length >= 2");
        }
        out.diffusions.push_back(std::move(diff));
    }
    return out;
}

void write_locations(const std::filesystem::path& path, const std::vector<GeoLocation>& locations) {
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot write file: " + path.string());
    os << "id,lat,lon,name\n";
    for (const auto& l : locations) {
        os << l.id << ',' << format_double(l.lat) << ',' << format_double(l.lon) << ',' << l.name
           << '\n';
    }
}

void write_diffusions(const std::filesystem::path& path, const std::vector<Diffusion>& diffusions,
                      const std::vector<GeoLocation>& locations) {
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot write file: " + path.string());
    os << "case_id,location_id,timestamp\n";
    for (const auto& d : diffusions) {
        for (const auto& [node, ts] : d.visits) {
            os << d.case_id << ',' << locations[static_cast<std::size_t>(node)].id << ',' << ts
               << '\n';
        }
    }
}

void write_synth_manifest(const std::filesystem::path& path, const SynthConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot write file: " + path.string());
    os << "seed = " << cfg.seed << '\n'
       << "n_nodes = " << cfg.n_nodes << '\n'
       << "n_diffusions = " << cfg.n_diffusions << '\n'
       << "lat_min = " << format_double(cfg.lat_min) << '\n'
       << "lat_max = " << format_double(cfg.lat_max) << '\n'
       << "lon_min = " << format_double(cfg.lon_min) << '\n'
       << "lon_max = " << format_double(cfg.lon_max) << '\n'
       << "threshold_km = " << format_double(cfg.threshold_km) << '\n'
       << "zipf_exponent = " << format_double(cfg.zipf_exponent) << '\n'
       << "locality_weight = " << format_double(cfg.locality_weight) << '\n';
}

}  // namespace dgdi
