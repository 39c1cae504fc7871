#include "sesim/dataio.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace sesim {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

[[noreturn]] void fail(const fs::path& file, int line, const std::string& what) {
    throw DataError(file.string() + " line " + std::to_string(line) + ": " + what);
}

std::ifstream open_or_throw(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("missing or unreadable file: " + file.string());
    return in;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

long parse_int(const std::string& s, const fs::path& file, int line) {
    try {
        size_t pos = 0;
        long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(file, line, "expected an integer, got '" + s + "'");
    }
}

double parse_real(const std::string& s, const fs::path& file, int line) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(file, line, "expected a real number, got '" + s + "'");
    }
}

}  // namespace

BundleData load_bundle(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw DataError("bundle directory not found: " + dir.string());

    BundleData out;
    HetGraph& g = out.graph;

    {
        const fs::path file = dir / "node_types.tsv";
        auto in = open_or_throw(file);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto cols = split_tabs(line);
            if (cols.size() != 3) fail(file, lineno, "expected 3 columns");
            const int type = static_cast<int>(parse_int(cols[0], file, lineno));
            const int count = static_cast<int>(parse_int(cols[2], file, lineno));
            if (count < 0) fail(file, lineno, "negative node count");
            if (g.node_counts.count(type))
                fail(file, lineno, "duplicate node type " + std::to_string(type));
            g.node_counts[type] = count;
            out.type_names.push_back(cols[1]);
        }
        if (g.node_counts.empty()) throw DataError(file.string() + ": no node types");
    }

    {
        const fs::path file = dir / "metapaths.json";
        auto in = open_or_throw(file);
        json doc;
        try {
            in >> doc;
        } catch (const json::exception& e) {
            throw DataError(file.string() + ": " + e.what());
        }
        if (!doc.is_object() || !doc.contains("target_type") ||
            !doc.contains("metapaths"))
            throw DataError(file.string() +
                            ": expected object with target_type and metapaths");
        g.target_type = doc["target_type"].get<int>();
        for (const auto& mp : doc["metapaths"]) {
            MetapathSpec spec;
            spec.id = mp.at("id").get<int>();
            for (const auto& hop : mp.at("hops"))
                spec.hops.push_back({hop.at("edge_type").get<int>(),
                                     hop.value("reverse", false)});
            out.metapaths.push_back(std::move(spec));
        }
    }

    {
        const fs::path file = dir / "edges.tsv";
        auto in = open_or_throw(file);
        std::string line;
        int lineno = 0;
        // (edge_type, src_type, dst_type) -> relation index
        std::map<std::tuple<int, int, int>, size_t> rel_index;
        std::set<std::tuple<int, int, int>> seen_edges;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto cols = split_tabs(line);
            if (cols.size() != 5) fail(file, lineno, "expected 5 columns");
            const int et = static_cast<int>(parse_int(cols[0], file, lineno));
            const int st = static_cast<int>(parse_int(cols[1], file, lineno));
            const int dt = static_cast<int>(parse_int(cols[2], file, lineno));
            const long si = parse_int(cols[3], file, lineno);
            const long di = parse_int(cols[4], file, lineno);
            auto sc = g.node_counts.find(st);
            auto dc = g.node_counts.find(dt);
            if (sc == g.node_counts.end())
                fail(file, lineno, "undeclared source type " + std::to_string(st));
            if (dc == g.node_counts.end())
                fail(file, lineno, "undeclared destination type " + std::to_string(dt));
            if (si < 0 || si >= sc->second)
                fail(file, lineno, "source index " + std::to_string(si) +
                                       " out of range for type " + std::to_string(st));
            if (di < 0 || di >= dc->second)
                fail(file, lineno, "destination index " + std::to_string(di) +
                                       " out of range for type " + std::to_string(dt));
            auto key = std::make_tuple(et, st, dt);
            auto it = rel_index.find(key);
            if (it == rel_index.end()) {
                for (const auto& rel : g.relations)
                    if (rel.edge_type == et)
                        fail(file, lineno,
                             "edge type " + std::to_string(et) +
                                 " used with conflicting endpoint types");
                it = rel_index.emplace(key, g.relations.size()).first;
                g.relations.push_back(
                    {et, st, dt, BoolMatrix(sc->second, dc->second)});
            }
            if (!seen_edges.insert({et, static_cast<int>(si), static_cast<int>(di)}).second) {
                ++out.duplicate_edges;
                continue;
            }
            g.relations[it->second].adj.set(static_cast<int>(si),
                                            static_cast<int>(di));
        }
    }

    {
        const fs::path file = dir / "features.tsv";
        auto in = open_or_throw(file);
        std::string line;
        int lineno = 0;
        std::vector<std::vector<double>> rows;
        size_t width = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            auto cols = split_tabs(line);
            std::vector<double> row;
            for (const auto& c : cols) row.push_back(parse_real(c, file, lineno));
            if (width == 0) width = row.size();
            if (row.size() != width)
                fail(file, lineno, "ragged feature row: expected " +
                                       std::to_string(width) + " values, got " +
                                       std::to_string(row.size()));
            rows.push_back(std::move(row));
        }
        g.features = Matrix(static_cast<int>(rows.size()), static_cast<int>(width));
        for (size_t i = 0; i < rows.size(); ++i)
            for (size_t j = 0; j < width; ++j)
                g.features(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
    }

    {
        const fs::path file = dir / "labels.tsv";
        if (fs::exists(file)) {
            auto in = open_or_throw(file);
            std::string line;
            int lineno = 0;
            std::vector<int> labels(static_cast<size_t>(g.num_target_nodes()), -1);
            while (std::getline(in, line)) {
                ++lineno;
                if (line.empty()) continue;
                auto cols = split_tabs(line);
                if (cols.size() != 2) fail(file, lineno, "expected 2 columns");
                const long idx = parse_int(cols[0], file, lineno);
                const long cls = parse_int(cols[1], file, lineno);
                if (idx < 0 || idx >= g.num_target_nodes())
                    fail(file, lineno, "node index out of range");
                if (cls < 0) fail(file, lineno, "negative class");
                labels[static_cast<size_t>(idx)] = static_cast<int>(cls);
            }
            for (size_t i = 0; i < labels.size(); ++i)
                if (labels[i] < 0)
                    throw DataError(file.string() + ": node " + std::to_string(i) +
                                    " has no label");
            g.labels = std::move(labels);
        }
    }

    validate_graph(g);
    for (const auto& spec : out.metapaths) {
        try {
            check_metapath(g, spec);
        } catch (const ArgumentError& e) {
            throw DataError((dir / "metapaths.json").string() + ": " + e.what());
        }
    }
    return out;
}

void save_bundle(const HetGraph& g, const std::vector<MetapathSpec>& metapaths,
                 const std::vector<std::string>& type_names,
                 const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

    auto open_out = [&](const char* name) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw DataError("cannot write " + (dir / name).string());
        return out;
    };

    {
        auto out = open_out("node_types.tsv");
        size_t idx = 0;
        for (const auto& [type, count] : g.node_counts) {
            const std::string name = idx < type_names.size()
                                         ? type_names[idx]
                                         : "type" + std::to_string(type);
            out << type << '\t' << name << '\t' << count << '\n';
            ++idx;
        }
    }

    {
        auto out = open_out("edges.tsv");
        std::vector<const Relation*> rels;
        for (const auto& r : g.relations) rels.push_back(&r);
        std::sort(rels.begin(), rels.end(),
                  [](const Relation* a, const Relation* b) {
                      return a->edge_type < b->edge_type;
                  });
        for (const Relation* r : rels)
            for (int i = 0; i < r->adj.rows(); ++i)
                for (int32_t j : r->adj.row(i))
                    out << r->edge_type << '\t' << r->src_type << '\t'
                        << r->dst_type << '\t' << i << '\t' << j << '\n';
    }

    {
        auto out = open_out("features.tsv");
        char buf[64];
        for (int i = 0; i < g.features.rows(); ++i) {
            for (int j = 0; j < g.features.cols(); ++j) {
                std::snprintf(buf, sizeof buf, "%.17g", g.features(i, j));
                out << (j ? "\t" : "") << buf;
            }
            out << '\n';
        }
    }

    if (g.labels) {
        auto out = open_out("labels.tsv");
        for (size_t i = 0; i < g.labels->size(); ++i)
            out << i << '\t' << (*g.labels)[i] << '\n';
    }

    {
        auto out = open_out("metapaths.json");
        json doc;
        doc["target_type"] = g.target_type;
        doc["metapaths"] = json::array();
        for (const auto& spec : metapaths) {
            json mp;
            mp["id"] = spec.id;
            mp["hops"] = json::array();
            for (const auto& hop : spec.hops)
                mp["hops"].push_back(
                    {{"edge_type", hop.edge_type}, {"reverse", hop.reverse}});
            doc["metapaths"].push_back(std::move(mp));
        }
        out << doc.dump(2) << '\n';
    }
}

BundleData generate_synthetic(const SynthConfig& cfg) {
    if (cfg.node_counts.size() < 2)
        throw ConfigError("synthetic: need a target type and at least one intermediate type");
    for (int c : cfg.node_counts)
        if (c < 1) throw ConfigError("synthetic: node counts must be positive");
    if (cfg.communities < 1)
        throw ConfigError("synthetic: community count must be positive");
    if (cfg.intra_p.empty() || cfg.inter_p.empty())
        throw ConfigError("synthetic: missing edge probabilities");
    const size_t num_rel = cfg.node_counts.size() - 1;
    auto prob_at = [](const std::vector<double>& ps, size_t i) {
        return ps[std::min(i, ps.size() - 1)];
    };
    for (size_t r = 0; r < num_rel; ++r) {
        const double pi = prob_at(cfg.intra_p, r);
        const double pe = prob_at(cfg.inter_p, r);
        if (pi < 0.0 || pi > 1.0 || pe < 0.0 || pe > 1.0)
            throw ConfigError("synthetic: probabilities must lie in [0,1]");
    }
    if (cfg.noise < 0.0) throw ConfigError("synthetic: noise must be >= 0");

    const int n0 = cfg.node_counts[0];
    const int c_count = cfg.communities;
    auto community = [c_count](int idx, int total) {
        return static_cast<int>(
            (static_cast<long long>(idx) * c_count) / total);
    };

    BundleData out;
    HetGraph& g = out.graph;
    g.target_type = 0;
    for (size_t t = 0; t < cfg.node_counts.size(); ++t) {
        g.node_counts[static_cast<int>(t)] = cfg.node_counts[t];
        out.type_names.push_back("type" + std::to_string(t));
    }

    // Communities sit on a ring: spillover edges reach the two adjacent
    // communities only, so collapsed distances grow with ring distance
    // and the jump-number spectrum stays multi-scale.
    auto ring_adjacent = [c_count](int a, int b) {
        const int d = std::abs(a - b);
        return d == 1 || d == c_count - 1;
    };
    for (size_t r = 0; r < num_rel; ++r) {
        const int dst_type = static_cast<int>(r) + 1;
        const int nd = cfg.node_counts[r + 1];
        Rng rng(Rng::mix(cfg.seed, 100 + r));
        Relation rel{static_cast<int>(r), 0, dst_type, BoolMatrix(n0, nd)};
        const double pi = prob_at(cfg.intra_p, r);
        const double pe = prob_at(cfg.inter_p, r);
        for (int i = 0; i < n0; ++i) {
            const int ci = community(i, n0);
            for (int u = 0; u < nd; ++u) {
                const int cu = community(u, nd);
                const double p =
                    ci == cu ? pi : (ring_adjacent(ci, cu) ? pe : 0.0);
                if (rng.next_unit() < p) rel.adj.set(i, u);
            }
        }
        g.relations.push_back(std::move(rel));

        MetapathSpec spec;
        spec.id = static_cast<int>(r);
        spec.hops = {{static_cast<int>(r), false}, {static_cast<int>(r), true}};
        out.metapaths.push_back(std::move(spec));
    }

    Rng feat_rng(Rng::mix(cfg.seed, 7));
    g.features = Matrix(n0, c_count);
    for (int i = 0; i < n0; ++i) {
        g.features(i, community(i, n0)) = 1.0;
        if (cfg.noise > 0.0)
            for (int j = 0; j < c_count; ++j)
                g.features(i, j) += cfg.noise * feat_rng.next_normal();
    }

    std::vector<int> labels(static_cast<size_t>(n0));
    for (int i = 0; i < n0; ++i) labels[static_cast<size_t>(i)] = community(i, n0);
    g.labels = std::move(labels);

    validate_graph(g);
    return out;
}

}  // namespace sesim
