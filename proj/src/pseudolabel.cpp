#include "sesim/pseudolabel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace sesim {

namespace {

// Exactly-k-edge walk reach sets from one node, orders 0..max_order.
// reach[k] is a sorted node list; walks may revisit nodes.
std::vector<std::vector<int32_t>> walk_reach_sets(const BoolMatrix& adj,
                                                  int start, int max_order) {
    std::vector<std::vector<int32_t>> reach(max_order + 1);
    reach[0] = {static_cast<int32_t>(start)};
    std::vector<char> mark(static_cast<size_t>(adj.rows()), 0);
    for (int k = 1; k <= max_order; ++k) {
        std::vector<int32_t> next;
        for (int32_t u : reach[k - 1]) {
            for (int32_t v : adj.row(u)) {
                if (!mark[v]) {
                    mark[v] = 1;
                    next.push_back(v);
                }
            }
        }
        std::sort(next.begin(), next.end());
        for (int32_t v : next) mark[v] = 0;
        reach[k] = std::move(next);
    }
    return reach;
}

bool intersects(const std::vector<int32_t>& a, const std::vector<int32_t>& b) {
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia < *ib)
            ++ia;
        else if (*ib < *ia)
            ++ib;
        else
            return true;
    }
    return false;
}

void check_pair_indices(const CollapsedAdj& a, int i, int j) {
    const int n = a.matrix.rows();
    if (i < 0 || i >= n || j < 0 || j >= n)
        throw ArgumentError("node index out of range");
}

}  // namespace

std::optional<int> jump_label(const CollapsedAdj& a, int i, int j, int j_max) {
    check_pair_indices(a, i, j);
    if (i == j) throw ArgumentError("jump_label: i and j must differ");
    if (j_max < 1) throw ArgumentError("jump_label: j_max must be >= 1");
    if (a.matrix.at(i, j)) return std::nullopt;  // excluded: direct edge

    int max_order = 1;
    for (int y = 1; y <= j_max; ++y)
        max_order = std::max(max_order, y % 2 == 1 ? (y + 1) / 2 : y);
    const auto ri = walk_reach_sets(a.matrix, i, max_order);
    const auto rj = walk_reach_sets(a.matrix, j, max_order);

    for (int y = 1; y <= j_max; ++y) {
        if (y % 2 == 1) {
            const int k = (y + 1) / 2;
            if (intersects(ri[k], rj[k])) return y;
        } else {
            if (intersects(ri[y], rj[1]) || intersects(rj[y], ri[1])) return y;
        }
    }
    return std::nullopt;
}

std::optional<int> bfs_distance(const CollapsedAdj& a, int i, int j) {
    check_pair_indices(a, i, j);
    if (i == j) return 0;
    std::vector<int> dist(static_cast<size_t>(a.matrix.rows()), -1);
    std::deque<int> queue;
    dist[i] = 0;
    queue.push_back(i);
    while (!queue.empty()) {
        int u = queue.front();
        queue.pop_front();
        for (int32_t v : a.matrix.row(u)) {
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                if (v == j) return dist[v];
                queue.push_back(v);
            }
        }
    }
    return std::nullopt;
}

namespace {

// BFS layers from one node up to max_depth; layers[d] holds the nodes at
// distance exactly d, sorted.
std::vector<std::vector<int>> bfs_layers(const BoolMatrix& adj, int start,
                                         int max_depth) {
    std::vector<int> dist(static_cast<size_t>(adj.rows()), -1);
    std::vector<std::vector<int>> layers(max_depth + 1);
    dist[start] = 0;
    layers[0] = {start};
    for (int d = 0; d < max_depth; ++d) {
        for (int u : layers[d])
            for (int32_t v : adj.row(u))
                if (dist[v] < 0) {
                    dist[v] = d + 1;
                    layers[d + 1].push_back(v);
                }
        std::sort(layers[d + 1].begin(), layers[d + 1].end());
    }
    return layers;
}

std::vector<JumpLabelEntry> label_one_metapath(const CollapsedAdj& adj,
                                               const PairSamplerConfig& cfg,
                                               int j_max) {
    const int n = adj.matrix.rows();
    Rng rng(cfg.seed ^ static_cast<uint64_t>(adj.metapath_id));
    const auto targets =
        sample_without_replacement(n, cfg.targets_per_metapath, rng);

    // neighbors_per_target split evenly over y levels, remainder to y = 1.
    std::vector<int> quota(static_cast<size_t>(j_max) + 1, 0);
    const int base = cfg.neighbors_per_target / j_max;
    for (int y = 1; y <= j_max; ++y) quota[y] = base;
    quota[1] += cfg.neighbors_per_target % j_max;

    std::vector<JumpLabelEntry> entries;
    std::set<std::pair<int, int>> seen;  // canonical (min,max) pair dedup
    for (int t : targets) {
        const auto layers = bfs_layers(adj.matrix, t, j_max + 1);
        for (int y = 1; y <= j_max; ++y) {
            // Distance y+1 in the collapsed graph means jump number y;
            // distance-1 pairs are skipped entirely.
            std::vector<int> candidates = layers[y + 1];
            const int want = std::min<int>(quota[y], candidates.size());
            for (int c = 0; c < want; ++c) {
                int pick = c + static_cast<int>(rng.next_below(
                                   static_cast<uint64_t>(candidates.size() - c)));
                std::swap(candidates[c], candidates[pick]);
                const int a = std::min(t, candidates[c]);
                const int b = std::max(t, candidates[c]);
                if (seen.insert({a, b}).second)
                    entries.push_back({a, b, adj.metapath_id, y});
            }
        }
    }
    std::sort(entries.begin(), entries.end(),
              [](const JumpLabelEntry& x, const JumpLabelEntry& y) {
                  return std::tie(x.i, x.j) < std::tie(y.i, y.j);
              });
    return entries;
}

int env_thread_cap() {
    if (const char* s = std::getenv("SESIM_THREADS")) {
        int v = std::atoi(s);
        if (v >= 1) return v;
    }
    return 1;
}

}  // namespace

JumpLabelSet build_label_set(const std::vector<CollapsedAdj>& adjs,
                             const PairSamplerConfig& cfg, int j_max) {
    if (adjs.empty()) throw ArgumentError("build_label_set: no metapaths");
    if (cfg.targets_per_metapath < 1 || cfg.neighbors_per_target < 1)
        throw ArgumentError("build_label_set: sampler counts must be positive");
    if (j_max < 1 || j_max > 8)
        throw ArgumentError("build_label_set: j_max must be in 1..8");

    std::vector<std::vector<JumpLabelEntry>> per_metapath(adjs.size());
    const int threads = std::min<int>(
        {env_thread_cap(), static_cast<int>(adjs.size()),
         static_cast<int>(std::max(1u, std::thread::hardware_concurrency()))});
    if (threads <= 1) {
        for (size_t d = 0; d < adjs.size(); ++d)
            per_metapath[d] = label_one_metapath(adjs[d], cfg, j_max);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (size_t d = next.fetch_add(1); d < adjs.size();
                     d = next.fetch_add(1))
                    per_metapath[d] = label_one_metapath(adjs[d], cfg, j_max);
            });
        for (auto& th : pool) th.join();
    }

    JumpLabelSet out;
    out.j_max = j_max;
    for (size_t d = 0; d < adjs.size(); ++d) {
        if (per_metapath[d].empty())
            out.empty_metapaths.push_back(adjs[d].metapath_id);
        out.entries.insert(out.entries.end(), per_metapath[d].begin(),
                           per_metapath[d].end());
    }
    std::sort(out.entries.begin(), out.entries.end(),
              [](const JumpLabelEntry& x, const JumpLabelEntry& y) {
                  return std::tie(x.metapath_id, x.i, x.j) <
                         std::tie(y.metapath_id, y.i, y.j);
              });
    return out;
}

void save_labels_tsv(const JumpLabelSet& labels,
                     const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "i\tj\tmetapath\ty\n";
    for (const auto& e : labels.entries)
        out << e.i << '\t' << e.j << '\t' << e.metapath_id << '\t' << e.y
            << '\n';
    if (!out) throw DataError("write failed for " + path.string());
}

JumpLabelSet load_labels_tsv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "i\tj\tmetapath\ty")
        throw DataError(path.string() + ": missing label header");
    JumpLabelSet out;
    out.j_max = 1;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        JumpLabelEntry e;
        if (!(ss >> e.i >> e.j >> e.metapath_id >> e.y) || e.y < 1)
            throw DataError(path.string() + " line " + std::to_string(lineno) +
                            ": malformed label entry");
        out.j_max = std::max(out.j_max, e.y);
        out.entries.push_back(e);
    }
    return out;
}

}  // namespace sesim
