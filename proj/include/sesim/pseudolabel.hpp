#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "sesim/graph.hpp"

namespace sesim {

struct JumpLabelEntry {
    int i = 0;
    int j = 0;
    int metapath_id = 0;
    int y = 0;  // jump number in 1..j_max
};

struct JumpLabelSet {
    std::vector<JumpLabelEntry> entries;  // sorted by (metapath, i, j)
    int j_max = 4;
    std::vector<int> empty_metapaths;  // metapaths that produced no pairs
};

struct PairSamplerConfig {
    int targets_per_metapath = 256;
    int neighbors_per_target = 8;
    uint64_t seed = 0;
};

// Jump number of a node pair inside one collapsed metapath graph.
//
// Rules are checked in strict priority order y = 1, 2, 3, ...:
//   y = 1   N1(i) and N1(j) intersect
//   y = 2   N2(i) meets N1(j), or N2(j) meets N1(i)
//   y = 3   N2(i) and N2(j) intersect
//   y = 4   N4(i) meets N1(j), or N4(j) meets N1(i)
//   ...     odd y uses N_{(y+1)/2} on both sides, even y uses N_y vs N1
// where N_k is the exactly-k-edge walk reach set. Directly connected pairs
// carry the primary link signal and get no pseudo-label.
std::optional<int> jump_label(const CollapsedAdj& a, int i, int j, int j_max);

// Unweighted shortest-path length, nullopt when disconnected. Independent
// oracle for jump_label: on connected pairs with distance d in
// 2..j_max+1 the label equals d-1, otherwise there is no label.
std::optional<int> bfs_distance(const CollapsedAdj& a, int i, int j);

// Samples labeled pairs per metapath: picks target nodes without
// replacement, then gathers partners level by level in ascending y with a
// per-level quota (the remainder of an uneven split goes to y = 1).
// Deterministic; metapath d uses the generator seeded with seed XOR d.
JumpLabelSet build_label_set(const std::vector<CollapsedAdj>& adjs,
                             const PairSamplerConfig& cfg, int j_max);

// TSV with header `i<TAB>j<TAB>metapath<TAB>y`, sorted by (metapath, i, j).
void save_labels_tsv(const JumpLabelSet& labels,
                     const std::filesystem::path& path);
JumpLabelSet load_labels_tsv(const std::filesystem::path& path);

}  // namespace sesim
