#pragma once

#include <filesystem>
#include <vector>

#include "sesim/graph.hpp"

namespace sesim {

// In-memory image of a graph bundle directory:
//   node_types.tsv   type_id <TAB> name <TAB> count
//   edges.tsv        edge_type <TAB> src_type <TAB> dst_type <TAB> src <TAB> dst
//   features.tsv     one row of reals per target-type node
//   labels.tsv       node_index <TAB> class       (optional)
//   metapaths.json   {"target_type": t, "metapaths": [{"id", "hops"}...]}
struct BundleData {
    HetGraph graph;
    std::vector<MetapathSpec> metapaths;
    std::vector<std::string> type_names;
    int duplicate_edges = 0;  // silently dropped on load
};

BundleData load_bundle(const std::filesystem::path& dir);
void save_bundle(const HetGraph& g, const std::vector<MetapathSpec>& metapaths,
                 const std::vector<std::string>& type_names,
                 const std::filesystem::path& dir);

struct SynthConfig {
    // node_counts[0] is the target type; every further entry adds one
    // intermediate type, one relation, and one two-hop metapath.
    std::vector<int> node_counts = {300, 300, 300};
    int communities = 4;
    std::vector<double> intra_p = {0.05};  // broadcast if shorter than relations
    std::vector<double> inter_p = {0.002};
    double noise = 1.0;
    uint64_t seed = 0;
};

// Plants communities over target nodes; intermediate nodes attach mostly
// within their community, so each two-hop metapath collapses to a
// community-correlated adjacency. Features are a community one-hot plus
// gaussian noise; labels are the community ids.
BundleData generate_synthetic(const SynthConfig& cfg);

}  // namespace sesim
