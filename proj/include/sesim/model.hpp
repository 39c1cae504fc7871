#pragma once

#include <filesystem>
#include <vector>

#include "sesim/autodiff.hpp"
#include "sesim/matrix.hpp"

namespace sesim {

enum class Task { kLinkPrediction, kNodeClassification };
enum class PretextMode { kRegression, kClassification };

struct ModelConfig {
    int in_dim = 0;
    int hidden = 512;
    int embed = 16;
    int primary_hidden = 100;
    int con_hidden = 1000;
    int num_classes = 2;      // node classification only
    int num_metapaths = 0;
    int j_max = 4;            // classification pretext output width
    Task task = Task::kLinkPrediction;
    PretextMode pretext_mode = PretextMode::kRegression;

    int primary_out() const {
        return task == Task::kLinkPrediction ? 1 : num_classes;
    }
    int pretext_out() const {
        return pretext_mode == PretextMode::kRegression ? 1 : j_max;
    }
};

struct GcnParams {
    Matrix w0;  // in_dim x hidden
    Matrix w1;  // hidden x embed
};

// Two affine layers with relu between; the output nonlinearity (sigmoid
// or softmax) belongs to the task-specific forward below.
struct PrimaryHead {
    Matrix w1, b1;  // embed x primary_hidden, 1 x primary_hidden
    Matrix w2, b2;  // primary_hidden x out, 1 x out
};

// One affine map per metapath over |z_i - z_j|.
struct PretextHead {
    Matrix w, b;  // embed x out, 1 x out
};

// Two affine layers, relu hidden, sigmoid output in (0,1).
struct ContributionNet {
    Matrix w1, b1;  // embed x con_hidden, 1 x con_hidden
    Matrix w2, b2;  // con_hidden x 1, 1 x 1
};

struct ModelState {
    ModelConfig cfg;
    GcnParams gcn;
    PrimaryHead primary;
    std::vector<PretextHead> pretext;  // ascending metapath id
    ContributionNet con;
};

// Glorot-uniform weights, zero biases.
ModelState init_model(const ModelConfig& cfg, uint64_t seed);

// Named views over every non-lambda parameter in checkpoint order.
struct ParamRef {
    const char* name;
    Matrix* m;
};
std::vector<ParamRef> model_params(ModelState& s);
std::vector<ParamRef> lambda_params(ContributionNet& con);
std::vector<ParamRef> lambda_params(ModelState& s);

// --- tape-side forward builders (rows = batch) ---

struct GcnParamsT {
    ad::Tensor w0, w1;
};
struct PrimaryHeadT {
    ad::Tensor w1, b1, w2, b2;
};
struct PretextHeadT {
    ad::Tensor w, b;
};
struct ContributionNetT {
    ad::Tensor w1, b1, w2, b2;
};

GcnParamsT lift(ad::Tape& t, const GcnParams& p, bool grad);
PrimaryHeadT lift(ad::Tape& t, const PrimaryHead& p, bool grad);
PretextHeadT lift(ad::Tape& t, const PretextHead& p, bool grad);
ContributionNetT lift(ad::Tape& t, const ContributionNet& p, bool grad);

// Z = N (relu(N X w0)) w1 with N the normalized adjacency. The second
// layer stays linear; heads own their output nonlinearity.
ad::Tensor gcn_forward(ad::Tape& t, ad::Tensor x, ad::Tensor norm_adj,
                       const GcnParamsT& p);

// sigmoid(mlp(z_i * z_j)), symmetric in its arguments. B x 1.
ad::Tensor link_score(ad::Tape& t, ad::Tensor zi, ad::Tensor zj,
                      const PrimaryHeadT& head);

// Pre-softmax class scores, B x C.
ad::Tensor node_logits_raw(ad::Tape& t, ad::Tensor z, const PrimaryHeadT& head);
// Softmax class probabilities, B x C.
ad::Tensor node_logits(ad::Tape& t, ad::Tensor z, const PrimaryHeadT& head);

// affine(|z_i - z_j|): B x 1 jump-number estimate (regression) or
// B x j_max class scores (classification pretext).
ad::Tensor pretext_predict(ad::Tape& t, ad::Tensor zi, ad::Tensor zj,
                           const PretextHeadT& head);

// Per-sample gate in (0,1) over the pretext input vector phi. B x 1.
ad::Tensor contribution(ad::Tape& t, ad::Tensor phi,
                        const ContributionNetT& net);

// Convenience: contribution weights as plain values (no tape).
Matrix contribution_values(const Matrix& phi, const ContributionNet& net);

// Single binary file: magic "SESIM1", small config header, then per
// parameter group a little-endian u32 row/col pair and row-major f64
// payload, groups ordered w0, w1, primary, pretext by ascending
// metapath id, contribution net.
void save_checkpoint(const ModelState& s, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace sesim
