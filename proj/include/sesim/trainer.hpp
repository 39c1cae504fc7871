#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "sesim/dataio.hpp"
#include "sesim/model.hpp"
#include "sesim/pseudolabel.hpp"

namespace sesim {

struct TrainConfig {
    double alpha = 0.001;          // learning rate for model parameters
    double beta = 0.0001;          // learning rate for the contribution net
    double weight_decay = 0.0001;  // added to gradients in the actual step
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 256;
    int epochs = 50;
    double train_frac = 0.4;
    double val_frac = 0.2;
    uint64_t seed = 0;
    Task task = Task::kLinkPrediction;
    PretextMode pretext_mode = PretextMode::kRegression;
    bool vanilla = false;          // primary task only
    bool lambda_literal = false;   // update lambda on the pretext loss
                                   // instead of the validation primary loss
    bool mask_val_edges = true;    // drop held-out positives from the
                                   // encoder's aggregation graph
    std::optional<double> freeze_con;  // pin every contribution weight
    int j_max = 4;
    int num_metapaths = 0;  // 0 = use all bundle metapaths
    int hidden = 512;
    int embed = 16;
    int primary_hidden = 100;
    int con_hidden = 1000;
    int densify_cap = 4096;

    void validate() const;  // throws ConfigError
};

// Deterministic stream of shuffled index batches: step s covers positions
// [s*B, (s+1)*B) of concatenated seeded permutations of the population.
class MinibatchSampler {
public:
    MinibatchSampler(int population, int batch, uint64_t seed);
    std::vector<int> batch_at(long step) const;
    int batch_size() const { return batch_; }

private:
    int population_;
    int batch_;
    uint64_t seed_;
};

struct SplitData {
    Task task = Task::kLinkPrediction;
    // link prediction: index pairs over target nodes
    std::vector<std::pair<int, int>> train_pos, val_pos, val_neg;
    // node classification
    std::vector<int> train_nodes, val_nodes;
    std::vector<int> train_node_labels, val_node_labels;
    // pretext entries grouped by position in the metapath list, with pairs
    // matching held-out positive edges removed
    std::vector<std::vector<JumpLabelEntry>> pretext;
    std::vector<int> metapath_ids;
};

SplitData build_split(const HetGraph& g, const BoolMatrix& union_adj,
                      const JumpLabelSet& labels,
                      const std::vector<int>& metapath_ids,
                      const TrainConfig& cfg);

// Per-run constants shared by every step.
struct TrainerEnv {
    Matrix norm_adj;   // densified normalized union adjacency
    Matrix features;
    TrainConfig cfg;
};

struct PretextBatch {
    int metapath_id = 0;
    std::vector<int> src, dst;
    std::vector<double> y;       // jump numbers as reals
    std::vector<int> y_class;    // jump number - 1
};

struct Batch {
    std::vector<int> link_src, link_dst;
    std::vector<double> link_target;
    std::vector<int> nodes;
    std::vector<int> node_labels;
    std::vector<PretextBatch> pretext;
};

struct JointLoss {
    double loss_pri = 0.0;
    double loss_pre_total = 0.0;  // sum over metapaths of mean weighted loss
    double total = 0.0;
    std::vector<std::vector<double>> weighted_per_sample;  // per metapath
};

JointLoss joint_loss(const TrainerEnv& env, const ModelState& state,
                     const Batch& batch);

// Everything the closed-form meta-gradient needs from the virtual step's
// forward pass: per sample, the pretext-loss gradient with respect to the
// pair embedding difference, factored as dl_dphi and the sign pattern of
// z_src - z_dst.
struct MetaPretextRecord {
    int metapath_id = 0;
    std::vector<int> src, dst;
    Matrix phi;      // B x embed
    Matrix sign;     // B x embed
    Matrix dl_dphi;  // B x embed
};

struct MetaBookkeeping {
    bool valid = false;
    std::vector<MetaPretextRecord> records;
};

struct VirtualStepResult {
    ModelState w_hat;
    MetaBookkeeping bk;
    double loss_pri = 0.0;
    double loss_pre_total = 0.0;
};

// One plain SGD step on the weighted joint loss; the input state is not
// touched. Contribution weights enter as constants of the current lambda.
VirtualStepResult virtual_step(const TrainerEnv& env, const ModelState& state,
                               const Batch& train_batch, double alpha);

struct MetaUpdateResult {
    ContributionNet lambda_next;
    std::vector<Matrix> lambda_grad;  // d val-loss / d lambda, params order
    double val_loss = 0.0;
};

// Descends the validation primary loss through the virtual step:
//   grad_lambda = -alpha * sum_{d,i} (v . g_{d,i}) grad_lambda Con(phi_i)
// with v the validation-loss gradient at w_hat and v . g computed
// exactly via a directional derivative of the encoder along v.
MetaUpdateResult meta_update_lambda(const TrainerEnv& env,
                                    const ModelState& state,
                                    const ModelState& w_hat,
                                    const Batch& val_batch,
                                    const MetaBookkeeping& bk, double alpha,
                                    double beta);

// Printed-variant update: descend the weighted pretext loss at w_hat.
MetaUpdateResult meta_update_lambda_literal(const TrainerEnv& env,
                                            const ModelState& w_hat,
                                            const Batch& batch, double beta);

struct AdamState {
    std::vector<Matrix> m, v;  // aligned with model_params order
    long t = 0;
};
AdamState init_adam(ModelState& state);

// One Adam update on a single parameter matrix, t counting from 1.
void adam_apply(Matrix& w, const Matrix& g, Matrix& m, Matrix& v, long t,
                double alpha, double beta1, double beta2, double eps);

// Forward-only primary loss at the given parameters; finite-difference
// oracles recompute the pipeline through this.
double primary_loss_value(const TrainerEnv& env, const ModelState& state,
                          const Batch& batch);

struct StepStats {
    double loss_pri = 0.0;
    double loss_pre_total = 0.0;
    std::vector<double> mean_con;  // per metapath position
};

// Adam step with weight decay on the joint loss at the current parameters
// (never at w_hat), using the contribution weights of state.con.
StepStats actual_step(const TrainerEnv& env, ModelState& state,
                      const Batch& train_batch, AdamState& adam);

struct EpochStats {
    int epoch = 0;
    double loss_pri = 0.0;
    double loss_pre_total = 0.0;
    double val_metric = 0.0;  // AUC (link) or Macro-F1 (node)
    std::vector<double> mean_con;
};

struct TrainHistory {
    std::vector<EpochStats> rows;
    int num_metapaths = 0;
    double metric_peak() const;
    double metric_mean() const;
};

struct TrainResult {
    ModelState model;
    TrainHistory history;
    SplitData split;
};

TrainResult train(const HetGraph& g, const std::vector<MetapathSpec>& metapaths,
                  const JumpLabelSet& labels, const TrainConfig& cfg);

// Plain forwards used by evaluation.
Matrix encode_nodes(const TrainerEnv& env, const ModelState& state);
std::vector<double> link_scores_for(const TrainerEnv& env, const ModelState& state,
                                    const std::vector<std::pair<int, int>>& pairs);
std::vector<int> node_predictions(const TrainerEnv& env, const ModelState& state,
                                  const std::vector<int>& nodes);
double validation_metric(const TrainerEnv& env, const ModelState& state,
                         const SplitData& split);

void save_history_csv(const TrainHistory& h, const std::filesystem::path& path);
TrainHistory load_history_csv(const std::filesystem::path& path);

// Builds the run environment (metapath composition, union adjacency,
// normalization, densification) shared by train and eval.
struct PreparedRun {
    std::vector<CollapsedAdj> collapsed;
    BoolMatrix union_adj;
    TrainerEnv env;
    std::vector<int> metapath_ids;
};
PreparedRun prepare_run(const HetGraph& g,
                        const std::vector<MetapathSpec>& metapaths,
                        const TrainConfig& cfg);

// Rebuilds run.env.norm_adj without the held-out positive pairs, so the
// encoder never propagates over the edges evaluation asks about. No-op
// unless the config enables masking on the link task.
void apply_link_masking(PreparedRun& run, const SplitData& split);

}  // namespace sesim
