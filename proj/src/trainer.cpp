#include "sesim/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "sesim/metrics.hpp"

namespace sesim {

namespace {

// Stream tags; every random decision draws from its own derived stream so
// that disabling one stage never perturbs another.
enum : uint64_t {
    kTagInit = 1,
    kTagSplit = 2,
    kTagValSampler = 3,
    kTagTrainSampler = 4,
    kTagNegEpoch = 5,
    kTagValNeg = 6,
    kTagPretextSampler = 1000,
};

}  // namespace

void TrainConfig::validate() const {
    if (alpha <= 0.0) throw ConfigError("config: alpha must be positive");
    if (beta <= 0.0) throw ConfigError("config: beta must be positive");
    if (weight_decay < 0.0) throw ConfigError("config: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("config: epochs must be >= 0");
    if (!(train_frac > 0.0 && train_frac < 1.0) ||
        !(val_frac > 0.0 && val_frac < 1.0) || train_frac + val_frac > 1.0)
        throw ConfigError("config: split fractions must lie in (0,1) and sum to at most 1");
    if (j_max < 1 || j_max > 8) throw ConfigError("config: j_max must be in 1..8");
    if (num_metapaths < 0) throw ConfigError("config: num_metapaths must be >= 0");
    if (hidden < 1 || embed < 1 || primary_hidden < 1 || con_hidden < 1)
        throw ConfigError("config: layer widths must be positive");
    if (densify_cap < 1) throw ConfigError("config: densify_cap must be positive");
    if (freeze_con && (*freeze_con < 0.0 || *freeze_con > 1.0))
        throw ConfigError("config: frozen contribution weight must lie in [0,1]");
}

MinibatchSampler::MinibatchSampler(int population, int batch, uint64_t seed)
    : population_(population), batch_(std::min(batch, population)), seed_(seed) {
    if (population < 1) throw ConfigError("sampler: empty split");
    if (batch < 1) throw ArgumentError("sampler: batch size must be >= 1");
}

std::vector<int> MinibatchSampler::batch_at(long step) const {
    if (step < 0) throw ArgumentError("sampler: negative step");
    std::vector<int> out;
    out.reserve(static_cast<size_t>(batch_));
    long start = step * static_cast<long>(batch_);
    while (static_cast<int>(out.size()) < batch_) {
        const long epoch = start / population_;
        const int offset = static_cast<int>(start % population_);
        std::vector<int> perm(static_cast<size_t>(population_));
        std::iota(perm.begin(), perm.end(), 0);
        Rng rng(Rng::mix(seed_, static_cast<uint64_t>(epoch)));
        rng.shuffle(perm);
        const int take =
            std::min(batch_ - static_cast<int>(out.size()), population_ - offset);
        out.insert(out.end(), perm.begin() + offset, perm.begin() + offset + take);
        start += take;
    }
    return out;
}

SplitData build_split(const HetGraph& g, const BoolMatrix& union_adj,
                      const JumpLabelSet& labels,
                      const std::vector<int>& metapath_ids,
                      const TrainConfig& cfg) {
    SplitData s;
    s.task = cfg.task;
    s.metapath_ids = metapath_ids;
    const int n = union_adj.rows();
    Rng rng(Rng::mix(cfg.seed, kTagSplit));

    std::set<std::pair<int, int>> held;
    if (cfg.task == Task::kLinkPrediction) {
        std::vector<std::pair<int, int>> positives;
        for (int i = 0; i < n; ++i)
            for (int32_t j : union_adj.row(i))
                if (j > i) positives.push_back({i, j});
        rng.shuffle(positives);
        const auto total = static_cast<long>(positives.size());
        const long n_train = static_cast<long>(total * cfg.train_frac);
        const long n_val = static_cast<long>(total * cfg.val_frac);
        s.train_pos.assign(positives.begin(), positives.begin() + n_train);
        s.val_pos.assign(positives.begin() + n_train,
                         positives.begin() + n_train + n_val);
        Rng neg_rng(Rng::mix(cfg.seed, kTagValNeg));
        for (size_t k = 0; k < s.val_pos.size(); ++k) {
            int i, j;
            do {
                i = static_cast<int>(neg_rng.next_below(static_cast<uint64_t>(n)));
                j = static_cast<int>(neg_rng.next_below(static_cast<uint64_t>(n)));
            } while (i == j || union_adj.at(i, j));
            s.val_neg.push_back({i, j});
        }
        for (const auto& p : s.val_pos) held.insert(p);
    } else {
        if (!g.labels)
            throw DataError("split: node classification needs labels");
        std::vector<int> nodes(static_cast<size_t>(n));
        std::iota(nodes.begin(), nodes.end(), 0);
        rng.shuffle(nodes);
        const long n_train = static_cast<long>(n * cfg.train_frac);
        const long n_val = static_cast<long>(n * cfg.val_frac);
        s.train_nodes.assign(nodes.begin(), nodes.begin() + n_train);
        s.val_nodes.assign(nodes.begin() + n_train, nodes.begin() + n_train + n_val);
        for (int v : s.train_nodes) s.train_node_labels.push_back((*g.labels)[v]);
        for (int v : s.val_nodes) s.val_node_labels.push_back((*g.labels)[v]);
    }

    s.pretext.resize(metapath_ids.size());
    for (const auto& e : labels.entries) {
        auto it = std::find(metapath_ids.begin(), metapath_ids.end(), e.metapath_id);
        if (it == metapath_ids.end()) continue;
        if (e.y > cfg.j_max) continue;
        if (cfg.task == Task::kLinkPrediction &&
            held.count({std::min(e.i, e.j), std::max(e.i, e.j)}))
            continue;  // pair is a held-out edge in some other metapath
        s.pretext[static_cast<size_t>(it - metapath_ids.begin())].push_back(e);
    }
    return s;
}

PreparedRun prepare_run(const HetGraph& g,
                        const std::vector<MetapathSpec>& metapaths,
                        const TrainConfig& cfg) {
    validate_graph(g);
    if (metapaths.empty()) throw ConfigError("run: need at least one metapath");
    std::vector<MetapathSpec> specs = metapaths;
    std::sort(specs.begin(), specs.end(),
              [](const MetapathSpec& a, const MetapathSpec& b) { return a.id < b.id; });
    size_t use = specs.size();
    if (cfg.num_metapaths > 0)
        use = std::min(use, static_cast<size_t>(cfg.num_metapaths));
    specs.resize(use);

    PreparedRun run;
    for (const auto& spec : specs) {
        run.collapsed.push_back(compose_metapath(g, spec));
        run.metapath_ids.push_back(spec.id);
    }
    run.union_adj = union_adjacency(run.collapsed);
    if (run.union_adj.rows() > cfg.densify_cap)
        throw ConfigError("run: " + std::to_string(run.union_adj.rows()) +
                          " target nodes exceed the densify cap of " +
                          std::to_string(cfg.densify_cap));
    run.env.norm_adj = normalize_adj(run.union_adj).matrix;
    run.env.features = g.features;
    run.env.cfg = cfg;
    return run;
}

void apply_link_masking(PreparedRun& run, const SplitData& split) {
    if (!run.env.cfg.mask_val_edges || split.task != Task::kLinkPrediction)
        return;
    // propagation sees training edges only
    BoolMatrix masked(run.union_adj.rows(), run.union_adj.cols());
    for (const auto& [i, j] : split.train_pos) {
        masked.set(i, j);
        masked.set(j, i);
    }
    run.env.norm_adj = normalize_adj(masked).matrix;
}

namespace {

struct LiftedModel {
    GcnParamsT gcn;
    PrimaryHeadT primary;
    std::vector<PretextHeadT> pretext;
    std::vector<ad::Tensor> flat;  // model_params order
};

LiftedModel lift_model(ad::Tape& t, const ModelState& s, bool grad) {
    LiftedModel lm;
    lm.gcn = lift(t, s.gcn, grad);
    lm.primary = lift(t, s.primary, grad);
    for (const auto& h : s.pretext) lm.pretext.push_back(lift(t, h, grad));
    lm.flat = {lm.gcn.w0,     lm.gcn.w1,     lm.primary.w1,
               lm.primary.b1, lm.primary.w2, lm.primary.b2};
    for (const auto& h : lm.pretext) {
        lm.flat.push_back(h.w);
        lm.flat.push_back(h.b);
    }
    return lm;
}

ad::Tensor primary_loss_tensor(ad::Tape& t, const TrainerEnv& env,
                               const LiftedModel& lm, ad::Tensor z,
                               const Batch& batch) {
    if (env.cfg.task == Task::kLinkPrediction) {
        ad::Tensor zi = t.gather_rows(z, batch.link_src);
        ad::Tensor zj = t.gather_rows(z, batch.link_dst);
        return t.bce(link_score(t, zi, zj, lm.primary), batch.link_target);
    }
    ad::Tensor zn = t.gather_rows(z, batch.nodes);
    return t.cross_entropy(node_logits_raw(t, zn, lm.primary), batch.node_labels);
}

struct ForwardBundle {
    ad::Tensor z, loss_pri, loss_total;
    MetaBookkeeping bk;
    double loss_pre_total = 0.0;
    std::vector<double> mean_con;
    std::vector<std::vector<double>> weighted_per_sample;
};

// Shared forward for the virtual and actual steps. Contribution weights
// are evaluated from state.con (or the frozen override) and enter the
// tape as constants; the pretext losses themselves stay differentiable.
ForwardBundle build_forward(ad::Tape& t, const TrainerEnv& env,
                            const ModelState& state, const LiftedModel& lm,
                            const Batch& batch, bool want_bookkeeping) {
    ForwardBundle fb;
    ad::Tensor x = t.constant(env.features);
    ad::Tensor adj = t.constant(env.norm_adj);
    fb.z = gcn_forward(t, x, adj, lm.gcn);
    fb.loss_pri = primary_loss_tensor(t, env, lm, fb.z, batch);
    fb.loss_total = fb.loss_pri;

    const int embed = state.cfg.embed;
    for (size_t d = 0; d < batch.pretext.size(); ++d) {
        const PretextBatch& pb = batch.pretext[d];
        fb.mean_con.push_back(0.0);
        fb.weighted_per_sample.emplace_back();
        if (pb.src.empty()) continue;
        if (d >= lm.pretext.size())
            throw StateError("forward: pretext batch without a matching head");
        const int b = static_cast<int>(pb.src.size());

        ad::Tensor zi = t.gather_rows(fb.z, pb.src);
        ad::Tensor zj = t.gather_rows(fb.z, pb.dst);
        ad::Tensor diff = t.sub(zi, zj);
        ad::Tensor phi = t.abs(diff);
        ad::Tensor pred =
            t.add(t.matmul(phi, lm.pretext[d].w), lm.pretext[d].b);

        ad::Tensor per_sample;  // b x 1 unweighted losses
        if (state.cfg.pretext_mode == PretextMode::kRegression) {
            Matrix targets(b, 1);
            for (int i = 0; i < b; ++i) targets(i, 0) = pb.y[i];
            ad::Tensor delta = t.sub(pred, t.constant(targets));
            per_sample = t.mul(delta, delta);
        } else {
            per_sample = t.cross_entropy_each(pred, pb.y_class);
        }

        Matrix con = env.cfg.freeze_con
                         ? Matrix(b, 1, *env.cfg.freeze_con)
                         : contribution_values(phi.value(), state.con);
        double con_mean = 0.0;
        for (int i = 0; i < b; ++i) con_mean += con(i, 0);
        fb.mean_con.back() = con_mean / b;
        for (int i = 0; i < b; ++i)
            fb.weighted_per_sample.back().push_back(con(i, 0) *
                                                    per_sample.value()(i, 0));

        ad::Tensor weighted = t.mean_all(t.mul(t.constant(con), per_sample));
        fb.loss_pre_total += weighted.value()(0, 0);
        fb.loss_total = t.add(fb.loss_total, weighted);

        if (want_bookkeeping) {
            MetaPretextRecord rec;
            rec.metapath_id = pb.metapath_id;
            rec.src = pb.src;
            rec.dst = pb.dst;
            rec.phi = phi.value();
            rec.sign = Matrix(b, embed);
            for (int i = 0; i < b; ++i)
                for (int k = 0; k < embed; ++k) {
                    const double v = diff.value()(i, k);
                    rec.sign(i, k) = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                }
            rec.dl_dphi = Matrix(b, embed);
            if (state.cfg.pretext_mode == PretextMode::kRegression) {
                // l_i = (s_i - y_i)^2, s = phi . w + b
                for (int i = 0; i < b; ++i) {
                    const double r = 2.0 * (pred.value()(i, 0) - pb.y[i]);
                    for (int k = 0; k < embed; ++k)
                        rec.dl_dphi(i, k) = r * state.pretext[d].w(k, 0);
                }
            } else {
                // l_i = ce(U_i, y_i), U = phi . W + b
                const int c = state.cfg.pretext_out();
                for (int i = 0; i < b; ++i) {
                    std::vector<double> sm(static_cast<size_t>(c));
                    double mx = pred.value()(i, 0);
                    for (int q = 1; q < c; ++q) mx = std::max(mx, pred.value()(i, q));
                    double sum = 0.0;
                    for (int q = 0; q < c; ++q) {
                        sm[q] = std::exp(pred.value()(i, q) - mx);
                        sum += sm[q];
                    }
                    for (int q = 0; q < c; ++q) sm[q] /= sum;
                    sm[pb.y_class[i]] -= 1.0;
                    for (int k = 0; k < embed; ++k) {
                        double acc = 0.0;
                        for (int q = 0; q < c; ++q)
                            acc += sm[q] * state.pretext[d].w(k, q);
                        rec.dl_dphi(i, k) = acc;
                    }
                }
            }
            fb.bk.records.push_back(std::move(rec));
        }
    }
    if (want_bookkeeping) fb.bk.valid = true;
    return fb;
}

}  // namespace

double primary_loss_value(const TrainerEnv& env, const ModelState& state,
                          const Batch& batch) {
    ad::Tape t;
    LiftedModel lm = lift_model(t, state, false);
    ad::Tensor z = gcn_forward(t, t.constant(env.features),
                               t.constant(env.norm_adj), lm.gcn);
    return primary_loss_tensor(t, env, lm, z, batch).value()(0, 0);
}

JointLoss joint_loss(const TrainerEnv& env, const ModelState& state,
                     const Batch& batch) {
    ad::Tape t;
    LiftedModel lm = lift_model(t, state, false);
    ForwardBundle fb = build_forward(t, env, state, lm, batch, false);
    JointLoss out;
    out.loss_pri = fb.loss_pri.value()(0, 0);
    out.loss_pre_total = fb.loss_pre_total;
    out.total = fb.loss_total.value()(0, 0);
    out.weighted_per_sample = std::move(fb.weighted_per_sample);
    return out;
}

VirtualStepResult virtual_step(const TrainerEnv& env, const ModelState& state,
                               const Batch& train_batch, double alpha) {
    if (alpha < 0.0) throw ArgumentError("virtual_step: negative learning rate");
    ad::Tape t;
    LiftedModel lm = lift_model(t, state, true);
    ForwardBundle fb = build_forward(t, env, state, lm, train_batch, true);
    t.backward(fb.loss_total);

    VirtualStepResult out;
    out.w_hat = state;
    out.loss_pri = fb.loss_pri.value()(0, 0);
    out.loss_pre_total = fb.loss_pre_total;
    auto params = model_params(out.w_hat);
    for (size_t p = 0; p < params.size(); ++p) {
        const Matrix& g = lm.flat[p].grad();
        if (!g.all_finite())
            throw NumericError(std::string("virtual_step: non-finite gradient in ") +
                               params[p].name);
        if (alpha != 0.0) axpy(*params[p].m, -alpha, g);
    }
    out.bk = std::move(fb.bk);
    return out;
}

MetaUpdateResult meta_update_lambda(const TrainerEnv& env,
                                    const ModelState& state,
                                    const ModelState& w_hat,
                                    const Batch& val_batch,
                                    const MetaBookkeeping& bk, double alpha,
                                    double beta) {
    if (!bk.valid)
        throw StateError("meta_update_lambda: virtual-step bookkeeping missing");
    if (beta < 0.0) throw ArgumentError("meta_update_lambda: negative learning rate");

    // v = grad of the validation primary loss at the virtual parameters.
    ad::Tape t;
    LiftedModel lm = lift_model(t, w_hat, true);
    ad::Tensor x = t.constant(env.features);
    ad::Tensor adj = t.constant(env.norm_adj);
    ad::Tensor z = gcn_forward(t, x, adj, lm.gcn);
    ad::Tensor val_loss = primary_loss_tensor(t, env, lm, z, val_batch);
    t.backward(val_loss);

    MetaUpdateResult out;
    out.val_loss = val_loss.value()(0, 0);
    out.lambda_next = state.con;
    ModelState mut = state;  // shapes only
    for (const ParamRef& p : lambda_params(mut))
        out.lambda_grad.push_back(Matrix(p.m->rows(), p.m->cols()));

    int total_rows = 0;
    for (const auto& rec : bk.records) total_rows += static_cast<int>(rec.src.size());
    if (total_rows == 0) return out;

    // Directional derivative of the encoder output along v, taken at the
    // current parameters where the retained per-sample gradients live.
    const Matrix& v_w0 = lm.gcn.w0.grad();
    const Matrix& v_w1 = lm.gcn.w1.grad();
    const Matrix px = matmul(env.norm_adj, env.features);
    const Matrix pre = matmul(px, state.gcn.w0);
    Matrix h1 = pre;
    for (size_t i = 0; i < h1.size(); ++i) h1.data()[i] = std::max(0.0, h1.data()[i]);
    Matrix hdot = matmul(px, v_w0);
    for (size_t i = 0; i < hdot.size(); ++i)
        if (pre.data()[i] <= 0.0) hdot.data()[i] = 0.0;
    Matrix inner = matmul(hdot, state.gcn.w1);
    axpy(inner, 1.0, matmul(h1, v_w1));
    const Matrix zdot = matmul(env.norm_adj, inner);

    const int embed = state.cfg.embed;
    Matrix phi_all(total_rows, embed);
    Matrix coeff(total_rows, 1);
    int row = 0;
    for (const auto& rec : bk.records) {
        const int b = static_cast<int>(rec.src.size());
        for (int i = 0; i < b; ++i, ++row) {
            double a = 0.0;
            for (int k = 0; k < embed; ++k)
                a += rec.dl_dphi(i, k) * rec.sign(i, k) *
                     (zdot(rec.src[i], k) - zdot(rec.dst[i], k));
            coeff(row, 0) = -alpha * a / b;
            for (int k = 0; k < embed; ++k) phi_all(row, k) = rec.phi(i, k);
        }
    }

    ad::Tape lt;
    ContributionNetT conT = lift(lt, state.con, true);
    ad::Tensor cw = contribution(lt, lt.constant(phi_all), conT);
    ad::Tensor surrogate = lt.sum_all(lt.mul(lt.constant(coeff), cw));
    lt.backward(surrogate);

    const ad::Tensor lparams[4] = {conT.w1, conT.b1, conT.w2, conT.b2};
    auto refs = lambda_params(out.lambda_next);
    for (size_t p = 0; p < refs.size(); ++p) {
        const Matrix& g = lparams[p].grad();
        if (!g.all_finite())
            throw NumericError(std::string("meta_update: non-finite gradient in ") +
                               refs[p].name);
        out.lambda_grad[p] = g;
        if (beta != 0.0) axpy(*refs[p].m, -beta, g);
    }
    return out;
}

MetaUpdateResult meta_update_lambda_literal(const TrainerEnv& env,
                                            const ModelState& w_hat,
                                            const Batch& batch, double beta) {
    ad::Tape t;
    LiftedModel lm = lift_model(t, w_hat, false);
    ForwardBundle fb = build_forward(t, env, w_hat, lm, batch, false);

    MetaUpdateResult out;
    out.val_loss = fb.loss_pri.value()(0, 0);
    out.lambda_next = w_hat.con;
    ModelState mut = w_hat;
    for (const ParamRef& p : lambda_params(mut))
        out.lambda_grad.push_back(Matrix(p.m->rows(), p.m->cols()));

    // grad_lambda of sum_d mean_i Con(phi_i) * l_i with l_i constant.
    int total_rows = 0;
    for (const auto& pb : batch.pretext) total_rows += static_cast<int>(pb.src.size());
    if (total_rows == 0) return out;

    const int embed = w_hat.cfg.embed;
    Matrix phi_all(total_rows, embed);
    Matrix coeff(total_rows, 1);
    int row = 0;
    {
        ad::Tape ft;
        LiftedModel flm = lift_model(ft, w_hat, false);
        ad::Tensor x = ft.constant(env.features);
        ad::Tensor adj = ft.constant(env.norm_adj);
        ad::Tensor z = gcn_forward(ft, x, adj, flm.gcn);
        for (size_t d = 0; d < batch.pretext.size(); ++d) {
            const PretextBatch& pb = batch.pretext[d];
            if (pb.src.empty()) continue;
            const int b = static_cast<int>(pb.src.size());
            ad::Tensor zi = ft.gather_rows(z, pb.src);
            ad::Tensor zj = ft.gather_rows(z, pb.dst);
            ad::Tensor phi = ft.abs(ft.sub(zi, zj));
            ad::Tensor pred =
                ft.add(ft.matmul(phi, flm.pretext[d].w), flm.pretext[d].b);
            for (int i = 0; i < b; ++i, ++row) {
                double loss_i;
                if (w_hat.cfg.pretext_mode == PretextMode::kRegression) {
                    const double delta = pred.value()(i, 0) - pb.y[i];
                    loss_i = delta * delta;
                } else {
                    const int c = w_hat.cfg.pretext_out();
                    double mx = pred.value()(i, 0);
                    for (int q = 1; q < c; ++q) mx = std::max(mx, pred.value()(i, q));
                    double sum = 0.0;
                    for (int q = 0; q < c; ++q) sum += std::exp(pred.value()(i, q) - mx);
                    loss_i = mx + std::log(sum) - pred.value()(i, pb.y_class[i]);
                }
                coeff(row, 0) = loss_i / b;
                for (int k = 0; k < embed; ++k) phi_all(row, k) = phi.value()(i, k);
            }
        }
    }

    ad::Tape lt;
    ContributionNetT conT = lift(lt, w_hat.con, true);
    ad::Tensor cw = contribution(lt, lt.constant(phi_all), conT);
    ad::Tensor surrogate = lt.sum_all(lt.mul(lt.constant(coeff), cw));
    lt.backward(surrogate);

    const ad::Tensor lparams[4] = {conT.w1, conT.b1, conT.w2, conT.b2};
    auto refs = lambda_params(out.lambda_next);
    for (size_t p = 0; p < refs.size(); ++p) {
        out.lambda_grad[p] = lparams[p].grad();
        if (beta != 0.0) axpy(*refs[p].m, -beta, out.lambda_grad[p]);
    }
    return out;
}

void adam_apply(Matrix& w, const Matrix& g, Matrix& m, Matrix& v, long t,
                double alpha, double beta1, double beta2, double eps) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < w.size(); ++i) {
        const double gi = g.data()[i];
        m.data()[i] = beta1 * m.data()[i] + (1.0 - beta1) * gi;
        v.data()[i] = beta2 * v.data()[i] + (1.0 - beta2) * gi * gi;
        const double mhat = m.data()[i] / bc1;
        const double vhat = v.data()[i] / bc2;
        w.data()[i] -= alpha * mhat / (std::sqrt(vhat) + eps);
    }
}

AdamState init_adam(ModelState& state) {
    AdamState a;
    for (const ParamRef& p : model_params(state)) {
        a.m.push_back(Matrix(p.m->rows(), p.m->cols()));
        a.v.push_back(Matrix(p.m->rows(), p.m->cols()));
    }
    return a;
}

StepStats actual_step(const TrainerEnv& env, ModelState& state,
                      const Batch& train_batch, AdamState& adam) {
    ad::Tape t;
    LiftedModel lm = lift_model(t, state, true);
    ForwardBundle fb = build_forward(t, env, state, lm, train_batch, false);
    t.backward(fb.loss_total);

    adam.t += 1;
    auto params = model_params(state);
    if (adam.m.size() != params.size())
        throw StateError("actual_step: optimizer state does not match model");
    for (size_t p = 0; p < params.size(); ++p) {
        Matrix g = lm.flat[p].grad();
        if (env.cfg.weight_decay != 0.0) axpy(g, env.cfg.weight_decay, *params[p].m);
        if (!g.all_finite())
            throw NumericError(std::string("actual_step: non-finite gradient in ") +
                               params[p].name);
        adam_apply(*params[p].m, g, adam.m[p], adam.v[p], adam.t, env.cfg.alpha,
                   env.cfg.adam_beta1, env.cfg.adam_beta2, env.cfg.adam_eps);
        if (!params[p].m->all_finite())
            throw NumericError(std::string("actual_step: non-finite update in ") +
                               params[p].name);
    }

    StepStats st;
    st.loss_pri = fb.loss_pri.value()(0, 0);
    st.loss_pre_total = fb.loss_pre_total;
    st.mean_con = std::move(fb.mean_con);
    return st;
}

Matrix encode_nodes(const TrainerEnv& env, const ModelState& state) {
    ad::Tape t;
    GcnParamsT gcn = lift(t, state.gcn, false);
    ad::Tensor z = gcn_forward(t, t.constant(env.features),
                               t.constant(env.norm_adj), gcn);
    return z.value();
}

std::vector<double> link_scores_for(const TrainerEnv& env, const ModelState& state,
                                    const std::vector<std::pair<int, int>>& pairs) {
    ad::Tape t;
    GcnParamsT gcn = lift(t, state.gcn, false);
    PrimaryHeadT head = lift(t, state.primary, false);
    ad::Tensor z = gcn_forward(t, t.constant(env.features),
                               t.constant(env.norm_adj), gcn);
    std::vector<int> src, dst;
    for (const auto& [i, j] : pairs) {
        src.push_back(i);
        dst.push_back(j);
    }
    ad::Tensor s = link_score(t, t.gather_rows(z, src), t.gather_rows(z, dst), head);
    std::vector<double> out;
    for (int i = 0; i < s.rows(); ++i) out.push_back(s.value()(i, 0));
    return out;
}

std::vector<int> node_predictions(const TrainerEnv& env, const ModelState& state,
                                  const std::vector<int>& nodes) {
    ad::Tape t;
    GcnParamsT gcn = lift(t, state.gcn, false);
    PrimaryHeadT head = lift(t, state.primary, false);
    ad::Tensor z = gcn_forward(t, t.constant(env.features),
                               t.constant(env.norm_adj), gcn);
    ad::Tensor probs = node_logits(t, t.gather_rows(z, nodes), head);
    std::vector<int> out;
    for (int i = 0; i < probs.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < probs.cols(); ++c)
            if (probs.value()(i, c) > probs.value()(i, best)) best = c;
        out.push_back(best);
    }
    return out;
}

double validation_metric(const TrainerEnv& env, const ModelState& state,
                         const SplitData& split) {
    if (split.task == Task::kLinkPrediction) {
        std::vector<std::pair<int, int>> pairs = split.val_pos;
        pairs.insert(pairs.end(), split.val_neg.begin(), split.val_neg.end());
        std::vector<int> labels(split.val_pos.size(), 1);
        labels.insert(labels.end(), split.val_neg.size(), 0);
        return auc(link_scores_for(env, state, pairs), labels);
    }
    return macro_f1(split.val_node_labels,
                    node_predictions(env, state, split.val_nodes),
                    state.cfg.num_classes);
}

double TrainHistory::metric_peak() const {
    if (rows.empty()) throw StateError("history: no epochs recorded");
    double best = rows[0].val_metric;
    for (const auto& r : rows) best = std::max(best, r.val_metric);
    return best;
}

double TrainHistory::metric_mean() const {
    if (rows.empty()) throw StateError("history: no epochs recorded");
    double sum = 0.0;
    for (const auto& r : rows) sum += r.val_metric;
    return sum / static_cast<double>(rows.size());
}

namespace {

// Largest-remainder split of the pretext batch budget across metapaths,
// proportional to label counts.
std::vector<int> pretext_shares(const std::vector<size_t>& counts, int budget) {
    std::vector<int> shares(counts.size(), 0);
    size_t total = 0;
    for (size_t c : counts) total += c;
    if (total == 0 || budget <= 0) return shares;
    std::vector<std::pair<double, size_t>> rema;
    int assigned = 0;
    for (size_t d = 0; d < counts.size(); ++d) {
        const double exact =
            static_cast<double>(budget) * static_cast<double>(counts[d]) /
            static_cast<double>(total);
        shares[d] = static_cast<int>(exact);
        assigned += shares[d];
        rema.push_back({exact - shares[d], d});
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int r = 0; r < budget - assigned && r < static_cast<int>(rema.size()); ++r)
        shares[rema[static_cast<size_t>(r)].second] += 1;
    return shares;
}

}  // namespace

TrainResult train(const HetGraph& g, const std::vector<MetapathSpec>& metapaths,
                  const JumpLabelSet& labels, const TrainConfig& cfg) {
    cfg.validate();
    PreparedRun run = prepare_run(g, metapaths, cfg);
    if (cfg.task == Task::kNodeClassification) {
        if (!g.labels) throw DataError("train: node classification needs labels");
        if (g.num_classes() < 2)
            throw DataError("train: need at least two classes");
    }

    SplitData split =
        build_split(g, run.union_adj, labels, run.metapath_ids, cfg);
    apply_link_masking(run, split);
    const size_t n_train = cfg.task == Task::kLinkPrediction
                               ? split.train_pos.size()
                               : split.train_nodes.size();
    const size_t n_val = cfg.task == Task::kLinkPrediction
                             ? split.val_pos.size()
                             : split.val_nodes.size();
    if (n_train == 0 || n_val == 0)
        throw ConfigError("train: split produced an empty train or validation set");

    ModelConfig mc;
    mc.in_dim = g.features.cols();
    mc.hidden = cfg.hidden;
    mc.embed = cfg.embed;
    mc.primary_hidden = cfg.primary_hidden;
    mc.con_hidden = cfg.con_hidden;
    mc.num_classes = std::max(2, g.num_classes());
    mc.num_metapaths = static_cast<int>(run.metapath_ids.size());
    mc.j_max = cfg.j_max;
    mc.task = cfg.task;
    mc.pretext_mode = cfg.pretext_mode;

    TrainResult result;
    result.model = init_model(mc, Rng::mix(cfg.seed, kTagInit));
    result.split = split;
    result.history.num_metapaths = mc.num_metapaths;
    if (cfg.epochs == 0) return result;

    ModelState& state = result.model;
    AdamState adam = init_adam(state);

    MinibatchSampler train_sampler(static_cast<int>(n_train), cfg.batch_size,
                                   Rng::mix(cfg.seed, kTagTrainSampler));
    MinibatchSampler val_sampler(static_cast<int>(n_val), cfg.batch_size,
                                 Rng::mix(cfg.seed, kTagValSampler));

    std::vector<size_t> pretext_counts;
    for (const auto& v : split.pretext) pretext_counts.push_back(v.size());
    const std::vector<int> shares =
        cfg.vanilla ? std::vector<int>(pretext_counts.size(), 0)
                    : pretext_shares(pretext_counts, cfg.batch_size);
    std::vector<std::optional<MinibatchSampler>> pretext_samplers(
        pretext_counts.size());
    bool has_pretext = false;
    for (size_t d = 0; d < pretext_counts.size(); ++d) {
        if (shares[d] > 0 && pretext_counts[d] > 0) {
            pretext_samplers[d].emplace(
                static_cast<int>(pretext_counts[d]), shares[d],
                Rng::mix(cfg.seed, kTagPretextSampler +
                                       static_cast<uint64_t>(split.metapath_ids[d])));
            has_pretext = true;
        }
    }

    auto make_train_batch = [&](int epoch) {
        Batch b;
        if (cfg.task == Task::kLinkPrediction) {
            Rng neg_rng(Rng::mix(Rng::mix(cfg.seed, kTagNegEpoch),
                                 static_cast<uint64_t>(epoch)));
            const int n = run.union_adj.rows();
            for (int idx : train_sampler.batch_at(epoch)) {
                b.link_src.push_back(split.train_pos[idx].first);
                b.link_dst.push_back(split.train_pos[idx].second);
                b.link_target.push_back(1.0);
            }
            const size_t n_pos = b.link_src.size();
            for (size_t k = 0; k < n_pos; ++k) {
                int i, j;
                do {
                    i = static_cast<int>(neg_rng.next_below(static_cast<uint64_t>(n)));
                    j = static_cast<int>(neg_rng.next_below(static_cast<uint64_t>(n)));
                } while (i == j || run.union_adj.at(i, j));
                b.link_src.push_back(i);
                b.link_dst.push_back(j);
                b.link_target.push_back(0.0);
            }
        } else {
            for (int idx : train_sampler.batch_at(epoch)) {
                b.nodes.push_back(split.train_nodes[idx]);
                b.node_labels.push_back(split.train_node_labels[idx]);
            }
        }
        for (size_t d = 0; d < pretext_samplers.size(); ++d) {
            PretextBatch pb;
            pb.metapath_id = split.metapath_ids[d];
            if (pretext_samplers[d]) {
                for (int idx : pretext_samplers[d]->batch_at(epoch)) {
                    const JumpLabelEntry& e = split.pretext[d][idx];
                    pb.src.push_back(e.i);
                    pb.dst.push_back(e.j);
                    pb.y.push_back(static_cast<double>(e.y));
                    pb.y_class.push_back(e.y - 1);
                }
            }
            b.pretext.push_back(std::move(pb));
        }
        return b;
    };

    auto make_val_batch = [&](int epoch) {
        Batch b;
        if (cfg.task == Task::kLinkPrediction) {
            for (int idx : val_sampler.batch_at(epoch)) {
                b.link_src.push_back(split.val_pos[idx].first);
                b.link_dst.push_back(split.val_pos[idx].second);
                b.link_target.push_back(1.0);
            }
            for (int idx : val_sampler.batch_at(epoch)) {
                b.link_src.push_back(split.val_neg[idx].first);
                b.link_dst.push_back(split.val_neg[idx].second);
                b.link_target.push_back(0.0);
            }
        } else {
            for (int idx : val_sampler.batch_at(epoch)) {
                b.nodes.push_back(split.val_nodes[idx]);
                b.node_labels.push_back(split.val_node_labels[idx]);
            }
        }
        return b;
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        try {
            Batch train_batch = make_train_batch(epoch);
            if (!cfg.vanilla && has_pretext && !cfg.freeze_con) {
                VirtualStepResult vs =
                    virtual_step(run.env, state, train_batch, cfg.alpha);
                MetaUpdateResult mu =
                    cfg.lambda_literal
                        ? meta_update_lambda_literal(run.env, vs.w_hat,
                                                     train_batch, cfg.beta)
                        : meta_update_lambda(run.env, state, vs.w_hat,
                                             make_val_batch(epoch), vs.bk,
                                             cfg.alpha, cfg.beta);
                state.con = mu.lambda_next;
            }
            StepStats st = actual_step(run.env, state, train_batch, adam);

            EpochStats es;
            es.epoch = epoch;
            es.loss_pri = st.loss_pri;
            es.loss_pre_total = st.loss_pre_total;
            es.mean_con = st.mean_con;
            es.mean_con.resize(pretext_counts.size(), 0.0);
            es.val_metric = validation_metric(run.env, state, split);
            result.history.rows.push_back(std::move(es));
        } catch (const NumericError& e) {
            throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
        }
    }
    return result;
}

void save_history_csv(const TrainHistory& h, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "epoch,loss_pri,loss_pre_total,val_metric";
    for (int d = 0; d < h.num_metapaths; ++d) out << ",mean_con_m" << d;
    out << '\n';
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    for (const auto& r : h.rows) {
        out << r.epoch << ',';
        put(r.loss_pri);
        out << ',';
        put(r.loss_pre_total);
        out << ',';
        put(r.val_metric);
        for (int d = 0; d < h.num_metapaths; ++d) {
            out << ',';
            put(d < static_cast<int>(r.mean_con.size()) ? r.mean_con[d] : 0.0);
        }
        out << '\n';
    }
    if (!out) throw DataError("write failed for " + path.string());
}

TrainHistory load_history_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("epoch,loss_pri", 0) != 0)
        throw DataError(path.string() + ": missing history header");
    TrainHistory h;
    h.num_metapaths = 0;
    {
        size_t pos = 0;
        int cols = 1;
        while ((pos = line.find(',', pos)) != std::string::npos) {
            ++cols;
            ++pos;
        }
        h.num_metapaths = cols - 4;
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        EpochStats r;
        std::getline(ss, cell, ',');
        r.epoch = std::atoi(cell.c_str());
        std::getline(ss, cell, ',');
        r.loss_pri = std::atof(cell.c_str());
        std::getline(ss, cell, ',');
        r.loss_pre_total = std::atof(cell.c_str());
        std::getline(ss, cell, ',');
        r.val_metric = std::atof(cell.c_str());
        while (std::getline(ss, cell, ','))
            r.mean_con.push_back(std::atof(cell.c_str()));
        h.rows.push_back(std::move(r));
    }
    return h;
}

}  // namespace sesim
