#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "sesim/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace sesim;
using sesim::testsupport::rel_err;

namespace {

struct Fix {
    BundleData bundle;
    PreparedRun run;
    JumpLabelSet labels;
    SplitData split;
    ModelState state;
    TrainConfig cfg;
};

TrainConfig small_train_config(Task task, uint64_t seed) {
    TrainConfig tc;
    tc.hidden = 8;
    tc.embed = 4;
    tc.primary_hidden = 5;
    tc.con_hidden = 6;
    tc.batch_size = 16;
    tc.epochs = 5;
    tc.seed = seed;
    tc.task = task;
    return tc;
}

Fix make_fix(Task task, uint64_t seed,
             PretextMode pm = PretextMode::kRegression) {
    Fix f;
    SynthConfig sc;
    sc.node_counts = {40, 30, 30};
    sc.communities = 2;
    sc.intra_p = {0.25};
    sc.inter_p = {0.03};
    sc.noise = 0.5;
    sc.seed = seed;
    f.bundle = generate_synthetic(sc);

    f.cfg = small_train_config(task, seed);
    f.cfg.pretext_mode = pm;
    f.run = prepare_run(f.bundle.graph, f.bundle.metapaths, f.cfg);

    PairSamplerConfig pc;
    pc.targets_per_metapath = 32;
    pc.neighbors_per_target = 6;
    pc.seed = seed;
    f.labels = build_label_set(f.run.collapsed, pc, f.cfg.j_max);
    f.split = build_split(f.bundle.graph, f.run.union_adj, f.labels,
                          f.run.metapath_ids, f.cfg);

    ModelConfig mc;
    mc.in_dim = f.bundle.graph.features.cols();
    mc.hidden = f.cfg.hidden;
    mc.embed = f.cfg.embed;
    mc.primary_hidden = f.cfg.primary_hidden;
    mc.con_hidden = f.cfg.con_hidden;
    mc.num_classes = std::max(2, f.bundle.graph.num_classes());
    mc.num_metapaths = static_cast<int>(f.run.metapath_ids.size());
    mc.j_max = f.cfg.j_max;
    mc.task = task;
    mc.pretext_mode = pm;
    f.state = init_model(mc, seed + 1);
    return f;
}

// Hand-built batch: first primary samples plus per-metapath pretext pairs.
Batch make_batch(const Fix& f, int n_primary, int n_pretext) {
    Batch b;
    if (f.cfg.task == Task::kLinkPrediction) {
        const int n = f.run.union_adj.rows();
        for (int k = 0; k < n_primary &&
                        k < static_cast<int>(f.split.train_pos.size()); ++k) {
            b.link_src.push_back(f.split.train_pos[k].first);
            b.link_dst.push_back(f.split.train_pos[k].second);
            b.link_target.push_back(1.0);
        }
        int added = 0;
        for (int i = 0; i < n && added < n_primary; ++i)
            for (int j = i + 1; j < n && added < n_primary; ++j)
                if (!f.run.union_adj.at(i, j)) {
                    b.link_src.push_back(i);
                    b.link_dst.push_back(j);
                    b.link_target.push_back(0.0);
                    ++added;
                }
    } else {
        for (int k = 0; k < n_primary &&
                        k < static_cast<int>(f.split.train_nodes.size()); ++k) {
            b.nodes.push_back(f.split.train_nodes[k]);
            b.node_labels.push_back(f.split.train_node_labels[k]);
        }
    }
    for (size_t d = 0; d < f.split.pretext.size(); ++d) {
        PretextBatch pb;
        pb.metapath_id = f.split.metapath_ids[d];
        for (int k = 0; k < n_pretext &&
                        k < static_cast<int>(f.split.pretext[d].size()); ++k) {
            const JumpLabelEntry& e = f.split.pretext[d][k];
            pb.src.push_back(e.i);
            pb.dst.push_back(e.j);
            pb.y.push_back(static_cast<double>(e.y));
            pb.y_class.push_back(e.y - 1);
        }
        b.pretext.push_back(std::move(pb));
    }
    return b;
}

Batch make_val_batch(const Fix& f, int n) {
    Batch b;
    if (f.cfg.task == Task::kLinkPrediction) {
        for (int k = 0; k < n && k < static_cast<int>(f.split.val_pos.size()); ++k) {
            b.link_src.push_back(f.split.val_pos[k].first);
            b.link_dst.push_back(f.split.val_pos[k].second);
            b.link_target.push_back(1.0);
        }
        for (int k = 0; k < n && k < static_cast<int>(f.split.val_neg.size()); ++k) {
            b.link_src.push_back(f.split.val_neg[k].first);
            b.link_dst.push_back(f.split.val_neg[k].second);
            b.link_target.push_back(0.0);
        }
    } else {
        for (int k = 0; k < n && k < static_cast<int>(f.split.val_nodes.size()); ++k) {
            b.nodes.push_back(f.split.val_nodes[k]);
            b.node_labels.push_back(f.split.val_node_labels[k]);
        }
    }
    return b;
}

bool states_equal(const ModelState& a, const ModelState& b) {
    ModelState ma = a, mb = b;
    auto pa = model_params(ma), pb = model_params(mb);
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i)
        if (!(*pa[i].m == *pb[i].m)) return false;
    auto la = lambda_params(ma), lb = lambda_params(mb);
    for (size_t i = 0; i < la.size(); ++i)
        if (!(*la[i].m == *lb[i].m)) return false;
    return true;
}

}  // namespace

TEST_CASE("minibatch sampler") {
    SUBCASE("asking for at least the population yields a full permutation") {
        MinibatchSampler s(10, 25, 7);
        std::vector<int> b = s.batch_at(0);
        REQUIRE(b.size() == 10);
        std::vector<char> seen(10, 0);
        for (int i : b) seen[i] = 1;
        for (char c : seen) CHECK(c == 1);
    }
    SUBCASE("same seed and step reproduce the batch") {
        MinibatchSampler s1(50, 8, 99), s2(50, 8, 99);
        for (long step : {0L, 1L, 7L, 100L})
            CHECK(s1.batch_at(step) == s2.batch_at(step));
        CHECK(s1.batch_at(3) != s1.batch_at(4));
    }
    SUBCASE("draw frequencies are uniform within three sigma") {
        const int pop = 10, bsz = 3, steps = 10000;
        MinibatchSampler s(pop, bsz, 1234);
        std::vector<long> count(pop, 0);
        for (long t = 0; t < steps; ++t)
            for (int i : s.batch_at(t)) ++count[i];
        const double total = static_cast<double>(steps) * bsz;
        const double p = 1.0 / pop;
        const double sigma = std::sqrt(total * p * (1 - p));
        for (long c : count) CHECK(std::fabs(c - total * p) <= 3.0 * sigma);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(MinibatchSampler(0, 4, 1), ConfigError);
        CHECK_THROWS_AS(MinibatchSampler(10, 0, 1), ArgumentError);
    }
}

TEST_CASE("build_split keeps held-out edges away from pretext pairs") {
    Fix f = make_fix(Task::kLinkPrediction, 3);
    std::set<std::pair<int, int>> val(f.split.val_pos.begin(), f.split.val_pos.end());
    for (auto p : f.split.train_pos) CHECK_FALSE(val.count(p));
    for (const auto& per : f.split.pretext)
        for (const auto& e : per)
            CHECK_FALSE(val.count({std::min(e.i, e.j), std::max(e.i, e.j)}));
    for (auto [i, j] : f.split.val_neg) {
        CHECK(i != j);
        CHECK_FALSE(f.run.union_adj.at(i, j));
    }
}

TEST_CASE("joint_loss composition") {
    Fix f = make_fix(Task::kLinkPrediction, 5);
    Batch batch = make_batch(f, 8, 6);

    SUBCASE("zeroed contribution output layer means every weight is 0.5") {
        ModelState half = f.state;
        half.con.w2.fill(0.0);
        half.con.b2.fill(0.0);
        JointLoss with_half = joint_loss(f.run.env, half, batch);

        TrainerEnv unit_env = f.run.env;
        unit_env.cfg.freeze_con = 1.0;
        JointLoss unweighted = joint_loss(unit_env, half, batch);

        const double pre_unweighted = unweighted.total - unweighted.loss_pri;
        CHECK(std::fabs(with_half.total -
                        (with_half.loss_pri + 0.5 * pre_unweighted)) < 1e-12);
    }
    SUBCASE("no pretext batch collapses to the primary loss") {
        Batch plain = batch;
        plain.pretext.clear();
        JointLoss jl = joint_loss(f.run.env, f.state, plain);
        CHECK(jl.total == jl.loss_pri);
        CHECK(jl.loss_pre_total == 0.0);
    }
    SUBCASE("total equals the recomposition from the reported parts") {
        JointLoss jl = joint_loss(f.run.env, f.state, batch);
        double total = jl.loss_pri;
        for (const auto& per : jl.weighted_per_sample) {
            if (per.empty()) continue;
            double sum = 0.0;
            for (double v : per) sum += v;
            total += sum / static_cast<double>(per.size());
        }
        CHECK(std::fabs(jl.total - total) < 1e-12);
        CHECK(std::fabs(jl.total - (jl.loss_pri + jl.loss_pre_total)) < 1e-12);
    }
}

TEST_CASE("virtual_step") {
    Fix f = make_fix(Task::kLinkPrediction, 7);
    Batch batch = make_batch(f, 8, 6);

    SUBCASE("alpha zero returns the parameters unchanged") {
        VirtualStepResult vs = virtual_step(f.run.env, f.state, batch, 0.0);
        CHECK(states_equal(vs.w_hat, f.state));
    }
    SUBCASE("never mutates the input state") {
        ModelState before = f.state;
        (void)virtual_step(f.run.env, f.state, batch, 0.01);
        CHECK(states_equal(before, f.state));
    }
    SUBCASE("frozen half weights match a zeroed contribution net bit for bit") {
        ModelState half = f.state;
        half.con.w2.fill(0.0);
        half.con.b2.fill(0.0);
        VirtualStepResult via_net = virtual_step(f.run.env, half, batch, 0.005);

        TrainerEnv frozen = f.run.env;
        frozen.cfg.freeze_con = 0.5;
        VirtualStepResult via_freeze = virtual_step(frozen, half, batch, 0.005);
        CHECK(states_equal(via_net.w_hat, via_freeze.w_hat));
    }
    SUBCASE("small step descends the joint loss") {
        TrainerEnv frozen = f.run.env;
        frozen.cfg.freeze_con = 0.5;
        const double before = joint_loss(frozen, f.state, batch).total;
        VirtualStepResult vs = virtual_step(frozen, f.state, batch, 1e-4);
        const double after = joint_loss(frozen, vs.w_hat, batch).total;
        CHECK(after < before);
    }
}

TEST_CASE("meta_update_lambda gradient matches finite differences") {
    for (auto pm : {PretextMode::kRegression, PretextMode::kClassification}) {
        Fix f = make_fix(Task::kLinkPrediction, 11, pm);
        Batch train_batch = make_batch(f, 8, 6);
        Batch val_batch = make_val_batch(f, 8);
        const double alpha = 0.05;  // large virtual step, clear signal

        VirtualStepResult vs = virtual_step(f.run.env, f.state, train_batch, alpha);
        MetaUpdateResult mu = meta_update_lambda(f.run.env, f.state, vs.w_hat,
                                                 val_batch, vs.bk, alpha, 0.0);

        auto val_loss_at = [&](const ModelState& s) {
            VirtualStepResult v = virtual_step(f.run.env, s, train_batch, alpha);
            return primary_loss_value(f.run.env, v.w_hat, val_batch);
        };

        ModelState probe = f.state;
        auto lrefs = lambda_params(probe);
        Rng rng(31 + static_cast<uint64_t>(pm));
        int strong = 0;
        for (int rep = 0; rep < 10; ++rep) {
            const size_t gi = rng.next_below(lrefs.size());
            Matrix& m = *lrefs[gi].m;
            const int r = static_cast<int>(rng.next_below(m.rows()));
            const int c = static_cast<int>(rng.next_below(m.cols()));
            const double h = 1e-5;
            const double keep = m(r, c);
            m(r, c) = keep + h;
            const double up = val_loss_at(probe);
            m(r, c) = keep - h;
            const double down = val_loss_at(probe);
            m(r, c) = keep;
            const double fd = (up - down) / (2.0 * h);
            const double an = mu.lambda_grad[gi](r, c);
            if (std::fabs(fd) > 1e-10 || std::fabs(an) > 1e-10) {
                CHECK(rel_err(fd, an) < 1e-3);
                ++strong;
            }
        }
        CHECK(strong > 0);
    }
}

TEST_CASE("meta_update_lambda trivia") {
    Fix f = make_fix(Task::kLinkPrediction, 13);
    Batch train_batch = make_batch(f, 8, 6);
    Batch val_batch = make_val_batch(f, 8);

    SUBCASE("beta zero keeps lambda") {
        VirtualStepResult vs = virtual_step(f.run.env, f.state, train_batch, 0.01);
        MetaUpdateResult mu = meta_update_lambda(f.run.env, f.state, vs.w_hat,
                                                 val_batch, vs.bk, 0.01, 0.0);
        CHECK(mu.lambda_next.w1 == f.state.con.w1);
        CHECK(mu.lambda_next.b1 == f.state.con.b1);
        CHECK(mu.lambda_next.w2 == f.state.con.w2);
        CHECK(mu.lambda_next.b2 == f.state.con.b2);
    }
    SUBCASE("missing bookkeeping is a state error") {
        MetaBookkeeping empty;
        CHECK_THROWS_AS(meta_update_lambda(f.run.env, f.state, f.state, val_batch,
                                           empty, 0.01, 0.001),
                        StateError);
    }
}

TEST_CASE("contribution weight moves with the sign of the alignment") {
    // One pretext sample: its weight must rise exactly when upweighting
    // the sample would drive the validation loss down.
    int verified = 0, rises = 0, falls = 0;
    for (uint64_t seed = 1; seed <= 12; ++seed) {
        Fix f = make_fix(Task::kLinkPrediction, seed);
        Batch train_batch = make_batch(f, 6, 1);
        bool any = false;
        for (auto& pb : train_batch.pretext) {
            if (!pb.src.empty() && !any) {
                any = true;
            } else {
                pb.src.clear();
                pb.dst.clear();
                pb.y.clear();
                pb.y_class.clear();
            }
        }
        if (!any) continue;
        Batch val_batch = make_val_batch(f, 8);
        const double alpha = 0.05;

        // d valloss / d c by finite differences through a frozen-weight step
        auto val_at_weight = [&](double c) {
            TrainerEnv env = f.run.env;
            env.cfg.freeze_con = c;
            VirtualStepResult vs = virtual_step(env, f.state, train_batch, alpha);
            return primary_loss_value(f.run.env, vs.w_hat, val_batch);
        };
        const double h = 1e-4;
        const double dval_dc =
            (val_at_weight(0.5 + h) - val_at_weight(0.5 - h)) / (2 * h);
        if (std::fabs(dval_dc) < 1e-9) continue;

        VirtualStepResult vs = virtual_step(f.run.env, f.state, train_batch, alpha);
        MetaUpdateResult mu = meta_update_lambda(f.run.env, f.state, vs.w_hat,
                                                 val_batch, vs.bk, alpha, 1e-3);
        const MetaPretextRecord* rec = nullptr;
        for (const auto& r : vs.bk.records)
            if (!r.src.empty()) rec = &r;
        REQUIRE(rec != nullptr);
        const double before = contribution_values(rec->phi, f.state.con)(0, 0);
        const double after = contribution_values(rec->phi, mu.lambda_next)(0, 0);
        if (after == before) continue;
        CHECK(((dval_dc < 0.0) == (after > before)));
        ++verified;
        (after > before ? rises : falls) += 1;
    }
    CHECK(verified >= 5);
    CHECK(rises > 0);
    CHECK(falls > 0);
}

TEST_CASE("adam_apply closed forms") {
    SUBCASE("zero gradient leaves weights alone and decays moments") {
        Matrix w(2, 2, 1.0), g(2, 2, 0.0), m(2, 2, 0.4), v(2, 2, 0.9);
        adam_apply(w, g, m, v, 1, 0.1, 0.9, 0.999, 1e-8);
        for (size_t i = 0; i < m.size(); ++i) {
            CHECK(m.data()[i] == doctest::Approx(0.36).epsilon(1e-14));
            CHECK(v.data()[i] == doctest::Approx(0.8991).epsilon(1e-14));
        }
        Matrix w0(2, 2, 1.0), m0(2, 2, 0.0), v0(2, 2, 0.0);
        adam_apply(w0, g, m0, v0, 1, 0.1, 0.9, 0.999, 1e-8);
        for (size_t i = 0; i < w0.size(); ++i) CHECK(w0.data()[i] == 1.0);
    }
    SUBCASE("first step is -alpha * g / (|g| + eps)") {
        const double alpha = 0.01, eps = 1e-8;
        Matrix w(1, 3), g(1, 3), m(1, 3), v(1, 3);
        g(0, 0) = 0.5;
        g(0, 1) = -2.0;
        g(0, 2) = 1e-3;
        adam_apply(w, g, m, v, 1, alpha, 0.9, 0.999, eps);
        for (int c = 0; c < 3; ++c) {
            const double want = -alpha * g(0, c) / (std::fabs(g(0, c)) + eps);
            CHECK(w(0, c) == doctest::Approx(want).epsilon(1e-12));
        }
    }
    SUBCASE("pure weight decay shrinks parameters monotonically") {
        Matrix w(1, 2);
        w(0, 0) = 0.8;
        w(0, 1) = -1.2;
        Matrix m(1, 2), v(1, 2);
        double prev0 = std::fabs(w(0, 0)), prev1 = std::fabs(w(0, 1));
        for (long t = 1; t <= 20; ++t) {
            Matrix g = w;
            for (size_t i = 0; i < g.size(); ++i) g.data()[i] *= 0.0001;
            adam_apply(w, g, m, v, t, 0.001, 0.9, 0.999, 1e-8);
            CHECK(std::fabs(w(0, 0)) < prev0);
            CHECK(std::fabs(w(0, 1)) < prev1);
            prev0 = std::fabs(w(0, 0));
            prev1 = std::fabs(w(0, 1));
        }
    }
}

TEST_CASE("actual_step accounting") {
    Fix f = make_fix(Task::kLinkPrediction, 17);
    Batch batch = make_batch(f, 8, 6);
    AdamState adam = init_adam(f.state);
    ModelState before = f.state;
    StepStats st = actual_step(f.run.env, f.state, batch, adam);
    CHECK(adam.t == 1);
    CHECK(st.loss_pri > 0.0);
    CHECK_FALSE(states_equal(before, f.state));
    CHECK(st.mean_con.size() == batch.pretext.size());
    for (double c : st.mean_con)
        if (c != 0.0) {
            CHECK(c > 0.0);
            CHECK(c < 1.0);
        }
}

TEST_CASE("train: epochs zero returns the initialized state and no history") {
    Fix f = make_fix(Task::kLinkPrediction, 19);
    TrainConfig cfg = f.cfg;
    cfg.epochs = 0;
    TrainResult a = train(f.bundle.graph, f.bundle.metapaths, f.labels, cfg);
    TrainResult b = train(f.bundle.graph, f.bundle.metapaths, f.labels, cfg);
    CHECK(a.history.rows.empty());
    CHECK(states_equal(a.model, b.model));

    cfg.epochs = 2;
    TrainResult c = train(f.bundle.graph, f.bundle.metapaths, f.labels, cfg);
    CHECK_FALSE(states_equal(a.model, c.model));  // training moved the weights
}

TEST_CASE("train: lambda bypass at weight zero reproduces vanilla bit for bit") {
    Fix f = make_fix(Task::kLinkPrediction, 23);
    TrainConfig cfg = f.cfg;
    cfg.epochs = 4;

    TrainConfig vanilla_cfg = cfg;
    vanilla_cfg.vanilla = true;
    TrainResult vanilla =
        train(f.bundle.graph, f.bundle.metapaths, f.labels, vanilla_cfg);

    TrainConfig frozen_cfg = cfg;
    frozen_cfg.freeze_con = 0.0;
    TrainResult frozen =
        train(f.bundle.graph, f.bundle.metapaths, f.labels, frozen_cfg);

    CHECK(vanilla.model.gcn.w0 == frozen.model.gcn.w0);
    CHECK(vanilla.model.gcn.w1 == frozen.model.gcn.w1);
    CHECK(vanilla.model.primary.w1 == frozen.model.primary.w1);
    CHECK(vanilla.model.primary.w2 == frozen.model.primary.w2);
    REQUIRE(vanilla.history.rows.size() == frozen.history.rows.size());
    for (size_t e = 0; e < vanilla.history.rows.size(); ++e) {
        CHECK(vanilla.history.rows[e].loss_pri == frozen.history.rows[e].loss_pri);
        CHECK(vanilla.history.rows[e].val_metric ==
              frozen.history.rows[e].val_metric);
    }
}

TEST_CASE("train: deterministic and loss decreasing") {
    for (Task task : {Task::kLinkPrediction, Task::kNodeClassification}) {
        Fix f = make_fix(task, 29);
        TrainConfig cfg = f.cfg;
        cfg.epochs = 12;
        cfg.alpha = 0.01;
        TrainResult a = train(f.bundle.graph, f.bundle.metapaths, f.labels, cfg);
        TrainResult b = train(f.bundle.graph, f.bundle.metapaths, f.labels, cfg);
        CHECK(states_equal(a.model, b.model));
        REQUIRE(a.history.rows.size() == 12);
        for (size_t e = 0; e < a.history.rows.size(); ++e)
            CHECK(a.history.rows[e].val_metric == b.history.rows[e].val_metric);
        CHECK(a.history.rows[10].loss_pri < a.history.rows[0].loss_pri);
        CHECK(a.history.metric_peak() >= a.history.metric_mean());
    }
}

TEST_CASE("history csv round trip") {
    Fix f = make_fix(Task::kLinkPrediction, 31);
    TrainConfig cfg = f.cfg;
    cfg.epochs = 3;
    TrainResult r = train(f.bundle.graph, f.bundle.metapaths, f.labels, cfg);
    const auto path = std::filesystem::temp_directory_path() / "sesim_hist_test.csv";
    save_history_csv(r.history, path);
    TrainHistory back = load_history_csv(path);
    std::filesystem::remove(path);
    REQUIRE(back.rows.size() == r.history.rows.size());
    CHECK(back.num_metapaths == r.history.num_metapaths);
    for (size_t e = 0; e < back.rows.size(); ++e) {
        CHECK(back.rows[e].val_metric == r.history.rows[e].val_metric);
        CHECK(back.rows[e].loss_pri == r.history.rows[e].loss_pri);
    }
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.alpha = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.train_frac = 0.7;
    cfg.val_frac = 0.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.j_max = 9;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
