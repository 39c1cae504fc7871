// Command-line driver: synth, labels, train, eval, sweep.
//
// Exit codes: 0 success, 2 configuration, 3 data or format, 4 numeric
// failure, 5 artifact mismatch.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "sesim/dataio.hpp"
#include "sesim/metrics.hpp"
#include "sesim/pseudolabel.hpp"
#include "sesim/trainer.hpp"

namespace fs = std::filesystem;
using namespace sesim;

namespace {

struct RunConfig {
    TrainConfig train;
    int targets_per_metapath = 256;
    int neighbors_per_target = 8;
    std::string bundle, labels, checkpoint, history, report;
};

const std::map<std::string, std::string> kKeyHelp = {
    {"seed", "u64"},          {"task", "link|node"},
    {"epochs", "int"},        {"batch_size", "int"},
    {"alpha", "real"},        {"beta", "real"},
    {"weight_decay", "real"}, {"train_frac", "real"},
    {"val_frac", "real"},     {"jmax", "int"},
    {"metapaths", "int"},     {"hidden", "int"},
    {"embed", "int"},         {"primary_hidden", "int"},
    {"con_hidden", "int"},    {"pretext", "regression|classification"},
    {"vanilla", "bool"},      {"lambda_literal", "bool"},
    {"targets_per_metapath", "int"},
    {"neighbors_per_target", "int"},
    {"bundle", "path"},       {"labels", "path"},
    {"checkpoint", "path"},   {"history", "path"},
    {"report", "path"},
};

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

Task parse_task(const std::string& v) {
    if (v == "link") return Task::kLinkPrediction;
    if (v == "node") return Task::kNodeClassification;
    throw ConfigError("task must be 'link' or 'node', got '" + v + "'");
}

PretextMode parse_pretext(const std::string& v) {
    if (v == "regression") return PretextMode::kRegression;
    if (v == "classification") return PretextMode::kClassification;
    throw ConfigError("pretext must be 'regression' or 'classification'");
}

void apply_config_file(RunConfig& rc, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + " line " + std::to_string(lineno) +
                              ": expected key = value");
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t\r");
            size_t e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (!kKeyHelp.count(key))
            throw ConfigError(path + " line " + std::to_string(lineno) +
                              ": unknown key '" + key + "'");
        try {
            if (key == "seed") rc.train.seed = std::stoull(val);
            else if (key == "task") rc.train.task = parse_task(val);
            else if (key == "epochs") rc.train.epochs = std::stoi(val);
            else if (key == "batch_size") rc.train.batch_size = std::stoi(val);
            else if (key == "alpha") rc.train.alpha = std::stod(val);
            else if (key == "beta") rc.train.beta = std::stod(val);
            else if (key == "weight_decay") rc.train.weight_decay = std::stod(val);
            else if (key == "train_frac") rc.train.train_frac = std::stod(val);
            else if (key == "val_frac") rc.train.val_frac = std::stod(val);
            else if (key == "jmax") rc.train.j_max = std::stoi(val);
            else if (key == "metapaths") rc.train.num_metapaths = std::stoi(val);
            else if (key == "hidden") rc.train.hidden = std::stoi(val);
            else if (key == "embed") rc.train.embed = std::stoi(val);
            else if (key == "primary_hidden") rc.train.primary_hidden = std::stoi(val);
            else if (key == "con_hidden") rc.train.con_hidden = std::stoi(val);
            else if (key == "pretext") rc.train.pretext_mode = parse_pretext(val);
            else if (key == "vanilla") rc.train.vanilla = parse_bool(val, key);
            else if (key == "lambda_literal") rc.train.lambda_literal = parse_bool(val, key);
            else if (key == "targets_per_metapath") rc.targets_per_metapath = std::stoi(val);
            else if (key == "neighbors_per_target") rc.neighbors_per_target = std::stoi(val);
            else if (key == "bundle") rc.bundle = val;
            else if (key == "labels") rc.labels = val;
            else if (key == "checkpoint") rc.checkpoint = val;
            else if (key == "history") rc.history = val;
            else if (key == "report") rc.report = val;
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError(path + " line " + std::to_string(lineno) +
                              ": bad value '" + val + "' for key '" + key + "'");
        }
    }
}

void print_config(const RunConfig& rc) {
    const TrainConfig& t = rc.train;
    std::cout << "config:\n"
              << "  seed = " << t.seed << "\n"
              << "  task = " << (t.task == Task::kLinkPrediction ? "link" : "node") << "\n"
              << "  epochs = " << t.epochs << "\n"
              << "  batch_size = " << t.batch_size << "\n"
              << "  alpha = " << t.alpha << "\n"
              << "  beta = " << t.beta << "\n"
              << "  weight_decay = " << t.weight_decay << "\n"
              << "  train_frac = " << t.train_frac << "\n"
              << "  val_frac = " << t.val_frac << "\n"
              << "  jmax = " << t.j_max << "\n"
              << "  metapaths = " << t.num_metapaths << " (0 = all)\n"
              << "  hidden = " << t.hidden << "\n"
              << "  embed = " << t.embed << "\n"
              << "  primary_hidden = " << t.primary_hidden << "\n"
              << "  con_hidden = " << t.con_hidden << "\n"
              << "  pretext = "
              << (t.pretext_mode == PretextMode::kRegression ? "regression"
                                                             : "classification") << "\n"
              << "  vanilla = " << (t.vanilla ? "true" : "false") << "\n"
              << "  lambda_literal = " << (t.lambda_literal ? "true" : "false") << "\n"
              << "  targets_per_metapath = " << rc.targets_per_metapath << "\n"
              << "  neighbors_per_target = " << rc.neighbors_per_target << "\n"
              << "  bundle = " << rc.bundle << "\n"
              << "  labels = " << rc.labels << "\n"
              << "  checkpoint = " << rc.checkpoint << "\n"
              << "  history = " << rc.history << "\n"
              << "  report = " << rc.report << "\n";
}

void check_checkpoint_matches(const ModelState& state, const BundleData& bundle) {
    if (state.cfg.in_dim != bundle.graph.features.cols())
        throw ArtifactError("checkpoint expects " + std::to_string(state.cfg.in_dim) +
                            " feature columns, bundle has " +
                            std::to_string(bundle.graph.features.cols()));
    if (state.cfg.num_metapaths > static_cast<int>(bundle.metapaths.size()))
        throw ArtifactError("checkpoint uses " +
                            std::to_string(state.cfg.num_metapaths) +
                            " metapaths, bundle has " +
                            std::to_string(bundle.metapaths.size()));
    if (state.cfg.task == Task::kNodeClassification &&
        !bundle.graph.labels.has_value())
        throw ArtifactError("node-classification checkpoint but bundle has no labels");
}

void write_eval_report(const fs::path& path, const TrainerEnv& env,
                       const ModelState& state, const SplitData& split,
                       const std::optional<TrainHistory>& history) {
    std::vector<std::pair<std::string, double>> kv;
    if (state.cfg.task == Task::kLinkPrediction) {
        std::vector<std::pair<int, int>> pairs = split.val_pos;
        pairs.insert(pairs.end(), split.val_neg.begin(), split.val_neg.end());
        std::vector<int> truth(split.val_pos.size(), 1);
        truth.insert(truth.end(), split.val_neg.size(), 0);
        const std::vector<double> scores = link_scores_for(env, state, pairs);
        const double final_auc = auc(scores, truth);
        double peak = final_auc, mean = final_auc;
        if (history) {
            peak = history->metric_peak();
            mean = history->metric_mean();
        }
        std::vector<int> pred;
        for (double s : scores) pred.push_back(s > 0.5 ? 1 : 0);
        kv = {{"auc_peak", peak},
              {"auc_mean", mean},
              {"macro_f1", macro_f1(truth, pred, 2)},
              {"micro_f1", micro_f1(truth, pred, 2)}};
    } else {
        const std::vector<int> pred = node_predictions(env, state, split.val_nodes);
        kv = {{"macro_f1", macro_f1(split.val_node_labels, pred, state.cfg.num_classes)},
              {"micro_f1", micro_f1(split.val_node_labels, pred, state.cfg.num_classes)}};
    }
    write_report_json(path, kv);
    std::cout << "report written to " << path.string() << "\n";
}

int cmd_synth(const SynthConfig& cfg, const std::string& out_dir) {
    BundleData bundle = generate_synthetic(cfg);
    save_bundle(bundle.graph, bundle.metapaths, bundle.type_names, out_dir);
    std::cout << "bundle written to " << out_dir << " ("
              << bundle.graph.num_target_nodes() << " target nodes, "
              << bundle.metapaths.size() << " metapaths)\n";
    return 0;
}

int cmd_labels(const RunConfig& rc) {
    BundleData bundle = load_bundle(rc.bundle);
    if (bundle.duplicate_edges > 0)
        std::cout << "load report: dropped " << bundle.duplicate_edges
                  << " duplicate edges\n";
    PreparedRun run = prepare_run(bundle.graph, bundle.metapaths, rc.train);
    PairSamplerConfig pc;
    pc.targets_per_metapath = rc.targets_per_metapath;
    pc.neighbors_per_target = rc.neighbors_per_target;
    pc.seed = rc.train.seed;
    JumpLabelSet labels = build_label_set(run.collapsed, pc, rc.train.j_max);
    for (size_t d = 0; d < run.collapsed.size(); ++d) {
        size_t count = 0;
        for (const auto& e : labels.entries)
            if (e.metapath_id == run.collapsed[d].metapath_id) ++count;
        std::cout << "metapath " << run.collapsed[d].metapath_id << ": " << count
                  << " labels\n";
    }
    for (int id : labels.empty_metapaths)
        std::cout << "warning: metapath " << id << " produced no labeled pairs\n";
    save_labels_tsv(labels, rc.labels);
    std::cout << "labels written to " << rc.labels << "\n";
    return 0;
}

int cmd_train(const RunConfig& rc) {
    BundleData bundle = load_bundle(rc.bundle);
    if (bundle.duplicate_edges > 0)
        std::cout << "load report: dropped " << bundle.duplicate_edges
                  << " duplicate edges\n";
    JumpLabelSet labels = load_labels_tsv(rc.labels);
    TrainResult result = train(bundle.graph, bundle.metapaths, labels, rc.train);
    save_checkpoint(result.model, rc.checkpoint);
    std::cout << "checkpoint written to " << rc.checkpoint << "\n";
    if (!rc.history.empty()) {
        save_history_csv(result.history, rc.history);
        std::cout << "history written to " << rc.history << "\n";
    }
    if (!result.history.rows.empty())
        std::cout << "final val metric: " << result.history.rows.back().val_metric
                  << " (peak " << result.history.metric_peak() << ")\n";
    return 0;
}

int cmd_eval(const RunConfig& rc) {
    BundleData bundle = load_bundle(rc.bundle);
    ModelState state = load_checkpoint(rc.checkpoint);
    check_checkpoint_matches(state, bundle);

    TrainConfig tc = rc.train;
    tc.task = state.cfg.task;
    tc.j_max = state.cfg.j_max;
    tc.num_metapaths = state.cfg.num_metapaths;
    PreparedRun run = prepare_run(bundle.graph, bundle.metapaths, tc);
    JumpLabelSet empty_labels;
    SplitData split =
        build_split(bundle.graph, run.union_adj, empty_labels, run.metapath_ids, tc);
    apply_link_masking(run, split);

    std::optional<TrainHistory> history;
    if (!rc.history.empty()) history = load_history_csv(rc.history);
    write_eval_report(rc.report, run.env, state, split, history);
    return 0;
}

int cmd_sweep(const RunConfig& rc, const std::string& out_dir,
              const std::vector<int>& jmax_list,
              const std::vector<int>& metapath_list) {
    BundleData bundle = load_bundle(rc.bundle);
    fs::create_directories(out_dir);
    for (int jm : jmax_list) {
        for (int mc : metapath_list) {
            TrainConfig tc = rc.train;
            tc.j_max = jm;
            tc.num_metapaths = mc;
            PreparedRun run = prepare_run(bundle.graph, bundle.metapaths, tc);
            PairSamplerConfig pc;
            pc.targets_per_metapath = rc.targets_per_metapath;
            pc.neighbors_per_target = rc.neighbors_per_target;
            pc.seed = tc.seed;
            JumpLabelSet labels = build_label_set(run.collapsed, pc, jm);
            TrainResult result = train(bundle.graph, bundle.metapaths, labels, tc);
            apply_link_masking(run, result.split);
            const fs::path report = fs::path(out_dir) /
                                    ("report_j" + std::to_string(jm) + "_m" +
                                     std::to_string(mc) + ".json");
            std::optional<TrainHistory> history = result.history;
            write_eval_report(report, run.env, result.model, result.split, history);
        }
    }
    std::cout << "sweep complete: " << jmax_list.size() * metapath_list.size()
              << " reports in " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SESIM: self-supervised heterogeneous-graph training on "
                 "metapath jump-number pretext tasks"};
    app.require_subcommand(1);

    // synth
    SynthConfig synth_cfg;
    std::string synth_out;
    int synth_target_nodes = 300, synth_inter_nodes = 300, synth_inter_types = 2;
    double synth_intra = 0.04, synth_inter_p = 0.004;
    auto* synth = app.add_subcommand("synth", "generate a synthetic bundle");
    synth->add_option("--out", synth_out, "output bundle directory")->required();
    synth->add_option("--seed", synth_cfg.seed, "rng seed");
    synth->add_option("--nodes", synth_target_nodes, "target-type node count");
    synth->add_option("--inter-nodes", synth_inter_nodes, "nodes per intermediate type");
    synth->add_option("--inter-types", synth_inter_types,
                      "intermediate types (one metapath each)");
    synth->add_option("--communities", synth_cfg.communities, "planted communities");
    synth->add_option("--intra", synth_intra, "intra-community edge probability");
    synth->add_option("--inter", synth_inter_p, "inter-community edge probability");
    synth->add_option("--noise", synth_cfg.noise, "feature noise level");

    // shared run options
    RunConfig rc;
    std::string config_path, task_str, pretext_str;
    auto add_run_options = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key = value config file");
        cmd->add_option("--seed", rc.train.seed, "rng seed");
        cmd->add_option("--task", task_str, "link | node");
        cmd->add_option("--epochs", rc.train.epochs, "training epochs");
        cmd->add_option("--jmax", rc.train.j_max, "maximum jump number");
        cmd->add_option("--metapaths", rc.train.num_metapaths,
                        "metapath count, 0 = all");
        cmd->add_option("--batch-size", rc.train.batch_size, "minibatch size");
        cmd->add_option("--alpha", rc.train.alpha, "model learning rate");
        cmd->add_option("--beta", rc.train.beta, "contribution-net learning rate");
        cmd->add_option("--hidden", rc.train.hidden, "encoder hidden width");
        cmd->add_option("--embed", rc.train.embed, "embedding dimension");
        cmd->add_option("--pretext", pretext_str, "regression | classification");
        cmd->add_flag("--vanilla", rc.train.vanilla, "disable pretext tasks");
        cmd->add_flag("--lambda-literal", rc.train.lambda_literal,
                      "printed-variant lambda update");
        cmd->add_option("--targets", rc.targets_per_metapath,
                        "pretext target nodes per metapath");
        cmd->add_option("--neighbors", rc.neighbors_per_target,
                        "labeled partners per target");
    };

    auto* labels_cmd = app.add_subcommand("labels", "build jump-number pseudo-labels");
    labels_cmd->add_option("--bundle", rc.bundle, "bundle directory")->required();
    labels_cmd->add_option("--out", rc.labels, "output label TSV")->required();
    add_run_options(labels_cmd);

    auto* train_cmd = app.add_subcommand("train", "joint self-supervised training");
    train_cmd->add_option("--bundle", rc.bundle, "bundle directory");
    train_cmd->add_option("--labels", rc.labels, "label TSV");
    train_cmd->add_option("--out", rc.checkpoint, "output checkpoint");
    train_cmd->add_option("--history", rc.history, "output history CSV");
    add_run_options(train_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--bundle", rc.bundle, "bundle directory");
    eval_cmd->add_option("--checkpoint", rc.checkpoint, "model checkpoint");
    eval_cmd->add_option("--out", rc.report, "output report JSON");
    eval_cmd->add_option("--history", rc.history, "history CSV for peak/mean");
    add_run_options(eval_cmd);

    std::string sweep_out;
    std::vector<int> jmax_list = {2, 3, 4, 5};
    std::vector<int> metapath_list = {1, 2, 3};
    auto* sweep_cmd = app.add_subcommand("sweep", "jmax x metapath-count ablation grid");
    sweep_cmd->add_option("--bundle", rc.bundle, "bundle directory")->required();
    sweep_cmd->add_option("--out-dir", sweep_out, "report directory")->required();
    sweep_cmd->add_option("--jmax-list", jmax_list, "jmax grid");
    sweep_cmd->add_option("--metapath-list", metapath_list, "metapath count grid");
    add_run_options(sweep_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        // precedence: flag > config file > default
        if (!config_path.empty()) {
            RunConfig file_rc = rc;
            apply_config_file(file_rc, config_path);
            // CLI11 already wrote provided flags into rc; pull everything
            // the command line did not set from the file image.
            auto* cmd = labels_cmd->parsed() ? labels_cmd
                        : train_cmd->parsed() ? train_cmd
                        : eval_cmd->parsed()  ? eval_cmd
                                              : sweep_cmd;
            if (cmd->count("--seed") == 0) rc.train.seed = file_rc.train.seed;
            if (cmd->count("--epochs") == 0) rc.train.epochs = file_rc.train.epochs;
            if (cmd->count("--jmax") == 0) rc.train.j_max = file_rc.train.j_max;
            if (cmd->count("--metapaths") == 0)
                rc.train.num_metapaths = file_rc.train.num_metapaths;
            if (cmd->count("--batch-size") == 0)
                rc.train.batch_size = file_rc.train.batch_size;
            if (cmd->count("--alpha") == 0) rc.train.alpha = file_rc.train.alpha;
            if (cmd->count("--beta") == 0) rc.train.beta = file_rc.train.beta;
            if (cmd->count("--hidden") == 0) rc.train.hidden = file_rc.train.hidden;
            if (cmd->count("--embed") == 0) rc.train.embed = file_rc.train.embed;
            if (cmd->count("--vanilla") == 0) rc.train.vanilla = file_rc.train.vanilla;
            if (cmd->count("--lambda-literal") == 0)
                rc.train.lambda_literal = file_rc.train.lambda_literal;
            if (cmd->count("--targets") == 0)
                rc.targets_per_metapath = file_rc.targets_per_metapath;
            if (cmd->count("--neighbors") == 0)
                rc.neighbors_per_target = file_rc.neighbors_per_target;
            if (cmd->count("--task") == 0) rc.train.task = file_rc.train.task;
            if (cmd->count("--pretext") == 0)
                rc.train.pretext_mode = file_rc.train.pretext_mode;
            rc.train.weight_decay = file_rc.train.weight_decay;
            rc.train.train_frac = file_rc.train.train_frac;
            rc.train.val_frac = file_rc.train.val_frac;
            rc.train.primary_hidden = file_rc.train.primary_hidden;
            rc.train.con_hidden = file_rc.train.con_hidden;
            if (rc.bundle.empty()) rc.bundle = file_rc.bundle;
            if (rc.labels.empty()) rc.labels = file_rc.labels;
            if (rc.checkpoint.empty()) rc.checkpoint = file_rc.checkpoint;
            if (rc.history.empty()) rc.history = file_rc.history;
            if (rc.report.empty()) rc.report = file_rc.report;
        }
        if (!task_str.empty()) rc.train.task = parse_task(task_str);
        if (!pretext_str.empty()) rc.train.pretext_mode = parse_pretext(pretext_str);

        if (synth->parsed()) {
            if (synth_target_nodes < 1 || synth_inter_nodes < 1 || synth_inter_types < 1)
                throw ConfigError("synth: node counts and type counts must be positive");
            synth_cfg.node_counts.assign(1, synth_target_nodes);
            for (int t = 0; t < synth_inter_types; ++t)
                synth_cfg.node_counts.push_back(synth_inter_nodes);
            synth_cfg.intra_p = {synth_intra};
            synth_cfg.inter_p = {synth_inter_p};
            return cmd_synth(synth_cfg, synth_out);
        }
        print_config(rc);
        if (labels_cmd->parsed()) return cmd_labels(rc);
        if (train_cmd->parsed()) {
            if (rc.bundle.empty() || rc.labels.empty() || rc.checkpoint.empty())
                throw ConfigError("train: --bundle, --labels and --out are required");
            return cmd_train(rc);
        }
        if (eval_cmd->parsed()) {
            if (rc.bundle.empty() || rc.checkpoint.empty() || rc.report.empty())
                throw ConfigError("eval: --bundle, --checkpoint and --out are required");
            return cmd_eval(rc);
        }
        if (sweep_cmd->parsed()) return cmd_sweep(rc, sweep_out, jmax_list, metapath_list);
        throw ConfigError("no subcommand given");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ArgumentError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const StateError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const ArtifactError& e) {
        std::cerr << "artifact error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
