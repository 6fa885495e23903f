// amcen: dataset statistics, two-stage training, evaluation and single-query prediction.
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage, 3 data, 4 checkpoint.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "amcen/errors.hpp"
#include "amcen/evaluation.hpp"
#include "amcen/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kCheckpoint = 4 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string dataset;
    std::int64_t granularity = 1;
    std::string out;
    bool force = false;

    amcen::TrainConfig config;
    std::string composition = "multiply";
    std::string optimizer = "adam";

    // train
    std::string stage = "all";
    std::string stage1_checkpoint;

    // eval / predict
    std::string checkpoint;
    std::string split = "test";
    std::string mode = "both";
    std::string query;
    std::string direction = "obj";
    int top_k = 10;
};

fs::path resolve_dataset(const std::string& arg) {
    const char* root = std::getenv("AMCEN_DATA_DIR");
    if (arg.empty()) {
        if (root == nullptr || *root == '\0') {
            throw UsageError("no dataset directory given and AMCEN_DATA_DIR is unset");
        }
        return root;
    }
    fs::path p(arg);
    if (!fs::exists(p) && p.is_relative() && root != nullptr && *root != '\0') {
        p = fs::path(root) / p;
    }
    if (!fs::is_directory(p)) {
        throw UsageError("dataset directory not found: " + p.string());
    }
    if (!fs::exists(p / "train.txt")) {
        throw UsageError("dataset directory lacks train.txt: " + p.string());
    }
    return p;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) {
        throw amcen::DataError("cannot write " + path.string());
    }
    out << std::setw(2) << j << '\n';
}

fs::path prepare_out_dir(const std::string& out) {
    if (out.empty()) {
        throw UsageError("--out is required");
    }
    fs::create_directories(out);
    return out;
}

amcen::TrainConfig finalize_config(Options& o) {
    try {
        o.config.composition = amcen::parse_composition(o.composition);
        o.config.optimizer = amcen::parse_optimizer(o.optimizer);
        o.config.validate();
    } catch (const amcen::ValidationError& e) {
        throw UsageError(e.what());
    }
    return o.config;
}

// ---------------------------------------------------------------------------

int cmd_stats(Options& o) {
    const fs::path dir = resolve_dataset(o.dataset);
    if (o.out.empty()) {
        throw UsageError("--out report.json|report.csv is required");
    }
    const amcen::Dataset ds = amcen::load_dataset(dir, o.granularity);
    const amcen::SnapshotSequence seq = amcen::split_snapshots(ds);
    const amcen::StatsReport report = amcen::dataset_statistics(seq);

    const fs::path out(o.out);
    if (out.has_parent_path()) {
        fs::create_directories(out.parent_path());
    }
    auto split_json = [](const amcen::SplitStats& s) {
        return json{{"events", s.events}, {"new_events", s.new_events}, {"proportion", s.proportion()}};
    };
    if (out.extension() == ".csv") {
        std::ofstream csv(out);
        csv << "split,events,new_events,proportion\n";
        for (auto [name, s] : {std::pair{"train", &report.train}, std::pair{"valid", &report.valid},
                               std::pair{"test", &report.test}, std::pair{"all", &report.all}}) {
            csv << name << ',' << s->events << ',' << s->new_events << ',' << s->proportion() << '\n';
        }
    } else {
        write_json(out, json{{"dataset", ds.name},
                             {"entities", ds.vocab.entity_count},
                             {"relations", ds.vocab.base_relation_count},
                             {"granules", seq.time_count()},
                             {"train", split_json(report.train)},
                             {"valid", split_json(report.valid)},
                             {"test", split_json(report.test)},
                             {"all", split_json(report.all)}});
    }
    fs::path per_time = out;
    per_time.replace_filename(out.stem().string() + "_per_time.csv");
    std::ofstream csv(per_time);
    csv << "time,split,events,new_events,proportion\n";
    for (const auto& row : report.per_time) {
        const double prop = row.events == 0 ? 0.0
                                            : static_cast<double>(row.new_events) /
                                                  static_cast<double>(row.events);
        csv << row.time << ',' << amcen::split_name(row.split) << ',' << row.events << ','
            << row.new_events << ',' << prop << '\n';
    }
    std::cout << std::fixed << std::setprecision(2) << "entities " << ds.vocab.entity_count
              << ", relations " << ds.vocab.base_relation_count << ", granules " << seq.time_count()
              << "\ntrain " << report.train.events << " (new " << 100.0 * report.train.proportion()
              << "%)\nvalid " << report.valid.events << " (new " << 100.0 * report.valid.proportion()
              << "%)\ntest  " << report.test.events << " (new " << 100.0 * report.test.proportion()
              << "%)\nall   " << report.all.events << " (new " << 100.0 * report.all.proportion()
              << "%)\n";
    return kOk;
}

int cmd_train(Options& o) {
    const fs::path dir = resolve_dataset(o.dataset);
    const fs::path out = prepare_out_dir(o.out);
    const amcen::TrainConfig config = finalize_config(o);
    if (o.stage != "1" && o.stage != "2" && o.stage != "all") {
        throw UsageError("--stage must be 1, 2 or all");
    }
    const amcen::Dataset ds = amcen::load_dataset(dir, o.granularity);
    const amcen::TrainingData data = amcen::TrainingData::from_dataset(ds);
    const int E = data.vocab.entity_count;
    const int R = data.vocab.base_relation_count;
    const int T = data.sequence.time_count();

    std::ofstream log(out / "train_log.jsonl", o.stage == "2" ? std::ios::app : std::ios::trunc);
    amcen::TrainingHooks hooks;
    hooks.on_epoch = [&](const amcen::EpochRecord& r) {
        const json j = r;
        log << j.dump() << '\n';
        log.flush();
        std::cerr << "stage " << r.stage << " epoch " << r.epoch << " loss " << r.loss;
        if (r.val_mrr) std::cerr << " val_mrr " << *r.val_mrr;
        if (r.accuracy) std::cerr << " accuracy " << *r.accuracy;
        std::cerr << '\n';
    };

    json files = json::array({"train_log.jsonl"});
    amcen::AmcenModel model(config, E, R, T);
    if (o.stage == "2") {
        const fs::path src = o.stage1_checkpoint.empty() ? out / "stage1.ckpt" : fs::path(o.stage1_checkpoint);
        const amcen::Checkpoint ckpt = amcen::load_checkpoint(
            src, amcen::architecture_fingerprint(config, E, R, T), o.force);
        model = amcen::restore_model(ckpt);
        if (ckpt.fingerprint() == amcen::architecture_fingerprint(config, E, R, T)) {
            model.set_config(config);
        }
    } else {
        model.initialize();
        const amcen::Checkpoint s1 = amcen::stage1_train(model, data, hooks);
        amcen::save_checkpoint(s1, out / "stage1.ckpt");
        files.push_back("stage1.ckpt");
    }
    if (o.stage != "1") {
        const amcen::Checkpoint s2 = amcen::stage2_train(model, data, hooks);
        amcen::save_checkpoint(s2, out / "stage2.ckpt");
        files.push_back("stage2.ckpt");
    }
    write_json(out / "manifest.json", json{{"command", "train"},
                                           {"stage", o.stage},
                                           {"dataset", fs::absolute(dir).string()},
                                           {"granularity", o.granularity},
                                           {"fingerprint", model.fingerprint()},
                                           {"config", config},
                                           {"files", files}});
    return kOk;
}

amcen::AmcenModel load_model(Options& o, const amcen::TrainingData& data) {
    if (o.checkpoint.empty()) {
        throw UsageError("--checkpoint is required");
    }
    const amcen::Checkpoint probe = amcen::load_checkpoint(o.checkpoint);
    const std::string expected = amcen::architecture_fingerprint(
        probe.config, data.vocab.entity_count, data.vocab.base_relation_count,
        data.sequence.time_count());
    if (expected != probe.fingerprint() && !o.force) {
        throw amcen::CheckpointError("checkpoint fingerprint " + probe.fingerprint() +
                                     " does not match this dataset (" + expected +
                                     "); use --force to load anyway");
    }
    amcen::AmcenModel model = amcen::restore_model(probe);
    amcen::TrainConfig c = model.config();
    c.ablation.no_predictive_mask = o.config.ablation.no_predictive_mask;
    c.ablation.gt_predictive_mask = o.config.ablation.gt_predictive_mask;
    c.batch_size = o.config.batch_size;
    model.set_config(c);
    return model;
}

amcen::Split parse_split(const std::string& s) {
    if (s == "train") return amcen::Split::train;
    if (s == "valid") return amcen::Split::valid;
    if (s == "test") return amcen::Split::test;
    throw UsageError("--split must be train, valid or test");
}

int cmd_eval(Options& o) {
    const fs::path dir = resolve_dataset(o.dataset);
    const fs::path out = prepare_out_dir(o.out);
    if (o.mode != "raw" && o.mode != "filtered" && o.mode != "both") {
        throw UsageError("--mode must be raw, filtered or both");
    }
    const amcen::Split split = parse_split(o.split);
    const amcen::Dataset ds = amcen::load_dataset(dir, o.granularity);
    const amcen::TrainingData data = amcen::TrainingData::from_dataset(ds);
    amcen::AmcenModel model = load_model(o, data);

    const auto result = amcen::evaluate_split(model, data, split,
                                              amcen::InferenceOptions::from(model.config().ablation),
                                              [](const std::string& w) { std::cerr << "warning: " << w << '\n'; });
    json metrics = json::array();
    json files = json::array({"metrics.json"});
    for (amcen::RankMode m : {amcen::RankMode::raw, amcen::RankMode::filtered}) {
        const std::string name = amcen::to_string(m);
        if (o.mode != "both" && o.mode != name) {
            continue;
        }
        for (const auto& row : result.metrics.rows) {
            if (row.mode == m) {
                metrics.push_back(row);
                std::cout << name << ' ' << std::setw(4) << row.direction << std::fixed
                          << std::setprecision(4) << "  mrr " << row.mrr << "  hits@1 " << row.hits1
                          << "  hits@3 " << row.hits3 << "  hits@10 " << row.hits10
                          << "  cls_acc " << row.classifier_accuracy << '\n';
            }
        }
        std::ofstream csv(out / ("queries_" + name + ".csv"));
        amcen::write_records_csv(csv, result.records, m);
        files.push_back("queries_" + name + ".csv");
    }
    write_json(out / "metrics.json", metrics);
    write_json(out / "manifest.json", json{{"command", "eval"},
                                           {"split", o.split},
                                           {"mode", o.mode},
                                           {"dataset", fs::absolute(dir).string()},
                                           {"checkpoint", fs::absolute(o.checkpoint).string()},
                                           {"fingerprint", model.fingerprint()},
                                           {"fallbacks", result.fallbacks},
                                           {"files", files}});
    return kOk;
}

int cmd_predict(Options& o) {
    const fs::path dir = resolve_dataset(o.dataset);
    const amcen::Dataset ds = amcen::load_dataset(dir, o.granularity);
    const amcen::TrainingData data = amcen::TrainingData::from_dataset(ds);
    amcen::AmcenModel model = load_model(o, data);

    int e = 0;
    int r = 0;
    int t = 0;
    char c1 = 0;
    char c2 = 0;
    std::istringstream qs(o.query);
    if (!(qs >> e >> c1 >> r >> c2 >> t) || c1 != ',' || c2 != ',' || !(qs >> std::ws).eof()) {
        throw UsageError("--query expects entity,relation,time");
    }
    amcen::Direction direction{};
    amcen::Prediction p;
    try {
        direction = amcen::parse_direction(o.direction);
        p = amcen::predict(model, data, e, r, t, direction, o.top_k,
                           amcen::InferenceOptions::from(model.config().ablation));
    } catch (const amcen::ValidationError& err) {
        throw UsageError(err.what());
    }
    auto entity_name = [&](int id) {
        const auto& names = data.vocab.entity_names;
        return id < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(id)] : std::to_string(id);
    };
    std::cout << "predicted event type: " << (p.predicted_label == 1 ? "recurring" : "new")
              << " (p_recurring = " << std::setprecision(4) << p.recurring_probability << ")\n";
    if (p.fell_back) {
        std::cerr << "warning: predictive mask removed every candidate; ranked with the unmasked mixture\n";
    }
    json top = json::array();
    for (std::size_t i = 0; i < p.top.size(); ++i) {
        const auto& [id, prob] = p.top[i];
        std::cout << std::setw(3) << i + 1 << "  " << std::setw(8) << id << "  " << std::scientific
                  << std::setprecision(6) << prob << std::defaultfloat << "  " << entity_name(id) << '\n';
        top.push_back({{"entity", id}, {"probability", prob}});
    }
    if (!o.out.empty()) {
        const fs::path out = prepare_out_dir(o.out);
        write_json(out / "prediction.json",
                   json{{"query", {{"entity", e}, {"relation", r}, {"time", t}}},
                        {"direction", amcen::to_string(direction)},
                        {"predicted_label", p.predicted_label},
                        {"recurring_probability", p.recurring_probability},
                        {"top", top}});
        write_json(out / "manifest.json", json{{"command", "predict"},
                                               {"checkpoint", fs::absolute(o.checkpoint).string()},
                                               {"files", {"prediction.json"}}});
    }
    return kOk;
}

void add_model_options(CLI::App& app, Options& o) {
    auto& c = o.config;
    app.add_option("--learning_rate", c.learning_rate, "Adam step size")->capture_default_str();
    app.add_option("--weight_decay", c.weight_decay)->capture_default_str();
    app.add_option("--optimizer", o.optimizer, "adam or adamw")->capture_default_str();
    app.add_option("--stage1_epochs", c.stage1_epochs)->capture_default_str();
    app.add_option("--stage2_epochs", c.stage2_epochs)->capture_default_str();
    app.add_option("--batch_size", c.batch_size)->capture_default_str();
    app.add_option("--lambda", c.lambda, "weight of the ranking loss")->capture_default_str();
    app.add_option("--seed", c.seed)->capture_default_str();
    app.add_option("--validate_every", c.validate_every, "0 disables validation selection")
        ->capture_default_str();
    app.add_option("--dim", c.dim)->capture_default_str();
    app.add_option("--layers", c.layers)->capture_default_str();
    app.add_option("--dropout", c.dropout)->capture_default_str();
    app.add_option("--composition", o.composition, "subtract, multiply or circular-correlation")
        ->capture_default_str();
    app.add_option("--num_bases", c.num_bases)->capture_default_str();
    app.add_option("--window", c.window, "history window length")->capture_default_str();
    app.add_option("--heads", c.heads)->capture_default_str();
    app.add_option("--beta", c.beta)->capture_default_str();
    app.add_option("--temperature", c.temperature)->capture_default_str();
    app.add_flag("--normalize_contrastive", c.normalize_contrastive);
    app.add_flag("--no_attention_mask", c.ablation.no_attention_mask);
    app.add_flag("--his_only", c.ablation.his_only);
    app.add_flag("--nonhis_only", c.ablation.nonhis_only);
    app.add_flag("--no_predictive_mask", c.ablation.no_predictive_mask);
    app.add_flag("--gt_predictive_mask", c.ablation.gt_predictive_mask);
    app.add_flag("--softmax_activation", c.ablation.softmax_activation);
    app.add_flag("--post_softmax_mask", c.ablation.post_softmax_mask);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage temporal knowledge graph forecasting"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI file of option values");
    Options o;
    add_model_options(app, o);
    app.add_option("--granularity", o.granularity, "raw time units per timestamp")->capture_default_str();
    app.add_flag("--force", o.force, "load checkpoints despite a fingerprint mismatch");

    auto* stats = app.add_subcommand("stats", "dataset statistics");
    auto* train = app.add_subcommand("train", "stage 1 and/or stage 2 training");
    auto* eval = app.add_subcommand("eval", "ranking metrics on a split");
    auto* predict = app.add_subcommand("predict", "top-k answers for one query");
    for (auto* sub : {stats, train, eval, predict}) {
        sub->fallthrough();
        sub->add_option("dataset", o.dataset, "dataset directory (default $AMCEN_DATA_DIR)");
    }
    stats->add_option("--out", o.out, "report.json or report.csv");
    train->add_option("--out", o.out, "output directory")->required();
    train->add_option("--stage", o.stage, "1, 2 or all")->capture_default_str();
    train->add_option("--stage1_checkpoint", o.stage1_checkpoint,
                      "stage-1 checkpoint for --stage 2 (default <out>/stage1.ckpt)");
    eval->add_option("--checkpoint", o.checkpoint)->required();
    eval->add_option("--split", o.split, "train, valid or test")->capture_default_str();
    eval->add_option("--mode", o.mode, "raw, filtered or both")->capture_default_str();
    eval->add_option("--out", o.out, "output directory")->required();
    predict->add_option("--checkpoint", o.checkpoint)->required();
    predict->add_option("--query", o.query, "entity,relation,time")->required();
    predict->add_option("--direction", o.direction, "obj or subj")->capture_default_str();
    predict->add_option("--top-k,--top_k", o.top_k)->capture_default_str();
    predict->add_option("--out", o.out, "optional output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*stats) return cmd_stats(o);
        if (*train) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*predict) return cmd_predict(o);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const amcen::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return kCheckpoint;
    } catch (const amcen::Error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kUsage;
}
