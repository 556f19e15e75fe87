#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tclp/checkpoint.hpp"
#include "tclp/dataset.hpp"
#include "tclp/eval.hpp"
#include "tclp/gradcheck.hpp"
#include "tclp/harness.hpp"
#include "tclp/losses.hpp"

namespace tclp {

// Exit codes: 0 success, 1 usage, 2 data/config error, 3 numeric failure.
namespace cli {

namespace fs = std::filesystem;

inline TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return TrainConfig::from_json(j);
}

inline int cmd_gen_data(int64_t m, uint64_t seed, const std::string& out_dir,
                        const std::string& kind_mix_json, bool positives_only) {
    KindMix mix;
    if (!kind_mix_json.empty()) {
        try {
            mix = KindMix::from_json(nlohmann::json::parse(kind_mix_json));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("kind-mix: ") + e.what());
        }
    }
    fs::create_directories(out_dir);
    auto manifest = generate_dataset(m, seed, mix, (fs::path(out_dir) / "dataset.jsonl").string(),
                                     (fs::path(out_dir) / "manifest.json").string(), !positives_only);
    std::cout << "wrote " << manifest.m << " examples to " << out_dir << "/dataset.jsonl\n";
    return 0;
}

inline int cmd_train(const std::string& config_path, std::optional<uint64_t> seed,
                     const std::string& out_dir, bool strict, const std::string& dataset_override) {
    TrainConfig cfg = load_train_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!dataset_override.empty()) cfg.dataset = dataset_override;
    if (cfg.dataset.empty()) throw ConfigError("train: no dataset path in config or --dataset");
    Dataset data = load_dataset(cfg.dataset);
    Trainer trainer(cfg, data, out_dir, strict);
    RunRecord& record = trainer.run();
    const EvalReport& report = record.final_point().report;
    std::cout << "objective " << objective_id(cfg.objective) << ": steps " << record.ledger.steps
              << ", pairs_seen " << record.ledger.pairs_seen << ", comp_overall " << report.comp.overall
              << ", r5 " << mean_r5(report) << ", zeroshot_top1 " << report.zeroshot.top1 << "\n";
    if (!out_dir.empty()) std::cout << "final checkpoint: " << record.final_checkpoint_path() << "\n";
    return 0;
}

inline int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
                    const std::string& out_path, int64_t holdout) {
    auto loaded = load_checkpoint<float>(checkpoint_path);
    Dataset data = load_dataset(data_path);
    if (holdout < 0 || holdout > int64_t(data.examples.size()))
        throw ConfigError("eval: bad --holdout");
    std::vector<const TripletExample*> refs;
    size_t start = holdout > 0 ? data.examples.size() - size_t(holdout) : 0;
    for (size_t i = start; i < data.examples.size(); ++i) refs.push_back(&data.examples[i]);
    EvalReport report = evaluate_model(loaded.model, refs);
    report.checkpoint_step = loaded.meta.step;
    report.pairs_seen = loaded.meta.pairs_seen;
    report.dataset_id = data_path;
    if (!out_path.empty()) {
        if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
        std::ofstream out(out_path);
        if (!out) throw IoError("cannot open report for writing: " + out_path);
        out << report.to_json().dump(2) << '\n';
    } else {
        std::cout << report.to_json().dump(2) << '\n';
    }
    return 0;
}

inline int cmd_ablate(const std::string& config_path, const std::string& seeds_csv,
                      const std::string& out_dir, bool strict, bool equal_step_items) {
    TrainConfig cfg = load_train_config(config_path);
    if (cfg.dataset.empty()) throw ConfigError("ablate: no dataset path in config");
    std::vector<uint64_t> seeds;
    std::stringstream ss(seeds_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
    if (seeds.empty()) throw ConfigError("ablate: no seeds given");
    Dataset data = load_dataset(cfg.dataset);
    AblationTable table = run_ablation_matrix(cfg, seeds, data, out_dir, strict, equal_step_items);
    std::cout << table.to_text();
    return 0;
}

inline int cmd_filter(const std::string& data_path, const std::string& reference_path, double keep,
                      const std::string& out_dir) {
    Dataset data = load_dataset(data_path);
    if (!data.has_negatives) throw ConfigError("filter: dataset lacks negatives");
    auto loaded = load_checkpoint<float>(reference_path);
    std::vector<const TripletExample*> refs;
    for (const auto& ex : data.examples) refs.push_back(&ex);
    FilterSelection sel = clip_score_filter(loaded.model, refs, keep);
    std::vector<TripletExample> kept;
    for (size_t idx : sel.kept) kept.push_back(data.examples[idx]);
    fs::create_directories(out_dir);
    DatasetManifest manifest = build_manifest(kept, 0);
    write_dataset((fs::path(out_dir) / "dataset.jsonl").string(),
                  (fs::path(out_dir) / "manifest.json").string(), kept, manifest);
    nlohmann::json report = {{"source", data_path},
                             {"reference", reference_path},
                             {"keep_fraction", keep},
                             {"kept", sel.kept.size()},
                             {"total", data.examples.size()},
                             {"min_kept_score", sel.min_kept_score},
                             {"max_dropped_score", sel.max_dropped_score}};
    std::ofstream out(fs::path(out_dir) / "filter_report.json");
    out << report.dump(2) << '\n';
    std::cout << "kept " << sel.kept.size() << "/" << data.examples.size() << " examples; min kept score "
              << sel.min_kept_score << ", max dropped " << sel.max_dropped_score << "\n";
    return 0;
}

inline int cmd_concept_sweep(const std::string& config_path, const std::string& targets_csv,
                             const std::string& out_dir, bool strict) {
    TrainConfig cfg = load_train_config(config_path);
    if (cfg.dataset.empty()) throw ConfigError("concept-sweep: no dataset path in config");
    std::vector<int> targets;
    std::stringstream ss(targets_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) targets.push_back(std::stoi(tok));
    if (targets.empty()) throw ConfigError("concept-sweep: no targets given");
    Dataset data = load_dataset(cfg.dataset);
    auto points = run_concept_sweep(cfg, targets, data, out_dir, strict);
    for (const auto& p : points)
        std::cout << "target " << p.target << " (n=" << p.subset_size << "): clip comp "
                  << p.clip_report.comp.overall << ", tripletclip comp " << p.triplet_report.comp.overall
                  << "\n";
    return 0;
}

// Gradient checks for the four objectives over random 4-example batches, in
// f32 (h 1e-3, tol 1e-2) and f64 verification mode (h 1e-5, tol 1e-5). The
// blocks are free parameters normalized inside the graph, so the check also
// differentiates through the normalization and the temperature.
template <typename T>
bool run_objective_grad_checks(double h, double tol, std::ostream& os) {
    const int n = 4, d = 8;
    bool all_pass = true;
    for (Objective obj :
         {Objective::clip, Objective::negclip, Objective::negimage, Objective::tripletclip}) {
        Rng rng(derive_seed(99, uint64_t(obj)));
        TensorT<T> img_pos = TensorT<T>::zeros({n, d}), txt_pos = TensorT<T>::zeros({n, d});
        TensorT<T> img_neg = TensorT<T>::zeros({n, d}), txt_neg = TensorT<T>::zeros({n, d});
        for (auto* t : {&img_pos, &txt_pos, &img_neg, &txt_neg})
            for (auto& v : t->data) v = T(rng.uniform() * 2.0 - 1.0);
        TensorT<T> log_inv_tau({1}, {T(std::log(1.0 / 0.07))});

        auto run = [&](bool with_grad) -> T {
            GraphT<T> g;
            auto inv_tau = g.exp_(g.param(log_inv_tau));
            auto ip = g.l2_normalize_rows(g.param(img_pos));
            auto tp = g.l2_normalize_rows(g.param(txt_pos));
            typename GraphT<T>::NodeId loss{};
            switch (obj) {
                case Objective::clip: loss = clip_loss(g, ip, tp, inv_tau); break;
                case Objective::negclip:
                    loss = negclip_loss(g, ip, tp, g.l2_normalize_rows(g.param(txt_neg)), inv_tau);
                    break;
                case Objective::negimage:
                    loss = negimage_loss(g, ip, tp, g.l2_normalize_rows(g.param(img_neg)), inv_tau);
                    break;
                case Objective::tripletclip:
                    loss = tripletclip_loss(g, ip, tp, g.l2_normalize_rows(g.param(img_neg)),
                                            g.l2_normalize_rows(g.param(txt_neg)), inv_tau);
                    break;
            }
            if (with_grad) g.backward(loss);
            return g.val(loss).data[0];
        };

        std::vector<std::pair<std::string, TensorT<T>*>> params = {{"img_pos", &img_pos},
                                                                   {"txt_pos", &txt_pos},
                                                                   {"logit_scale", &log_inv_tau}};
        if (objective_needs_img_neg(obj)) params.push_back({"img_neg", &img_neg});
        if (objective_needs_txt_neg(obj)) params.push_back({"txt_neg", &txt_neg});
        auto report = grad_check<T>(run, params, T(h), tol);
        char line[200];
        std::snprintf(line, sizeof(line), "  %-12s %-4s coords %-4lld max_rel_err %.3e (%s[%lld]) %s\n",
                      objective_id(obj), sizeof(T) == 4 ? "f32" : "f64",
                      (long long)report.checked, report.max_rel_err, report.worst_param.c_str(),
                      (long long)report.worst_index, report.pass ? "PASS" : "FAIL");
        os << line;
        all_pass = all_pass && report.pass;
    }
    return all_pass;
}

inline int cmd_grad_check() {
    std::cout << "objective losses vs central finite differences:\n";
    bool ok32 = run_objective_grad_checks<float>(1e-3, 1e-2, std::cout);
    bool ok64 = run_objective_grad_checks<double>(1e-5, 1e-5, std::cout);
    if (!(ok32 && ok64)) {
        std::cerr << "gradient check FAILED\n";
        throw NumericError("grad-check: finite-difference disagreement");
    }
    std::cout << "all gradient checks passed\n";
    return 0;
}

inline int cmd_inspect(const std::string& checkpoint_path) {
    auto loaded = load_checkpoint<float>(checkpoint_path);
    std::cout << "config: " << loaded.model.config().to_json().dump(2) << "\n";
    std::cout << "meta: step " << loaded.meta.step << ", pairs_seen " << loaded.meta.pairs_seen
              << ", seed " << loaded.meta.seed << ", objective " << loaded.meta.objective << "\n";
    int64_t total = 0;
    for (const auto& [name, tensor] : loaded.model.params()) {
        std::cout << "  " << name << " " << shape_str(tensor.shape) << "\n";
        total += tensor.numel();
    }
    std::cout << "total parameters: " << total << "\n";
    return 0;
}

}  // namespace cli

inline int run_cli(std::vector<std::string> args) {
    CLI::App app{"contrastive pretraining laboratory over a synthetic compositional world"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a triplet dataset");
    int64_t gen_m = 1000;
    uint64_t gen_seed = 1;
    std::string gen_out, gen_mix;
    bool gen_positives_only = false;
    gen->add_option("--m", gen_m, "number of examples")->required();
    gen->add_option("--seed", gen_seed, "dataset seed");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--kind-mix", gen_mix, "JSON object of perturbation-kind weights");
    gen->add_flag("--positives-only", gen_positives_only, "omit negative pairs");

    // train
    auto* train = app.add_subcommand("train", "train one objective");
    std::string train_config, train_out, train_dataset;
    uint64_t train_seed = 0;
    bool train_seed_set = false, train_strict = false;
    train->add_option("--config", train_config, "TrainConfig JSON path")->required();
    train->add_option("--seed", train_seed, "override config seed")->each([&](const std::string&) {
        train_seed_set = true;
    });
    train->add_option("--out", train_out, "output directory");
    train->add_option("--dataset", train_dataset, "override dataset path");
    train->add_flag("--strict-deterministic", train_strict, "single-threaded deterministic mode");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_out;
    int64_t eval_holdout = 0;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--data", eval_data, "dataset JSONL path")->required();
    eval_cmd->add_option("--out", eval_out, "report JSON path (stdout if absent)");
    eval_cmd->add_option("--holdout", eval_holdout, "evaluate only the last K examples");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "run the objective ablation matrix");
    std::string ab_config, ab_seeds = "1,2,3", ab_out;
    bool ab_strict = false, ab_equal_items = false;
    ablate->add_option("--config", ab_config, "TrainConfig JSON path")->required();
    ablate->add_option("--seeds", ab_seeds, "comma-separated seeds");
    ablate->add_option("--out", ab_out, "output directory");
    ablate->add_flag("--strict-deterministic", ab_strict, "single-threaded deterministic mode");
    ablate->add_flag("--equal-step-items", ab_equal_items,
                     "halve the example width of 2-pairs-per-example rows so all rows share step count");

    // filter
    auto* filter = app.add_subcommand("filter", "similarity-filter a dataset under a reference model");
    std::string f_data, f_ref, f_out;
    double f_keep = 0.5;
    filter->add_option("--data", f_data, "dataset JSONL path")->required();
    filter->add_option("--reference", f_ref, "reference checkpoint")->required();
    filter->add_option("--keep", f_keep, "keep fraction in (0,1]");
    filter->add_option("--out", f_out, "output directory")->required();

    // concept-sweep
    auto* sweep = app.add_subcommand("concept-sweep", "baseline vs triplet across concept budgets");
    std::string sw_config, sw_targets = "3,6,9,14", sw_out;
    bool sw_strict = false;
    sweep->add_option("--config", sw_config, "TrainConfig JSON path")->required();
    sweep->add_option("--targets", sw_targets, "comma-separated concept counts");
    sweep->add_option("--out", sw_out, "output directory");
    sweep->add_flag("--strict-deterministic", sw_strict, "single-threaded deterministic mode");

    // grad-check
    app.add_subcommand("grad-check", "finite-difference gradient verification");

    // inspect-checkpoint
    auto* inspect = app.add_subcommand("inspect-checkpoint", "print checkpoint config and tensors");
    std::string insp_ckpt;
    inspect->add_option("--checkpoint", insp_ckpt, "checkpoint path")->required();

    std::vector<const char*> argv;
    argv.push_back("tclp");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        if (gen->parsed()) return cli::cmd_gen_data(gen_m, gen_seed, gen_out, gen_mix, gen_positives_only);
        if (train->parsed())
            return cli::cmd_train(train_config,
                                  train_seed_set ? std::optional<uint64_t>(train_seed) : std::nullopt,
                                  train_out, train_strict, train_dataset);
        if (eval_cmd->parsed()) return cli::cmd_eval(eval_ckpt, eval_data, eval_out, eval_holdout);
        if (ablate->parsed()) return cli::cmd_ablate(ab_config, ab_seeds, ab_out, ab_strict, ab_equal_items);
        if (filter->parsed()) return cli::cmd_filter(f_data, f_ref, f_keep, f_out);
        if (sweep->parsed()) return cli::cmd_concept_sweep(sw_config, sw_targets, sw_out, sw_strict);
        if (app.get_subcommand("grad-check")->parsed()) return cli::cmd_grad_check();
        if (inspect->parsed()) return cli::cmd_inspect(insp_ckpt);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace tclp
