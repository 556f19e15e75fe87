#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tclp/checkpoint.hpp"
#include "tclp/dataset.hpp"
#include "tclp/error.hpp"
#include "tclp/eval.hpp"
#include "tclp/losses.hpp"
#include "tclp/model.hpp"
#include "tclp/optim.hpp"
#include "tclp/parallel.hpp"

namespace tclp {

enum class FreezeMode { none, image, text };

inline const char* freeze_id(FreezeMode f) {
    static const char* ids[] = {"none", "image", "text"};
    return ids[int(f)];
}
inline FreezeMode freeze_from_id(const std::string& s) {
    if (s == "none") return FreezeMode::none;
    if (s == "image") return FreezeMode::image;
    if (s == "text") return FreezeMode::text;
    throw ConfigError("unknown freeze mode: " + s);
}

struct TrainConfig {
    Objective objective = Objective::clip;
    int batch_size = 64;
    int64_t pairs_budget = 262144;
    double base_lr = 3e-4;
    double weight_decay = 0.1;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t warmup_steps = 200;
    double floor_lr = 0.0;
    uint64_t seed = 1;
    FreezeMode freeze = FreezeMode::none;
    bool freeze_temperature = false;
    int64_t eval_every = 500;   // steps between eval points; 0 = final only
    int64_t eval_holdout = 0;   // trailing examples excluded from training
    std::string dataset;
    std::string reference_checkpoint;
    // Ledger policy for the caption-only extras of negclip: by default they
    // do not count against the image-text pairs budget.
    bool count_text_negatives_in_budget = false;
    EncoderConfig encoder;

    // Image-text pairs consumed by a step over `b` examples.
    int64_t pairs_per_example() const {
        switch (objective) {
            case Objective::clip: return 1;
            case Objective::negclip: return count_text_negatives_in_budget ? 2 : 1;
            case Objective::negimage:
            case Objective::tripletclip: return 2;
        }
        return 1;
    }

    void validate() const {
        if (batch_size < 2) throw ConfigError("train config: batch_size must be >= 2");
        if (pairs_budget < batch_size) throw ConfigError("train config: pairs_budget must be >= batch_size");
        if (base_lr <= 0 || eps <= 0) throw ConfigError("train config: bad optimizer fields");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("train config: betas must lie in [0, 1)");
        if (weight_decay < 0 || floor_lr < 0 || warmup_steps < 0 || eval_every < 0 || eval_holdout < 0)
            throw ConfigError("train config: negative field");
        encoder.validate();
    }

    nlohmann::json to_json() const {
        return {{"objective", objective_id(objective)},
                {"batch_size", batch_size},
                {"pairs_budget", pairs_budget},
                {"base_lr", base_lr},
                {"weight_decay", weight_decay},
                {"beta1", beta1},
                {"beta2", beta2},
                {"eps", eps},
                {"warmup_steps", warmup_steps},
                {"floor_lr", floor_lr},
                {"seed", seed},
                {"freeze", freeze_id(freeze)},
                {"freeze_temperature", freeze_temperature},
                {"eval_every", eval_every},
                {"eval_holdout", eval_holdout},
                {"dataset", dataset},
                {"reference_checkpoint", reference_checkpoint},
                {"count_text_negatives_in_budget", count_text_negatives_in_budget},
                {"encoder", encoder.to_json()}};
    }

    // Unknown keys are rejected so config typos fail loudly.
    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            if (k == "objective") c.objective = objective_from_id(it.value().get<std::string>());
            else if (k == "batch_size") c.batch_size = it.value().get<int>();
            else if (k == "pairs_budget") c.pairs_budget = it.value().get<int64_t>();
            else if (k == "base_lr") c.base_lr = it.value().get<double>();
            else if (k == "weight_decay") c.weight_decay = it.value().get<double>();
            else if (k == "beta1") c.beta1 = it.value().get<double>();
            else if (k == "beta2") c.beta2 = it.value().get<double>();
            else if (k == "eps") c.eps = it.value().get<double>();
            else if (k == "warmup_steps") c.warmup_steps = it.value().get<int64_t>();
            else if (k == "floor_lr") c.floor_lr = it.value().get<double>();
            else if (k == "seed") c.seed = it.value().get<uint64_t>();
            else if (k == "freeze") c.freeze = freeze_from_id(it.value().get<std::string>());
            else if (k == "freeze_temperature") c.freeze_temperature = it.value().get<bool>();
            else if (k == "eval_every") c.eval_every = it.value().get<int64_t>();
            else if (k == "eval_holdout") c.eval_holdout = it.value().get<int64_t>();
            else if (k == "dataset") c.dataset = it.value().get<std::string>();
            else if (k == "reference_checkpoint") c.reference_checkpoint = it.value().get<std::string>();
            else if (k == "count_text_negatives_in_budget")
                c.count_text_negatives_in_budget = it.value().get<bool>();
            else if (k == "encoder") c.encoder = EncoderConfig::from_json(it.value());
            else throw ConfigError("train config: unknown key '" + k + "'");
        }
        c.validate();
        return c;
    }
};

struct ComputeLedger {
    int64_t pairs_seen = 0;
    int64_t steps = 0;
};

struct EvalPoint {
    int64_t step = 0;
    int64_t pairs_seen = 0;
    double lr = 0;
    double train_loss = 0;
    double tau = 0;
    EvalReport report;

    nlohmann::json to_json() const {
        return {{"step", step},
                {"pairs_seen", pairs_seen},
                {"lr", lr},
                {"train_loss", train_loss},
                {"tau", tau},
                {"report", report.to_json()}};
    }
};

struct RunRecord {
    nlohmann::json config;
    ComputeLedger ledger;
    std::vector<EvalPoint> points;
    std::string out_dir;                    // not serialized
    std::string final_checkpoint;           // relative to out_dir
    std::string last_periodic_checkpoint;   // relative to out_dir
    int64_t distinct_positive_ids = 0;
    bool strict = false;

    const EvalPoint& final_point() const {
        if (points.empty()) throw ConfigError("run record: no eval points");
        return points.back();
    }

    std::string resolve(const std::string& rel) const {
        if (rel.empty() || out_dir.empty()) return rel;
        return (std::filesystem::path(out_dir) / rel).string();
    }
    std::string final_checkpoint_path() const { return resolve(final_checkpoint); }
    std::string last_periodic_checkpoint_path() const { return resolve(last_periodic_checkpoint); }

    nlohmann::json to_json() const {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : points) pts.push_back(p.to_json());
        return {{"config", config},
                {"ledger", {{"pairs_seen", ledger.pairs_seen}, {"steps", ledger.steps}}},
                {"points", pts},
                {"final_checkpoint", final_checkpoint},
                {"last_periodic_checkpoint", last_periodic_checkpoint},
                {"distinct_positive_ids", distinct_positive_ids},
                {"strict", strict}};
    }
};

// One training run: seeded epoch shuffles, per-step encode of exactly the
// blocks the objective needs, AdamW with cosine decay, temperature clamping,
// periodic evaluation and checkpoints, and a halt on the pairs budget.
class Trainer {
public:
    Trainer(TrainConfig cfg, const Dataset& data, std::string out_dir = "", bool strict = false,
            std::vector<size_t> train_indices = {})
        : cfg_(std::move(cfg)),
          data_(data),
          out_dir_(std::move(out_dir)),
          model_(cfg_.encoder),
          optimizer_(cfg_.beta1, cfg_.beta2, cfg_.eps, cfg_.weight_decay) {
        cfg_.validate();
        if (strict) set_thread_cap(1);
        record_.strict = strict;
        if (objective_needs_txt_neg(cfg_.objective) || objective_needs_img_neg(cfg_.objective)) {
            if (!data_.has_negatives)
                throw ConfigError(std::string("dataset has no negatives but objective ") +
                                  objective_id(cfg_.objective) + " needs them");
        }
        int64_t m = int64_t(data_.examples.size());
        if (cfg_.eval_holdout >= m)
            throw ConfigError("train config: eval_holdout " + std::to_string(cfg_.eval_holdout) +
                              " >= dataset size " + std::to_string(m));
        int64_t train_region = m - cfg_.eval_holdout;
        if (train_indices.empty()) {
            for (int64_t i = 0; i < train_region; ++i) train_pool_.push_back(size_t(i));
        } else {
            for (size_t idx : train_indices)
                if (int64_t(idx) < train_region) train_pool_.push_back(idx);
            if (train_pool_.empty()) throw ConfigError("train: no training examples after filtering");
        }
        for (int64_t i = train_region; i < m; ++i) eval_pool_.push_back(size_t(i));
        if (eval_pool_.empty())
            for (size_t idx : train_pool_) eval_pool_.push_back(idx);

        if (cfg_.batch_size < 8)
            std::cerr << "warning: batch_size " << cfg_.batch_size
                      << " is small for a contrastive signal\n";
        if (int64_t(train_pool_.size()) < cfg_.batch_size)
            throw ConfigError("train: fewer training examples than batch_size");

        model_.init_params(cfg_.seed);
        if (cfg_.freeze == FreezeMode::image) model_.set_frozen(Tower::image, true);
        if (cfg_.freeze == FreezeMode::text) model_.set_frozen(Tower::text, true);
        model_.set_temperature_frozen(cfg_.freeze_temperature);

        schedule_.max_lr = cfg_.base_lr;
        schedule_.floor_lr = cfg_.floor_lr;
        schedule_.total_steps = planned_steps();
        schedule_.warmup_steps = std::min(cfg_.warmup_steps, schedule_.total_steps);
        schedule_.validate();

        record_.config = cfg_.to_json();
        record_.out_dir = out_dir_;
        if (!out_dir_.empty()) {
            std::filesystem::create_directories(out_dir_);
            std::filesystem::create_directories(std::filesystem::path(out_dir_) / "checkpoints");
            std::ofstream(metrics_path(), std::ios::trunc);  // fresh metrics file
        }
    }

    int64_t planned_steps() const {
        int64_t per_step = cfg_.pairs_per_example() * cfg_.batch_size;
        int64_t full = cfg_.pairs_budget / per_step;
        int64_t rem = cfg_.pairs_budget - full * per_step;
        return full + (rem > 0 ? 1 : 0);
    }

    const ComputeLedger& ledger() const { return ledger_; }
    DualEncoder& model() { return model_; }
    RunRecord& record() { return record_; }
    const TrainConfig& config() const { return cfg_; }
    double last_lr() const { return last_lr_; }

    // One optimizer step; false once the budget is exhausted. The final batch
    // shrinks so pairs_seen lands within one example of the budget.
    bool step() {
        int64_t mult = cfg_.pairs_per_example();
        int64_t remaining = cfg_.pairs_budget - ledger_.pairs_seen;
        if (remaining <= 0) return false;
        int64_t want = std::min<int64_t>(cfg_.batch_size, (remaining + mult - 1) / mult);
        std::vector<size_t> batch = next_batch(size_t(want));

        std::vector<const Raster*> img_pos, img_neg;
        std::vector<std::vector<int>> txt_pos, txt_neg;
        for (size_t idx : batch) {
            const TripletExample& ex = data_.examples[idx];
            seen_ids_.insert(ex.id);
            img_pos.push_back(&ex.image_pos);
            txt_pos.push_back(ex.caption_pos.tokens);
            if (objective_needs_img_neg(cfg_.objective)) img_neg.push_back(&ex.image_neg);
            if (objective_needs_txt_neg(cfg_.objective)) txt_neg.push_back(ex.caption_neg.tokens);
        }

        Graph g;
        auto inv_tau = model_.inv_tau_node(g);
        Graph::NodeId loss{};
        switch (cfg_.objective) {
            case Objective::clip:
                loss = clip_loss(g, model_.encode_image(g, img_pos), model_.encode_text(g, txt_pos),
                                 inv_tau);
                break;
            case Objective::negclip:
                loss = negclip_loss(g, model_.encode_image(g, img_pos), model_.encode_text(g, txt_pos),
                                    model_.encode_text(g, txt_neg), inv_tau);
                break;
            case Objective::negimage:
                loss = negimage_loss(g, model_.encode_image(g, img_pos), model_.encode_text(g, txt_pos),
                                     model_.encode_image(g, img_neg), inv_tau);
                break;
            case Objective::tripletclip:
                loss = tripletclip_loss(g, model_.encode_image(g, img_pos), model_.encode_text(g, txt_pos),
                                        model_.encode_image(g, img_neg), model_.encode_text(g, txt_neg),
                                        inv_tau);
                break;
        }
        double loss_value = double(g.val(loss).data[0]);
        if (!std::isfinite(loss_value))
            throw NumericError("train: non-finite loss at step " + std::to_string(ledger_.steps) +
                               "; last checkpoint: " +
                               (record_.last_periodic_checkpoint.empty()
                                    ? "<none>"
                                    : record_.last_periodic_checkpoint_path()));
        model_.zero_grads();
        g.backward(loss);
        last_lr_ = schedule_.lr_at(ledger_.steps);
        auto params = model_.trainable();
        optimizer_.step(params, last_lr_);
        model_.clamp_logit_scale();

        ledger_.pairs_seen += mult * int64_t(batch.size());
        ++ledger_.steps;
        loss_accum_ += loss_value;
        ++loss_count_;
        step_losses_.push_back(loss_value);
        return true;
    }

    EvalReport evaluate_now() {
        std::vector<const TripletExample*> refs;
        for (size_t idx : eval_pool_) refs.push_back(&data_.examples[idx]);
        EvalReport report = evaluate_model(model_, refs);
        report.checkpoint_step = ledger_.steps;
        report.pairs_seen = ledger_.pairs_seen;
        report.dataset_id = cfg_.dataset;
        return report;
    }

    // Called after every optimizer step inside run(); progress reporting and
    // test instrumentation hang off this.
    std::function<void(Trainer&)> on_step;

    // Full run with eval/checkpoint cadence. Throws NumericError on NaN loss;
    // periodic checkpoints already on disk stay loadable.
    RunRecord& run() {
        while (step()) {
            if (on_step) on_step(*this);
            if (cfg_.eval_every > 0 && ledger_.steps % cfg_.eval_every == 0 &&
                ledger_.pairs_seen < cfg_.pairs_budget)
                record_point(false);
        }
        record_point(true);
        record_.distinct_positive_ids = int64_t(seen_ids_.size());
        if (!out_dir_.empty()) {
            std::ofstream out(std::filesystem::path(out_dir_) / "run_record.json");
            out << record_.to_json().dump(2) << '\n';
        }
        return record_;
    }

    const std::vector<double>& step_losses() const { return step_losses_; }

private:
    TrainConfig cfg_;
    const Dataset& data_;
    std::string out_dir_;
    DualEncoder model_;
    AdamW optimizer_;
    CosineSchedule schedule_;
    ComputeLedger ledger_;
    RunRecord record_;
    std::vector<size_t> train_pool_, eval_pool_;
    std::vector<size_t> epoch_order_;
    size_t epoch_cursor_ = 0;
    int64_t epoch_index_ = 0;
    std::set<int64_t> seen_ids_;
    double loss_accum_ = 0;
    int64_t loss_count_ = 0;
    double last_lr_ = 0;
    std::vector<double> step_losses_;

    std::string metrics_path() const {
        return (std::filesystem::path(out_dir_) / "metrics.jsonl").string();
    }

    // Sampling without replacement via a fresh seeded shuffle per epoch.
    std::vector<size_t> next_batch(size_t want) {
        std::vector<size_t> batch;
        while (batch.size() < want) {
            if (epoch_cursor_ >= epoch_order_.size()) {
                epoch_order_ = train_pool_;
                Rng rng(derive_seed(cfg_.seed, 0x45504f43ull + uint64_t(epoch_index_)));
                rng.shuffle(epoch_order_);
                epoch_cursor_ = 0;
                ++epoch_index_;
            }
            batch.push_back(epoch_order_[epoch_cursor_++]);
        }
        return batch;
    }

    void record_point(bool final) {
        EvalPoint point;
        point.step = ledger_.steps;
        point.pairs_seen = ledger_.pairs_seen;
        point.lr = last_lr_;
        point.tau = double(model_.tau());
        point.train_loss = loss_count_ ? loss_accum_ / double(loss_count_) : 0.0;
        loss_accum_ = 0;
        loss_count_ = 0;
        point.report = evaluate_now();
        if (!out_dir_.empty()) {
            CheckpointMeta meta{ledger_.steps, ledger_.pairs_seen, cfg_.seed,
                                objective_id(cfg_.objective)};
            std::filesystem::path dir(out_dir_);
            std::string name = final ? "checkpoint_final.tclp"
                                     : "checkpoints/step_" + std::to_string(ledger_.steps) + ".tclp";
            save_checkpoint(model_, meta, (dir / name).string());
            if (final)
                record_.final_checkpoint = name;
            else
                record_.last_periodic_checkpoint = name;
            std::ofstream metrics(metrics_path(), std::ios::app);
            metrics << point.to_json().dump() << '\n';
        }
        record_.points.push_back(std::move(point));
        record_.ledger = ledger_;
    }
};

// ---------------------------------------------------------------------------
// Objective ablation matrix
// ---------------------------------------------------------------------------

struct AblationCell {
    std::vector<double> values;
    double mean = 0, sd = 0;

    void finish() {
        if (values.empty()) return;
        double sum = 0;
        for (double v : values) sum += v;
        mean = sum / double(values.size());
        double ss = 0;
        for (double v : values) ss += (v - mean) * (v - mean);
        sd = values.size() > 1 ? std::sqrt(ss / double(values.size() - 1)) : 0.0;
    }
};

struct AblationRow {
    Objective objective;
    AblationCell comp_overall, retrieval_r5, zeroshot_top1, sim_image_mean, sim_text_mean;
    std::vector<int64_t> pairs_seen;

    nlohmann::json to_json() const {
        auto cell = [](const AblationCell& c) {
            return nlohmann::json{{"mean", c.mean}, {"sd", c.sd}, {"values", c.values}};
        };
        return {{"objective", objective_id(objective)},
                {"negative_captions", objective_needs_txt_neg(objective)},
                {"negative_images", objective_needs_img_neg(objective)},
                {"comp_overall", cell(comp_overall)},
                {"retrieval_r5", cell(retrieval_r5)},
                {"zeroshot_top1", cell(zeroshot_top1)},
                {"sim_image_mean", cell(sim_image_mean)},
                {"sim_text_mean", cell(sim_text_mean)},
                {"pairs_seen", pairs_seen}};
    }
};

struct AblationTable {
    std::vector<AblationRow> rows;
    int64_t budget = 0;
    std::vector<uint64_t> seeds;

    nlohmann::json to_json() const {
        nlohmann::json jr = nlohmann::json::array();
        for (const auto& r : rows) jr.push_back(r.to_json());
        return {{"budget", budget}, {"seeds", seeds}, {"rows", jr}};
    }

    std::string to_text() const {
        std::ostringstream os;
        os << "objective     cap img   comp_overall        retrieval_r5        zeroshot_top1\n";
        for (const auto& r : rows) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%-13s %s   %s   %.4f +- %.4f   %.4f +- %.4f   %.4f +- %.4f\n",
                          objective_id(r.objective), objective_needs_txt_neg(r.objective) ? "y" : "n",
                          objective_needs_img_neg(r.objective) ? "y" : "n", r.comp_overall.mean,
                          r.comp_overall.sd, r.retrieval_r5.mean, r.retrieval_r5.sd, r.zeroshot_top1.mean,
                          r.zeroshot_top1.sd);
            os << buf;
        }
        return os.str();
    }
};

inline double mean_r5(const EvalReport& report) {
    double i2t = report.retrieval.i2t.count(5) ? report.retrieval.i2t.at(5) : 0.0;
    double t2i = report.retrieval.t2i.count(5) ? report.retrieval.t2i.at(5) : 0.0;
    return 0.5 * (i2t + t2i);
}

// Runs the four objectives at identical seed, budget and cadence. With
// equal_step_items set, rows that consume two pairs per example run at half
// the example width, so every row processes the same number of image-text
// pairs per optimizer step and the same number of steps at equal budget
// (the fixed-total-batch protocol).
inline AblationTable run_ablation_matrix(const TrainConfig& base, const std::vector<uint64_t>& seeds,
                                         const Dataset& data, const std::string& out_dir,
                                         bool strict = false, bool equal_step_items = false,
                                         const std::vector<Objective>& objectives = {
                                             Objective::clip, Objective::negimage, Objective::negclip,
                                             Objective::tripletclip}) {
    AblationTable table;
    table.budget = base.pairs_budget;
    table.seeds = seeds;
    for (Objective obj : objectives) {
        AblationRow row;
        row.objective = obj;
        for (uint64_t seed : seeds) {
            TrainConfig cfg = base;
            cfg.objective = obj;
            cfg.seed = seed;
            if (equal_step_items && cfg.pairs_per_example() == 2)
                cfg.batch_size = std::max(2, cfg.batch_size / 2);
            std::string run_dir;
            if (!out_dir.empty())
                run_dir = (std::filesystem::path(out_dir) /
                           (std::string(objective_id(obj)) + "_seed" + std::to_string(seed)))
                              .string();
            Trainer trainer(cfg, data, run_dir, strict);
            RunRecord& record = trainer.run();
            const EvalReport& report = record.final_point().report;
            row.comp_overall.values.push_back(report.comp.overall);
            row.retrieval_r5.values.push_back(mean_r5(report));
            row.zeroshot_top1.values.push_back(report.zeroshot.top1);
            row.sim_image_mean.values.push_back(report.sim_image.mean);
            row.sim_text_mean.values.push_back(report.sim_text.mean);
            row.pairs_seen.push_back(record.ledger.pairs_seen);
        }
        row.comp_overall.finish();
        row.retrieval_r5.finish();
        row.zeroshot_top1.finish();
        row.sim_image_mean.finish();
        row.sim_text_mean.finish();
        table.rows.push_back(std::move(row));
    }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream out(std::filesystem::path(out_dir) / "ablation_table.json");
        out << table.to_json().dump(2) << '\n';
        std::ofstream txt(std::filesystem::path(out_dir) / "ablation_table.txt");
        txt << table.to_text();
    }
    return table;
}

// ---------------------------------------------------------------------------
// Concept-coverage sweep
// ---------------------------------------------------------------------------

struct SweepPoint {
    int target = 0;
    int64_t subset_size = 0;
    EvalReport clip_report, triplet_report;
    int64_t clip_pairs = 0, triplet_pairs = 0;
    int64_t triplet_distinct_ids = 0;
    int64_t triplet_positive_count = 0;

    nlohmann::json to_json() const {
        return {{"target", target},
                {"subset_size", subset_size},
                {"clip", {{"comp_overall", clip_report.comp.overall},
                          {"retrieval_r5", mean_r5(clip_report)},
                          {"zeroshot_top1", clip_report.zeroshot.top1},
                          {"pairs_seen", clip_pairs}}},
                {"tripletclip", {{"comp_overall", triplet_report.comp.overall},
                                 {"retrieval_r5", mean_r5(triplet_report)},
                                 {"zeroshot_top1", triplet_report.zeroshot.top1},
                                 {"pairs_seen", triplet_pairs},
                                 {"distinct_positive_ids", triplet_distinct_ids},
                                 {"positive_count", triplet_positive_count}}}};
    }
};

// For each concept target: clip trains on the whole eligible slice while
// tripletclip trains on the first half of it (the other half of its budget
// is the paired negatives), both at the same pairs budget, evaluated on the
// shared trailing holdout.
inline std::vector<SweepPoint> run_concept_sweep(const TrainConfig& base, const std::vector<int>& targets,
                                                 const Dataset& data, const std::string& out_dir,
                                                 bool strict = false) {
    int64_t train_region = int64_t(data.examples.size()) - base.eval_holdout;
    auto slices = concept_subsets(data, targets);  // slices must not eat into the holdout
    std::vector<SweepPoint> points;
    for (size_t t = 0; t < targets.size(); ++t) {
        std::vector<size_t> slice;
        for (size_t idx : slices[t])
            if (int64_t(idx) < train_region) slice.push_back(idx);
        SweepPoint point;
        point.target = targets[t];
        point.subset_size = int64_t(slice.size());
        std::string dir_c, dir_t;
        if (!out_dir.empty()) {
            dir_c = (std::filesystem::path(out_dir) / ("target" + std::to_string(targets[t]) + "_clip"))
                        .string();
            dir_t = (std::filesystem::path(out_dir) /
                     ("target" + std::to_string(targets[t]) + "_tripletclip"))
                        .string();
        }
        {
            TrainConfig cfg = base;
            cfg.objective = Objective::clip;
            Trainer trainer(cfg, data, dir_c, strict, slice);
            RunRecord& record = trainer.run();
            point.clip_report = record.final_point().report;
            point.clip_pairs = record.ledger.pairs_seen;
        }
        {
            TrainConfig cfg = base;
            cfg.objective = Objective::tripletclip;
            std::vector<size_t> half(slice.begin(), slice.begin() + int64_t((slice.size() + 1) / 2));
            point.triplet_positive_count = int64_t(half.size());
            Trainer trainer(cfg, data, dir_t, strict, half);
            RunRecord& record = trainer.run();
            point.triplet_report = record.final_point().report;
            point.triplet_pairs = record.ledger.pairs_seen;
            point.triplet_distinct_ids = record.distinct_positive_ids;
        }
        points.push_back(std::move(point));
    }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        nlohmann::json series = nlohmann::json::array();
        for (const auto& p : points) series.push_back(p.to_json());
        std::ofstream out(std::filesystem::path(out_dir) / "sweep_series.json");
        out << series.dump(2) << '\n';
    }
    return points;
}

}  // namespace tclp
