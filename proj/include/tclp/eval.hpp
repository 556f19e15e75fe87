#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tclp/dataset.hpp"
#include "tclp/error.hpp"
#include "tclp/model.hpp"

namespace tclp {

// All metrics run over embedding rows; similarities are plain dots of unit
// vectors, accumulated in double. Ties always count as misses.

namespace evaldetail {

template <typename T>
double dot_rows(const TensorT<T>& a, int64_t i, const TensorT<T>& b, int64_t j) {
    int d = a.shape[1];
    double acc = 0;
    for (int c = 0; c < d; ++c) acc += double(a.data[size_t(i) * d + size_t(c)]) *
                                       double(b.data[size_t(j) * d + size_t(c)]);
    return acc;
}

}  // namespace evaldetail

struct QuadEmbeddings {
    TensorT<float> img_pos, txt_pos, img_neg, txt_neg;  // [N, d] each, row-aligned
    std::vector<PerturbationKind> kinds;

    int64_t n() const { return img_pos.shape.empty() ? 0 : img_pos.shape[0]; }

    void validate() const {
        if (n() < 1) throw ConfigError("quad embeddings: empty input");
        if (img_pos.shape != txt_pos.shape || img_pos.shape != img_neg.shape ||
            img_pos.shape != txt_neg.shape)
            throw ShapeError("quad embeddings: block shapes differ");
        if (int64_t(kinds.size()) != n()) throw ShapeError("quad embeddings: kinds misaligned");
    }
};

// ---------------------------------------------------------------------------
// Winoground-style scoring
// ---------------------------------------------------------------------------

struct WinogroundScores {
    double text_score = 0, image_score = 0, group_score = 0;
};

inline WinogroundScores winoground_scores(const QuadEmbeddings& q) {
    q.validate();
    int64_t n = q.n();
    int64_t text_hits = 0, image_hits = 0, group_hits = 0;
    for (int64_t i = 0; i < n; ++i) {
        double s_xy = evaldetail::dot_rows(q.img_pos, i, q.txt_pos, i);
        double s_xyn = evaldetail::dot_rows(q.img_pos, i, q.txt_neg, i);
        double s_xny = evaldetail::dot_rows(q.img_neg, i, q.txt_pos, i);
        double s_xnyn = evaldetail::dot_rows(q.img_neg, i, q.txt_neg, i);
        bool text = s_xy > s_xyn && s_xnyn > s_xny;
        bool image = s_xy > s_xny && s_xnyn > s_xyn;
        text_hits += text;
        image_hits += image;
        group_hits += text && image;
    }
    return {double(text_hits) / double(n), double(image_hits) / double(n), double(group_hits) / double(n)};
}

// ---------------------------------------------------------------------------
// Binary compositional accuracy (image-to-text forced choice)
// ---------------------------------------------------------------------------

struct BinaryCompReport {
    std::map<std::string, double> by_kind;
    std::map<std::string, int64_t> count_by_kind;
    double overall = 0;  // unweighted mean over kinds that appear
};

inline BinaryCompReport binary_comp_accuracy(const TensorT<float>& img, const TensorT<float>& txt_pos,
                                             const TensorT<float>& txt_neg,
                                             const std::vector<PerturbationKind>& kinds) {
    if (img.rank() != 2 || img.shape != txt_pos.shape || img.shape != txt_neg.shape)
        throw ShapeError("binary_comp_accuracy: block shapes differ");
    int64_t n = img.shape[0];
    if (int64_t(kinds.size()) != n) throw ShapeError("binary_comp_accuracy: kinds misaligned");
    std::map<std::string, int64_t> hits, totals;
    for (int64_t i = 0; i < n; ++i) {
        bool correct = evaldetail::dot_rows(img, i, txt_pos, i) > evaldetail::dot_rows(img, i, txt_neg, i);
        const char* k = kind_id(kinds[size_t(i)]);
        ++totals[k];
        hits[k] += correct;
    }
    BinaryCompReport report;
    double sum = 0;
    for (const auto& [k, total] : totals) {
        double frac = double(hits[k]) / double(total);
        report.by_kind[k] = frac;
        report.count_by_kind[k] = total;
        sum += frac;
    }
    report.overall = totals.empty() ? 0.0 : sum / double(totals.size());
    return report;
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

struct RetrievalReport {
    std::map<int, double> i2t, t2i;  // k -> R@k
};

// Rank of the true partner under stable sort by (-sim, index); a hit needs
// rank strictly inside the top k, so exact ties resolve against the query.
inline RetrievalReport retrieval_at_k(const TensorT<float>& img, const TensorT<float>& txt,
                                      const std::vector<int>& ks) {
    if (img.rank() != 2 || img.shape != txt.shape)
        throw ShapeError("retrieval_at_k: embedding blocks differ");
    int64_t n = img.shape[0];
    for (int k : ks)
        if (k < 1 || k >= n)
            throw ConfigError("retrieval_at_k: k = " + std::to_string(k) + " must satisfy 1 <= k < N = " +
                              std::to_string(n));
    RetrievalReport report;
    auto run = [&](const TensorT<float>& query, const TensorT<float>& cand, std::map<int, double>& out) {
        std::vector<int64_t> ranks(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            double true_sim = evaldetail::dot_rows(query, i, cand, i);
            int64_t rank = 0;
            for (int64_t j = 0; j < n; ++j) {
                if (j == i) continue;
                double s = evaldetail::dot_rows(query, i, cand, j);
                if (s > true_sim || (s == true_sim && j < i)) ++rank;
            }
            ranks[size_t(i)] = rank;
        }
        for (int k : ks) {
            int64_t hits = 0;
            for (int64_t r : ranks) hits += r < k;
            out[k] = double(hits) / double(n);
        }
    };
    run(img, txt, report.i2t);
    run(txt, img, report.t2i);
    return report;
}

// ---------------------------------------------------------------------------
// Zero-shot classification
// ---------------------------------------------------------------------------

struct ZeroshotReport {
    double top1 = 0, top5 = 0;
    int64_t n = 0;
};

inline ZeroshotReport zeroshot_classify(const TensorT<float>& img, const TensorT<float>& class_embs,
                                        const std::vector<int>& labels) {
    if (img.rank() != 2 || class_embs.rank() != 2 || img.shape[1] != class_embs.shape[1])
        throw ShapeError("zeroshot_classify: embedding dims differ");
    int64_t n = img.shape[0], c = class_embs.shape[0];
    if (c < 5) throw ConfigError("zeroshot_classify: need at least 5 classes for top-5");
    if (int64_t(labels.size()) != n) throw ShapeError("zeroshot_classify: labels misaligned");
    for (int l : labels)
        if (l < 0 || l >= c) throw ConfigError("zeroshot_classify: label " + std::to_string(l) + " out of range");
    int64_t top1 = 0, top5 = 0;
    for (int64_t i = 0; i < n; ++i) {
        double true_sim = evaldetail::dot_rows(img, i, class_embs, labels[size_t(i)]);
        int64_t rank = 0;
        for (int64_t j = 0; j < c; ++j) {
            if (j == labels[size_t(i)]) continue;
            double s = evaldetail::dot_rows(img, i, class_embs, j);
            if (s > true_sim || (s == true_sim && j < labels[size_t(i)])) ++rank;
        }
        top1 += rank < 1;
        top5 += rank < 5;
    }
    return {double(top1) / double(n), double(top5) / double(n), n};
}

// The toy zero-shot protocol: classes are (color, shape) pairs prompted as
// "a {color} {shape}". The image benchmark is the complete set of one-object
// scenes (every size and background variant), so the score is a fixed,
// dataset-independent measure of classification under prompt mismatch.
inline std::vector<std::string> zeroshot_class_prompts() {
    std::vector<std::string> prompts;
    for (int c = 0; c < kNumColors; ++c)
        for (int s = 0; s < kNumShapes; ++s)
            prompts.push_back(std::string("a ") + color_word(ObjColor(c)) + " " + shape_word(ObjShape(s)));
    return prompts;
}

inline int zeroshot_label_of(const Scene& scene) {
    if (scene.objects.size() != 1) throw ConfigError("zeroshot label: scene must have one object");
    return int(scene.objects[0].color) * kNumShapes + int(scene.objects[0].shape);
}

struct ZeroshotBench {
    std::vector<Raster> images;
    std::vector<int> labels;
};

inline const ZeroshotBench& zeroshot_benchmark() {
    static const ZeroshotBench bench = [] {
        ZeroshotBench b;
        for (int c = 0; c < kNumColors; ++c)
            for (int s = 0; s < kNumShapes; ++s)
                for (int size = 0; size < 3; ++size)
                    for (int bg = 0; bg < 3; ++bg) {
                        Scene scene;
                        scene.objects = {{ObjShape(s), ObjColor(c), ObjSize(size)}};
                        scene.background = BgShade(bg);
                        b.images.push_back(render(scene));
                        b.labels.push_back(zeroshot_label_of(scene));
                    }
        return b;
    }();
    return bench;
}

// ---------------------------------------------------------------------------
// CLIP-score filtering
// ---------------------------------------------------------------------------

struct FilterSelection {
    std::vector<size_t> kept;  // positions, original order preserved
    double min_kept_score = 0;
    double max_dropped_score = 0;
    std::vector<double> scores;
};

// Keep the ceil(keep_fraction * M) best-scoring positions, ties resolved by
// lower position.
inline FilterSelection select_top_fraction(const std::vector<double>& scores, double keep_fraction) {
    if (scores.empty()) throw ConfigError("filter: empty dataset");
    if (!(keep_fraction > 0) || keep_fraction > 1)
        throw ConfigError("filter: keep_fraction must be in (0, 1]");
    size_t keep = size_t(std::ceil(keep_fraction * double(scores.size())));
    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    FilterSelection sel;
    sel.scores = scores;
    sel.kept.assign(order.begin(), order.begin() + int64_t(keep));
    std::sort(sel.kept.begin(), sel.kept.end());
    sel.min_kept_score = scores[order[keep - 1]];
    sel.max_dropped_score =
        keep < order.size() ? scores[order[keep]] : -std::numeric_limits<double>::infinity();
    return sel;
}

// score_i = (cos(x_i, y_i) + cos(x'_i, y'_i)) / 2 under the reference model.
inline std::vector<double> clip_pair_scores(DualEncoderT<float>& reference,
                                            const std::vector<const TripletExample*>& examples) {
    std::vector<const Raster*> imgs_pos, imgs_neg;
    std::vector<std::vector<int>> txts_pos, txts_neg;
    for (const auto* ex : examples) {
        if (!ex->has_negative) throw ConfigError("filter: dataset lacks negatives");
        imgs_pos.push_back(&ex->image_pos);
        imgs_neg.push_back(&ex->image_neg);
        txts_pos.push_back(ex->caption_pos.tokens);
        txts_neg.push_back(ex->caption_neg.tokens);
    }
    auto e_ip = embed_images(reference, imgs_pos);
    auto e_in = embed_images(reference, imgs_neg);
    auto e_tp = embed_texts(reference, txts_pos);
    auto e_tn = embed_texts(reference, txts_neg);
    std::vector<double> scores(examples.size());
    for (size_t i = 0; i < examples.size(); ++i)
        scores[i] = 0.5 * (evaldetail::dot_rows(e_ip, int64_t(i), e_tp, int64_t(i)) +
                           evaldetail::dot_rows(e_in, int64_t(i), e_tn, int64_t(i)));
    return scores;
}

inline FilterSelection clip_score_filter(DualEncoderT<float>& reference,
                                         const std::vector<const TripletExample*>& examples,
                                         double keep_fraction) {
    return select_top_fraction(clip_pair_scores(reference, examples), keep_fraction);
}

// ---------------------------------------------------------------------------
// Similarity histograms
// ---------------------------------------------------------------------------

struct SimilarityHistogram {
    std::vector<int64_t> counts;  // kBins uniform bins over [-1, 1]
    double mean = 0;
    double median = 0;
    static constexpr int kBins = 50;

    static std::vector<double> edges() {
        std::vector<double> e(size_t(kBins) + 1);
        for (int i = 0; i <= kBins; ++i) e[size_t(i)] = -1.0 + 2.0 * double(i) / double(kBins);
        return e;
    }
};

inline SimilarityHistogram similarity_histogram(std::vector<double> values) {
    if (values.empty()) throw ConfigError("similarity_histogram: empty input");
    SimilarityHistogram h;
    h.counts.assign(SimilarityHistogram::kBins, 0);
    double sum = 0;
    for (double v : values) {
        int bin = int(std::floor((v + 1.0) / 2.0 * SimilarityHistogram::kBins));
        bin = std::max(0, std::min(SimilarityHistogram::kBins - 1, bin));
        ++h.counts[size_t(bin)];
        sum += v;
    }
    h.mean = sum / double(values.size());
    std::sort(values.begin(), values.end());
    size_t mid = values.size() / 2;
    h.median = values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
    return h;
}

// (image-modality, text-modality) positive-vs-negative cosine histograms.
inline std::pair<SimilarityHistogram, SimilarityHistogram> similarity_histograms(const QuadEmbeddings& q) {
    q.validate();
    std::vector<double> image, text;
    for (int64_t i = 0; i < q.n(); ++i) {
        image.push_back(evaldetail::dot_rows(q.img_pos, i, q.img_neg, i));
        text.push_back(evaldetail::dot_rows(q.txt_pos, i, q.txt_neg, i));
    }
    return {similarity_histogram(std::move(image)), similarity_histogram(std::move(text))};
}

// ---------------------------------------------------------------------------
// Whole-checkpoint evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    WinogroundScores winoground;
    BinaryCompReport comp;
    RetrievalReport retrieval;
    ZeroshotReport zeroshot;
    SimilarityHistogram sim_image, sim_text;
    int64_t examples = 0;
    int64_t retrieval_queries = 0;
    int64_t checkpoint_step = 0;
    int64_t pairs_seen = 0;
    std::string dataset_id;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["meta"] = {{"examples", examples},
                     {"retrieval_queries", retrieval_queries},
                     {"checkpoint_step", checkpoint_step},
                     {"pairs_seen", pairs_seen},
                     {"dataset", dataset_id}};
        j["winoground"] = {{"text_score", winoground.text_score},
                           {"image_score", winoground.image_score},
                           {"group_score", winoground.group_score}};
        j["binary_comp"] = {{"overall", comp.overall},
                            {"by_kind", comp.by_kind},
                            {"count_by_kind", comp.count_by_kind}};
        nlohmann::json ji2t = nlohmann::json::object(), jt2i = nlohmann::json::object();
        for (const auto& [k, v] : retrieval.i2t) ji2t["r" + std::to_string(k)] = v;
        for (const auto& [k, v] : retrieval.t2i) jt2i["r" + std::to_string(k)] = v;
        j["retrieval"] = {{"i2t", ji2t}, {"t2i", jt2i}};
        j["zeroshot"] = {{"top1", zeroshot.top1}, {"top5", zeroshot.top5}, {"n", zeroshot.n}};
        auto hist_json = [](const SimilarityHistogram& h) {
            return nlohmann::json{
                {"counts", h.counts}, {"edges", SimilarityHistogram::edges()}, {"mean", h.mean},
                {"median", h.median}};
        };
        j["similarity"] = {{"image", hist_json(sim_image)}, {"text", hist_json(sim_text)}};
        return j;
    }
};

inline QuadEmbeddings embed_quads(DualEncoderT<float>& model,
                                  const std::vector<const TripletExample*>& examples) {
    if (examples.empty()) throw ConfigError("embed_quads: empty input");
    std::vector<const Raster*> imgs_pos, imgs_neg;
    std::vector<std::vector<int>> txts_pos, txts_neg;
    QuadEmbeddings q;
    for (const auto* ex : examples) {
        if (!ex->has_negative) throw ConfigError("embed_quads: dataset lacks negatives");
        imgs_pos.push_back(&ex->image_pos);
        imgs_neg.push_back(&ex->image_neg);
        txts_pos.push_back(ex->caption_pos.tokens);
        txts_neg.push_back(ex->caption_neg.tokens);
        q.kinds.push_back(ex->kind);
    }
    q.img_pos = embed_images(model, imgs_pos);
    q.img_neg = embed_images(model, imgs_neg);
    q.txt_pos = embed_texts(model, txts_pos);
    q.txt_neg = embed_texts(model, txts_neg);
    return q;
}

// Runs every metric family over one example slice. Retrieval requires one
// true partner per query, so it runs over the rows with distinct positive
// captions (duplicate scenes would tie and count as misses for every model);
// ks are clipped to feasible values (k < N). Zero-shot uses the one-object
// positives.
inline EvalReport evaluate_model(DualEncoderT<float>& model,
                                 const std::vector<const TripletExample*>& examples,
                                 const std::vector<int>& ks = {1, 5, 10}) {
    QuadEmbeddings q = embed_quads(model, examples);
    EvalReport report;
    report.examples = q.n();
    report.winoground = winoground_scores(q);
    report.comp = binary_comp_accuracy(q.img_pos, q.txt_pos, q.txt_neg, q.kinds);

    std::vector<int64_t> unique_rows;
    {
        std::set<std::string> seen;
        for (size_t i = 0; i < examples.size(); ++i)
            if (seen.insert(examples[i]->caption_pos.text).second) unique_rows.push_back(int64_t(i));
    }
    report.retrieval_queries = int64_t(unique_rows.size());
    int d = q.img_pos.shape[1];
    TensorT<float> uimg = TensorT<float>::zeros({int(unique_rows.size()), d});
    TensorT<float> utxt = TensorT<float>::zeros({int(unique_rows.size()), d});
    for (size_t r = 0; r < unique_rows.size(); ++r) {
        std::copy_n(q.img_pos.data.begin() + unique_rows[r] * d, d, uimg.data.begin() + int64_t(r) * d);
        std::copy_n(q.txt_pos.data.begin() + unique_rows[r] * d, d, utxt.data.begin() + int64_t(r) * d);
    }
    std::vector<int> feasible;
    for (int k : ks)
        if (k >= 1 && k < int64_t(unique_rows.size())) feasible.push_back(k);
    if (!feasible.empty()) report.retrieval = retrieval_at_k(uimg, utxt, feasible);
    auto [sim_img, sim_txt] = similarity_histograms(q);
    report.sim_image = sim_img;
    report.sim_text = sim_txt;

    const ZeroshotBench& bench = zeroshot_benchmark();
    std::vector<const Raster*> bench_imgs;
    for (const auto& img : bench.images) bench_imgs.push_back(&img);
    std::vector<std::vector<int>> prompts;
    for (const auto& p : zeroshot_class_prompts()) prompts.push_back(tokenize(p));
    report.zeroshot =
        zeroshot_classify(embed_images(model, bench_imgs), embed_texts(model, prompts), bench.labels);
    return report;
}

}  // namespace tclp
