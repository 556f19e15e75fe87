#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tclp/base64.hpp"
#include "tclp/error.hpp"
#include "tclp/rng.hpp"
#include "tclp/toyworld.hpp"

namespace tclp {

using json = nlohmann::json;

constexpr int kDatasetFormatVersion = 1;

// One record: positive pair, hard-negative pair, and the perturbation that
// produced the negative. The negative image is rendered from the negative
// caption's scene, so it is exact ground truth for that caption.
struct TripletExample {
    int64_t id = 0;
    uint64_t seed = 0;
    PerturbationKind kind = PerturbationKind::replace_object;
    Scene scene_pos, scene_neg;
    Caption caption_pos, caption_neg;
    Raster image_pos, image_neg;
    bool has_negative = true;
};

struct DatasetManifest {
    int64_t m = 0;
    uint64_t seed = 0;
    int format_version = kDatasetFormatVersion;
    std::vector<std::string> concepts;
    std::map<std::string, int64_t> kind_histogram;
};

struct Dataset {
    std::vector<TripletExample> examples;
    bool has_negatives = true;
};

// Weights over perturbation kinds; uniform over the applicable set by default.
struct KindMix {
    std::array<double, kNumKinds> weights;
    KindMix() { weights.fill(1.0); }

    double weight(PerturbationKind k) const { return weights[size_t(k)]; }

    static KindMix from_json(const json& j) {
        KindMix mix;
        mix.weights.fill(0.0);
        for (auto it = j.begin(); it != j.end(); ++it) {
            double w = it.value().get<double>();
            if (w < 0) throw ConfigError("kind_mix: negative weight for " + it.key());
            mix.weights[size_t(kind_from_id(it.key()))] = w;
        }
        return mix;
    }
    json to_json() const {
        json j = json::object();
        for (int k = 0; k < kNumKinds; ++k) j[kind_id(PerturbationKind(k))] = weights[size_t(k)];
        return j;
    }
};

// ---------------------------------------------------------------------------
// Example construction
// ---------------------------------------------------------------------------

// Builds example `index` of a dataset from its derived seed alone, so any
// record can be regenerated independently of the rest.
inline TripletExample make_example(uint64_t dataset_seed, int64_t index, const KindMix& mix) {
    TripletExample ex;
    ex.id = index;
    ex.seed = derive_seed(dataset_seed, uint64_t(index));
    Rng rng(ex.seed);

    for (int attempt = 0;; ++attempt) {
        if (attempt >= 1000)
            throw ConfigError("make_example: kind_mix assigns no weight to any applicable kind");
        Scene scene = sample_scene(rng);
        double total = 0;
        std::array<double, kNumKinds> w{};
        for (int k = 0; k < kNumKinds; ++k) {
            if (!kind_applicable(scene, PerturbationKind(k))) continue;
            w[size_t(k)] = mix.weight(PerturbationKind(k));
            total += w[size_t(k)];
        }
        if (total <= 0) continue;
        double pick = rng.uniform() * total;
        int chosen = -1;
        for (int k = 0; k < kNumKinds; ++k) {
            if (w[size_t(k)] <= 0) continue;
            pick -= w[size_t(k)];
            if (pick <= 0) {
                chosen = k;
                break;
            }
        }
        if (chosen < 0)
            for (int k = kNumKinds - 1; k >= 0; --k)
                if (w[size_t(k)] > 0) {
                    chosen = k;
                    break;
                }
        ex.kind = PerturbationKind(chosen);
        ex.scene_pos = scene;
        ex.scene_neg = perturb(scene, ex.kind, rng);
        break;
    }
    ex.caption_pos = caption_of(ex.scene_pos);
    ex.caption_neg = caption_of(ex.scene_neg);
    ex.image_pos = render(ex.scene_pos);
    ex.image_neg = render(ex.scene_neg);
    return ex;
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

inline json scene_to_json(const Scene& s) {
    json objs = json::array();
    for (const auto& o : s.objects) {
        json jo;
        jo["shape"] = shape_word(o.shape);
        jo["color"] = color_word(o.color);
        if (o.size != ObjSize::unsized) jo["size"] = size_word(o.size);
        objs.push_back(jo);
    }
    json j;
    j["objects"] = objs;
    if (s.relation != Relation::none) j["relation"] = relation_id(s.relation);
    j["background"] = bg_word(s.background);
    return j;
}

inline Scene scene_from_json(const json& j) {
    Scene s;
    for (const auto& jo : j.at("objects")) {
        SceneObject o;
        std::string shape = jo.at("shape").get<std::string>();
        std::string color = jo.at("color").get<std::string>();
        bool ok = false;
        for (int i = 0; i < kNumShapes; ++i)
            if (shape == shape_word(ObjShape(i))) o.shape = ObjShape(i), ok = true;
        if (!ok) throw DataError("scene json: bad shape " + shape);
        ok = false;
        for (int i = 0; i < kNumColors; ++i)
            if (color == color_word(ObjColor(i))) o.color = ObjColor(i), ok = true;
        if (!ok) throw DataError("scene json: bad color " + color);
        o.size = ObjSize::unsized;
        if (jo.contains("size")) {
            std::string size = jo.at("size").get<std::string>();
            if (size == "small")
                o.size = ObjSize::small;
            else if (size == "large")
                o.size = ObjSize::large;
            else
                throw DataError("scene json: bad size " + size);
        }
        s.objects.push_back(o);
    }
    if (j.contains("relation")) s.relation = relation_from_id(j.at("relation").get<std::string>());
    std::string bg = j.at("background").get<std::string>();
    bool ok = false;
    for (int i = 0; i < 3; ++i)
        if (bg == bg_word(BgShade(i))) s.background = BgShade(i), ok = true;
    if (!ok) throw DataError("scene json: bad background " + bg);
    s.validate();
    return s;
}

inline json raster_to_json(const Raster& r) {
    json j;
    j["w"] = r.width;
    j["h"] = r.height;
    j["b64"] = base64_encode(r.pixels);
    return j;
}

inline Raster raster_from_json(const json& j) {
    Raster r;
    r.width = j.at("w").get<int>();
    r.height = j.at("h").get<int>();
    r.pixels = base64_decode(j.at("b64").get<std::string>());
    if (int64_t(r.pixels.size()) != int64_t(r.width) * r.height * 3)
        throw DataError("raster: pixel payload does not match dimensions");
    return r;
}

inline json example_to_json(const TripletExample& ex) {
    json j;
    j["id"] = ex.id;
    j["seed"] = ex.seed;
    j["kind"] = kind_id(ex.kind);
    j["caption_pos"] = ex.caption_pos.text;
    j["tokens_pos"] = ex.caption_pos.tokens;
    j["image_pos"] = raster_to_json(ex.image_pos);
    j["scene_pos"] = scene_to_json(ex.scene_pos);
    if (ex.has_negative) {
        j["caption_neg"] = ex.caption_neg.text;
        j["tokens_neg"] = ex.caption_neg.tokens;
        j["image_neg"] = raster_to_json(ex.image_neg);
        j["scene_neg"] = scene_to_json(ex.scene_neg);
    }
    return j;
}

inline TripletExample example_from_json(const json& j) {
    TripletExample ex;
    ex.id = j.at("id").get<int64_t>();
    ex.seed = j.at("seed").get<uint64_t>();
    ex.kind = kind_from_id(j.at("kind").get<std::string>());
    ex.caption_pos.text = j.at("caption_pos").get<std::string>();
    ex.caption_pos.tokens = j.at("tokens_pos").get<std::vector<int>>();
    ex.image_pos = raster_from_json(j.at("image_pos"));
    ex.scene_pos = scene_from_json(j.at("scene_pos"));
    ex.has_negative = j.contains("caption_neg");
    if (ex.has_negative) {
        ex.caption_neg.text = j.at("caption_neg").get<std::string>();
        ex.caption_neg.tokens = j.at("tokens_neg").get<std::vector<int>>();
        ex.image_neg = raster_from_json(j.at("image_neg"));
        ex.scene_neg = scene_from_json(j.at("scene_neg"));
    }
    return ex;
}

inline json manifest_to_json(const DatasetManifest& m) {
    json j;
    j["m"] = m.m;
    j["seed"] = m.seed;
    j["format_version"] = m.format_version;
    j["concept_inventory"] = m.concepts;
    j["kind_histogram"] = m.kind_histogram;
    return j;
}

inline DatasetManifest manifest_from_json(const json& j) {
    DatasetManifest m;
    m.m = j.at("m").get<int64_t>();
    m.seed = j.at("seed").get<uint64_t>();
    m.format_version = j.at("format_version").get<int>();
    m.concepts = j.at("concept_inventory").get<std::vector<std::string>>();
    m.kind_histogram = j.at("kind_histogram").get<std::map<std::string, int64_t>>();
    return m;
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

inline DatasetManifest build_manifest(const std::vector<TripletExample>& examples, uint64_t seed) {
    DatasetManifest m;
    m.m = int64_t(examples.size());
    m.seed = seed;
    m.concepts = concept_inventory();
    for (int k = 0; k < kNumKinds; ++k) m.kind_histogram[kind_id(PerturbationKind(k))] = 0;
    for (const auto& ex : examples) ++m.kind_histogram[kind_id(ex.kind)];
    return m;
}

inline void write_dataset(const std::string& dataset_path, const std::string& manifest_path,
                          const std::vector<TripletExample>& examples, const DatasetManifest& manifest) {
    std::ofstream out(dataset_path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + dataset_path);
    for (const auto& ex : examples) out << example_to_json(ex).dump() << '\n';
    if (!out) throw IoError("write failed: " + dataset_path);
    out.close();
    std::ofstream mout(manifest_path, std::ios::binary);
    if (!mout) throw IoError("cannot open for writing: " + manifest_path);
    mout << manifest_to_json(manifest).dump(2) << '\n';
    if (!mout) throw IoError("write failed: " + manifest_path);
}

inline std::vector<TripletExample> generate_examples(int64_t m, uint64_t seed, const KindMix& mix,
                                                     bool with_negatives = true) {
    if (m < 1) throw ConfigError("generate: m must be >= 1");
    std::vector<TripletExample> out;
    out.reserve(size_t(m));
    for (int64_t i = 0; i < m; ++i) {
        out.push_back(make_example(seed, i, mix));
        out.back().has_negative = with_negatives;
    }
    return out;
}

inline DatasetManifest generate_dataset(int64_t m, uint64_t seed, const KindMix& mix,
                                        const std::string& dataset_path, const std::string& manifest_path,
                                        bool with_negatives = true) {
    auto examples = generate_examples(m, seed, mix, with_negatives);
    auto manifest = build_manifest(examples, seed);
    write_dataset(dataset_path, manifest_path, examples, manifest);
    return manifest;
}

inline Dataset load_dataset(const std::string& dataset_path) {
    std::ifstream in(dataset_path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset: " + dataset_path);
    Dataset ds;
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            ds.examples.push_back(example_from_json(j));
        } catch (const json::exception& e) {
            throw DataError(dataset_path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!ds.examples.back().has_negative) ds.has_negatives = false;
    }
    if (ds.examples.empty()) throw DataError("dataset is empty: " + dataset_path);
    return ds;
}

// ---------------------------------------------------------------------------
// Concept-coverage subsets
// ---------------------------------------------------------------------------

inline std::vector<std::string> atoms_of(const TripletExample& ex) {
    auto atoms = atoms_of(ex.scene_pos);
    if (ex.has_negative)
        for (const auto& a : atoms_of(ex.scene_neg)) {
            bool seen = false;
            for (const auto& x : atoms)
                if (x == a) seen = true;
            if (!seen) atoms.push_back(a);
        }
    return atoms;
}

// Index slices whose examples use only the first `target` atoms of the
// fixed inventory order. Slices nest as targets grow.
inline std::vector<std::vector<size_t>> concept_subsets(const Dataset& ds, const std::vector<int>& targets) {
    const auto& inventory = concept_inventory();
    for (int t : targets)
        if (t < 1 || t > int(inventory.size()))
            throw ConfigError("concept_subsets: target " + std::to_string(t) +
                              " unachievable; max achievable is " + std::to_string(inventory.size()));
    std::vector<std::vector<size_t>> slices;
    for (int t : targets) {
        std::vector<size_t> slice;
        for (size_t i = 0; i < ds.examples.size(); ++i) {
            bool ok = true;
            for (const auto& atom : atoms_of(ds.examples[i])) {
                bool allowed = false;
                for (int a = 0; a < t && !allowed; ++a) allowed = inventory[size_t(a)] == atom;
                if (!allowed) {
                    ok = false;
                    break;
                }
            }
            if (ok) slice.push_back(i);
        }
        slices.push_back(std::move(slice));
    }
    return slices;
}

}  // namespace tclp
