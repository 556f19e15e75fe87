#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "tclp/dataset.hpp"
#include "tclp/rng.hpp"
#include "tclp/toyworld.hpp"

using namespace tclp;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("tclp_test_" + tag);
    fs::create_directories(p);
    return p;
}

// Multiset token overlap: |intersection| / max(len_a, len_b).
double token_overlap(const std::vector<int>& a, const std::vector<int>& b) {
    std::multiset<int> ma(a.begin(), a.end()), mb(b.begin(), b.end());
    size_t common = 0;
    for (int t : ma) {
        auto it = mb.find(t);
        if (it != mb.end()) {
            mb.erase(it);
            ++common;
        }
    }
    return double(common) / double(std::max(a.size(), b.size()));
}

}  // namespace

TEST_CASE("sample_scene is deterministic per seed") {
    Rng a(42), b(42);
    for (int i = 0; i < 50; ++i) CHECK(sample_scene(a) == sample_scene(b));
}

TEST_CASE("sample_scene covers every shape, color and relation atom") {
    Rng rng(7);
    std::set<std::string> seen;
    for (int i = 0; i < 10000; ++i) {
        Scene s = sample_scene(rng);
        s.validate();
        CHECK_FALSE((s.objects.size() == 2 && s.objects[0].shape == s.objects[1].shape &&
                     s.objects[0].color == s.objects[1].color));
        for (const auto& a : atoms_of(s)) seen.insert(a);
    }
    for (const auto& atom : concept_inventory()) CHECK(seen.count(atom) == 1);
}

TEST_CASE("caption grammar: surface forms") {
    Scene one;
    one.objects = {{ObjShape::circle, ObjColor::red, ObjSize::small}};
    one.background = BgShade::dark;
    CHECK(caption_of(one).text == "a small red circle on a dark background");

    one.objects[0].size = ObjSize::unsized;
    CHECK(caption_of(one).text == "a red circle on a dark background");

    Scene two;
    two.objects = {{ObjShape::circle, ObjColor::red, ObjSize::small},
                   {ObjShape::square, ObjColor::blue, ObjSize::large}};
    two.relation = Relation::left_of;
    two.background = BgShade::gray;
    CHECK(caption_of(two).text == "a small red circle left of a large blue square on a gray background");
}

TEST_CASE("caption round trip on 1k random scenes") {
    Rng rng(123);
    for (int i = 0; i < 1000; ++i) {
        Scene s = sample_scene(rng);
        Caption c = caption_of(s);
        CHECK(parse(c.text) == s);
        CHECK(detokenize(c.tokens) == c.text);
        CHECK(tokenize(c.text) == c.tokens);
        CHECK(c.tokens.size() <= 16);
    }
}

TEST_CASE("parse rejects non-grammar strings") {
    CHECK_THROWS_AS(parse("a red circle left of"), DataError);
    CHECK_THROWS_AS(parse("a red circle"), DataError);                      // missing background tail
    CHECK_THROWS_AS(parse("banana"), DataError);
    CHECK_THROWS_AS(parse("a red circle on a dark background extra"), DataError);
    CHECK_THROWS_AS(parse("a circle red on a dark background"), DataError);
    CHECK_THROWS_AS(parse(""), DataError);
}

TEST_CASE("render: deterministic, centroid colors, relation flips move pixels") {
    Scene s = parse("a red circle left of a blue square on a dark background");
    Raster r1 = render(s), r2 = render(s);
    CHECK(r1 == r2);
    CHECK(r1.pixels.size() == size_t(32 * 32 * 3));

    Scene flipped = s;
    flipped.relation = Relation::right_of;
    CHECK_FALSE(render(flipped) == r1);

    for (int i = 0; i < 2; ++i) {
        auto [cx, cy] = object_slot(s, i);
        auto rgb = color_rgb(s.objects[size_t(i)].color);
        size_t p = (size_t(cy) * 32 + cx) * 3;
        CHECK(r1.pixels[p] == rgb[0]);
        CHECK(r1.pixels[p + 1] == rgb[1]);
        CHECK(r1.pixels[p + 2] == rgb[2]);
    }

    Scene empty;
    CHECK_THROWS_AS(render(empty), DataError);
}

TEST_CASE("perturb: per-kind rewrite rules") {
    Rng rng(5);
    Scene two = parse("a red circle left of a blue square on a dark background");

    for (int i = 0; i < 20; ++i) {
        Scene n = perturb(two, PerturbationKind::replace_relation, rng);
        CHECK(n.objects == two.objects);
        CHECK(n.relation != Relation::left_of);
        CHECK(n.background == two.background);
    }
    {
        Scene n = perturb(two, PerturbationKind::swap_object, rng);
        Scene round = parse(caption_of(n).text);
        CHECK(round.objects[0] == two.objects[1]);
        CHECK(round.objects[1] == two.objects[0]);
        CHECK(round.relation == two.relation);
    }
    {
        Scene one = parse("a red circle on a light background");
        Scene n = perturb(one, PerturbationKind::add_attribute, rng);
        CHECK(n.objects[0].size != ObjSize::unsized);
        CHECK(n.objects[0].shape == one.objects[0].shape);
        CHECK(n.objects[0].color == one.objects[0].color);

        Scene added = perturb(one, PerturbationKind::add_object, rng);
        CHECK(added.objects.size() == 2);
        CHECK(added.objects[0] == one.objects[0]);
        CHECK(added.relation != Relation::none);
    }
    {
        Scene sized = parse("a small red circle on a dark background");
        CHECK_THROWS_WITH_AS(perturb(sized, PerturbationKind::add_attribute, rng),
                             doctest::Contains("resample"), DataError);
        CHECK_THROWS_AS(perturb(sized, PerturbationKind::swap_object, rng), DataError);
        CHECK_THROWS_AS(perturb(two, PerturbationKind::add_object, rng), DataError);
    }
}

// Structural diff oracle: recompute the edit implied by each kind and check
// it is exactly the minimal one.
TEST_CASE("perturb: structural diff matches the declared kind on 1k draws") {
    Rng rng(999);
    int draws = 0;
    while (draws < 1000) {
        Scene s = sample_scene(rng);
        PerturbationKind kind = PerturbationKind(rng.uniform_int(kNumKinds));
        if (!kind_applicable(s, kind)) continue;
        ++draws;
        Scene n = perturb(s, kind, rng);
        CHECK(n != s);
        CHECK(n.background == s.background);
        switch (kind) {
            case PerturbationKind::replace_object: {
                CHECK(n.objects.size() == s.objects.size());
                CHECK(n.relation == s.relation);
                int changed = 0;
                for (size_t i = 0; i < s.objects.size(); ++i) {
                    if (n.objects[i] == s.objects[i]) continue;
                    ++changed;
                    CHECK(n.objects[i].shape != s.objects[i].shape);
                    CHECK(n.objects[i].color == s.objects[i].color);
                    CHECK(n.objects[i].size == s.objects[i].size);
                }
                CHECK(changed == 1);
                break;
            }
            case PerturbationKind::replace_attribute: {
                CHECK(n.objects.size() == s.objects.size());
                CHECK(n.relation == s.relation);
                int changed = 0;
                for (size_t i = 0; i < s.objects.size(); ++i) {
                    if (n.objects[i] == s.objects[i]) continue;
                    ++changed;
                    CHECK(n.objects[i].shape == s.objects[i].shape);
                    bool color_edit = n.objects[i].color != s.objects[i].color;
                    bool size_edit = n.objects[i].size != s.objects[i].size;
                    CHECK(color_edit != size_edit);
                    if (size_edit) {
                        CHECK(s.objects[i].size != ObjSize::unsized);
                        CHECK(n.objects[i].size != ObjSize::unsized);
                    }
                }
                CHECK(changed == 1);
                break;
            }
            case PerturbationKind::replace_relation:
                CHECK(n.objects == s.objects);
                CHECK(n.relation != s.relation);
                break;
            case PerturbationKind::swap_object:
                CHECK(n.relation == s.relation);
                CHECK(n.objects[0] == s.objects[1]);
                CHECK(n.objects[1] == s.objects[0]);
                break;
            case PerturbationKind::swap_attribute: {
                CHECK(n.relation == s.relation);
                bool color_swap = n.objects[0].color == s.objects[1].color &&
                                  n.objects[1].color == s.objects[0].color &&
                                  s.objects[0].color != s.objects[1].color &&
                                  n.objects[0].size == s.objects[0].size &&
                                  n.objects[1].size == s.objects[1].size;
                bool size_swap = n.objects[0].size == s.objects[1].size &&
                                 n.objects[1].size == s.objects[0].size &&
                                 s.objects[0].size != s.objects[1].size &&
                                 n.objects[0].color == s.objects[0].color &&
                                 n.objects[1].color == s.objects[1].color;
                CHECK(n.objects[0].shape == s.objects[0].shape);
                CHECK(n.objects[1].shape == s.objects[1].shape);
                CHECK(color_swap != size_swap);
                break;
            }
            case PerturbationKind::add_object:
                CHECK(s.objects.size() == 1);
                CHECK(n.objects.size() == 2);
                CHECK(n.objects[0] == s.objects[0]);
                CHECK(n.relation != Relation::none);
                break;
            case PerturbationKind::add_attribute:
                CHECK(s.objects.size() == 1);
                CHECK(n.objects.size() == 1);
                CHECK(s.objects[0].size == ObjSize::unsized);
                CHECK(n.objects[0].size != ObjSize::unsized);
                CHECK(n.objects[0].shape == s.objects[0].shape);
                CHECK(n.objects[0].color == s.objects[0].color);
                break;
        }
    }
}

TEST_CASE("hardness: replace/swap negatives keep >= 60% token overlap") {
    KindMix mix;
    auto examples = generate_examples(500, 31337, mix);
    for (const auto& ex : examples) {
        CHECK(ex.caption_neg.text != ex.caption_pos.text);
        CHECK(ex.scene_neg != ex.scene_pos);
        CHECK_FALSE(ex.image_neg == ex.image_pos);
        bool replace_or_swap = ex.kind != PerturbationKind::add_object &&
                               ex.kind != PerturbationKind::add_attribute;
        if (replace_or_swap)
            CHECK(token_overlap(ex.caption_pos.tokens, ex.caption_neg.tokens) >= 0.6);
    }
}

TEST_CASE("negative ground truth: image_neg renders parse(caption_neg)") {
    KindMix mix;
    auto examples = generate_examples(300, 2024, mix);
    for (const auto& ex : examples) {
        CHECK(parse(ex.caption_neg.text) == ex.scene_neg);
        CHECK(render(ex.scene_neg) == ex.image_neg);
        CHECK(render(ex.scene_pos) == ex.image_pos);
        CHECK(ex.seed == derive_seed(2024, uint64_t(ex.id)));
    }
}

TEST_CASE("generate_dataset: byte identical reruns, manifest histogram sums") {
    auto dir = temp_dir("gen");
    KindMix mix;
    auto m1 = generate_dataset(100, 7, mix, (dir / "d1.jsonl").string(), (dir / "m1.json").string());
    auto m2 = generate_dataset(100, 7, mix, (dir / "d2.jsonl").string(), (dir / "m2.json").string());
    CHECK(slurp(dir / "d1.jsonl") == slurp(dir / "d2.jsonl"));
    CHECK(slurp(dir / "m1.json") == slurp(dir / "m2.json"));

    int64_t total = 0;
    for (const auto& [k, v] : m1.kind_histogram) total += v;
    CHECK(total == 100);

    auto ds = load_dataset((dir / "d1.jsonl").string());
    CHECK(ds.examples.size() == 100);
    CHECK(ds.has_negatives);
    for (size_t i = 0; i < ds.examples.size(); ++i) {
        const auto& ex = ds.examples[i];
        CHECK(ex.id == int64_t(i));
        CHECK(ex.image_neg == render(parse(ex.caption_neg.text)));
    }

    // a different seed changes the bytes
    generate_dataset(100, 8, mix, (dir / "d3.jsonl").string(), (dir / "m3.json").string());
    CHECK(slurp(dir / "d1.jsonl") != slurp(dir / "d3.jsonl"));
}

TEST_CASE("positives-only datasets load with has_negatives unset") {
    auto dir = temp_dir("posonly");
    KindMix mix;
    generate_dataset(20, 3, mix, (dir / "p.jsonl").string(), (dir / "pm.json").string(), false);
    auto ds = load_dataset((dir / "p.jsonl").string());
    CHECK_FALSE(ds.has_negatives);
    CHECK(ds.examples.size() == 20);
}

TEST_CASE("kind mix weights restrict generated kinds") {
    KindMix mix;
    mix.weights.fill(0.0);
    mix.weights[size_t(PerturbationKind::replace_relation)] = 1.0;
    auto examples = generate_examples(50, 11, mix);
    for (const auto& ex : examples) {
        CHECK(ex.kind == PerturbationKind::replace_relation);
        CHECK(ex.scene_pos.objects.size() == 2);
    }
}

TEST_CASE("concept subsets: filter oracle, nesting, monotone sizes") {
    KindMix mix;
    Dataset ds;
    ds.examples = generate_examples(1000, 99, mix);

    std::vector<int> targets{3, 6, 9, 14};
    auto slices = concept_subsets(ds, targets);
    REQUIRE(slices.size() == targets.size());

    // full inventory admits the whole dataset
    CHECK(slices.back().size() == ds.examples.size());

    // exhaustive filter oracle per target
    const auto& inv = concept_inventory();
    for (size_t t = 0; t < targets.size(); ++t) {
        std::set<std::string> allowed(inv.begin(), inv.begin() + targets[t]);
        std::vector<size_t> expect;
        for (size_t i = 0; i < ds.examples.size(); ++i) {
            bool ok = true;
            for (const auto& a : atoms_of(ds.examples[i]))
                if (!allowed.count(a)) ok = false;
            if (ok) expect.push_back(i);
        }
        CHECK(slices[t] == expect);
    }

    // monotone nondecreasing sizes and nesting by inclusion
    for (size_t t = 1; t < slices.size(); ++t) {
        CHECK(slices[t].size() >= slices[t - 1].size());
        std::set<size_t> big(slices[t].begin(), slices[t].end());
        for (size_t idx : slices[t - 1]) CHECK(big.count(idx) == 1);
    }

    // target 3 = {circle, red, small}: captions use only those plus function words
    std::set<std::string> allowed3(inv.begin(), inv.begin() + 3);
    for (size_t idx : slices[0])
        for (const auto& a : atoms_of(ds.examples[idx])) CHECK(allowed3.count(a) == 1);

    CHECK_THROWS_WITH_AS(concept_subsets(ds, {15}), doctest::Contains("14"), ConfigError);
    CHECK_THROWS_AS(concept_subsets(ds, {0}), ConfigError);
}

TEST_CASE("base64 round trip") {
    Rng rng(1);
    for (size_t len : {size_t(0), size_t(1), size_t(2), size_t(3), size_t(100), size_t(3072)}) {
        std::vector<uint8_t> bytes(len);
        for (auto& b : bytes) b = uint8_t(rng.uniform_int(256));
        CHECK(base64_decode(base64_encode(bytes)) == bytes);
    }
    CHECK_THROWS_AS(base64_decode("abc"), DataError);
    CHECK_THROWS_AS(base64_decode("a=bc"), DataError);
}
