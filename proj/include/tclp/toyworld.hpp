#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tclp/error.hpp"
#include "tclp/rng.hpp"

namespace tclp {

// ---------------------------------------------------------------------------
// World atoms
// ---------------------------------------------------------------------------

enum class ObjShape : uint8_t { circle, square, triangle };
enum class ObjColor : uint8_t { red, green, blue, yellow, purple };
// `unsized` objects render at a middle extent and omit the size word.
enum class ObjSize : uint8_t { unsized, small, large };
enum class Relation : uint8_t { none, left_of, right_of, above, below };
enum class BgShade : uint8_t { dark, gray, light };

constexpr int kNumShapes = 3;
constexpr int kNumColors = 5;
constexpr int kNumRelations = 4;

inline const char* shape_word(ObjShape s) {
    static const char* w[] = {"circle", "square", "triangle"};
    return w[int(s)];
}
inline const char* color_word(ObjColor c) {
    static const char* w[] = {"red", "green", "blue", "yellow", "purple"};
    return w[int(c)];
}
inline const char* size_word(ObjSize s) {
    static const char* w[] = {"", "small", "large"};
    return w[int(s)];
}
inline const char* bg_word(BgShade b) {
    static const char* w[] = {"dark", "gray", "light"};
    return w[int(b)];
}
inline std::string relation_words(Relation r) {
    switch (r) {
        case Relation::left_of: return "left of";
        case Relation::right_of: return "right of";
        case Relation::above: return "above";
        case Relation::below: return "below";
        default: return "";
    }
}
inline std::string relation_id(Relation r) {
    switch (r) {
        case Relation::left_of: return "left_of";
        case Relation::right_of: return "right_of";
        case Relation::above: return "above";
        case Relation::below: return "below";
        default: return "none";
    }
}
inline Relation relation_from_id(const std::string& s) {
    if (s == "left_of") return Relation::left_of;
    if (s == "right_of") return Relation::right_of;
    if (s == "above") return Relation::above;
    if (s == "below") return Relation::below;
    if (s == "none") return Relation::none;
    throw DataError("unknown relation: " + s);
}

struct SceneObject {
    ObjShape shape = ObjShape::circle;
    ObjColor color = ObjColor::red;
    ObjSize size = ObjSize::unsized;
    bool operator==(const SceneObject&) const = default;
};

// Symbolic scene: 1-2 objects, a relation iff two objects, a background shade.
// Two objects never share both shape and color, keeping captions unambiguous.
struct Scene {
    std::vector<SceneObject> objects;
    Relation relation = Relation::none;
    BgShade background = BgShade::dark;

    bool operator==(const Scene&) const = default;

    void validate() const {
        if (objects.empty() || objects.size() > 2) throw DataError("scene: needs 1 or 2 objects");
        if ((objects.size() == 2) != (relation != Relation::none))
            throw DataError("scene: relation present iff two objects");
        if (objects.size() == 2 && objects[0].shape == objects[1].shape &&
            objects[0].color == objects[1].color)
            throw DataError("scene: objects share shape and color");
    }
};

// ---------------------------------------------------------------------------
// Vocabulary and captions
// ---------------------------------------------------------------------------

constexpr int kPadToken = 0;

inline const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> words = {
        "<pad>", "a",      "small", "large",  "red",  "green", "blue",  "yellow", "purple", "circle",
        "square", "triangle", "left",  "right", "of",   "above", "below", "on",     "dark",   "gray",
        "light",  "background"};
    return words;
}

inline int vocab_size() { return int(vocabulary().size()); }

inline int token_of(const std::string& word) {
    const auto& v = vocabulary();
    for (size_t i = 0; i < v.size(); ++i)
        if (v[i] == word) return int(i);
    throw DataError("word not in vocabulary: " + word);
}

struct Caption {
    std::string text;
    std::vector<int> tokens;
    bool operator==(const Caption&) const = default;
};

inline std::vector<int> tokenize(const std::string& text) {
    std::vector<int> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(token_of(w));
    return out;
}

inline std::string detokenize(const std::vector<int>& tokens) {
    std::string out;
    for (int t : tokens) {
        if (t < 0 || t >= vocab_size()) throw DataError("token id out of range: " + std::to_string(t));
        if (!out.empty()) out += ' ';
        out += vocabulary()[size_t(t)];
    }
    return out;
}

// Canonical surface form, e.g.
//   "a small red circle left of a blue square on a dark background"
inline Caption caption_of(const Scene& scene) {
    scene.validate();
    std::string text;
    auto phrase = [&](const SceneObject& o) {
        text += "a ";
        if (o.size != ObjSize::unsized) {
            text += size_word(o.size);
            text += ' ';
        }
        text += color_word(o.color);
        text += ' ';
        text += shape_word(o.shape);
    };
    phrase(scene.objects[0]);
    if (scene.objects.size() == 2) {
        text += ' ';
        text += relation_words(scene.relation);
        text += ' ';
        phrase(scene.objects[1]);
    }
    text += " on a ";
    text += bg_word(scene.background);
    text += " background";
    return Caption{text, tokenize(text)};
}

// Inverse of caption_of over the canonical grammar. Rejects anything else.
inline Scene parse(const std::string& text) {
    std::vector<std::string> w;
    {
        std::istringstream in(text);
        std::string t;
        while (in >> t) w.push_back(t);
    }
    size_t pos = 0;
    auto expect = [&](const std::string& word) {
        if (pos >= w.size() || w[pos] != word)
            throw DataError("parse: expected '" + word + "' at token " + std::to_string(pos) + " in: " + text);
        ++pos;
    };
    auto peek = [&]() -> const std::string& {
        static const std::string empty;
        return pos < w.size() ? w[pos] : empty;
    };
    auto read_object = [&]() {
        expect("a");
        SceneObject o;
        o.size = ObjSize::unsized;
        if (peek() == "small" || peek() == "large") {
            o.size = peek() == "small" ? ObjSize::small : ObjSize::large;
            ++pos;
        }
        bool found = false;
        for (int c = 0; c < kNumColors && !found; ++c)
            if (peek() == color_word(ObjColor(c))) {
                o.color = ObjColor(c);
                found = true;
                ++pos;
            }
        if (!found) throw DataError("parse: expected a color at token " + std::to_string(pos) + " in: " + text);
        found = false;
        for (int s = 0; s < kNumShapes && !found; ++s)
            if (peek() == shape_word(ObjShape(s))) {
                o.shape = ObjShape(s);
                found = true;
                ++pos;
            }
        if (!found) throw DataError("parse: expected a shape at token " + std::to_string(pos) + " in: " + text);
        return o;
    };

    Scene scene;
    scene.objects.push_back(read_object());
    if (peek() == "left" || peek() == "right" || peek() == "above" || peek() == "below") {
        if (peek() == "left" || peek() == "right") {
            scene.relation = peek() == "left" ? Relation::left_of : Relation::right_of;
            ++pos;
            expect("of");
        } else {
            scene.relation = peek() == "above" ? Relation::above : Relation::below;
            ++pos;
        }
        scene.objects.push_back(read_object());
    }
    expect("on");
    expect("a");
    bool found = false;
    for (int b = 0; b < 3 && !found; ++b)
        if (peek() == bg_word(BgShade(b))) {
            scene.background = BgShade(b);
            found = true;
            ++pos;
        }
    if (!found) throw DataError("parse: expected a background shade at token " + std::to_string(pos));
    expect("background");
    if (pos != w.size()) throw DataError("parse: trailing tokens in: " + text);
    scene.validate();
    return scene;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct Raster {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<uint8_t> pixels;
    bool operator==(const Raster&) const = default;
};

constexpr int kImageHw = 32;

inline std::array<uint8_t, 3> color_rgb(ObjColor c) {
    static const std::array<uint8_t, 3> rgb[] = {
        {200, 40, 40}, {40, 170, 40}, {40, 60, 200}, {230, 210, 40}, {150, 40, 190}};
    return rgb[int(c)];
}
inline std::array<uint8_t, 3> bg_rgb(BgShade b) {
    static const std::array<uint8_t, 3> rgb[] = {{40, 40, 40}, {110, 110, 110}, {190, 190, 190}};
    return rgb[int(b)];
}
inline int size_radius(ObjSize s) {
    static const int r[] = {5, 3, 7};
    return r[int(s)];
}

// Filled shapes at fixed layout slots; the relation decides slot assignment.
inline Raster render(const Scene& scene) {
    scene.validate();
    Raster img;
    img.width = img.height = kImageHw;
    img.pixels.assign(size_t(kImageHw) * kImageHw * 3, 0);
    auto bg = bg_rgb(scene.background);
    for (int i = 0; i < kImageHw * kImageHw; ++i)
        for (int c = 0; c < 3; ++c) img.pixels[size_t(i) * 3 + c] = bg[size_t(c)];

    auto draw = [&](const SceneObject& o, int cx, int cy) {
        int r = size_radius(o.size);
        auto rgb = color_rgb(o.color);
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                bool inside = false;
                switch (o.shape) {
                    case ObjShape::circle: inside = dx * dx + dy * dy <= r * r; break;
                    case ObjShape::square: inside = true; break;
                    case ObjShape::triangle: inside = 2 * std::abs(dx) <= dy + r; break;
                }
                if (!inside) continue;
                int x = cx + dx, y = cy + dy;
                if (x < 0 || x >= kImageHw || y < 0 || y >= kImageHw) continue;
                size_t p = (size_t(y) * kImageHw + x) * 3;
                img.pixels[p] = rgb[0];
                img.pixels[p + 1] = rgb[1];
                img.pixels[p + 2] = rgb[2];
            }
        }
    };

    // Slot centers sit at unequal offsets from the patch grid (9 vs 24), so
    // exchanging two objects never yields a patch-wise translation of the
    // original raster.
    const int mid = kImageHw / 2, lo = kImageHw / 4 + 1, hi = 3 * kImageHw / 4;
    if (scene.objects.size() == 1) {
        draw(scene.objects[0], mid, mid);
    } else {
        int x0 = mid, y0 = mid, x1 = mid, y1 = mid;
        switch (scene.relation) {
            case Relation::left_of: x0 = lo, x1 = hi; break;
            case Relation::right_of: x0 = hi, x1 = lo; break;
            case Relation::above: y0 = lo, y1 = hi; break;
            case Relation::below: y0 = hi, y1 = lo; break;
            default: break;
        }
        draw(scene.objects[0], x0, y0);
        draw(scene.objects[1], x1, y1);
    }
    return img;
}

// Slot center of object `index`, for pixel-level checks.
inline std::pair<int, int> object_slot(const Scene& scene, int index) {
    const int mid = kImageHw / 2, lo = kImageHw / 4 + 1, hi = 3 * kImageHw / 4;
    if (scene.objects.size() == 1) return {mid, mid};
    bool first = index == 0;
    switch (scene.relation) {
        case Relation::left_of: return {first ? lo : hi, mid};
        case Relation::right_of: return {first ? hi : lo, mid};
        case Relation::above: return {mid, first ? lo : hi};
        case Relation::below: return {mid, first ? hi : lo};
        default: return {mid, mid};
    }
}

// ---------------------------------------------------------------------------
// Sampling and perturbation
// ---------------------------------------------------------------------------

inline SceneObject sample_object(Rng& rng) {
    SceneObject o;
    o.shape = ObjShape(rng.uniform_int(kNumShapes));
    o.color = ObjColor(rng.uniform_int(kNumColors));
    o.size = ObjSize(rng.uniform_int(3));
    return o;
}

inline Scene sample_scene(Rng& rng) {
    Scene s;
    s.background = BgShade(rng.uniform_int(3));
    int n = 1 + int(rng.uniform_int(2));
    s.objects.push_back(sample_object(rng));
    if (n == 2) {
        s.relation = Relation(1 + rng.uniform_int(kNumRelations));
        SceneObject o;
        do {
            o = sample_object(rng);
        } while (o.shape == s.objects[0].shape && o.color == s.objects[0].color);
        s.objects.push_back(o);
    }
    return s;
}

enum class PerturbationKind : uint8_t {
    replace_object,
    replace_attribute,
    replace_relation,
    swap_object,
    swap_attribute,
    add_object,
    add_attribute,
};

constexpr int kNumKinds = 7;

inline const char* kind_id(PerturbationKind k) {
    static const char* ids[] = {"replace_object", "replace_attribute", "replace_relation", "swap_object",
                                "swap_attribute", "add_object",        "add_attribute"};
    return ids[int(k)];
}
inline PerturbationKind kind_from_id(const std::string& s) {
    for (int k = 0; k < kNumKinds; ++k)
        if (s == kind_id(PerturbationKind(k))) return PerturbationKind(k);
    throw DataError("unknown perturbation kind: " + s);
}

inline bool kind_applicable(const Scene& s, PerturbationKind k) {
    bool two = s.objects.size() == 2;
    switch (k) {
        case PerturbationKind::replace_object:
        case PerturbationKind::replace_attribute: return true;
        case PerturbationKind::replace_relation:
        case PerturbationKind::swap_object: return two;
        case PerturbationKind::swap_attribute:
            return two && (s.objects[0].color != s.objects[1].color || s.objects[0].size != s.objects[1].size);
        case PerturbationKind::add_object: return !two;
        case PerturbationKind::add_attribute: return !two && s.objects[0].size == ObjSize::unsized;
    }
    return false;
}

// Minimal rewrite of the stated kind. Deterministic given the rng stream.
inline Scene perturb(const Scene& scene, PerturbationKind kind, Rng& rng) {
    scene.validate();
    if (!kind_applicable(scene, kind))
        throw DataError(std::string("perturb: kind ") + kind_id(kind) +
                        " not applicable to this scene; resample the kind");
    Scene out = scene;
    bool two = scene.objects.size() == 2;
    switch (kind) {
        case PerturbationKind::replace_object: {
            size_t idx = two ? rng.uniform_int(2) : 0;
            SceneObject& target = out.objects[idx];
            const SceneObject* other = two ? &out.objects[1 - idx] : nullptr;
            std::vector<ObjShape> options;
            for (int s = 0; s < kNumShapes; ++s) {
                ObjShape cand = ObjShape(s);
                if (cand == target.shape) continue;
                if (other && cand == other->shape && target.color == other->color) continue;
                options.push_back(cand);
            }
            target.shape = options[rng.uniform_int(options.size())];
            break;
        }
        case PerturbationKind::replace_attribute: {
            // slots: (object, color) always; (object, size) when size present
            struct Slot {
                size_t obj;
                bool is_color;
            };
            std::vector<Slot> slots;
            for (size_t i = 0; i < out.objects.size(); ++i) {
                slots.push_back({i, true});
                if (out.objects[i].size != ObjSize::unsized) slots.push_back({i, false});
            }
            Slot pick = slots[rng.uniform_int(slots.size())];
            SceneObject& target = out.objects[pick.obj];
            if (pick.is_color) {
                const SceneObject* other = two ? &out.objects[1 - pick.obj] : nullptr;
                std::vector<ObjColor> options;
                for (int c = 0; c < kNumColors; ++c) {
                    ObjColor cand = ObjColor(c);
                    if (cand == target.color) continue;
                    if (other && cand == other->color && target.shape == other->shape) continue;
                    options.push_back(cand);
                }
                target.color = options[rng.uniform_int(options.size())];
            } else {
                target.size = target.size == ObjSize::small ? ObjSize::large : ObjSize::small;
            }
            break;
        }
        case PerturbationKind::replace_relation: {
            std::vector<Relation> options;
            for (int r = 1; r <= kNumRelations; ++r)
                if (Relation(r) != scene.relation) options.push_back(Relation(r));
            out.relation = options[rng.uniform_int(options.size())];
            break;
        }
        case PerturbationKind::swap_object: {
            std::swap(out.objects[0], out.objects[1]);
            break;
        }
        case PerturbationKind::swap_attribute: {
            bool colors_differ = scene.objects[0].color != scene.objects[1].color;
            bool sizes_differ = scene.objects[0].size != scene.objects[1].size;
            bool pick_color = colors_differ && (!sizes_differ || rng.uniform_int(2) == 0);
            if (pick_color)
                std::swap(out.objects[0].color, out.objects[1].color);
            else
                std::swap(out.objects[0].size, out.objects[1].size);
            break;
        }
        case PerturbationKind::add_object: {
            SceneObject o;
            do {
                o = sample_object(rng);
            } while (o.shape == out.objects[0].shape && o.color == out.objects[0].color);
            out.relation = Relation(1 + rng.uniform_int(kNumRelations));
            out.objects.push_back(o);
            break;
        }
        case PerturbationKind::add_attribute: {
            out.objects[0].size = rng.uniform_int(2) == 0 ? ObjSize::small : ObjSize::large;
            break;
        }
    }
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Concept atoms (the diversity unit for coverage sweeps)
// ---------------------------------------------------------------------------

// Fixed curriculum order: prefixes always contain at least one shape and,
// from rank 2 on, at least one color, so small targets admit valid captions.
inline const std::vector<std::string>& concept_inventory() {
    static const std::vector<std::string> atoms = {
        "circle", "red",   "small",    "square", "blue",   "large",  "triangle",
        "green",  "left_of", "yellow", "right_of", "purple", "above", "below"};
    return atoms;
}

inline std::vector<std::string> atoms_of(const Scene& scene) {
    std::vector<std::string> out;
    auto push = [&](const std::string& a) {
        for (const auto& x : out)
            if (x == a) return;
        out.push_back(a);
    };
    for (const auto& o : scene.objects) {
        push(shape_word(o.shape));
        push(color_word(o.color));
        if (o.size != ObjSize::unsized) push(size_word(o.size));
    }
    if (scene.relation != Relation::none) push(relation_id(scene.relation));
    return out;
}

}  // namespace tclp
