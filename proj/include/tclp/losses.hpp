#pragma once

#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tclp/error.hpp"
#include "tclp/graph.hpp"

namespace tclp {

enum class Objective { clip, negclip, negimage, tripletclip };

inline const char* objective_id(Objective o) {
    static const char* ids[] = {"clip", "negclip", "negimage", "tripletclip"};
    return ids[int(o)];
}
inline Objective objective_from_id(const std::string& s) {
    if (s == "clip") return Objective::clip;
    if (s == "negclip") return Objective::negclip;
    if (s == "negimage") return Objective::negimage;
    if (s == "tripletclip") return Objective::tripletclip;
    throw ConfigError("unknown objective: " + s);
}

inline bool objective_needs_txt_neg(Objective o) {
    return o == Objective::negclip || o == Objective::tripletclip;
}
inline bool objective_needs_img_neg(Objective o) {
    return o == Objective::negimage || o == Objective::tripletclip;
}

// ---------------------------------------------------------------------------
// Graph-level losses. All blocks are [N, d] rows of unit vectors; inv_tau is
// a [1] node holding 1/tau.
// ---------------------------------------------------------------------------

// One InfoNCE direction: each anchor row classifies its index among the
// candidate rows under softmax over cosine/tau.
template <typename T>
typename GraphT<T>::NodeId infonce_dir(GraphT<T>& g, typename GraphT<T>::NodeId anchor,
                                       typename GraphT<T>::NodeId candidates,
                                       typename GraphT<T>::NodeId inv_tau) {
    const auto& ta = g.val(anchor);
    const auto& tc = g.val(candidates);
    if (ta.rank() != 2 || tc.rank() != 2 || ta.shape != tc.shape)
        throw ShapeError("infonce_dir: anchor " + shape_str(ta.shape) + " vs candidates " +
                         shape_str(tc.shape));
    int n = ta.shape[0];
    auto logits = g.scale_by(g.matmul(anchor, g.transpose(candidates)), inv_tau);
    std::vector<int> targets(static_cast<size_t>(n));
    std::iota(targets.begin(), targets.end(), 0);
    return g.softmax_xent(logits, targets);
}

// Hard-negative direction: anchors contrast against all positive candidates
// plus the whole block of hard negatives; targets stay on the diagonal.
template <typename T>
typename GraphT<T>::NodeId negcl_dir(GraphT<T>& g, typename GraphT<T>::NodeId anchor,
                                     typename GraphT<T>::NodeId cand_pos,
                                     typename GraphT<T>::NodeId cand_neg,
                                     typename GraphT<T>::NodeId inv_tau) {
    const auto& ta = g.val(anchor);
    const auto& tp = g.val(cand_pos);
    const auto& tn = g.val(cand_neg);
    if (ta.rank() != 2 || tp.rank() != 2 || ta.shape != tp.shape)
        throw ShapeError("negcl_dir: anchor " + shape_str(ta.shape) + " vs positives " + shape_str(tp.shape));
    if (tn.rank() != 2 || tn.shape[1] != ta.shape[1])
        throw ShapeError("negcl_dir: negatives " + shape_str(tn.shape) + " vs anchor " + shape_str(ta.shape));
    int n = ta.shape[0];
    auto cands = g.concat_rows(cand_pos, cand_neg);
    auto logits = g.scale_by(g.matmul(anchor, g.transpose(cands)), inv_tau);
    std::vector<int> targets(static_cast<size_t>(n));
    std::iota(targets.begin(), targets.end(), 0);
    return g.softmax_xent(logits, targets);
}

// L = infonce(img -> txt) + infonce(txt -> img)
template <typename T>
typename GraphT<T>::NodeId clip_loss(GraphT<T>& g, typename GraphT<T>::NodeId img,
                                     typename GraphT<T>::NodeId txt, typename GraphT<T>::NodeId inv_tau) {
    return g.add(infonce_dir(g, img, txt, inv_tau), infonce_dir(g, txt, img, inv_tau));
}

// L = infonce(txt_pos -> img) + negcl(img -> txt_pos | txt_neg). The text
// side is asymmetric by construction: text anchors see only positive images.
template <typename T>
typename GraphT<T>::NodeId negclip_loss(GraphT<T>& g, typename GraphT<T>::NodeId img,
                                        typename GraphT<T>::NodeId txt_pos,
                                        typename GraphT<T>::NodeId txt_neg,
                                        typename GraphT<T>::NodeId inv_tau) {
    return g.add(infonce_dir(g, txt_pos, img, inv_tau), negcl_dir(g, img, txt_pos, txt_neg, inv_tau));
}

// L = negclip(img_pos, txt_pos, txt_neg) + negclip(img_neg, txt_neg, txt_pos):
// positives and negatives swap roles in the second term.
template <typename T>
typename GraphT<T>::NodeId tripletclip_loss(GraphT<T>& g, typename GraphT<T>::NodeId img_pos,
                                            typename GraphT<T>::NodeId txt_pos,
                                            typename GraphT<T>::NodeId img_neg,
                                            typename GraphT<T>::NodeId txt_neg,
                                            typename GraphT<T>::NodeId inv_tau) {
    return g.add(negclip_loss(g, img_pos, txt_pos, txt_neg, inv_tau),
                 negclip_loss(g, img_neg, txt_neg, txt_pos, inv_tau));
}

// negclip with modality roles swapped: text anchors contrast against
// positive and hard-negative images.
template <typename T>
typename GraphT<T>::NodeId negimage_loss(GraphT<T>& g, typename GraphT<T>::NodeId img_pos,
                                         typename GraphT<T>::NodeId txt_pos,
                                         typename GraphT<T>::NodeId img_neg,
                                         typename GraphT<T>::NodeId inv_tau) {
    return g.add(infonce_dir(g, img_pos, txt_pos, inv_tau), negcl_dir(g, txt_pos, img_pos, img_neg, inv_tau));
}

// ---------------------------------------------------------------------------
// Value-level API over embedding blocks
// ---------------------------------------------------------------------------

template <typename T>
struct LossBatchT {
    TensorT<T> img_pos, txt_pos;
    std::optional<TensorT<T>> img_neg, txt_neg;
    T tau = T(0.07);

    int n() const { return img_pos.shape.empty() ? 0 : img_pos.shape[0]; }

    void validate_for(Objective obj) const {
        if (img_pos.rank() != 2 || txt_pos.rank() != 2 || img_pos.shape != txt_pos.shape)
            throw ShapeError("loss batch: img_pos " + shape_str(img_pos.shape) + " vs txt_pos " +
                             shape_str(txt_pos.shape));
        if (objective_needs_txt_neg(obj) && !txt_neg)
            throw ConfigError(std::string(objective_id(obj)) + " requires the txt_neg block");
        if (objective_needs_img_neg(obj) && !img_neg)
            throw ConfigError(std::string(objective_id(obj)) + " requires the img_neg block");
        if (txt_neg && txt_neg->shape != txt_pos.shape)
            throw ShapeError("loss batch: txt_neg " + shape_str(txt_neg->shape) + " vs txt_pos " +
                             shape_str(txt_pos.shape));
        if (img_neg && img_neg->shape != img_pos.shape)
            throw ShapeError("loss batch: img_neg " + shape_str(img_neg->shape) + " vs img_pos " +
                             shape_str(img_pos.shape));
        if (!(tau > T(0))) throw ConfigError("loss batch: tau must be positive");
    }
};

template <typename T>
T compute_loss(Objective obj, const LossBatchT<T>& batch) {
    batch.validate_for(obj);
    GraphT<T> g;
    auto inv_tau = g.input(TensorT<T>::scalar(T(1) / batch.tau));
    auto img = g.input(batch.img_pos);
    auto txt = g.input(batch.txt_pos);
    typename GraphT<T>::NodeId loss{};
    switch (obj) {
        case Objective::clip: loss = clip_loss(g, img, txt, inv_tau); break;
        case Objective::negclip:
            loss = negclip_loss(g, img, txt, g.input(*batch.txt_neg), inv_tau);
            break;
        case Objective::negimage:
            loss = negimage_loss(g, img, txt, g.input(*batch.img_neg), inv_tau);
            break;
        case Objective::tripletclip:
            loss = tripletclip_loss(g, img, txt, g.input(*batch.img_neg), g.input(*batch.txt_neg), inv_tau);
            break;
    }
    return g.val(loss).data[0];
}

}  // namespace tclp
