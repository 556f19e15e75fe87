#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tclp/error.hpp"
#include "tclp/graph.hpp"
#include "tclp/rng.hpp"
#include "tclp/toyworld.hpp"

namespace tclp {

// Architecture of both towers plus the temperature convention. The clamp
// bounds on 1/tau and the 0.07 init live here so checkpoints record them.
struct EncoderConfig {
    int d_model = 64;
    int d_embed = 32;
    int n_blocks = 2;
    int n_heads = 4;
    int patch_size = 8;
    int vocab_size = 22;
    int max_seq_len = 16;
    int image_hw = 32;
    int channels = 3;
    int mlp_ratio = 4;
    std::string tower_kind = "transformer";  // transformer | mlp
    double init_std = 0.02;
    // Positional tables can use a larger scale than init_std: token/patch
    // multisets of order-swapped inputs are identical, so with mean pooling
    // the position signal is the only thing separating them at init.
    double pos_init_std = 0.02;
    double tau_init = 0.07;
    double inv_tau_min = 1.0;
    double inv_tau_max = 100.0;

    int n_patches() const { return (image_hw / patch_size) * (image_hw / patch_size); }
    int patch_dim() const { return patch_size * patch_size * channels; }

    void validate() const {
        if (patch_size <= 0 || image_hw % patch_size != 0)
            throw ConfigError("encoder config: image_hw " + std::to_string(image_hw) +
                              " not divisible by patch_size " + std::to_string(patch_size));
        if (d_model <= 0 || d_embed <= 0 || n_blocks < 1 || channels != 3)
            throw ConfigError("encoder config: bad dimensions");
        if (n_heads <= 0 || d_model % n_heads != 0)
            throw ConfigError("encoder config: d_model " + std::to_string(d_model) +
                              " not divisible by n_heads " + std::to_string(n_heads));
        if (vocab_size < tclp::vocab_size())
            throw ConfigError("encoder config: vocab_size " + std::to_string(vocab_size) +
                              " smaller than the toy vocabulary (" + std::to_string(tclp::vocab_size()) + ")");
        if (max_seq_len < 1 || mlp_ratio < 1) throw ConfigError("encoder config: bad sequence/mlp fields");
        if (tower_kind != "transformer" && tower_kind != "mlp")
            throw ConfigError("encoder config: unknown tower_kind " + tower_kind);
        if (init_std <= 0 || pos_init_std <= 0) throw ConfigError("encoder config: bad init fields");
        if (tau_init <= 0 || inv_tau_min < 1e-6 || inv_tau_max < inv_tau_min)
            throw ConfigError("encoder config: bad temperature fields");
    }

    nlohmann::json to_json() const {
        return {{"d_model", d_model},       {"d_embed", d_embed},
                {"n_blocks", n_blocks},     {"n_heads", n_heads},
                {"patch_size", patch_size}, {"vocab_size", vocab_size},
                {"max_seq_len", max_seq_len}, {"image_hw", image_hw},
                {"channels", channels},     {"mlp_ratio", mlp_ratio},
                {"tower_kind", tower_kind}, {"init_std", init_std},
                {"pos_init_std", pos_init_std}, {"tau_init", tau_init},
                {"inv_tau_min", inv_tau_min}, {"inv_tau_max", inv_tau_max}};
    }

    static EncoderConfig from_json(const nlohmann::json& j) {
        EncoderConfig c;
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            if (k == "d_model") c.d_model = it.value().get<int>();
            else if (k == "d_embed") c.d_embed = it.value().get<int>();
            else if (k == "n_blocks") c.n_blocks = it.value().get<int>();
            else if (k == "n_heads") c.n_heads = it.value().get<int>();
            else if (k == "patch_size") c.patch_size = it.value().get<int>();
            else if (k == "vocab_size") c.vocab_size = it.value().get<int>();
            else if (k == "max_seq_len") c.max_seq_len = it.value().get<int>();
            else if (k == "image_hw") c.image_hw = it.value().get<int>();
            else if (k == "channels") c.channels = it.value().get<int>();
            else if (k == "mlp_ratio") c.mlp_ratio = it.value().get<int>();
            else if (k == "tower_kind") c.tower_kind = it.value().get<std::string>();
            else if (k == "init_std") c.init_std = it.value().get<double>();
            else if (k == "pos_init_std") c.pos_init_std = it.value().get<double>();
            else if (k == "tau_init") c.tau_init = it.value().get<double>();
            else if (k == "inv_tau_min") c.inv_tau_min = it.value().get<double>();
            else if (k == "inv_tau_max") c.inv_tau_max = it.value().get<double>();
            else throw ConfigError("encoder config: unknown key '" + k + "'");
        }
        c.validate();
        return c;
    }
};

enum class Tower { image, text };

// Image and text encoders with projection heads and the trainable
// temperature, all stored as named tensors. Names sort lexicographically,
// which fixes the checkpoint layout and init order.
template <typename T>
class DualEncoderT {
public:
    using NodeId = typename GraphT<T>::NodeId;

    explicit DualEncoderT(EncoderConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        build_params();
    }

    const EncoderConfig& config() const { return cfg_; }

    std::map<std::string, TensorT<T>>& params() { return params_; }
    const std::map<std::string, TensorT<T>>& params() const { return params_; }

    TensorT<T>& param(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("model: no parameter named " + name);
        return it->second;
    }

    // Trainable (non-frozen) parameters, name order.
    std::vector<std::pair<std::string, TensorT<T>*>> trainable() {
        std::vector<std::pair<std::string, TensorT<T>*>> out;
        for (auto& [name, tensor] : params_)
            if (tensor.requires_grad) out.emplace_back(name, &tensor);
        return out;
    }

    void zero_grads() {
        for (auto& [name, tensor] : params_) tensor.zero_grad();
    }

    // Truncated-normal weights and embeddings, zero biases, unit gains.
    // Positional tables take pos_init_std; everything else init_std.
    void init_params(uint64_t seed) {
        Rng rng(seed);
        for (auto& [name, tensor] : params_) {
            if (name == "logit_scale") {
                tensor.data[0] = T(std::log(1.0 / cfg_.tau_init));
            } else if (ends_with(name, ".g")) {
                std::fill(tensor.data.begin(), tensor.data.end(), T(1));
            } else if (ends_with(name, ".b") || ends_with(name, ".b1") || ends_with(name, ".b2") ||
                       ends_with(name, ".bq") || ends_with(name, ".bk") || ends_with(name, ".bv") ||
                       ends_with(name, ".bo")) {
                std::fill(tensor.data.begin(), tensor.data.end(), T(0));
            } else {
                double std = ends_with(name, ".pos") ? cfg_.pos_init_std : cfg_.init_std;
                for (auto& v : tensor.data) v = T(rng.trunc_normal(std));
            }
        }
    }

    void set_frozen(Tower tower, bool frozen) {
        const std::string prefix = tower == Tower::image ? "img." : "txt.";
        for (auto& [name, tensor] : params_)
            if (name.rfind(prefix, 0) == 0) tensor.requires_grad = !frozen;
        (tower == Tower::image ? frozen_image_ : frozen_text_) = frozen;
    }
    bool frozen(Tower tower) const { return tower == Tower::image ? frozen_image_ : frozen_text_; }

    // tau sits in its own group: trainable even with both towers frozen,
    // unless explicitly frozen here.
    void set_temperature_frozen(bool frozen) { param("logit_scale").requires_grad = !frozen; }

    void clamp_logit_scale() {
        T lo = T(std::log(cfg_.inv_tau_min)), hi = T(std::log(cfg_.inv_tau_max));
        T& v = param("logit_scale").data[0];
        v = std::min(hi, std::max(lo, v));
    }

    T inv_tau() const { return std::exp(params_.at("logit_scale").data[0]); }
    T tau() const { return T(1) / inv_tau(); }

    // ---- graph builders ----

    // exp(log(1/tau)) as a node; multiplies cosine logits.
    NodeId inv_tau_node(GraphT<T>& g) { return g.exp_(g.param(param("logit_scale"))); }

    NodeId encode_image(GraphT<T>& g, const std::vector<const Raster*>& batch) {
        if (batch.empty()) throw ShapeError("encode_image: empty batch");
        int np = cfg_.n_patches(), pd = cfg_.patch_dim();
        int n = int(batch.size());
        TensorT<T> patches = TensorT<T>::zeros({n * np, pd});
        int per_side = cfg_.image_hw / cfg_.patch_size;
        for (int b = 0; b < n; ++b) {
            const Raster& img = *batch[size_t(b)];
            if (img.width != cfg_.image_hw || img.height != cfg_.image_hw || img.channels != 3)
                throw ShapeError("encode_image: raster " + std::to_string(img.width) + "x" +
                                 std::to_string(img.height) + " does not match configured " +
                                 std::to_string(cfg_.image_hw) + "x" + std::to_string(cfg_.image_hw));
            for (int p = 0; p < np; ++p) {
                int py = (p / per_side) * cfg_.patch_size, px = (p % per_side) * cfg_.patch_size;
                T* dst = patches.data.data() + (int64_t(b) * np + p) * pd;
                int c = 0;
                for (int y = 0; y < cfg_.patch_size; ++y)
                    for (int x = 0; x < cfg_.patch_size; ++x)
                        for (int ch = 0; ch < 3; ++ch)
                            dst[c++] =
                                T(img.pixels[(size_t(py + y) * cfg_.image_hw + size_t(px + x)) * 3 +
                                             size_t(ch)]) /
                                    T(127.5) -
                                T(1);
            }
        }
        auto x = g.add(g.matmul(g.input(std::move(patches)), g.param(param("img.patch_embed.w"))),
                       g.param(param("img.patch_embed.b")));
        std::vector<int> pos_ids(size_t(n) * np);
        for (int b = 0; b < n; ++b)
            for (int p = 0; p < np; ++p) pos_ids[size_t(b) * np + size_t(p)] = p;
        x = g.add(x, g.gather_rows(g.param(param("img.pos")), pos_ids));
        std::vector<int> lengths(size_t(n), np);
        x = tower_forward(g, x, "img.", lengths, n, np);
        x = g.masked_mean_rows(x, lengths, n, np);
        x = g.add(g.matmul(x, g.param(param("img.proj.w"))), g.param(param("img.proj.b")));
        return g.l2_normalize_rows(x);
    }

    // Token sequences may carry trailing pad ids; valid length is the prefix
    // before the first pad, and nothing outside it affects the output.
    NodeId encode_text(GraphT<T>& g, const std::vector<std::vector<int>>& batch) {
        if (batch.empty()) throw ShapeError("encode_text: empty batch");
        int n = int(batch.size());
        std::vector<int> lengths(size_t(n), 0);
        int width = 1;
        for (int b = 0; b < n; ++b) {
            const auto& seq = batch[size_t(b)];
            if (int(seq.size()) > cfg_.max_seq_len)
                throw ShapeError("encode_text: sequence length " + std::to_string(seq.size()) +
                                 " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
            int len = 0;
            for (size_t i = 0; i < seq.size(); ++i) {
                int id = seq[i];
                if (id < 0 || id >= cfg_.vocab_size)
                    throw ShapeError("encode_text: token id " + std::to_string(id) +
                                     " outside vocabulary of size " + std::to_string(cfg_.vocab_size));
                if (id == kPadToken) {
                    for (size_t k = i; k < seq.size(); ++k)
                        if (seq[k] != kPadToken)
                            throw ShapeError("encode_text: pad id inside a sequence (only trailing pads)");
                    break;
                }
                ++len;
            }
            if (len == 0) throw ShapeError("encode_text: empty (all-pad) sequence");
            lengths[size_t(b)] = len;
            width = std::max(width, len);
        }
        std::vector<int> tok_ids(size_t(n) * width, kPadToken);
        std::vector<int> pos_ids(size_t(n) * width, 0);
        for (int b = 0; b < n; ++b)
            for (int i = 0; i < width; ++i) {
                if (i < lengths[size_t(b)]) tok_ids[size_t(b) * width + size_t(i)] = batch[size_t(b)][size_t(i)];
                pos_ids[size_t(b) * width + size_t(i)] = i;
            }
        auto x = g.add(g.gather_rows(g.param(param("txt.tok")), tok_ids),
                       g.gather_rows(g.param(param("txt.pos")), pos_ids));
        x = tower_forward(g, x, "txt.", lengths, n, width);
        x = g.masked_mean_rows(x, lengths, n, width);
        x = g.add(g.matmul(x, g.param(param("txt.proj.w"))), g.param(param("txt.proj.b")));
        return g.l2_normalize_rows(x);
    }

private:
    EncoderConfig cfg_;
    std::map<std::string, TensorT<T>> params_;
    bool frozen_image_ = false, frozen_text_ = false;

    static bool ends_with(const std::string& s, const std::string& suffix) {
        return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
    }

    void add_param(const std::string& name, std::vector<int> shape) {
        TensorT<T> t = TensorT<T>::zeros(std::move(shape));
        t.requires_grad = true;
        params_.emplace(name, std::move(t));
    }

    void build_params() {
        int d = cfg_.d_model, h = cfg_.d_model * cfg_.mlp_ratio;
        bool attn = cfg_.tower_kind == "transformer";
        for (const std::string prefix : {std::string("img."), std::string("txt.")}) {
            for (int i = 0; i < cfg_.n_blocks; ++i) {
                std::string blk = prefix + "blk" + std::to_string(i) + ".";
                add_param(blk + "ln1.g", {d});
                add_param(blk + "ln1.b", {d});
                if (attn) {
                    add_param(blk + "attn.wq", {d, d});
                    add_param(blk + "attn.bq", {d});
                    add_param(blk + "attn.wk", {d, d});
                    add_param(blk + "attn.bk", {d});
                    add_param(blk + "attn.wv", {d, d});
                    add_param(blk + "attn.bv", {d});
                    add_param(blk + "attn.wo", {d, d});
                    add_param(blk + "attn.bo", {d});
                    add_param(blk + "ln2.g", {d});
                    add_param(blk + "ln2.b", {d});
                }
                add_param(blk + "mlp.w1", {d, h});
                add_param(blk + "mlp.b1", {h});
                add_param(blk + "mlp.w2", {h, d});
                add_param(blk + "mlp.b2", {d});
            }
            add_param(prefix + "proj.w", {d, cfg_.d_embed});
            add_param(prefix + "proj.b", {cfg_.d_embed});
        }
        add_param("img.patch_embed.w", {cfg_.patch_dim(), d});
        add_param("img.patch_embed.b", {d});
        add_param("img.pos", {cfg_.n_patches(), d});
        add_param("txt.tok", {cfg_.vocab_size, d});
        add_param("txt.pos", {cfg_.max_seq_len, d});
        add_param("logit_scale", {1});
    }

    NodeId tower_forward(GraphT<T>& g, NodeId x, const std::string& prefix, const std::vector<int>& lengths,
                         int batch, int seq) {
        bool attn = cfg_.tower_kind == "transformer";
        for (int i = 0; i < cfg_.n_blocks; ++i) {
            std::string blk = prefix + "blk" + std::to_string(i) + ".";
            auto normed = g.layer_norm_rows(x, g.param(param(blk + "ln1.g")), g.param(param(blk + "ln1.b")));
            if (attn) {
                auto q = g.add(g.matmul(normed, g.param(param(blk + "attn.wq"))),
                               g.param(param(blk + "attn.bq")));
                auto k = g.add(g.matmul(normed, g.param(param(blk + "attn.wk"))),
                               g.param(param(blk + "attn.bk")));
                auto v = g.add(g.matmul(normed, g.param(param(blk + "attn.wv"))),
                               g.param(param(blk + "attn.bv")));
                auto a = g.attention(q, k, v, lengths, batch, seq, cfg_.n_heads);
                x = g.add(x, g.add(g.matmul(a, g.param(param(blk + "attn.wo"))),
                                   g.param(param(blk + "attn.bo"))));
                normed = g.layer_norm_rows(x, g.param(param(blk + "ln2.g")), g.param(param(blk + "ln2.b")));
            }
            auto hidden = g.relu(
                g.add(g.matmul(normed, g.param(param(blk + "mlp.w1"))), g.param(param(blk + "mlp.b1"))));
            auto m =
                g.add(g.matmul(hidden, g.param(param(blk + "mlp.w2"))), g.param(param(blk + "mlp.b2")));
            x = g.add(x, m);
        }
        return x;
    }
};

using DualEncoder = DualEncoderT<float>;

// logits[i][j] = dot(img_i, txt_j) / tau. Rows are unit vectors, so the dot
// is the cosine. Transposing arguments transposes the result exactly: each
// entry is the same multiply-add sequence either way.
template <typename T>
TensorT<T> similarity_matrix(const TensorT<T>& img, const TensorT<T>& txt, T tau) {
    if (img.rank() != 2 || txt.rank() != 2 || img.shape[1] != txt.shape[1])
        throw ShapeError("similarity_matrix: embedding dims differ: " + shape_str(img.shape) + " vs " +
                         shape_str(txt.shape));
    if (!(tau > T(0))) throw ShapeError("similarity_matrix: tau must be positive");
    int n = img.shape[0], m = txt.shape[0], d = img.shape[1];
    TensorT<T> out = TensorT<T>::zeros({n, m});
    T inv = T(1) / tau;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            T acc = T(0);
            for (int c = 0; c < d; ++c) acc += img.at(i, c) * txt.at(j, c);
            out.at(i, j) = acc * inv;
        }
    return out;
}

// ---- value-level embedding extraction (forward only, chunked) ----

template <typename T>
TensorT<T> embed_images(DualEncoderT<T>& model, const std::vector<const Raster*>& images, int chunk = 256) {
    TensorT<T> out = TensorT<T>::zeros({int(images.size()), model.config().d_embed});
    for (size_t lo = 0; lo < images.size(); lo += size_t(chunk)) {
        size_t hi = std::min(images.size(), lo + size_t(chunk));
        GraphT<T> g;
        std::vector<const Raster*> slice(images.begin() + int64_t(lo), images.begin() + int64_t(hi));
        auto node = model.encode_image(g, slice);
        const auto& val = g.val(node);
        std::copy(val.data.begin(), val.data.end(), out.data.begin() + int64_t(lo) * model.config().d_embed);
    }
    return out;
}

template <typename T>
TensorT<T> embed_texts(DualEncoderT<T>& model, const std::vector<std::vector<int>>& texts, int chunk = 256) {
    TensorT<T> out = TensorT<T>::zeros({int(texts.size()), model.config().d_embed});
    for (size_t lo = 0; lo < texts.size(); lo += size_t(chunk)) {
        size_t hi = std::min(texts.size(), lo + size_t(chunk));
        GraphT<T> g;
        std::vector<std::vector<int>> slice(texts.begin() + int64_t(lo), texts.begin() + int64_t(hi));
        auto node = model.encode_text(g, slice);
        const auto& val = g.val(node);
        std::copy(val.data.begin(), val.data.end(), out.data.begin() + int64_t(lo) * model.config().d_embed);
    }
    return out;
}

}  // namespace tclp
