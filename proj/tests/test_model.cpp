#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tclp/checkpoint.hpp"
#include "tclp/dataset.hpp"
#include "tclp/model.hpp"
#include "tclp/rng.hpp"

using namespace tclp;
namespace fs = std::filesystem;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.d_model = 16;
    cfg.d_embed = 8;
    cfg.n_blocks = 2;
    cfg.n_heads = 2;
    cfg.patch_size = 16;
    cfg.mlp_ratio = 2;
    return cfg;
}

std::vector<Raster> sample_rasters(int n, uint64_t seed) {
    Rng rng(seed);
    std::vector<Raster> out;
    for (int i = 0; i < n; ++i) out.push_back(render(sample_scene(rng)));
    return out;
}

std::vector<const Raster*> ptrs(const std::vector<Raster>& v) {
    std::vector<const Raster*> out;
    for (const auto& r : v) out.push_back(&r);
    return out;
}

fs::path temp_file(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "tclp_test_model";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("config validation") {
    EncoderConfig cfg = tiny_config();
    cfg.patch_size = 7;  // 32 % 7 != 0
    CHECK_THROWS_AS(DualEncoder{cfg}, ConfigError);
    cfg = tiny_config();
    cfg.vocab_size = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.n_heads = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.tower_kind = "rnn";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    CHECK_THROWS_WITH_AS(EncoderConfig::from_json({{"d_modle", 8}}), doctest::Contains("d_modle"),
                         ConfigError);
}

TEST_CASE("encode_image: unit norms, determinism, identical inputs") {
    DualEncoder model(tiny_config());
    model.init_params(1);
    auto rasters = sample_rasters(5, 2);
    std::vector<const Raster*> batch = ptrs(rasters);
    batch.push_back(&rasters[0]);  // duplicate of row 0

    Graph g;
    auto out = g.val(model.encode_image(g, batch));
    CHECK(out.shape == std::vector<int>{6, 8});
    for (int i = 0; i < 6; ++i) {
        double ss = 0;
        for (int j = 0; j < 8; ++j) ss += double(out.at(i, j)) * out.at(i, j);
        CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-5));
    }
    for (int j = 0; j < 8; ++j) CHECK(out.at(5, j) == out.at(0, j));

    Graph g2;
    auto out2 = g2.val(model.encode_image(g2, batch));
    CHECK(out.data == out2.data);

    Raster small;
    small.width = small.height = 16;
    small.pixels.assign(16 * 16 * 3, 0);
    Graph g3;
    CHECK_THROWS_WITH_AS(model.encode_image(g3, {&small}), doctest::Contains("16"), ShapeError);
}

TEST_CASE("encode_text: masking, permutation, vocabulary checks") {
    DualEncoder model(tiny_config());
    model.init_params(3);
    auto cap1 = tokenize("a small red circle on a dark background");
    auto cap2 = tokenize("a large blue square above a green triangle on a light background");

    // identical captions produce identical rows
    Graph g0;
    auto both = g0.val(model.encode_text(g0, {cap1, cap1}));
    for (int j = 0; j < 8; ++j) CHECK(both.at(0, j) == both.at(1, j));

    // pad-extended copy encodes identically, even in a wider batch
    Graph g1;
    auto alone = g1.val(model.encode_text(g1, {cap1}));
    auto padded = cap1;
    padded.resize(cap1.size() + 4, kPadToken);
    Graph g2;
    auto mixed = g2.val(model.encode_text(g2, {padded, cap2}));
    for (int j = 0; j < 8; ++j) CHECK(alone.at(0, j) == mixed.at(0, j));

    // permuting captions permutes rows bitwise
    Graph g3;
    auto fwd = g3.val(model.encode_text(g3, {cap1, cap2}));
    Graph g4;
    auto rev = g4.val(model.encode_text(g4, {cap2, cap1}));
    for (int j = 0; j < 8; ++j) {
        CHECK(fwd.at(0, j) == rev.at(1, j));
        CHECK(fwd.at(1, j) == rev.at(0, j));
    }

    Graph g5;
    CHECK_THROWS_AS(model.encode_text(g5, {{1, 99}}), ShapeError);          // out of vocabulary
    CHECK_THROWS_AS(model.encode_text(g5, {{1, 0, 2}}), ShapeError);        // pad inside
    CHECK_THROWS_AS(model.encode_text(g5, {{0, 0}}), ShapeError);           // all pad
    std::vector<int> too_long(17, 1);
    CHECK_THROWS_AS(model.encode_text(g5, {too_long}), ShapeError);
}

TEST_CASE("zero-initialized projection flags zero-norm warnings") {
    DualEncoder model(tiny_config());  // params all zero: projection collapses
    auto rasters = sample_rasters(2, 4);
    Graph g;
    auto out = g.val(model.encode_image(g, ptrs(rasters)));
    for (float v : out.data) CHECK(v == 0.0f);
    CHECK(g.zero_norm_warnings() > 0);
}

TEST_CASE("mlp tower fallback encodes and differs in parameter set") {
    EncoderConfig cfg = tiny_config();
    cfg.tower_kind = "mlp";
    DualEncoder model(cfg);
    model.init_params(7);
    CHECK(model.params().count("img.blk0.attn.wq") == 0);
    CHECK(model.params().count("img.blk0.mlp.w1") == 1);
    auto rasters = sample_rasters(2, 8);
    Graph g;
    auto out = g.val(model.encode_image(g, ptrs(rasters)));
    CHECK(out.shape == std::vector<int>{2, 8});
    double ss = 0;
    for (int j = 0; j < 8; ++j) ss += double(out.at(0, j)) * out.at(0, j);
    CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("similarity matrix: cosine scaling and exact transpose symmetry") {
    TensorT<float> a({2, 2}, {1, 0, 0, 1});
    auto diag = similarity_matrix(a, a, 1.0f);
    CHECK(diag.at(0, 0) == 1.0f);
    CHECK(diag.at(1, 1) == 1.0f);
    CHECK(diag.at(0, 1) == 0.0f);

    TensorT<float> b({1, 2}, {1.0f, 0.0f});
    TensorT<float> c({1, 2}, {0.5f, float(std::sqrt(0.75))});
    auto scaled = similarity_matrix(b, c, 0.07f);
    CHECK(scaled.at(0, 0) == doctest::Approx(7.142857).epsilon(1e-5));

    Rng rng(5);
    TensorT<float> x = TensorT<float>::zeros({4, 6}), y = TensorT<float>::zeros({3, 6});
    for (auto& v : x.data) v = float(rng.uniform() - 0.5);
    for (auto& v : y.data) v = float(rng.uniform() - 0.5);
    auto xy = similarity_matrix(x, y, 0.3f);
    auto yx = similarity_matrix(y, x, 0.3f);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) CHECK(xy.at(i, j) == yx.at(j, i));

    TensorT<float> bad({2, 3}, {0, 0, 0, 0, 0, 0});
    CHECK_THROWS_AS(similarity_matrix(x, bad, 1.0f), ShapeError);
}

TEST_CASE("temperature: init, trainability grouping, clamping") {
    DualEncoder model(tiny_config());
    model.init_params(11);
    CHECK(model.tau() == doctest::Approx(0.07).epsilon(1e-6));

    model.set_frozen(Tower::image, true);
    model.set_frozen(Tower::text, true);
    auto trainable = model.trainable();
    REQUIRE(trainable.size() == 1);
    CHECK(trainable[0].first == "logit_scale");

    model.set_temperature_frozen(true);
    CHECK(model.trainable().empty());
    model.set_temperature_frozen(false);
    model.set_frozen(Tower::image, false);
    model.set_frozen(Tower::text, false);
    CHECK(model.trainable().size() == model.params().size());

    model.param("logit_scale").data[0] = 10.0f;
    model.clamp_logit_scale();
    CHECK(model.inv_tau() == doctest::Approx(100.0).epsilon(1e-5));
    model.param("logit_scale").data[0] = -3.0f;
    model.clamp_logit_scale();
    CHECK(model.inv_tau() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("freezing halts gradients for that tower only") {
    DualEncoder model(tiny_config());
    model.init_params(13);
    model.set_frozen(Tower::image, true);
    for (auto& [name, tensor] : model.params()) {
        bool is_img = name.rfind("img.", 0) == 0;
        CHECK(tensor.requires_grad == !is_img);
    }
    CHECK(model.frozen(Tower::image));
    model.set_frozen(Tower::image, false);
    CHECK(model.trainable().size() == model.params().size());
}

TEST_CASE("checkpoint round trip is bit exact") {
    DualEncoder model(tiny_config());
    model.init_params(17);
    CheckpointMeta meta{123, 45678, 17, "tripletclip"};
    auto path = temp_file("round.tclp");
    save_checkpoint(model, meta, path.string());

    auto loaded = load_checkpoint<float>(path.string());
    CHECK(loaded.meta.step == 123);
    CHECK(loaded.meta.pairs_seen == 45678);
    CHECK(loaded.meta.seed == 17);
    CHECK(loaded.meta.objective == "tripletclip");
    CHECK(loaded.model.config().d_model == 16);
    for (const auto& [name, tensor] : model.params()) {
        const auto& other = loaded.model.param(name);
        REQUIRE(other.data.size() == tensor.data.size());
        for (size_t i = 0; i < tensor.data.size(); ++i) CHECK(other.data[i] == tensor.data[i]);
    }

    // saving the loaded model reproduces the file byte for byte
    auto path2 = temp_file("round2.tclp");
    save_checkpoint(loaded.model, meta, path2.string());
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
}

TEST_CASE("checkpoint fault kinds are distinct") {
    DualEncoder model(tiny_config());
    model.init_params(19);
    auto path = temp_file("faults.tclp");
    save_checkpoint(model, CheckpointMeta{}, path.string());

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    auto write_variant = [&](const std::string& name, const std::string& content) {
        auto p = temp_file(name);
        std::ofstream out(p, std::ios::binary);
        out.write(content.data(), std::streamsize(content.size()));
        return p;
    };

    // truncated by one byte
    auto trunc = write_variant("trunc.tclp", bytes.substr(0, bytes.size() - 1));
    try {
        load_checkpoint<float>(trunc.string());
        FAIL("expected truncation fault");
    } catch (const CheckpointError& e) {
        CHECK(e.fault == CheckpointFault::truncated);
    }

    // bad magic
    std::string magic = bytes;
    magic[0] = 'X';
    auto badmagic = write_variant("magic.tclp", magic);
    try {
        load_checkpoint<float>(badmagic.string());
        FAIL("expected magic fault");
    } catch (const CheckpointError& e) {
        CHECK(e.fault == CheckpointFault::bad_magic);
    }

    // version skew
    std::string ver = bytes;
    ver[4] = 9;
    auto skew = write_variant("ver.tclp", ver);
    try {
        load_checkpoint<float>(skew.string());
        FAIL("expected version fault");
    } catch (const CheckpointError& e) {
        CHECK(e.fault == CheckpointFault::version_skew);
    }

    // tensor count mismatch
    std::string count = bytes;
    uint32_t json_len;
    std::memcpy(&json_len, bytes.data() + 8, 4);
    size_t count_off = 12 + json_len;
    uint32_t n;
    std::memcpy(&n, bytes.data() + count_off, 4);
    ++n;
    std::memcpy(count.data() + count_off, &n, 4);
    auto mism = write_variant("count.tclp", count);
    try {
        load_checkpoint<float>(mism.string());
        FAIL("expected shape fault");
    } catch (const CheckpointError& e) {
        CHECK(e.fault == CheckpointFault::shape_mismatch);
    }

    // corrupt config json
    std::string badcfg = bytes;
    badcfg[12] = '!';
    auto cfgp = write_variant("cfg.tclp", badcfg);
    try {
        load_checkpoint<float>(cfgp.string());
        FAIL("expected config fault");
    } catch (const CheckpointError& e) {
        CHECK(e.fault == CheckpointFault::bad_config);
    }

    // trailing bytes
    auto extra = write_variant("extra.tclp", bytes + "x");
    try {
        load_checkpoint<float>(extra.string());
        FAIL("expected trailing-bytes fault");
    } catch (const CheckpointError& e) {
        CHECK(e.fault == CheckpointFault::shape_mismatch);
    }
}

TEST_CASE("captions from the toy grammar fit the default config") {
    EncoderConfig cfg;
    cfg.validate();
    CHECK(cfg.vocab_size >= vocab_size());
    Rng rng(21);
    for (int i = 0; i < 200; ++i) {
        Scene s = sample_scene(rng);
        CHECK(int(caption_of(s).tokens.size()) <= cfg.max_seq_len);
    }
}
