#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dipformer/model.hpp"
#include "doctest.h"
#include "test_util.hpp"

namespace fs = std::filesystem;
using dip::ModelConfig;
using dip::PeKind;

namespace {

// Small widths keep a full 4-stage forward cheap enough for unit tests.
ModelConfig desk() {
    ModelConfig c;
    c.stage_channels = {16, 32, 48, 64};
    c.stage_heads = {1, 2, 4, 8};
    c.n_cls = 6;
    c.decoder_c = 64;
    c.decoder_m = 64;
    c.seed = 7;
    return c;
}

std::pair<dip::Tensor<float>, dip::Tensor<float>> rand_input(dip::Rng& rng, int n, int h, int w) {
    auto rgb = tutil::rand_tensor<float>(rng, {n, 3, h, w}, 0.0, 1.0);
    auto depth = tutil::rand_tensor<float>(rng, {n, 1, h, w}, 0.0, 1.0);
    return {rgb, depth};
}

fs::path scratch(const std::string& name) {
    auto d = fs::temp_directory_path() / "dipf_model_test";
    fs::create_directories(d);
    return d / name;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(bool(f));
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_bytes(const fs::path& p, const std::string& b) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("config serialization round-trips losslessly") {
    ModelConfig c = desk();
    c.pe_kind = PeKind::DepthConcat;
    c.use_lca = false;
    c.chain_stages = false;
    c.input_height = 128;
    c.input_width = 64;
    c.seed = 0xdeadbeefcafe1234ull;
    std::string s = c.serialize();
    ModelConfig back = ModelConfig::parse(s);
    CHECK(back.serialize() == s);
    CHECK(back.hash() == c.hash());
    CHECK(back.stage_channels == c.stage_channels);
    CHECK(back.seed == c.seed);
    CHECK(back.pe_kind == PeKind::DepthConcat);
    CHECK_FALSE(back.use_lca);
    CHECK_FALSE(back.chain_stages);

    // Any semantic change moves the hash.
    ModelConfig d = c;
    d.pool_size = 5;
    CHECK(d.hash() != c.hash());
}

TEST_CASE("config parse rejects malformed blocks") {
    std::string good = desk().serialize();
    CHECK_THROWS_AS(ModelConfig::parse(good + "mystery=1\n"), dip::ConfigError);
    CHECK_THROWS_AS(ModelConfig::parse(good + "n_cls=6\n"), dip::ConfigError);
    CHECK_THROWS_AS(ModelConfig::parse("n_cls=6\n"), dip::ConfigError);
    CHECK_THROWS_AS(ModelConfig::parse(good + "junk line\n"), dip::ConfigError);
    std::string bad = good;
    bad.replace(bad.find("pool_size=7"), 11, "pool_size=x");
    CHECK_THROWS_AS(ModelConfig::parse(bad), dip::ConfigError);
}

TEST_CASE("config validation") {
    CHECK_NOTHROW(desk().validate());
    ModelConfig c = desk();
    c.n_stages = 5;
    CHECK_THROWS_AS(c.validate(), dip::ConfigError);
    c = desk();
    c.n_stages = 0;
    CHECK_THROWS_AS(c.validate(), dip::ConfigError);
    c = desk();
    c.stage_heads = {1, 2, 4};
    CHECK_THROWS_AS(c.validate(), dip::ConfigError);
    c = desk();
    c.stage_heads[2] = 5;  // 48 % 5 != 0
    CHECK_THROWS_AS(c.validate(), dip::ConfigError);
    c = desk();
    c.pe_kind = PeKind::Learnable;
    CHECK_THROWS_AS(c.validate(), dip::ConfigError);  // no fixed geometry
    c.input_height = c.input_width = 64;
    CHECK_NOTHROW(c.validate());
    c.input_height = 60;
    c.input_width = 60;
    CHECK_THROWS_AS(c.validate(), dip::ConfigError);
    c = desk();
    c.input_height = 64;  // width left unset
    CHECK_THROWS_AS(c.validate(), dip::ConfigError);
    c = desk();
    c.n_cls = 1;
    CHECK_THROWS_AS(c.validate(), dip::ConfigError);
}

TEST_CASE("fnv1a64 matches the reference vectors") {
    CHECK(dip::fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(dip::fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(dip::fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("forward walks the half-per-stage shape ladder") {
    dip::Model<float> m(desk());
    dip::Rng rng(11);
    auto [rgb, depth] = rand_input(rng, 2, 64, 64);
    dip::ForwardTrace<float> tr;
    auto logits = m.forward(rgb, depth, &tr);
    CHECK(logits.shape() == dip::Shape{2, 6, 64, 64});
    REQUIRE(tr.stage_shapes.size() == 4);
    CHECK(tr.stage_shapes[0] == dip::Shape{2, 16, 32, 32});
    CHECK(tr.stage_shapes[1] == dip::Shape{2, 32, 16, 16});
    CHECK(tr.stage_shapes[2] == dip::Shape{2, 48, 8, 8});
    CHECK(tr.stage_shapes[3] == dip::Shape{2, 64, 4, 4});
    CHECK(tr.decoder_shape == dip::Shape{2, 6, 16, 16});
    for (float v : logits.value()) CHECK(std::isfinite(v));
}

TEST_CASE("forward validates its inputs") {
    dip::Model<float> m(desk());
    dip::Rng rng(3);
    auto [rgb, depth] = rand_input(rng, 1, 64, 64);
    CHECK_THROWS_AS(m.forward(tutil::rand_tensor<float>(rng, {1, 3, 60, 60}, 0, 1),
                              tutil::rand_tensor<float>(rng, {1, 1, 60, 60}, 0, 1)),
                    dip::ConfigError);
    CHECK_THROWS_AS(m.forward(rgb, dip::Tensor<float>{}), dip::ConfigError);
    CHECK_THROWS_AS(m.forward(rgb, tutil::rand_tensor<float>(rng, {1, 1, 32, 32}, 0, 1)),
                    dip::ConfigError);
    CHECK_THROWS_AS(m.forward(depth, depth), dip::ConfigError);

    ModelConfig lc = desk();
    lc.pe_kind = PeKind::Learnable;
    lc.input_height = lc.input_width = 32;
    dip::Model<float> fixed(lc);
    CHECK_THROWS_AS(fixed.forward(rgb, depth), dip::ConfigError);
}

TEST_CASE("initialization is seed-deterministic") {
    dip::Model<float> a(desk()), b(desk());
    ModelConfig other = desk();
    other.seed = 8;
    dip::Model<float> c(other);
    auto& ea = a.params().entries();
    auto& eb = b.params().entries();
    auto& ec = c.params().entries();
    REQUIRE(ea.size() == eb.size());
    REQUIRE(ea.size() == ec.size());
    bool any_diff = false;
    for (size_t i = 0; i < ea.size(); ++i) {
        CHECK(ea[i].name == eb[i].name);
        REQUIRE(ea[i].tensor.size() == eb[i].tensor.size());
        CHECK(std::memcmp(ea[i].tensor.value().data(), eb[i].tensor.value().data(),
                          ea[i].tensor.size() * sizeof(float)) == 0);
        if (std::memcmp(ea[i].tensor.value().data(), ec[i].tensor.value().data(),
                        ea[i].tensor.size() * sizeof(float)) != 0)
            any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("initialization statistics") {
    dip::Model<float> m(desk());
    double sum = 0, sq = 0;
    size_t n = 0;
    for (const auto& e : m.params().entries()) {
        bool gamma = e.name.find("gamma") != std::string::npos;
        bool beta = e.name.find("beta") != std::string::npos;
        bool bias = e.name.size() > 2 && e.name.substr(e.name.size() - 2) == ".b";
        if (gamma) {
            CHECK_FALSE(e.decay);
            for (float v : e.tensor.value()) CHECK(v == 1.0f);
        } else if (beta) {
            CHECK_FALSE(e.decay);
            for (float v : e.tensor.value()) CHECK(v == 0.0f);
        } else if (bias) {
            CHECK(e.decay);
            for (float v : e.tensor.value()) CHECK(v == 0.0f);
        } else {
            CHECK(e.decay);
            for (float v : e.tensor.value()) {
                CHECK(std::abs(v) <= 0.04f);  // hard truncation at 2 sigma
                sum += v;
                sq += double(v) * v;
                ++n;
            }
        }
    }
    REQUIRE(n > 50000);
    double mean = sum / n;
    double std = std::sqrt(sq / n - mean * mean);
    CHECK(std::abs(mean) < 1e-3);
    // Resampling at +-2 sigma shrinks the deviation to about 0.88 * 0.02.
    CHECK(std > 0.0165);
    CHECK(std < 0.019);
}

TEST_CASE("zeroed parameters collapse to class-indifferent scores") {
    dip::Model<float> m(desk());
    for (auto& e : m.params().entries())
        for (auto& v : e.tensor.value()) v = 0.0f;
    dip::Rng rng(5);
    auto [rgb, depth] = rand_input(rng, 1, 32, 32);
    auto logits = m.forward(rgb, depth);
    for (float v : logits.value()) CHECK(v == 0.0f);
}

TEST_CASE("depth pixels reach the output only when depth is wired in") {
    dip::Rng rng(9);
    auto [rgb, depth] = rand_input(rng, 1, 32, 32);
    auto depth2 = dip::Tensor<float>::from(depth.shape(), depth.value());
    depth2.value()[17 * 32 + 5] += 0.5f;

    dip::Model<float> sao(desk());
    auto a = sao.forward(rgb, depth).value();
    auto b = sao.forward(rgb, depth2).value();
    double diff = 0;
    for (size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(double(a[i]) - b[i]));
    CHECK(diff > 0);

    ModelConfig bc = desk();
    bc.pe_kind = PeKind::Implicit;
    bc.use_lca = false;
    dip::Model<float> baseline(bc);
    auto c = baseline.forward(rgb, depth).value();
    auto d = baseline.forward(rgb, depth2).value();
    CHECK(std::memcmp(c.data(), d.data(), c.size() * sizeof(float)) == 0);
    // The RGB-only arm accepts a missing depth map outright.
    auto e = baseline.forward(rgb, dip::Tensor<float>{}).value();
    CHECK(std::memcmp(c.data(), e.data(), c.size() * sizeof(float)) == 0);
}

TEST_CASE("every embedding kind produces the same output contract") {
    dip::Rng rng(21);
    auto [rgb, depth] = rand_input(rng, 1, 32, 32);
    for (PeKind k : {PeKind::SinCos, PeKind::Learnable, PeKind::Implicit, PeKind::DepthAdd,
                     PeKind::DepthConcat, PeKind::DepthSao}) {
        CAPTURE(dip::pe_kind_name(k));
        ModelConfig c = desk();
        c.pe_kind = k;
        if (k == PeKind::Learnable) c.input_height = c.input_width = 32;
        dip::Model<float> m(c);
        auto logits = m.forward(rgb, depth);
        CHECK(logits.shape() == dip::Shape{1, 6, 32, 32});
        for (float v : logits.value()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("parameter budget grows with each depth component") {
    ModelConfig base = desk();
    base.pe_kind = PeKind::Implicit;
    base.use_lca = false;
    ModelConfig sao = desk();
    sao.use_lca = false;
    ModelConfig full = desk();
    size_t n_base = dip::Model<float>(base).param_count();
    size_t n_sao = dip::Model<float>(sao).param_count();
    size_t n_full = dip::Model<float>(full).param_count();
    CHECK(n_base < n_sao);
    CHECK(n_sao < n_full);
}

TEST_CASE("kv token gauge reports the per-stage pool clamp") {
    auto& oc = dip::OpCounter::instance();
    oc.reset();
    dip::Model<float> m(desk());
    dip::Rng rng(2);
    auto [rgb, depth] = rand_input(rng, 1, 64, 64);
    (void)m.forward(rgb, depth);
    // Stages sit at 32,16,8,4: P=7 fits the first three, the last clamps to 4.
    CHECK(oc.gauge("model/stage1/lca/kv_tokens") == 49);
    CHECK(oc.gauge("model/stage2/lca/kv_tokens") == 49);
    CHECK(oc.gauge("model/stage3/lca/kv_tokens") == 49);
    CHECK(oc.gauge("model/stage4/lca/kv_tokens") == 16);
    CHECK(oc.macs_under("model/stage1/lca/scores") > 0);
    CHECK(oc.macs_under("model/decoder") > 0);
    oc.reset();
}

TEST_CASE("recompute mode keeps the shape contract") {
    ModelConfig rc = desk();
    rc.chain_stages = false;
    dip::Model<float> chained(desk()), recomputed(rc);
    dip::Rng rng(13);
    auto [rgb, depth] = rand_input(rng, 1, 32, 32);
    dip::ForwardTrace<float> ta, tb;
    auto a = chained.forward(rgb, depth, &ta);
    auto b = recomputed.forward(rgb, depth, &tb);
    CHECK(ta.stage_shapes == tb.stage_shapes);
    CHECK(a.shape() == b.shape());
    // Different wiring, different function.
    CHECK(std::memcmp(a.value().data(), b.value().data(), a.size() * sizeof(float)) != 0);
    for (float v : b.value()) CHECK(std::isfinite(v));
}

TEST_CASE("single linear head stands in for the decoder") {
    ModelConfig c = desk();
    c.use_mlp_decoder = false;
    dip::Model<float> m(c);
    dip::Rng rng(4);
    auto [rgb, depth] = rand_input(rng, 1, 32, 32);
    dip::ForwardTrace<float> tr;
    auto logits = m.forward(rgb, depth, &tr);
    CHECK(logits.shape() == dip::Shape{1, 6, 32, 32});
    CHECK(tr.decoder_shape == dip::Shape{1, 6, 8, 8});
}

TEST_CASE("forward can hand back each stage's attention") {
    dip::Model<float> m(desk());
    dip::Rng rng(6);
    auto [rgb, depth] = rand_input(rng, 1, 32, 32);
    dip::ForwardTrace<float> tr;
    tr.want_attention = true;
    (void)m.forward(rgb, depth, &tr);
    REQUIRE(tr.attention.size() == 4);
    // Stage grids 16,8,4,2 with P clamped to 7,7,4,2 and heads 1,2,4,8.
    CHECK(tr.attention[0].shape() == dip::Shape{1, 256, 49});
    CHECK(tr.attention[1].shape() == dip::Shape{2, 64, 49});
    CHECK(tr.attention[2].shape() == dip::Shape{4, 16, 16});
    CHECK(tr.attention[3].shape() == dip::Shape{8, 4, 4});
    auto map = dip::average_attention_row(tr.attention[1], 2, 30);
    CHECK(map.shape() == dip::Shape{7, 7});
    double s = 0;
    for (float v : map.value()) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("checkpoints round-trip bit for bit") {
    auto path = scratch("roundtrip.dipf");
    dip::Model<float> a(desk());
    a.save(path.string());

    dip::Model<float> b(desk());
    // Different instance, same config: same init. Scramble to prove load
    // actually writes every tensor.
    for (auto& e : b.params().entries())
        for (auto& v : e.tensor.value()) v += 0.125f;
    b.load(path.string());
    auto& ea = a.params().entries();
    auto& eb = b.params().entries();
    REQUIRE(ea.size() == eb.size());
    for (size_t i = 0; i < ea.size(); ++i)
        CHECK(std::memcmp(ea[i].tensor.value().data(), eb[i].tensor.value().data(),
                          ea[i].tensor.size() * sizeof(float)) == 0);

    dip::Rng rng(31);
    auto [rgb, depth] = rand_input(rng, 1, 32, 32);
    auto la = a.forward(rgb, depth).value();
    auto lb = b.forward(rgb, depth).value();
    CHECK(std::memcmp(la.data(), lb.data(), la.size() * sizeof(float)) == 0);

    auto path2 = scratch("roundtrip2.dipf");
    b.save(path2.string());
    CHECK(read_bytes(path) == read_bytes(path2));

    auto cfg = dip::read_checkpoint_config(path.string());
    CHECK(cfg.hash() == desk().hash());
}

TEST_CASE("checkpoint loads reject foreign or damaged files") {
    auto path = scratch("guard.dipf");
    dip::Model<float> a(desk());
    a.save(path.string());
    std::string good = read_bytes(path);

    ModelConfig other = desk();
    other.n_cls = 5;
    dip::Model<float> m_other(other);
    CHECK_THROWS_WITH_AS(m_other.load(path.string()),
                         doctest::Contains("different config"), dip::ConfigError);

    auto bad = scratch("bad.dipf");
    write_bytes(bad, good.substr(0, good.size() - 10));
    dip::Model<float> victim(desk());
    CHECK_THROWS_WITH_AS(victim.load(bad.string()), doctest::Contains("truncated"),
                         dip::ConfigError);

    std::string trailing = good + "xx";
    write_bytes(bad, trailing);
    CHECK_THROWS_WITH_AS(victim.load(bad.string()), doctest::Contains("trailing"),
                         dip::ConfigError);

    std::string magic = good;
    magic[0] = 'X';
    write_bytes(bad, magic);
    CHECK_THROWS_WITH_AS(victim.load(bad.string()), doctest::Contains("magic"),
                         dip::ConfigError);

    // Flip one byte inside the config block; the embedded hash catches it.
    std::string corrupt = good;
    size_t cfg_off = corrupt.find("n_cls=6");
    REQUIRE(cfg_off != std::string::npos);
    corrupt[cfg_off + 6] = '7';
    write_bytes(bad, corrupt);
    CHECK_THROWS_WITH_AS(victim.load(bad.string()), doctest::Contains("hash"),
                         dip::ConfigError);

    CHECK_NOTHROW(victim.load(path.string()));
}

TEST_CASE("checkpoint refuses a precision mismatch") {
    ModelConfig c = desk();
    c.n_stages = 1;
    c.stage_channels = {8};
    c.stage_heads = {1};
    auto path = scratch("half.dipf");
    dip::Model<float> f32(c);
    f32.save(path.string());
    ModelConfig cd = c;
    cd.precision = dip::Precision::F64;
    // Config hash differs, so the mismatch is caught at the config gate.
    dip::Model<double> f64(cd);
    CHECK_THROWS_AS(f64.load(path.string()), dip::ConfigError);
    auto make_wrong = [&c] { dip::Model<double> m(c); };
    CHECK_THROWS_AS(make_wrong(), dip::ConfigError);
}
