#include <doctest.h>

#include <cmath>

#include "generators.hpp"
#include "vithd/checkpoint.hpp"
#include "vithd/error.hpp"

using namespace vithd;
using vithd::test::Gen;

namespace {

ModelConfig small()
{
    ModelConfig c;
    c.embed_dim = 16;
    c.depth = 2;
    c.num_heads = 2;
    c.head_hidden_dim = 24;
    c.ffn_dim = 20;
    c.output_prior = 0.07;
    c.init_seed = 99;
    return c;
}

} // namespace

TEST_CASE("64-bit checkpoints round trip bitwise")
{
    const auto m = init_model<double>(small());
    const Provenance prov{"abc", "0.1.0", 5};
    const auto bytes = encode_checkpoint(m, ScalarWidth::F64, prov);
    CHECK(bytes.substr(0, 4) == "VTHD");
    const auto ck = decode_checkpoint(bytes);
    CHECK(ck.config == small());
    CHECK(ck.width == ScalarWidth::F64);
    CHECK(ck.provenance.config_digest == "abc");
    CHECK(ck.provenance.master_seed == 5);
    const auto back = ck.model<double>();
    CHECK(std::equal(m.params().begin(), m.params().end(), back.params().begin()));
}

TEST_CASE("32-bit checkpoints stay within float precision")
{
    const auto m = init_model<double>(small()).cast<float>();
    const auto ck = decode_checkpoint(encode_checkpoint(m, ScalarWidth::F32, Provenance{}));
    const auto back = ck.model<float>();
    CHECK(std::equal(m.params().begin(), m.params().end(), back.params().begin()));
    Gen g(61);
    const auto img = test::random_image(g, 42, 56);
    const auto a = forward(m, img);
    const auto b = forward(back, img);
    CHECK(a.values == b.values);
}

TEST_CASE("malformed checkpoints are rejected")
{
    const auto m = init_model<double>(small());
    const auto good = encode_checkpoint(m, ScalarWidth::F64, Provenance{});
    auto bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), Error);
    CHECK_THROWS_AS(decode_checkpoint(good.substr(0, good.size() - 3)), Error);
    CHECK_THROWS_AS(decode_checkpoint(good + "x"), Error);
    auto bad_version = good;
    bad_version[4] = 9;
    CHECK_THROWS_AS(decode_checkpoint(bad_version), Error);
    CHECK_THROWS_AS(decode_checkpoint(""), Error);
}

TEST_CASE("checkpoint files are write-once")
{
    test::TempDir dir("ckpt");
    const auto m = init_model<double>(small());
    const auto path = dir.path / "m.vthd";
    save_checkpoint(path, m, ScalarWidth::F64, Provenance{}, OutputPolicy(false));
    CHECK_THROWS_AS(save_checkpoint(path, m, ScalarWidth::F64, Provenance{}, OutputPolicy(false)), IoError);
    CHECK_NOTHROW(save_checkpoint(path, m, ScalarWidth::F64, Provenance{}, OutputPolicy(true)));
    const auto loaded = load_checkpoint(path).model<double>();
    CHECK(std::equal(m.params().begin(), m.params().end(), loaded.params().begin()));
    CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.vthd"), IoError);
}
