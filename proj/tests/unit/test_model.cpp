#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "reference.hpp"
#include "zkinfer/bytes.hpp"
#include "zkinfer/model.hpp"

using namespace zkinfer;

TEST_CASE("parameter count matches the closed form") {
  CHECK(parameter_count(nanogpt_weight_shapes({65, 64, 4, 4, 64})) == ref::nanogpt_params(65, 64, 4, 64));
  CHECK(ref::nanogpt_params(65, 64, 4, 64) == 208320);
  CHECK(parameter_count(nanogpt_weight_shapes({65, 64, 4, 4, 32})) == 55008);
  for (std::int64_t l : {0, 1, 3})
    for (std::int64_t c : {8, 16, 48})
      CHECK(parameter_count(nanogpt_weight_shapes({65, 16, l, 4, c})) == ref::nanogpt_params(65, 16, l, c));
  const auto w = init_nanogpt_weights({65, 16, 2, 4, 32}, 1);
  CHECK(w.parameter_count() == ref::nanogpt_params(65, 16, 2, 32));
}

TEST_CASE("mlp width helper lands within one percent") {
  for (std::int64_t layers : {1, 2, 4, 8}) {
    const std::int64_t target = 200000;
    const std::int64_t width = mlp_width_for_params(layers, target);
    const std::int64_t n = parameter_count(mlp_weight_shapes({layers, width}));
    CHECK(n == layers * (width * width + width));
    CHECK(std::llabs(n - target) <= target / 100);
  }
}

TEST_CASE("mask fill uses the bottom of the lookup range") {
  const NanoGptConfig cfg{65, 16, 2, 4, 32};
  const auto bundle = make_nanogpt_bundle(cfg, 7);
  const Graph g = reduce(bundle.graph());
  std::size_t masks = 0;
  for (const auto& n : g.nodes()) masks += n.op == OpKind::MaskFill;
  CHECK(masks == 2);

  const testutil::Compiled c(bundle);
  std::mt19937_64 rng(2);
  const auto toks = testutil::random_tokens(16, 65, rng);
  const auto r = c.run({{"tokens", IntTensor({16}, toks)}}, true);
  for (int l = 0; l < 2; ++l) {
    const auto& s = r.values.at("h." + std::to_string(l) + ".attn.masked");
    REQUIRE(s.shape == Shape{4, 16, 16});
    for (std::int64_t h = 0; h < 4; ++h)
      for (std::int64_t i = 0; i < 16; ++i)
        for (std::int64_t j = 0; j < 16; ++j) {
          const auto v = s.data[(h * 16 + i) * 16 + j];
          if (j > i) REQUIRE(encode(v) == encode(-32767));
          else REQUIRE(v != -32767);
        }
  }
}

TEST_CASE("zero layer model is embedding, norm and head") {
  const auto w = init_nanogpt_weights({65, 8, 0, 4, 32}, 1);
  const Graph g = build_nanogpt({65, 8, 0, 4, 32}, w);
  std::set<OpKind> ops;
  for (const auto& n : g.nodes()) ops.insert(n.op);
  CHECK(ops == std::set<OpKind>{OpKind::Input, OpKind::Const, OpKind::Gather, OpKind::Add, OpKind::Dropout,
                                OpKind::LayerNorm, OpKind::Einsum, OpKind::Rescale});
}

TEST_CASE("head is tied to the token embedding and no unsupported ops remain") {
  const auto b = make_nanogpt_bundle({65, 16, 2, 4, 32}, 7);
  const Graph g = reduce(b.graph());
  CHECK(g.node("lm_head.mm").inputs[1] == "wte");
  CHECK(g.node("tok_emb").inputs[0] == "wte");
  CHECK(g.is_reduced());
  for (const auto& [name, count] : g.op_histogram()) {
    INFO(name);
    CHECK(parse_op(name).has_value());
  }
}

TEST_CASE("builders name missing weights") {
  auto w = init_nanogpt_weights({65, 8, 1, 4, 32}, 1);
  WeightStore partial;
  for (const auto& [k, v] : w.tensors())
    if (k != "h.0.attn.k.weight") partial.set(k, v);
  CHECK_THROWS_WITH(build_nanogpt({65, 8, 1, 4, 32}, partial), "missing weight tensor: h.0.attn.k.weight");
  CHECK_THROWS_AS(build_nanogpt({65, 8, 1, 3, 32}, w), std::invalid_argument);
}

TEST_CASE("mlp graph structure and zero behaviour") {
  const auto w = init_mlp_weights({1, 2}, 1);
  const Graph g = reduce(build_mlp({1, 2}, w));
  std::vector<OpKind> chain;
  for (const auto& n : g.nodes())
    if (n.op != OpKind::Input && n.op != OpKind::Const) chain.push_back(n.op);
  CHECK(chain == std::vector<OpKind>{OpKind::Einsum, OpKind::Add, OpKind::Rescale, OpKind::Nonlinear});

  WeightStore zero_bias = init_mlp_weights({3, 8}, 2);
  for (int l = 0; l < 3; ++l) zero_bias.set("l" + std::to_string(l) + ".bias", Tensor<float>({8}));
  const Graph g3 = reduce(build_mlp({3, 8}, zero_bias));
  const auto out = evaluate(g3, quantize_constants(g3, zero_bias, {}), {{"x", IntTensor({8})}}, {}).outputs;
  for (auto v : out.begin()->second.data) CHECK(v == 0);
}

TEST_CASE("weights file round trip and validation") {
  const auto w = init_nanogpt_weights({65, 8, 1, 4, 32}, 4);
  const auto bytes = w.serialize();
  CHECK(WeightStore::deserialize(bytes) == w);
  CHECK(w.serialize() == bytes);
  CHECK(std::memcmp(bytes.data(), "ZKWT", 4) == 0);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(WeightStore::deserialize(truncated), DecodeError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_WITH(WeightStore::deserialize(trailing), "trailing bytes in weights file");
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(WeightStore::deserialize(magic), DecodeError);
}

TEST_CASE("weights file byte layout") {
  WeightStore w;
  w.set("b", Tensor<float>({2}, {1.0f, -2.0f}));
  w.set("a", Tensor<float>({}, {0.5f}));
  const auto bytes = w.serialize();
  ByteReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  CHECK(std::string(magic, 4) == "ZKWT");
  CHECK(r.u32() == 1);
  CHECK(r.u32() == 2);
  CHECK(r.str() == "a");
  CHECK(r.u32() == 0);
  CHECK(r.f32() == 0.5f);
  CHECK(r.str() == "b");
  CHECK(r.u32() == 1);
  CHECK(r.u32() == 2);
  CHECK(r.f32() == 1.0f);
  CHECK(r.f32() == -2.0f);
  CHECK(r.done());
}

TEST_CASE("commitment binds graph, weights and quantisation") {
  const auto b = make_nanogpt_bundle({65, 16, 2, 4, 32}, 7);
  const auto d1 = b.commitment();
  CHECK(b.commitment() == d1);

  auto w = b.weights;
  auto t = w.at("h.1.mlp.c_fc.weight");
  t.data[17] = std::nextafter(t.data[17], 1.0f);
  w.set("h.1.mlp.c_fc.weight", t);
  CHECK(commit(b.graph_text, w, b.quant) != d1);

  CHECK(commit(b.graph_text + " ", b.weights, b.quant) != d1);
  CHECK(commit(b.graph_text, b.weights, QuantConfig{6, 16}) != d1);

  // Frozen digest of the checked toy model (65, 16, 2, 4, 32), seed 7.
  CHECK(d1.hex() == "c64b243d2f90dfb08722d2932442b1911490786072f63f9da5f047d65acb826d");
}

TEST_CASE("bundle directory round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "zkinfer_bundle_test";
  std::filesystem::remove_all(dir);
  const auto b = make_mlp_bundle({2, 8}, 9, QuantConfig{6, 14});
  b.save(dir.string());
  const auto loaded = ModelBundle::load(dir.string());
  CHECK(loaded.graph_text == b.graph_text);
  CHECK(loaded.weights == b.weights);
  CHECK(loaded.quant == b.quant);
  CHECK(loaded.commitment() == b.commitment());
  std::filesystem::remove_all(dir);
}

TEST_CASE("seeded initialisation is deterministic and grid aligned") {
  const auto a = init_nanogpt_weights({65, 8, 1, 4, 32}, 5);
  CHECK(init_nanogpt_weights({65, 8, 1, 4, 32}, 5) == a);
  CHECK_FALSE(init_nanogpt_weights({65, 8, 1, 4, 32}, 6) == a);
  for (float v : a.at("h.0.attn.q.weight").data) REQUIRE(std::ldexp(v, 7) == std::round(std::ldexp(v, 7)));
  for (float v : a.at("h.0.attn.q.bias").data) REQUIRE(std::ldexp(v, 14) == std::round(std::ldexp(v, 14)));
  for (float v : a.at("h.0.ln_1.weight").data) REQUIRE(v == 1.0f);
}
