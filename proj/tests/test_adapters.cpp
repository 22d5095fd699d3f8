#include <doctest.h>

#include "promptlens/hash.hpp"
#include "promptlens/image_io.hpp"
#include "promptlens/math.hpp"
#include "promptlens/registry.hpp"
#include "promptlens/rng.hpp"

#include <set>

using namespace promptlens;

TEST_CASE("toy stack shapes") {
  const auto stack = ToyStack::build();
  const auto& c = stack.config;
  CHECK(stack.masked_lm->tokenizer().vocabulary().size() == 16);
  CHECK(stack.text_encoder->tokenizer().vocabulary().size() == 12);

  SoftPrompt p{Matrix::Constant(2, c.embed_dim, 0.1)};
  const auto input = stack.masked_lm->tokenizer().encode_sequence("a picture of a [MASK] [MASK] .");
  const Matrix logits = stack.masked_lm->forward(p, input);
  CHECK(logits.rows() == 2);
  CHECK(logits.cols() == 16);

  const Vector e = stack.text_encoder->encode_text("a picture of a tiger .");
  CHECK(e.size() == c.embed_dim);
  const Image img = stack.generator->generate(e, 4, 1);
  CHECK(img.rows() == c.image_side);
  CHECK(img.cols() == c.image_side);
  const auto f = stack.classifier->forward(img);
  CHECK(f.features.size() == c.feature_width);
  CHECK(f.probabilities.size() == c.num_classes);
  CHECK(f.probabilities.sum() == doctest::Approx(1.0));
}

TEST_CASE("masked LM rejects inputs without a mask slot") {
  const auto stack = ToyStack::build();
  SoftPrompt p{Matrix::Zero(1, stack.config.embed_dim)};
  const auto input = stack.masked_lm->tokenizer().encode_sequence("a picture .");
  CHECK_THROWS_AS(stack.masked_lm->forward(p, input), UsageError);
  SoftPrompt wrong{Matrix::Zero(1, stack.config.embed_dim + 1)};
  CHECK_THROWS_AS(stack.masked_lm->forward(wrong, stack.masked_lm->tokenizer().encode_sequence("[MASK]")),
                  ConfigError);
}

TEST_CASE("pad row of the text encoder is zero") {
  const auto stack = ToyStack::build();
  const TokenId pad = stack.text_encoder->pad_id();
  CHECK(stack.text_encoder->table().row(pad).isZero(0.0));
  const Vector with_pad = stack.text_encoder->encode_text("a <|pad|> .");
  const Vector without = stack.text_encoder->encode_text("a .");
  CHECK((with_pad - without).norm() == 0.0);
}

TEST_CASE("parameter digests are stable and seed dependent") {
  const auto a = AdapterSet::from_toy(ToyStack::build());
  const auto b = AdapterSet::from_toy(ToyStack::build());
  CHECK(a.parameter_digest() == b.parameter_digest());
  ToyStackConfig other;
  other.rng_seed = 8;
  CHECK(AdapterSet::from_toy(ToyStack::build(other)).parameter_digest() != a.parameter_digest());
  CHECK(a.parameter_digest().size() == 64);
}

TEST_CASE("generator noise is seeded") {
  ToyStackConfig c;
  c.generator_noise = 0.5;
  const auto stack = ToyStack::build(c);
  const Vector e = stack.text_encoder->encode_text("a tiger");
  CHECK(stack.generator->generate(e, 4, 3) == stack.generator->generate(e, 4, 3));
  CHECK(stack.generator->generate(e, 4, 3) != stack.generator->generate(e, 4, 4));
}

TEST_CASE("registry") {
  CHECK_THROWS_AS(resolve_adapters(AdapterIds{.masked_lm = "hf:bert-base"}), AdapterError);
  const auto set = resolve_adapters(AdapterIds{});
  CHECK(set.masked_lm);
  CHECK(set.sentence_embedder);

  register_backend("custom:v1", [](const nlohmann::json&) { return AdapterSet::from_toy(ToyStack::build()); });
  AdapterIds ids;
  ids.generator = "custom:v1";
  CHECK(resolve_adapters(ids).generator);
}

TEST_CASE("toy config keys") {
  try {
    toy_config_from_json({{"embed_dimm", 4}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()) == "adapters.toy.embed_dimm: unknown key");
  }
  ToyStackConfig c;
  c.embed_dim = 5;
  c.generator_noise = 0.25;
  const auto back = toy_config_from_json(toy_config_to_json(c));
  CHECK(back.embed_dim == 5);
  CHECK(back.generator_noise == 0.25);
  ToyStackConfig bad;
  bad.generator_noise = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("neuron selection") {
  const auto stack = ToyStack::build();
  const auto top = select_top_neurons(*stack.classifier, 1, 3);
  CHECK(top.layer_role == LayerRole::kPenultimate);
  REQUIRE(top.indices.size() == 3);
  const Matrix w = *stack.classifier->output_weights();
  CHECK(w(1, top.indices[0]) >= w(1, top.indices[1]));
  CHECK(w(1, top.indices[1]) >= w(1, top.indices[2]));

  ClassifierForward f;
  f.features = Vector::LinSpaced(6, 0, 5);
  f.probabilities = Vector::Constant(3, 1.0 / 3);
  const auto out = select_neurons(f, {NeuronSpec::penultimate({4, 1}), NeuronSpec::output({2})});
  REQUIRE(out.size() == 3);
  CHECK(out.selected_activations(0) == 4.0);
  CHECK(out.selected_activations(1) == 1.0);
  CHECK(out.neuron_kinds[2] == NeuronKind::kClass);
  const auto [fg, pg] = scatter_neuron_grad(f, {NeuronSpec::penultimate({4, 1}), NeuronSpec::output({2})},
                                            Vector::Constant(3, 2.0));
  CHECK(fg(4) == 2.0);
  CHECK(fg(0) == 0.0);
  CHECK(pg(2) == 2.0);
  CHECK_THROWS(select_neurons(f, {NeuronSpec::output({7})}));
}

TEST_CASE("tokenizers") {
  const auto stack = ToyStack::build();
  const auto& src = stack.masked_lm->tokenizer();
  const auto ids = src.encode("A picture of Tigers.");
  REQUIRE(ids.size() == 6);
  CHECK(src.vocabulary().token(ids[3]) == "tiger");
  CHECK(src.vocabulary().token(ids[4]) == "##s");
  CHECK(src.vocabulary().token(ids[5]) == ".");
  CHECK(src.surface_form(ids[4]) == "s");
  CHECK(src.vocabulary().token(src.encode("zebra")[0]) == "[UNK]");

  const auto& tgt = stack.text_encoder->tokenizer();
  CHECK(tgt.decode(tgt.encode("a picture of a lion .")) == "a picture of a lion .");
  CHECK(tgt.vocabulary().is_special(tgt.vocabulary().id("<|pad|>")));
  CHECK_THROWS_AS(Vocabulary("v", {"a", "a"}), ConfigError);
}

TEST_CASE("seed derivation") {
  CHECK(derive_seed(1, "x", 0) == derive_seed(1, "x", 0));
  CHECK(derive_seed(1, "x", 0) != derive_seed(1, "x", 1));
  CHECK(derive_seed(1, "x", 0) != derive_seed(1, "y", 0));
  CHECK(derive_seed(1, "x", 0) != derive_seed(2, "x", 0));
  Rng rng(4);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) sum += rng.gumbel();
  CHECK(sum / 20000 == doctest::Approx(0.5772156649).epsilon(0.03));
}

TEST_CASE("sha256 and images") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  Image img(3, 3);
  for (Index i = 0; i < 9; ++i) img.data()[i] = 0.5 * static_cast<double>(i) - 1.25;
  CHECK(decode_pfm(encode_pfm(img)) == img);
  const std::string png = encode_png(img);
  CHECK(png.substr(1, 3) == "PNG");
  CHECK(base64_encode("hello") == "aGVsbG8=");
  CHECK(unflatten(flatten(img), 3) == img);
  CHECK(flatten(img)(1) == img(0, 1));
}
