#include <doctest.h>

#include "promptlens/image_io.hpp"
#include "promptlens/rng.hpp"
#include "promptlens/slice.hpp"
#include "support.hpp"

#include <fstream>

using namespace promptlens;
using promptlens::testing::TempDir;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

std::array<std::optional<Prototype>, 2> axis_prototypes() {
  return {Prototype{vec({1, 0, 0}), false}, Prototype{vec({0, 1, 0}), false}};
}

}  // namespace

TEST_CASE("separable fixture: labels and AUC") {
  Rng rng(3);
  std::vector<SliceImage> images;
  std::vector<SliceLabel> truth;
  for (int i = 0; i < 60; ++i) {
    const Index cls = i % 2;
    const bool biased = i % 5 == 0;
    Vector e = Vector::Zero(3);
    e(cls) = biased ? 0.2 : 1.0;
    e(1 - cls) = biased ? 1.0 : 0.2;
    e(2) = 0.5 * rng.normal();
    images.push_back({std::to_string(i), cls, e});
    truth.push_back(biased ? SliceLabel::kBiased : SliceLabel::kUnbiased);
  }
  const auto a = assign_slices(images, axis_prototypes());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].label == truth[i]);
  const auto roc = roc_auc(a, truth);
  CHECK(roc.auc == 1.0);
  CHECK(roc.points.front().false_positive_rate == 0.0);
  CHECK(roc.points.back().true_positive_rate == 1.0);
}

TEST_CASE("label-independent scores give chance AUC") {
  Rng rng(99);
  std::vector<double> scores;
  std::vector<bool> positive;
  for (int i = 0; i < 10000; ++i) {
    scores.push_back(rng.normal());
    positive.push_back(rng.uniform() < 0.3);
  }
  const double auc = roc_auc(scores, positive).auc;
  CHECK(auc >= 0.48);
  CHECK(auc <= 0.52);
}

TEST_CASE("ROC: ties, inversions and errors") {
  CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {true, false, true, false}).auc == 0.5);
  CHECK(roc_auc({3, 2, 1}, {false, true, true}).auc == 0.0);
  // Brute-force pair count: P(score_pos > score_neg) + ties / 2.
  const std::vector<double> s = {0.1, 0.4, 0.4, 0.8, 0.3, 0.9};
  const std::vector<bool> pos = {false, true, false, true, false, true};
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) {
        ++pairs;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  CHECK(roc_auc(s, pos).auc == doctest::Approx(wins / pairs));
  CHECK_THROWS_AS(roc_auc({1, 2}, {true, true}), UsageError);
  CHECK_THROWS_AS(roc_auc({1}, {true, false}), UsageError);
}

TEST_CASE("null prototype uses the class median") {
  const std::array<std::optional<Prototype>, 2> protos = {Prototype{vec({1, 0, 0}), false}, std::nullopt};
  // Class 0 own similarities: 1, 0.6, 0 (median 0.6).
  // Class 1 counterpart similarities: 0.8, 0, 0.6 (median 0.6).
  const std::vector<SliceImage> images = {{"a", 0, vec({1, 0, 0})},   {"b", 0, vec({0.6, 0.8, 0})},
                                          {"c", 0, vec({0, 0, 1})},   {"d", 1, vec({0.8, 0.6, 0})},
                                          {"e", 1, vec({0, 1, 0})},   {"f", 1, vec({0.6, 0, 0.8})}};
  const auto a = assign_slices(images, protos);
  CHECK(std::isnan(a[0].counterpart_similarity));
  CHECK(std::isnan(a[3].own_similarity));
  CHECK(a[0].label == SliceLabel::kUnbiased);  // 0.6 - 1
  CHECK(a[1].label == SliceLabel::kUnbiased);  // 0.6 - 0.6 = 0
  CHECK(a[2].label == SliceLabel::kBiased);    // 0.6 - 0
  CHECK(a[2].score == doctest::Approx(0.6));
  CHECK(a[3].label == SliceLabel::kBiased);    // 0.8 - 0.6
  CHECK(a[4].label == SliceLabel::kUnbiased);
  CHECK(a[5].label == SliceLabel::kUnbiased);
  CHECK_THROWS_AS(assign_slices(images, {std::nullopt, std::nullopt}), UsageError);
  CHECK_THROWS_AS(assign_slices(images, {Prototype{vec({0, 0, 0}), true}, std::nullopt}), DomainError);
}

TEST_CASE("prototypes and wrapping") {
  const auto stack = ToyStack::build();
  CHECK(wrap_word("tiger", WordWrapping::kTemplated) == "a photo of a tiger");
  CHECK(wrap_word("tiger", WordWrapping::kBare) == "tiger");
  const auto p = class_prototype({"tiger", "woods"}, *stack.joint_encoder);
  const Vector want = 0.5 * (stack.joint_encoder->encode_text("tiger") + stack.joint_encoder->encode_text("woods"));
  CHECK((p.embedding - want).norm() == doctest::Approx(0.0));
  CHECK_FALSE(p.degenerate);
  CHECK_THROWS_AS(class_prototype({}, *stack.joint_encoder), UsageError);
}

TEST_CASE("class words are distinct and skip specials") {
  const auto adapters = AdapterSet::from_toy(ToyStack::build());
  RunConfig rc;
  rc.class_index = 0;
  rc.steps = 80;
  const auto words = extract_class_words(adapters, rc, 3);
  REQUIRE(words.words.size() == 3);
  const auto& vocab = adapters.masked_lm->tokenizer().vocabulary();
  for (TokenId t : words.tokens) CHECK_FALSE(vocab.is_special(t));
  CHECK(words.tokens[0] != words.tokens[1]);
  CHECK(words.tokens[1] != words.tokens[2]);
  CHECK(words.tokens[0] != words.tokens[2]);
  rc.prompt.mask_count = 2;
  CHECK_THROWS_AS(extract_class_words(adapters, rc, 1), UsageError);
}

TEST_CASE("manifest parsing") {
  TempDir dir("manifest");
  const auto path = dir.path() / "m.csv";
  std::ofstream(path) << "path,class,slice\nimg/a.pfm,0,biased\n/abs/b.pfm, 1 ,unbiased\n\n";
  const auto m = read_manifest(path);
  REQUIRE(m.size() == 2);
  CHECK(m[0].path == dir.path() / "img/a.pfm");
  CHECK(m[0].slice == SliceLabel::kBiased);
  CHECK(m[1].path == "/abs/b.pfm");
  CHECK(m[1].true_class == 1);
  std::ofstream(path) << "path,class\nc.pfm,1\n";
  CHECK_FALSE(read_manifest(path).at(0).slice);
  std::ofstream(path) << "file,label\n";
  CHECK_THROWS_AS(read_manifest(path), ConfigError);
  std::ofstream(path) << "path,class\nx.pfm,one\n";
  CHECK_THROWS_WITH_AS(read_manifest(path), "manifest line 2: class must be an integer", ConfigError);
}

TEST_CASE("embedding cache") {
  TempDir dir("cache");
  const auto stack = ToyStack::build();
  Image img = Image::Constant(4, 4, 0.25);
  img(1, 2) = -1.0;
  write_pfm(dir.path() / "x.pfm", img);
  EmbeddingCache cache(dir.path() / "cache", "toy:v1");
  const Vector first = cache.embed_file(dir.path() / "x.pfm", *stack.joint_encoder);
  const Vector second = cache.embed_file(dir.path() / "x.pfm", *stack.joint_encoder);
  CHECK(cache.misses() == 1);
  CHECK(cache.hits() == 1);
  CHECK((first - second).norm() == 0.0);
  CHECK((first - stack.joint_encoder->encode_image(read_pfm(dir.path() / "x.pfm"))).norm() == 0.0);
  EmbeddingCache other(dir.path() / "cache", "other:v1");
  other.embed_file(dir.path() / "x.pfm", *stack.joint_encoder);
  CHECK(other.misses() == 1);
}

TEST_CASE("group indices and tables") {
  CHECK(group_index(0, SliceLabel::kUnbiased) == 0);
  CHECK(group_index(0, SliceLabel::kBiased) == 1);
  CHECK(group_index(1, SliceLabel::kUnbiased) == 2);
  CHECK(group_index(1, SliceLabel::kBiased) == 3);
  SliceAssignment a;
  a.id = "x";
  a.true_class = 1;
  a.label = SliceLabel::kBiased;
  CHECK(group_table({a}) == "id\tgroup\nx\t3\n");
  CHECK(assignments_table({a}).find("biased_slice") != std::string::npos);
}
