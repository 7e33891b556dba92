#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mecod/error.hpp"
#include "mecod/prompt_encoder.hpp"
#include "support.hpp"

using namespace mecod;
using ag::Matrix;
using ag::Var;

namespace {

bool same_parameters(const ContinuousPrompt& a, const ContinuousPrompt& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].value() != pb[i].value()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("init prompt") {
  const TinyMlm model = test::small_model();
  SUBCASE("seed-deterministic") {
    CHECK(same_parameters(init_prompt(3, model.handle(), 7), init_prompt(3, model.handle(), 7)));
    CHECK_FALSE(same_parameters(init_prompt(3, model.handle(), 7), init_prompt(3, model.handle(), 8)));
  }
  SUBCASE("output width follows the model") {
    const ContinuousPrompt p = init_prompt(4, model.handle(), 1);
    CHECK(p.num_tokens == 4);
    CHECK(p.prompt_dim == 16);
    const Matrix e = prompt_embeddings(p).value();
    CHECK(e.rows() == 4);
    CHECK(e.cols() == 16);
  }
  SUBCASE("initial embeddings have standard deviation 0.02") {
    double sum = 0.0, sq = 0.0;
    int n = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Matrix e = prompt_embeddings(init_prompt(9, model.handle(), seed)).value();
      for (Eigen::Index i = 0; i < e.size(); ++i) {
        sum += e.data()[i];
        sq += e.data()[i] * e.data()[i];
        ++n;
      }
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sq / n - mean * mean);
    CHECK(std::abs(mean) < 0.004);
    CHECK(sd == doctest::Approx(0.02).epsilon(0.1));
  }
  SUBCASE("needs a slot") { CHECK_THROWS_AS(init_prompt(0, model.handle(), 1), Error); }
}

TEST_CASE("encode") {
  const TinyMlm model = test::small_model();
  const PromptTemplate t = parse_template("[P] [Y] [P] [X] [P] .");
  const ContinuousPrompt p = init_prompt(3, model.handle(), 5);

  SUBCASE("no tunable slots gives the plain embedding") {
    const RenderedInput r = render(parse_template("[X] speaks [Y] ."), "Pierre Messmer", model);
    CHECK(encode(p, r, model).value() == model.embed(r.ids).value());
  }
  SUBCASE("exactly the tunable positions are substituted") {
    const RenderedInput r = render(t, "Pierre Messmer", model);
    const Matrix e = encode(p, r, model).value();
    const Matrix plain = model.embed(r.ids).value();
    const Matrix prompt = prompt_embeddings(p).value();
    int substituted = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      if (r.tunable_index[i] >= 0) {
        ++substituted;
        CHECK(e.row(row) == prompt.row(r.tunable_index[i]));
        CHECK(e.row(row) != plain.row(row));
      } else {
        CHECK(e.row(row) == plain.row(row));
      }
    }
    CHECK(substituted == 3);
  }
  SUBCASE("original and subject-masked inputs differ only on the subject span") {
    const RenderedInput r = render(t, "Pierre Messmer", model);
    const RenderedInput m = subject_mask(r, model.handle());
    const Matrix eo = encode(p, r, model).value();
    const Matrix em = encode(p, m, model).value();
    for (std::size_t i = 0; i < r.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      if (r.tags[i] == SlotTag::subject) CHECK(eo.row(row) != em.row(row));
      else CHECK(eo.row(row) == em.row(row));
    }
  }
  SUBCASE("gradients reach the prompt and never the model") {
    const RenderedInput r = render(t, "Pierre Messmer", model);
    const std::vector<int> at{r.object_position};
    const std::vector<TokenId> gold{model.vocabulary().id("French")};
    ag::backward(ag::cross_entropy(model.mlm_head(model.forward_from_embeddings(encode(p, r, model), at)), gold));
    for (const auto& v : p.parameters()) {
      REQUIRE(v.has_grad());
      CHECK(v.grad().allFinite());
    }
    CHECK(p.raw.grad().norm() > 0.0);
    for (const auto& v : model.parameters()) CHECK_FALSE(v.has_grad());
  }
  SUBCASE("slot-count mismatch") {
    const RenderedInput r = render(parse_template("[P] [P] [P] [P] [X] [Y]"), "Pierre", model);
    CHECK_THROWS_AS(encode(p, r, model), Error);
    const RenderedInput two = render(parse_template("[P] [P] [X] [Y]"), "Pierre", model);
    CHECK_THROWS_AS(encode(p, two, model), Error);
  }
  SUBCASE("parameter count does not depend on the subject") {
    const auto before = p.parameters().size();
    encode(p, render(t, "Pierre Messmer", model), model);
    encode(p, render(t, "Rome", model), model);
    CHECK(p.parameters().size() == before);
  }
}

TEST_CASE("prompt checkpoint and clone") {
  const TinyMlm model = test::small_model();
  const ContinuousPrompt p = init_prompt(3, model.handle(), 9);
  const auto path = std::filesystem::temp_directory_path() / "mecod_test_prompt.bin";
  p.save(path);
  const ContinuousPrompt back = ContinuousPrompt::load(path);
  CHECK(same_parameters(p, back));
  CHECK(prompt_embeddings(back).value() == prompt_embeddings(p).value());
  std::filesystem::remove(path);

  ContinuousPrompt copy = p.clone();
  copy.raw.mutable_value()(0, 0) += 1.0;
  CHECK(copy.raw.value()(0, 0) != p.raw.value()(0, 0));
  CHECK(p.all_finite());
  copy.raw.mutable_value()(0, 0) = std::nan("");
  CHECK_FALSE(copy.all_finite());
}
