#include <doctest.h>

#include <bit>
#include <cmath>

#include "envae/error.hpp"
#include "envae/model.hpp"
#include "oracles.hpp"

using namespace envae;

namespace {

ModelConfig small_config(std::size_t m, std::size_t L = 2) {
  ModelConfig c;
  c.latent_dim = L;
  c.experts = m;
  c.hidden = {5};
  c.dropout = 0.2;
  return c;
}

Matrix random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x(rows, cols);
  for (double& v : x.data()) v = rng.uniform();
  return x;
}

}  // namespace

TEST_CASE("subset enumeration") {
  CHECK(nonempty_subsets(all_groups_mask(3)) == std::vector<GroupMask>{1, 2, 3, 4, 5, 6, 7});
  CHECK(nonempty_subsets(all_groups_mask(8)).size() == 255);
  CHECK(nonempty_subsets(0b1010) == std::vector<GroupMask>{0b0010, 0b1000, 0b1010});
  CHECK(default_elbo_mode(4) == ElboMode::full_enumeration);
  CHECK(default_elbo_mode(5) == ElboMode::mixture_sample);
  CHECK_THROWS_AS(all_groups_mask(0), ConfigError);
}

TEST_CASE("mode names round-trip") {
  CHECK(parse_elbo_mode(to_string(ElboMode::mixture_sample)) == ElboMode::mixture_sample);
  CHECK(parse_latent_reduction("mixture_mean") == LatentReduction::mixture_mean);
  CHECK_THROWS_AS(parse_elbo_mode("nope"), ConfigError);
}

TEST_CASE("model structure follows the grouping") {
  const auto model = EnVaeModel::build(small_config(3), 10, 1);
  CHECK(model.groups() == 3);
  CHECK(model.encoders.size() == 3);
  for (std::size_t g = 0; g < 3; ++g) {
    CHECK(model.encoders[g].input_width() == model.grouping.group_size(g));
    CHECK(model.encoders[g].output_width() == 4);
    CHECK(model.decoders[g].output_width() == model.grouping.group_size(g));
  }
  CHECK(model == EnVaeModel::build(small_config(3), 10, 1));
}

TEST_CASE("full enumeration beyond eight groups is rejected") {
  auto c = small_config(9);
  c.elbo_mode = ElboMode::full_enumeration;
  CHECK_THROWS_AS(EnVaeModel::build(c, 20, 1), ConfigError);
  c.elbo_mode = ElboMode::mixture_sample;
  CHECK_NOTHROW(EnVaeModel::build(c, 20, 1));
}

TEST_CASE("slice and scatter round-trip") {
  const auto model = EnVaeModel::build(small_config(3), 10, 2);
  const Matrix x = random_batch(4, 10, 1);
  Matrix back(4, 10);
  for (std::size_t g = 0; g < 3; ++g) scatter_group(model, slice_group(model, x, g), g, back);
  CHECK(back == x);
}

TEST_CASE("subset posteriors are products of their groups") {
  const auto model = EnVaeModel::build(small_config(3), 9, 3);
  const Matrix x = random_batch(5, 9, 2);
  const auto experts = encode_groups(model, x);
  const auto table = subset_posteriors(experts, all_groups_mask(3), true);
  CHECK(table.size() == 7);
  for (GroupMask mask : table.masks) {
    for (std::size_t r = 0; r < 5; ++r) {
      std::vector<DiagGaussian> parts;
      for (std::size_t g = 0; g < 3; ++g) {
        if (mask & (1u << g)) parts.push_back(experts[g].row(r));
      }
      const auto want = poe_combine(parts, true);
      const auto got = table.at(mask).row(r);
      for (std::size_t l = 0; l < 2; ++l) {
        CHECK(got.mean[l] == doctest::Approx(want.mean[l]).epsilon(1e-12));
        CHECK(got.log_var[l] == doctest::Approx(want.log_var[l]).epsilon(1e-12));
      }
    }
  }
  const auto mix = joint_posterior(table, 0);
  CHECK(mix.size() == 7);
}

TEST_CASE("latent inference reads only the available groups") {
  const auto model = EnVaeModel::build(small_config(3), 9, 4);
  Matrix x = random_batch(4, 9, 3);
  const GroupMask avail = 0b101;
  const auto before = infer_latent(model, x, avail);
  for (std::size_t f : model.grouping.members[1]) {
    for (std::size_t r = 0; r < 4; ++r) x(r, f) = 100.0;
  }
  const auto after = infer_latent(model, x, avail);
  CHECK(before.mean == after.mean);
  CHECK(before.log_var == after.log_var);
  const auto experts = encode_groups(model, x, avail);
  CHECK(experts[1].mean.empty());
}

TEST_CASE("latent inference with nothing available") {
  auto model = EnVaeModel::build(small_config(2), 6, 5);
  const Matrix x = random_batch(3, 6, 4);
  const auto prior = infer_latent(model, x, 0);
  CHECK(prior.mean == Matrix(3, 2, 0.0));
  CHECK(prior.log_var == Matrix(3, 2, 0.0));
  model.include_prior = false;
  CHECK_THROWS_AS(infer_latent(model, x, 0), ConfigError);
}

TEST_CASE("mixture-mean reduction is the moment-matched joint posterior") {
  const auto model = EnVaeModel::build(small_config(3), 9, 6);
  const Matrix x = random_batch(2, 9, 5);
  const auto mm = infer_latent(model, x, all_groups_mask(3), LatentReduction::mixture_mean);
  const auto table = subset_posteriors(encode_groups(model, x), all_groups_mask(3), true);
  const auto want = moment_match(joint_posterior(table, 1));
  CHECK(mm.mean(1, 0) == doctest::Approx(want.mean[0]));
  CHECK(mm.log_var(1, 1) == doctest::Approx(want.log_var[1]));
}

TEST_CASE("decode_all returns every feature in original order") {
  const auto model = EnVaeModel::build(small_config(3), 9, 7);
  const Matrix xhat = decode_all(model, Matrix(4, 2, 0.1));
  CHECK(xhat.rows() == 4);
  CHECK(xhat.cols() == 9);
}

TEST_CASE("loss decomposes and beta scales the kl") {
  auto model = EnVaeModel::build(small_config(2), 6, 8);
  const Matrix x = random_batch(4, 6, 6);
  Rng a(1), b(1);
  const auto zero = compute_loss(model, x, nullptr, 0.0, a, Mode::eval, false);
  const auto two = compute_loss(model, x, nullptr, 2.0, b, Mode::eval, false);
  CHECK(zero.total == doctest::Approx(zero.reconstruction));
  CHECK(two.kl == doctest::Approx(zero.kl));
  CHECK(two.total == doctest::Approx(two.reconstruction + 2.0 * two.kl));
  CHECK(zero.kl > 0.0);
}

TEST_CASE("the kl term does not depend on which subsets are sampled") {
  auto c = small_config(3);
  c.elbo_mode = ElboMode::mixture_sample;
  c.dropout = 0.0;
  auto model = EnVaeModel::build(c, 9, 9);
  const Matrix x = random_batch(4, 9, 7);
  Rng a(1), b(2);
  const auto la = compute_loss(model, x, nullptr, 1.0, a, Mode::eval, false);
  const auto lb = compute_loss(model, x, nullptr, 1.0, b, Mode::eval, false);
  CHECK(la.kl == lb.kl);
}

TEST_CASE("tiny model gradients match central differences") {
  const Matrix x = random_batch(5, 6, 8);
  SUBCASE("full enumeration, prior on") {
    CHECK(oracle::model_gradient_error(EnVaeModel::build(small_config(2), 6, 10), x, nullptr, 0.7, 3) < 1e-4);
  }
  SUBCASE("prior off") {
    auto c = small_config(2);
    c.include_prior = false;
    CHECK(oracle::model_gradient_error(EnVaeModel::build(c, 6, 11), x, nullptr, 1.3, 4) < 1e-4);
  }
  SUBCASE("mixture sampling with three groups") {
    auto c = small_config(3);
    c.elbo_mode = ElboMode::mixture_sample;
    c.mixture_samples = 2;
    CHECK(oracle::model_gradient_error(EnVaeModel::build(c, 6, 12), x, nullptr, 1.0, 5) < 1e-4);
  }
  SUBCASE("supervised head") {
    auto c = small_config(2);
    c.classes = 3;
    c.head_hidden = {4};
    const std::vector<int> y{0, 1, 2, 1, 0};
    CHECK(oracle::model_gradient_error(EnVaeModel::build(c, 6, 13), x, &y, 1.0, 6) < 1e-4);
  }
}

TEST_CASE("one group without the prior is a plain VAE") {
  auto c = small_config(1, 3);
  c.include_prior = false;
  c.hidden = {7, 5};
  auto model = EnVaeModel::build(c, 8, 14);
  Rng data(15);
  for (int t = 0; t < 10; ++t) {
    const Matrix x = random_batch(2 + data.uniform_index(10), 8, data.next_u64());
    const double beta = 2 * data.uniform();
    const std::uint64_t seed = data.next_u64();
    Rng a(seed), b(seed);
    const double ref = oracle::reference_vae_loss(model.encoders[0], model.decoders[0], x, beta, a);
    const double got = compute_loss(model, x, nullptr, beta, b, Mode::train, false).total;
    CHECK(std::abs(ref - got) < 1e-10);
  }
}

TEST_CASE("softmax cross-entropy and argmax") {
  const auto logits = Matrix::from_rows({{0.0, 0.0}, {std::log(3.0), 0.0}});
  const std::vector<int> y{0, 0};
  Matrix grad;
  const double ce = softmax_cross_entropy(logits, y, &grad);
  CHECK(ce == doctest::Approx(0.5 * (std::log(2.0) + std::log(4.0 / 3.0))));
  CHECK(grad(0, 0) == doctest::Approx(-0.25));
  CHECK(grad(1, 1) == doctest::Approx(0.125));
  CHECK(argmax_rows(logits) == std::vector<int>{0, 0});
}

TEST_CASE("supervised forward uses the posterior mean in eval mode") {
  auto c = small_config(2);
  c.classes = 2;
  auto model = EnVaeModel::build(c, 6, 16);
  const Matrix x = random_batch(3, 6, 9);
  Rng rng(1);
  const auto out = supervised_forward(model, x, Mode::eval, rng);
  CHECK(out.logits == mlp_eval(*model.head, infer_latent(model, x, all_groups_mask(2)).mean));
}
