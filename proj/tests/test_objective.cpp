#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mlpmatch/objective/objective.hpp"
#include "mlpmatch/trainer/step.hpp"
#include "oracle.hpp"

using namespace mlpmatch;
using namespace mlpmatch::objective;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

model::PerturbableSegModel<float> tiny_model(int classes, std::uint64_t seed) {
  auto m = model::build_model<float>(classes, 0.25, {1, 1, 1, 1});
  Rng rng(seed);
  m.init_params(rng);
  return m;
}

}  // namespace

TEST_CASE("masked_ce basics") {
  SUBCASE("strongly peaked logits give near-zero loss") {
    Tensor<float> logits({1, 3, 2, 2});
    Tensor<std::int32_t> targets({1, 2, 2});
    Rng rng(1);
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) {
        const int t = rng.uniform_int(0, 2);
        targets[y * 2 + x] = t;
        logits.at(0, t, y, x) = 20.0f;
      }
    CHECK(masked_ce<float>(logits, targets, nullptr) < 1e-3f);
  }

  SUBCASE("all-zero mask zeroes the loss exactly") {
    Rng rng(2);
    auto logits = random_tensor<float>({2, 4, 3, 3}, rng);
    Tensor<std::int32_t> targets({2, 3, 3}, 1);
    Tensor<float> mask({2, 3, 3});  // zeros
    CHECK(masked_ce<float>(logits, targets, &mask) == 0.0f);
  }

  SUBCASE("uniform logits, four classes: ln 4 regardless of targets") {
    Tensor<float> logits({1, 4, 4, 4}, 0.7f);  // any constant
    for (std::int32_t fill : {0, 1, 3}) {
      Tensor<std::int32_t> targets({1, 4, 4}, fill);
      CHECK(masked_ce<float>(logits, targets, nullptr) ==
            doctest::Approx(std::log(4.0)).epsilon(1e-5));
    }
  }

  SUBCASE("all pixels IGNORE gives zero") {
    Tensor<float> logits({1, 2, 2, 2}, 0.3f);
    Tensor<std::int32_t> targets({1, 2, 2}, kIgnoreLabel);
    CHECK(masked_ce<float>(logits, targets, nullptr) == 0.0f);
  }

  SUBCASE("shape and value violations are contract errors") {
    Tensor<float> logits({1, 2, 2, 2});
    Tensor<std::int32_t> bad_shape({1, 2, 3});
    CHECK_THROWS_AS(masked_ce<float>(logits, bad_shape, nullptr), ContractError);
    Tensor<std::int32_t> bad_value({1, 2, 2}, 9);
    CHECK_THROWS_AS(masked_ce<float>(logits, bad_value, nullptr), ContractError);
    Tensor<std::int32_t> targets({1, 2, 2});
    Tensor<float> bad_mask({1, 2, 3});
    CHECK_THROWS_AS(masked_ce<float>(logits, targets, &bad_mask), ContractError);
  }
}

TEST_CASE("masked_ce denominator counts non-IGNORE pixels, mask zeros included") {
  // two valid pixels, one of them masked out; one IGNORE pixel
  Tensor<double> logits({1, 2, 1, 3});
  logits.at(0, 0, 0, 0) = 1.0;  // pixel 0: target 0
  logits.at(0, 1, 0, 0) = -1.0;
  logits.at(0, 0, 0, 1) = 0.3;  // pixel 1: target 1, masked out
  logits.at(0, 1, 0, 1) = 0.8;
  Tensor<std::int32_t> targets({1, 1, 3});
  targets[0] = 0;
  targets[1] = 1;
  targets[2] = kIgnoreLabel;
  Tensor<double> mask({1, 1, 3});
  mask[0] = 1.0;
  mask[1] = 0.0;
  mask[2] = 1.0;  // irrelevant, pixel is IGNORE

  const double ce0 = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)));
  // denominator is 2 (two non-IGNORE pixels), not 1
  CHECK(masked_ce<double>(logits, targets, &mask) == doctest::Approx(ce0 / 2.0).epsilon(1e-12));
}

TEST_CASE("masked_ce agrees with the independent reference") {
  Rng rng(3);
  auto logits = random_tensor<double>({3, 5, 6, 7}, rng, -3.0, 3.0);
  Tensor<std::int32_t> targets({3, 6, 7});
  Tensor<double> mask({3, 6, 7});
  for (std::int64_t i = 0; i < targets.size(); ++i) {
    targets[i] = rng.bernoulli(0.15) ? kIgnoreLabel : rng.uniform_int(0, 4);
    mask[i] = rng.bernoulli(0.3) ? 0.0 : 1.0;
  }
  const double got = masked_ce<double>(logits, targets, &mask);
  const double want = oracle::cross_entropy(logits, targets, &mask, kIgnoreLabel);
  CHECK(got == doctest::Approx(want).epsilon(1e-10));

  const double got_unmasked = masked_ce<double>(logits, targets, nullptr);
  const double want_unmasked = oracle::cross_entropy(logits, targets, nullptr, kIgnoreLabel);
  CHECK(got_unmasked == doctest::Approx(want_unmasked).epsilon(1e-10));
}

TEST_CASE("masked_ce gradient matches finite differences") {
  Rng rng(4);
  auto logits = random_tensor<double>({2, 3, 4, 4}, rng, -2.0, 2.0);
  Tensor<std::int32_t> targets({2, 4, 4});
  Tensor<double> mask({2, 4, 4});
  for (std::int64_t i = 0; i < targets.size(); ++i) {
    targets[i] = rng.bernoulli(0.2) ? kIgnoreLabel : rng.uniform_int(0, 2);
    mask[i] = rng.bernoulli(0.25) ? 0.0 : 1.0;
  }
  Tensor<double> dlogits;
  masked_ce<double>(logits, targets, &mask, &dlogits);

  const double eps = 1e-6;
  Rng pick(5);
  for (int t = 0; t < 30; ++t) {
    const int i = pick.uniform_int(0, static_cast<int>(logits.size()) - 1);
    const double save = logits[i];
    logits[i] = save + eps;
    const double up = masked_ce<double>(logits, targets, &mask);
    logits[i] = save - eps;
    const double dn = masked_ce<double>(logits, targets, &mask);
    logits[i] = save;
    CHECK(dlogits[i] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-5));
  }
}

TEST_CASE("softmax probabilities are normalized, positive, and below one") {
  Rng rng(6);
  auto logits = random_tensor<float>({2, 5, 3, 3}, rng, -4.0, 4.0);
  auto probs = softmax_probs(logits);
  for (int i = 0; i < 2; ++i)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        float sum = 0.0f;
        for (int c = 0; c < 5; ++c) {
          const float p = probs.at(i, c, y, x);
          CHECK(p > 0.0f);
          CHECK(p < 1.0f);
          sum += p;
        }
        CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
      }

  Tensor<float> zeros({1, 4, 2, 2});
  auto uniform = softmax_probs(zeros);
  for (float p : uniform) CHECK(p == doctest::Approx(0.25f).epsilon(1e-6));
}

TEST_CASE("pseudo_label argmax, tie-break, threshold, and validity") {
  Tensor<float> probs({1, 3, 1, 4});
  // pixel 0: clear winner class 2 at 0.96
  probs.at(0, 0, 0, 0) = 0.02f; probs.at(0, 1, 0, 0) = 0.02f; probs.at(0, 2, 0, 0) = 0.96f;
  // pixel 1: tie between classes 0 and 2 -> lowest index wins
  probs.at(0, 0, 0, 1) = 0.4f; probs.at(0, 1, 0, 1) = 0.2f; probs.at(0, 2, 0, 1) = 0.4f;
  // pixel 2: max exactly at tau -> strict comparison keeps mask 0
  probs.at(0, 0, 0, 2) = 0.95f; probs.at(0, 1, 0, 2) = 0.03f; probs.at(0, 2, 0, 2) = 0.02f;
  // pixel 3: winner below tau
  probs.at(0, 0, 0, 3) = 0.5f; probs.at(0, 1, 0, 3) = 0.3f; probs.at(0, 2, 0, 3) = 0.2f;

  auto out = pseudo_label<float>(probs, 0.95);
  CHECK(out.labels[0] == 2);
  CHECK(out.mask[0] == 1.0f);
  CHECK(out.labels[1] == 0);
  CHECK(out.mask[1] == 0.0f);
  CHECK(out.labels[2] == 0);
  CHECK(out.mask[2] == 0.0f);
  CHECK(out.labels[3] == 0);
  CHECK(out.mask[3] == 0.0f);
  CHECK(out.pass_rate == doctest::Approx(0.25));

  SUBCASE("validity map forces IGNORE and zero mask") {
    Tensor<std::int32_t> valid({1, 1, 4});
    valid[1] = kIgnoreLabel;
    valid[3] = kIgnoreLabel;
    auto masked = pseudo_label<float>(probs, 0.5, &valid);
    CHECK(masked.labels[1] == kIgnoreLabel);
    CHECK(masked.mask[1] == 0.0f);
    CHECK(masked.labels[3] == kIgnoreLabel);
    CHECK(masked.labels[0] == 2);
    // pass rate over the two valid pixels: pixel0 passes (0.96>0.5), pixel2 passes (0.95>0.5)
    CHECK(masked.pass_rate == doctest::Approx(1.0));
  }

  SUBCASE("bad tau rejected") {
    CHECK_THROWS_AS(pseudo_label<float>(probs, 1.5), ConfigError);
  }
}

TEST_CASE("mask monotonicity in tau") {
  Rng rng(7);
  auto logits = random_tensor<float>({2, 4, 8, 8}, rng, -2.0, 2.0);
  auto probs = softmax_probs(logits);
  auto loose = pseudo_label<float>(probs, 0.3);
  auto tight = pseudo_label<float>(probs, 0.6);
  for (std::int64_t i = 0; i < loose.mask.size(); ++i)
    CHECK(loose.mask[i] >= tight.mask[i]);
  CHECK(loose.pass_rate >= tight.pass_rate);
}

TEST_CASE("supervised_loss is definitional and deterministic") {
  auto m = tiny_model(3, 21);
  Rng rng(22);
  auto images = random_tensor<float>({2, 3, 16, 16}, rng, 0.0, 1.0);
  Tensor<std::int32_t> labels({2, 16, 16});
  for (auto& v : labels) v = rng.uniform_int(0, 2);

  const float a = supervised_loss(m, images, labels);
  const float b = supervised_loss(m, images, labels);
  CHECK(a == b);

  // equals masked_ce on the same logits
  model::PerturbableSegModel<float>::ForwardOptions opt;
  opt.training = false;
  opt.update_running = false;
  auto logits = m.forward(images, opt);
  CHECK(a == masked_ce<float>(logits, labels, nullptr));

  Tensor<std::int32_t> empty;
  CHECK_THROWS_AS(supervised_loss(m, images, empty), ContractError);
}

TEST_CASE("volatile_supervised_loss determinism and policy checks") {
  auto m = tiny_model(3, 23);
  Rng rng(24);
  auto images = random_tensor<float>({2, 3, 16, 16}, rng, 0.0, 1.0);
  Tensor<std::int32_t> labels({2, 16, 16});
  for (auto& v : labels) v = rng.uniform_int(0, 2);

  model::PerturbationPolicy pol;
  Rng r1(99), r2(99);
  std::vector<model::BlockId> c1, c2;
  const float a = volatile_supervised_loss(m, images, labels, pol, r1, &c1);
  const float b = volatile_supervised_loss(m, images, labels, pol, r2, &c2);
  CHECK(a == b);
  REQUIRE(c1.size() == 1);
  CHECK(c1[0] == c2[0]);

  model::PerturbationPolicy off;
  off.enabled = false;
  Rng r3(1);
  CHECK_THROWS_AS(volatile_supervised_loss(m, images, labels, off, r3), ContractError);

  m.set_eligible_blocks({});
  Rng r4(1);
  CHECK_THROWS_AS(volatile_supervised_loss(m, images, labels, pol, r4), ConfigError);
}

TEST_CASE("unlabeled_losses threshold extremes and determinism") {
  auto m = tiny_model(4, 25);
  Rng rng(26);
  const int n = 4;
  auto weak = random_tensor<float>({n, 3, 16, 16}, rng, 0.0, 1.0);
  auto strong1 = random_tensor<float>({n, 3, 16, 16}, rng, 0.0, 1.0);
  auto strong2 = random_tensor<float>({n, 3, 16, 16}, rng, 0.0, 1.0);
  Tensor<std::int32_t> valid({n, 16, 16});
  model::PerturbationPolicy pol;

  SUBCASE("tau = 1.0 silences every unlabeled term") {
    UnlabeledSpec spec;
    spec.tau = 1.0;
    Rng r(31);
    auto out = unlabeled_losses(m, weak, strong1, strong2, valid, spec, pol, r);
    CHECK(out.l_u_s == 0.0f);
    CHECK(out.l_u_fp == 0.0f);
    CHECK(out.l_u_np == 0.0f);
    CHECK(out.mask_pass_rate == 0.0);
  }

  SUBCASE("tau = 0.0 passes every pixel") {
    UnlabeledSpec spec;
    spec.tau = 0.0;
    Rng r(32);
    auto out = unlabeled_losses(m, weak, strong1, strong2, valid, spec, pol, r);
    CHECK(out.mask_pass_rate == 1.0);
    CHECK(out.l_u_s > 0.0f);
  }

  SUBCASE("untrained model at tau 0.95 rarely passes") {
    UnlabeledSpec spec;
    spec.tau = 0.95;
    Rng r(33);
    auto out = unlabeled_losses(m, weak, strong1, strong2, valid, spec, pol, r);
    CHECK(out.mask_pass_rate < 0.05);
  }

  SUBCASE("same rng seed reproduces every term") {
    UnlabeledSpec spec;
    spec.tau = 0.2;
    Rng ra(34), rb(34);
    auto a = unlabeled_losses(m, weak, strong1, strong2, valid, spec, pol, ra);
    auto b = unlabeled_losses(m, weak, strong1, strong2, valid, spec, pol, rb);
    CHECK(a.l_u_s == b.l_u_s);
    CHECK(a.l_u_fp == b.l_u_fp);
    CHECK(a.l_u_np == b.l_u_np);
    CHECK(a.chosen == b.chosen);
  }

  SUBCASE("misaligned strong views are a contract error") {
    auto bad = random_tensor<float>({n, 3, 16, 8}, rng, 0.0, 1.0);
    UnlabeledSpec spec;
    Rng r(35);
    CHECK_THROWS_AS(unlabeled_losses(m, weak, bad, strong2, valid, spec, pol, r), ContractError);
  }
}

TEST_CASE("total_loss formula, bounds, and errors") {
  LossWeights w;  // defaults: lambda_x 1, s 0.5, fp/np 0.25, lambda_x_np 0

  SUBCASE("lambda_x_np = 0 reduces to the baseline combination") {
    CHECK(total_loss(2.0, 99.0, 4.0, 8.0, 16.0, w) ==
          doctest::Approx(1.0 * 2.0 + 0.5 * 4.0 + 0.25 * 8.0 + 0.25 * 16.0));
  }

  SUBCASE("all terms zero gives zero") { CHECK(total_loss(0, 0, 0, 0, 0, w) == 0.0); }

  SUBCASE("hand-computed combination") {
    w.lambda_x_np = 0.25;
    CHECK(total_loss(1.0, 2.0, 4.0, 8.0, 16.0, w) == doctest::Approx(9.25));
  }

  SUBCASE("labeled weight is conserved under the schedule") {
    for (double lam : {0.0, 0.1, 0.25, 0.7, 1.0}) {
      w.lambda_x_np = lam;
      CHECK((w.lambda_x - w.lambda_x_np) + w.lambda_x_np == doctest::Approx(w.lambda_x));
    }
  }

  SUBCASE("invalid weights rejected") {
    w.lambda_x_np = 1.5;
    CHECK_THROWS_AS(total_loss(1, 1, 1, 1, 1, w), ConfigError);
    w.lambda_x_np = 0.0;
    w.lambda_u_fp = -0.1;
    CHECK_THROWS_AS(total_loss(1, 1, 1, 1, 1, w), ConfigError);
  }
}

TEST_CASE("pseudo-label branch contributes no gradient") {
  auto m = tiny_model(3, 41);
  Rng rng(42);
  const int n = 2;
  trainer::StepBatch<float> batch;
  batch.lab_images = random_tensor<float>({1, 3, 16, 16}, rng, 0.0, 1.0);
  batch.lab_labels = Tensor<std::int32_t>({1, 16, 16});
  batch.weak_images = random_tensor<float>({n, 3, 16, 16}, rng, 0.0, 1.0);
  batch.strong1 = random_tensor<float>({n, 3, 16, 16}, rng, 0.0, 1.0);
  batch.strong2 = random_tensor<float>({n, 3, 16, 16}, rng, 0.0, 1.0);
  batch.valid = Tensor<std::int32_t>({n, 16, 16});

  // computing pseudo-labels alone must leave all parameter gradients at zero
  m.zero_grad();
  model::PerturbableSegModel<float>::ForwardOptions fwd;
  fwd.training = true;
  fwd.update_running = false;
  auto pseudo = pseudo_label(softmax_probs(m.forward(batch.weak_images, fwd)), 0.0, &batch.valid);
  for (auto& p : m.params())
    for (std::int64_t i = 0; i < p.grad->size(); ++i) CHECK((*p.grad)[i] == 0.0f);

  // gradients from the consistency branch are identical whether the pseudo
  // targets are recomputed live or pinned: the analytic gradient carries no
  // dependence through the weak branch.
  trainer::StepSettings st;
  st.weights.lambda_x = 0.0;
  st.weights.lambda_u_s = 0.5;
  st.weights.lambda_u_fp = 0.0;
  st.weights.lambda_u_np = 0.0;
  st.unlabeled.tau = 0.0;
  st.update_running = false;

  Rng ra(50);
  trainer::compute_step(m, batch, st, ra, true);
  std::vector<Tensor<float>> live;
  for (auto& p : m.params()) live.push_back(*p.grad);

  Rng rb(50);
  trainer::compute_step(m, batch, st, rb, true, &pseudo);
  auto params = m.params();
  for (std::size_t i = 0; i < params.size(); ++i)
    CHECK(tensors_equal(live[i], *params[i].grad));
}

TEST_CASE("step total equals an independently assembled baseline combination") {
  auto m = tiny_model(4, 61);
  Rng rng(62);
  const int n = 2;
  trainer::StepBatch<float> batch;
  batch.lab_images = random_tensor<float>({n, 3, 16, 16}, rng, 0.0, 1.0);
  batch.lab_labels = Tensor<std::int32_t>({n, 16, 16});
  for (auto& v : batch.lab_labels) v = rng.uniform_int(0, 3);
  batch.weak_images = random_tensor<float>({n, 3, 16, 16}, rng, 0.0, 1.0);
  batch.strong1 = random_tensor<float>({n, 3, 16, 16}, rng, 0.0, 1.0);
  batch.strong2 = random_tensor<float>({n, 3, 16, 16}, rng, 0.0, 1.0);
  batch.valid = Tensor<std::int32_t>({n, 16, 16});

  trainer::StepSettings st;
  st.weights.lambda_x = 1.0;
  st.weights.lambda_x_np = 0.0;   // volatile branch off
  st.weights.lambda_u_s = 0.5;
  st.weights.lambda_u_fp = 0.25;
  st.weights.lambda_u_np = 0.0;   // np branch off
  st.unlabeled.tau = 0.1;
  st.update_running = false;

  Rng step_rng(70);
  auto diag = trainer::compute_step(m, batch, st, step_rng, /*do_backward=*/false);

  // recompute each term by hand with an identically seeded stream
  Rng manual(70);
  model::PerturbableSegModel<float>::ForwardOptions fwd;
  fwd.training = true;
  fwd.update_running = false;
  auto pseudo = pseudo_label(softmax_probs(m.forward(batch.weak_images, fwd)), st.unlabeled.tau,
                             &batch.valid);
  double l_u_s = 0.0;
  for (const Tensor<float>* view : {&batch.strong1, &batch.strong2}) {
    auto mixed = augment::cutmix_pair(*view, pseudo.labels, pseudo.mask, st.unlabeled.cutmix_prob,
                                      st.unlabeled.cutmix_area_min, st.unlabeled.cutmix_area_max,
                                      manual);
    l_u_s += masked_ce<float>(m.forward(mixed.images, fwd), mixed.pseudo_labels, &mixed.masks);
  }
  l_u_s /= 2.0;
  auto fp_opt = fwd;
  fp_opt.feature_dropout_rate = st.unlabeled.fp_rate;
  fp_opt.rng = &manual;
  const double l_u_fp =
      masked_ce<float>(m.forward(batch.weak_images, fp_opt), pseudo.labels, &pseudo.mask);
  const double l_x = masked_ce<float>(m.forward(batch.lab_images, fwd), batch.lab_labels, nullptr);

  CHECK(diag.losses.l_x == doctest::Approx(l_x).epsilon(1e-6));
  CHECK(diag.losses.l_u_s == doctest::Approx(l_u_s).epsilon(1e-6));
  CHECK(diag.losses.l_u_fp == doctest::Approx(l_u_fp).epsilon(1e-6));
  CHECK(diag.losses.total ==
        doctest::Approx(1.0 * l_x + 0.5 * l_u_s + 0.25 * l_u_fp).epsilon(1e-6));
}
