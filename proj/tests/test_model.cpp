#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <set>

#include "mlpmatch/model/seg_model.hpp"
#include "oracle.hpp"

using namespace mlpmatch;
using namespace mlpmatch::model;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Scalar probe: projection of y onto a fixed random direction. Its gradient
// w.r.t. y is the direction itself, which seeds the analytic backward.
template <typename T>
T project(const Tensor<T>& y, const Tensor<T>& dir) {
  T acc = T(0);
  for (std::int64_t i = 0; i < y.size(); ++i) acc += y[i] * dir[i];
  return acc;
}

}  // namespace

TEST_CASE("conv2d forward matches direct convolution") {
  Rng rng(101);
  struct Case { int in_c, out_c, k, stride, dil, h, w; };
  for (const Case& cs : {Case{3, 5, 3, 1, 1, 9, 11}, Case{4, 2, 3, 2, 1, 8, 8},
                         Case{2, 3, 3, 1, 2, 10, 7}, Case{6, 4, 1, 1, 1, 5, 5},
                         Case{2, 2, 3, 1, 4, 12, 12}}) {
    Conv2d<double> conv(cs.in_c, cs.out_c, cs.k, cs.stride, cs.dil, true);
    conv.init(rng);
    for (auto& b : conv.bias_v) b = rng.uniform(-0.5, 0.5);
    auto x = random_tensor<double>({2, cs.in_c, cs.h, cs.w}, rng);
    auto got = conv.forward(x, nullptr);
    const int pad = cs.dil * (cs.k - 1) / 2;
    auto want = oracle::conv2d(x, conv.weight, conv.bias_v.data(), cs.out_c, cs.k, cs.stride,
                               cs.dil, pad);
    REQUIRE(got.same_shape(want));
    CHECK(max_abs_diff(got, want) < 1e-10);
  }
}

TEST_CASE("conv2d backward matches finite differences") {
  Rng rng(102);
  Conv2d<double> conv(3, 4, 3, 2, 1, true);
  conv.init(rng);
  auto x = random_tensor<double>({2, 3, 7, 7}, rng);
  auto dir = random_tensor<double>({2, 4, 4, 4}, rng);

  Conv2d<double>::Ctx ctx;
  auto y = conv.forward(x, &ctx);
  REQUIRE(y.same_shape(dir));
  conv.wgrad.fill(0.0);
  conv.bgrad.fill(0.0);
  auto dx = conv.backward(ctx, dir);

  const double eps = 1e-6;
  auto fd_check = [&](double* slot, double analytic) {
    const double save = *slot;
    *slot = save + eps;
    const double up = project(conv.forward(x, nullptr), dir);
    *slot = save - eps;
    const double dn = project(conv.forward(x, nullptr), dir);
    *slot = save;
    CHECK(analytic == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-5));
  };
  Rng pick(7);
  for (int t = 0; t < 10; ++t) {
    const int wi = pick.uniform_int(0, static_cast<int>(conv.weight.size()) - 1);
    fd_check(&conv.weight[wi], conv.wgrad[wi]);
  }
  fd_check(&conv.bias_v[1], conv.bgrad[1]);
  for (int t = 0; t < 10; ++t) {
    const int xi = pick.uniform_int(0, static_cast<int>(x.size()) - 1);
    const double save = x[xi];
    x[xi] = save + eps;
    const double up = project(conv.forward(x, nullptr), dir);
    x[xi] = save - eps;
    const double dn = project(conv.forward(x, nullptr), dir);
    x[xi] = save;
    CHECK(dx[xi] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-5));
  }
}

TEST_CASE("batchnorm train mode normalizes and tracks running stats") {
  Rng rng(103);
  BatchNorm2d<double> bn(3);
  auto x = random_tensor<double>({4, 3, 5, 5}, rng, -2.0, 3.0);

  BatchNorm2d<double>::Ctx ctx;
  auto y = bn.forward(x, &ctx, /*training=*/true, /*update_running=*/true);

  const std::int64_t count = 4 * 5 * 5;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) {
          sum += y.at(i, c, h, w);
          sq += y.at(i, c, h, w) * y.at(i, c, h, w);
        }
    const double mean = sum / count;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(sq / count - mean * mean == doctest::Approx(1.0).epsilon(1e-4));

    // running stats: EMA with momentum 0.1 toward batch mean / unbiased var
    double xsum = 0.0, xsq = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int h = 0; h < 5; ++h)
        for (int w = 0; w < 5; ++w) {
          xsum += x.at(i, c, h, w);
          xsq += x.at(i, c, h, w) * x.at(i, c, h, w);
        }
    const double bmean = xsum / count;
    const double bvar = (xsq / count - bmean * bmean) * count / (count - 1);
    CHECK(bn.running_mean[c] == doctest::Approx(0.9 * 0.0 + 0.1 * bmean).epsilon(1e-8));
    CHECK(bn.running_var[c] == doctest::Approx(0.9 * 1.0 + 0.1 * bvar).epsilon(1e-6));
  }
}

TEST_CASE("batchnorm eval mode uses running stats and no update happens") {
  Rng rng(104);
  BatchNorm2d<double> bn(2);
  bn.running_mean[0] = 0.5;
  bn.running_var[0] = 4.0;
  bn.gamma[0] = 2.0;
  bn.beta[0] = -1.0;
  auto x = random_tensor<double>({1, 2, 3, 3}, rng);
  auto y = bn.forward(x, nullptr, /*training=*/false, /*update_running=*/true);
  for (int h = 0; h < 3; ++h)
    for (int w = 0; w < 3; ++w) {
      const double want = 2.0 * (x.at(0, 0, h, w) - 0.5) / std::sqrt(4.0 + 1e-5) - 1.0;
      CHECK(y.at(0, 0, h, w) == doctest::Approx(want).epsilon(1e-12));
    }
  CHECK(bn.running_mean[0] == 0.5);  // eval never updates
  CHECK(bn.running_var[0] == 4.0);
}

TEST_CASE("batchnorm training forward with update_running off leaves stats untouched") {
  Rng rng(105);
  BatchNorm2d<double> bn(2);
  auto x = random_tensor<double>({2, 2, 4, 4}, rng);
  bn.forward(x, nullptr, /*training=*/true, /*update_running=*/false);
  CHECK(bn.running_mean[0] == 0.0);
  CHECK(bn.running_var[0] == 1.0);
}

TEST_CASE("batchnorm backward matches finite differences") {
  Rng rng(106);
  BatchNorm2d<double> bn(2);
  bn.gamma[0] = 1.3;
  bn.gamma[1] = 0.7;
  bn.beta[0] = 0.2;
  auto x = random_tensor<double>({3, 2, 4, 4}, rng);
  auto dir = random_tensor<double>({3, 2, 4, 4}, rng);

  BatchNorm2d<double>::Ctx ctx;
  bn.ggrad.fill(0.0);
  bn.bgrad.fill(0.0);
  auto y = bn.forward(x, &ctx, true, false);
  auto dx = bn.backward(ctx, dir);

  const double eps = 1e-6;
  auto loss_at = [&]() { return project(bn.forward(x, nullptr, true, false), dir); };
  Rng pick(8);
  for (int t = 0; t < 12; ++t) {
    const int xi = pick.uniform_int(0, static_cast<int>(x.size()) - 1);
    const double save = x[xi];
    x[xi] = save + eps;
    const double up = loss_at();
    x[xi] = save - eps;
    const double dn = loss_at();
    x[xi] = save;
    CHECK(dx[xi] == doctest::Approx((up - dn) / (2 * eps)).epsilon(2e-4));
  }
  for (int c = 0; c < 2; ++c) {
    double save = bn.gamma[c];
    bn.gamma[c] = save + eps;
    const double up = loss_at();
    bn.gamma[c] = save - eps;
    const double dn = loss_at();
    bn.gamma[c] = save;
    CHECK(bn.ggrad[c] == doctest::Approx((up - dn) / (2 * eps)).epsilon(1e-6));

    save = bn.beta[c];
    bn.beta[c] = save + eps;
    const double up2 = loss_at();
    bn.beta[c] = save - eps;
    const double dn2 = loss_at();
    bn.beta[c] = save;
    CHECK(bn.bgrad[c] == doctest::Approx((up2 - dn2) / (2 * eps)).epsilon(1e-6));
  }
}

TEST_CASE("bilinear upsample matches the image-resize reference and its adjoint") {
  Rng rng(107);
  // forward cross-check against the augment-module resizer on a {1,3,H,W} map
  auto x = random_tensor<float>({1, 3, 6, 5}, rng);
  Tensor<float> img({3, 6, 5});
  for (std::int64_t i = 0; i < img.size(); ++i) img[i] = x[i];
  auto up = upsample_bilinear(x, 24, 20);
  auto ref = augment::resize_bilinear_image(img, 24, 20);
  for (std::int64_t i = 0; i < ref.size(); ++i)
    CHECK(up[i] == doctest::Approx(ref[i]).epsilon(1e-6));

  // adjoint identity: <U x, y> == <x, U^T y>
  auto xd = random_tensor<double>({2, 3, 7, 9}, rng);
  auto yd = random_tensor<double>({2, 3, 28, 36}, rng);
  auto ux = upsample_bilinear(xd, 28, 36);
  auto uty = upsample_bilinear_backward(yd, 7, 9);
  CHECK(project(ux, yd) == doctest::Approx(project(xd, uty)).epsilon(1e-10));
}

TEST_CASE("bottleneck skip mode is exactly the shortcut path") {
  Rng rng(108);

  SUBCASE("identity shortcut: output is bitwise the input") {
    PerturbableBottleneck<float> block(8, 4, 8, 1, 1);
    block.init(rng);
    auto x = random_tensor<float>({2, 8, 6, 6}, rng);
    block.set_mode(BlockMode::kSkip);
    auto y = block.forward(x, nullptr, true, false, true);
    CHECK(tensors_equal(x, y));
  }

  SUBCASE("projection shortcut: conv+bn, relu gated by the flag") {
    PerturbableBottleneck<float> block(8, 4, 12, 2, 1);
    block.init(rng);
    auto x = random_tensor<float>({2, 8, 6, 6}, rng);
    block.set_mode(BlockMode::kSkip);
    auto with_relu = block.forward(x, nullptr, true, false, true);
    for (float v : with_relu) CHECK(v >= 0.0f);
    auto no_relu = block.forward(x, nullptr, true, false, false);
    bool any_negative = false;
    for (float v : no_relu) any_negative |= (v < 0.0f);
    CHECK(any_negative);
    // projection output equals running conv_p+bn_p directly
    typename Conv2d<float>::Ctx cc;
    auto want = block.bn_p.forward(block.conv_p.forward(x, &cc), nullptr, true, false);
    CHECK(max_abs_diff(no_relu, want) == 0.0f);
  }
}

TEST_CASE("bottleneck active backward matches finite differences") {
  Rng rng(109);
  PerturbableBottleneck<double> block(4, 3, 6, 2, 1);  // projection shortcut
  block.init(rng);
  auto x = random_tensor<double>({2, 4, 6, 6}, rng);
  auto dir = random_tensor<double>({2, 6, 3, 3}, rng);

  PerturbableBottleneck<double>::Ctx ctx;
  auto y = block.forward(x, &ctx, true, false, true);
  REQUIRE(y.same_shape(dir));
  auto dx = block.backward(ctx, dir);

  std::vector<ParamRef<double>> ps;
  block.collect_params("b", ps);
  for (auto& p : ps) p.grad->fill(0.0);
  block.backward(ctx, dir);

  const double eps = 1e-6;
  auto loss_at = [&]() { return project(block.forward(x, nullptr, true, false, true), dir); };
  Rng pick(9);
  for (auto& p : ps) {
    const int idx = pick.uniform_int(0, static_cast<int>(p.value->size()) - 1);
    const double save = (*p.value)[idx];
    (*p.value)[idx] = save + eps;
    const double up = loss_at();
    (*p.value)[idx] = save - eps;
    const double dn = loss_at();
    (*p.value)[idx] = save;
    const double fd = (up - dn) / (2 * eps);
    if (std::abs(fd) > 1e-8)
      CHECK((*p.grad)[idx] == doctest::Approx(fd).epsilon(5e-4));
  }
  for (int t = 0; t < 8; ++t) {
    const int xi = pick.uniform_int(0, static_cast<int>(x.size()) - 1);
    const double save = x[xi];
    x[xi] = save + eps;
    const double up = loss_at();
    x[xi] = save - eps;
    const double dn = loss_at();
    x[xi] = save;
    CHECK(dx[xi] == doctest::Approx((up - dn) / (2 * eps)).epsilon(5e-4));
  }
}

TEST_CASE("model forward shape, determinism, and parameter budget") {
  Rng rng(110);
  auto model = build_model<float>(4);
  model.init_params(rng);
  CHECK(model.param_count() < 2000000);

  auto tiny = build_model<float>(4, 0.25, {1, 1, 1, 1});
  CHECK(tiny.param_count() <= 5000);

  auto x = random_tensor<float>({2, 3, 64, 64}, rng, 0.0, 1.0);
  PerturbableSegModel<float>::ForwardOptions opt;
  opt.training = false;
  auto y1 = model.forward(x, opt);
  REQUIRE(y1.rank() == 4);
  CHECK(y1.dim(0) == 2);
  CHECK(y1.dim(1) == 4);
  CHECK(y1.dim(2) == 64);
  CHECK(y1.dim(3) == 64);
  auto y2 = model.forward(x, opt);
  CHECK(tensors_equal(y1, y2));

  // probabilities sum to one
  auto probs = model.predict_probs(x);
  for (int h = 0; h < 8; ++h) {
    float s = 0.0f;
    for (int c = 0; c < 4; ++c) s += probs.at(0, c, h * 8, h * 8);
    CHECK(s == doctest::Approx(1.0f).epsilon(1e-5));
  }
}

TEST_CASE("model parameter names are unique and grouped") {
  auto model = build_model<float>(3);
  auto params = model.params();
  std::set<std::string> names;
  int decoder = 0;
  for (auto& p : params) {
    CHECK(names.insert(p.name).second);
    if (p.decoder_group) ++decoder;
    CHECK(p.value->size() == p.grad->size());
  }
  CHECK(decoder == 5);  // decoder conv w, bn gamma/beta, cls w/b
  for (auto& p : params)
    CHECK(p.decoder_group == (p.name.rfind("decoder.", 0) == 0));

  auto buffers = model.buffers();
  std::set<std::string> bnames;
  for (auto& b : buffers) CHECK(bnames.insert(b.name).second);
}

TEST_CASE("perturbed forward equals manually forced skip") {
  Rng rng(111);
  auto model = build_model<float>(4, 0.5, {1, 2, 1, 1});
  model.init_params(rng);
  auto x = random_tensor<float>({2, 3, 32, 32}, rng, 0.0, 1.0);

  PerturbationPolicy pol;
  Rng draw(77);
  std::vector<BlockId> chosen;
  PerturbableSegModel<float>::ForwardOptions opt;
  opt.training = true;
  opt.update_running = false;
  opt.perturb = &pol;
  opt.rng = &draw;
  auto perturbed = model.forward(x, opt, nullptr, &chosen);
  REQUIRE(chosen.size() == 1);
  CHECK(model.all_modes_active());

  model.block(chosen[0].stage, chosen[0].block).set_mode(BlockMode::kSkip);
  PerturbableSegModel<float>::ForwardOptions plain;
  plain.training = true;
  plain.update_running = false;
  auto forced = model.forward(x, plain);
  model.block(chosen[0].stage, chosen[0].block).set_mode(BlockMode::kActive);
  CHECK(tensors_equal(perturbed, forced));

  // same rng seed reproduces the same choice
  Rng draw2(77);
  auto set2 = model.sample_skip_set(pol, draw2);
  REQUIRE(set2.size() == 1);
  CHECK(set2[0] == chosen[0]);
}

TEST_CASE("skip sampling honors eligibility and stage weights") {
  auto model = build_model<float>(2, 0.25, {2, 2, 2, 2});
  Rng rng(112);

  SUBCASE("zero-weight stages are never chosen") {
    PerturbationPolicy pol;
    pol.stage_weights = {0.0, 0.0, 1.0, 1.0};
    std::map<int, int> stage_hits;
    for (int i = 0; i < 500; ++i) {
      auto set = model.sample_skip_set(pol, rng);
      REQUIRE(set.size() == 1);
      stage_hits[set[0].stage]++;
    }
    CHECK(stage_hits.count(0) == 0);
    CHECK(stage_hits.count(1) == 0);
    CHECK(stage_hits[2] > 0);
    CHECK(stage_hits[3] > 0);
  }

  SUBCASE("restricted eligible set is respected") {
    model.set_eligible_stages({4});
    PerturbationPolicy pol;
    for (int i = 0; i < 100; ++i) {
      auto set = model.sample_skip_set(pol, rng);
      REQUIRE(set.size() == 1);
      CHECK(set[0].stage == 3);
    }
    model.set_eligible_stages({1, 2, 3, 4});
  }

  SUBCASE("multi-skip draws without replacement") {
    PerturbationPolicy pol;
    pol.max_skipped = 3;
    for (int i = 0; i < 50; ++i) {
      auto set = model.sample_skip_set(pol, rng);
      REQUIRE(set.size() == 3);
      std::set<std::pair<int, int>> uniq;
      for (auto& id : set) CHECK(uniq.insert({id.stage, id.block}).second);
    }
  }

  SUBCASE("bad policies are rejected") {
    PerturbationPolicy pol;
    pol.stage_weights = {0.0, 0.0, 0.0, 0.0};
    CHECK_THROWS_AS(model.sample_skip_set(pol, rng), ConfigError);
    pol.stage_weights = {1.0, 1.0, 1.0, -0.5};
    CHECK_THROWS_AS(model.sample_skip_set(pol, rng), ConfigError);
    model.set_eligible_blocks({});
    PerturbationPolicy ok;
    CHECK_THROWS_AS(model.sample_skip_set(ok, rng), ConfigError);
    CHECK_THROWS_AS(model.set_eligible_blocks({{3, 9}}), ConfigError);
  }
}

TEST_CASE("feature dropout and network perturbation are mutually exclusive") {
  Rng rng(113);
  auto model = build_model<float>(2, 0.25, {1, 1, 1, 1});
  model.init_params(rng);
  auto x = random_tensor<float>({2, 3, 16, 16}, rng, 0.0, 1.0);

  PerturbationPolicy pol;
  Rng draw(1);
  PerturbableSegModel<float>::ForwardOptions opt;
  opt.training = true;
  opt.perturb = &pol;
  opt.feature_dropout_rate = 0.5;
  opt.rng = &draw;
  CHECK_THROWS_AS(model.forward(x, opt), ConfigError);

  PerturbationPolicy off;
  off.enabled = false;
  PerturbableSegModel<float>::ForwardOptions opt2;
  opt2.perturb = &off;
  opt2.rng = &draw;
  CHECK_THROWS_AS(model.forward(x, opt2), ContractError);

  PerturbableSegModel<float>::ForwardOptions opt3;
  opt3.feature_dropout_rate = 0.25;
  CHECK_THROWS_AS(model.forward(x, opt3), ConfigError);  // rng missing
}

TEST_CASE("model backward matches finite differences on sampled parameters") {
  Rng rng(114);
  auto model = build_model<double>(3, 0.25, {1, 1, 1, 1});
  model.init_params(rng);
  auto x = random_tensor<double>({2, 3, 16, 16}, rng, 0.0, 1.0);
  auto dir = random_tensor<double>({2, 3, 16, 16}, rng);

  PerturbableSegModel<double>::ForwardOptions opt;
  opt.training = true;
  opt.update_running = false;

  PerturbableSegModel<double>::ForwardCtx ctx;
  model.zero_grad();
  auto y = model.forward(x, opt, &ctx);
  model.backward(ctx, dir);

  auto params = model.params();
  const double eps = 1e-6;
  Rng pick(10);
  int checked = 0;
  for (int t = 0; t < 20; ++t) {
    auto& p = params[static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(params.size()) - 1))];
    const int idx = pick.uniform_int(0, static_cast<int>(p.value->size()) - 1);
    const double save = (*p.value)[idx];
    (*p.value)[idx] = save + eps;
    const double up = project(model.forward(x, opt), dir);
    (*p.value)[idx] = save - eps;
    const double dn = project(model.forward(x, opt), dir);
    (*p.value)[idx] = save;
    const double fd = (up - dn) / (2 * eps);
    const double an = (*p.grad)[idx];
    if (std::abs(fd) < 1e-7 && std::abs(an) < 1e-7) continue;
    CHECK(an == doctest::Approx(fd).epsilon(1e-3));
    ++checked;
  }
  CHECK(checked >= 10);
}
