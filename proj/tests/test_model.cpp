#include "doctest.h"
#include "support.hpp"

#include "mvs/model.hpp"

#include <cmath>

using namespace mvs;

namespace {

struct Batch {
  std::vector<std::vector<ImageRef>> units;
  std::vector<Sample> samples;
};

Batch random_batch(int size, int views, Rng& rng) {
  Batch b;
  for (int i = 0; i < size; ++i) {
    std::vector<ImageRef> unit;
    for (int v = 0; v < views; ++v) unit.push_back(test::shared(test::random_image(224, 224, rng)));
    b.units.push_back(std::move(unit));
  }
  for (const auto& u : b.units) b.samples.emplace_back(u);
  return b;
}

template <typename Scalar>
void check_row_stochastic(const nn::Matrix<Scalar>& p, int rows, int classes) {
  REQUIRE(p.rows() == rows);
  REQUIRE(p.cols() == classes);
  CHECK(p.minCoeff() >= 0);
  CHECK(p.maxCoeff() <= 1);
  for (int r = 0; r < rows; ++r) CHECK(std::abs(double(p.row(r).sum()) - 1.0) < 1e-6);
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an mvs::Error");
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST_CASE("head parameter closed form") {
  // n (V d + 1 + C) + C written out for each published configuration.
  CHECK(head_parameter_count(2048, 4, 2) == 1365LL * 8192 + 1365 + 1365LL * 2 + 2);
  CHECK(head_parameter_count(2048, 4, 2) == 11186177);
  CHECK(head_parameter_count(1024, 4, 2) == 682LL * 4096 + 682 + 682 * 2 + 2);
  CHECK(head_parameter_count(1024, 4, 2) == 2795520);
  CHECK(head_parameter_count(512, 4, 2) == 341LL * 2048 + 341 + 341 * 2 + 2);
  CHECK(head_parameter_count(512, 4, 2) == 699393);
  CHECK(head_parameter_count(2048, 1, 2) == 2048LL * 341 + 341 + 341 * 2 + 2);
  CHECK(head_parameter_count(2048, 1, 2) == 699393);
  CHECK(head_parameter_count(48, 4, 2) == 32 * 192 + 32 + 32 * 2 + 2);
  CHECK(head_parameter_count(48, 4, 3) == 32 * 192 + 32 + 32 * 3 + 3);

  CHECK(hidden_width_for(48, 4) == 32);
  CHECK(hidden_width_for(2048, 4) == 1365);
  CHECK(hidden_width_for(512, 4) == 341);
  CHECK(hidden_width_for(48, 1) == 8);
  CHECK(hidden_width_for(2048, 1) == 341);
}

TEST_CASE("published parameter table") {
  struct Row {
    const char* name;
    std::int64_t trainable, non_trainable, total;
  };
  const Row rows[] = {
      {"bit_m_r50x1", 11186177, 23500352, 34686529}, {"densenet121", 9749376, 83648, 9833024},
      {"inception_v3", 32954529, 34432, 32988961},   {"resnet50", 34720769, 53120, 34773889},
      {"vgg19", 20723777, 0, 20723777},              {"xception", 31993129, 54528, 32047657},
  };
  for (const auto& r : rows) {
    CAPTURE(r.name);
    const auto model = build(backbone_spec(r.name), 2);
    const ParameterCount count = count_parameters(model);
    CHECK(count.trainable == r.trainable);
    CHECK(count.non_trainable == r.non_trainable);
    CHECK(count.total() == r.total);
    CHECK(count.total() - backbone_parameters(model.backbone()).total() ==
          head_parameter_count(model.backbone().feature_dim, 4, 2));
  }
  // BiT: the frozen body leaves only the head trainable.
  CHECK(count_parameters(build(backbone_spec("bit_m_r50x1"), 2)).trainable == head_parameter_count(2048, 4, 2));
}

TEST_CASE("tinyconv parameter accounting") {
  // conv 4x4x3->8, conv 3x3x8->16, conv 3x3x16->48 (all with bias), then a
  // feature normalization layer: gamma, beta trainable; mean, variance frozen.
  const std::int64_t convs = (4 * 4 * 3 * 8 + 8) + (3 * 3 * 8 * 16 + 16) + (3 * 3 * 16 * 48 + 48);
  CHECK(convs == 8520);
  const ParameterCount body = tinyconv_body(48);
  CHECK(body.trainable == convs + 2 * 48);
  CHECK(body.non_trainable == 2 * 48);
  CHECK(body.total() == 8712);

  for (int classes : {2, 3}) {
    auto model = build(backbone_spec("tinyconv"), classes);
    const ParameterCount count = count_parameters(model);
    CHECK(count.total() == 8712 + head_parameter_count(48, 4, classes));
    CHECK(count.non_trainable == 96);
    CHECK(count_allocated(model) == count);
  }
  SUBCASE("separate bodies") {
    auto model = build(backbone_spec("tinyconv"), 2, {.share_backbone = false});
    CHECK(model.backbone_bodies() == 4);
    const ParameterCount count = count_parameters(model);
    CHECK(count.total() - 4 * body.total() == head_parameter_count(48, 4, 2));
    CHECK(count_allocated(model) == count);
  }
  SUBCASE("frozen backbone") {
    BackboneSpec spec = backbone_spec("tinyconv");
    spec.trainable = false;
    auto model = build(spec, 2);
    const ParameterCount count = count_parameters(model);
    CHECK(count.trainable == head_parameter_count(48, 4, 2));
    CHECK(count.non_trainable == 8712);
    CHECK(count_allocated(model) == count);
  }
  SUBCASE("other feature widths") {
    for (int d : {6, 16, 100}) {
      auto model = build(backbone_spec("tinyconv", d), 3);
      CHECK(model.hidden_width() == 4 * d / 6);
      CHECK(count_allocated(model) == count_parameters(model));
      CHECK(tinyconv_body(d).total() == 392 + 1168 + (144 * d + d) + 4 * d);
    }
  }
}

TEST_CASE("hidden-width law for every registered backbone") {
  for (const auto& name : registered_backbones())
    for (int classes : {2, 3}) {
      const BackboneSpec spec = backbone_spec(name);
      const auto multi = build(spec, classes);
      const auto single = build_single_view(spec, classes);
      CHECK(multi.num_views() == 4);
      CHECK(single.num_views() == 1);
      CHECK(multi.hidden_width() == 4 * spec.feature_dim / 6);
      CHECK(single.hidden_width() == spec.feature_dim / 6);
      CHECK(count_parameters(single).total() - backbone_parameters(spec).total() ==
            head_parameter_count(spec.feature_dim, 1, classes));
    }
  CHECK(build(backbone_spec("tinyconv"), 3).hidden_width() == 32);
  CHECK(build(backbone_spec("resnet50"), 2).hidden_width() == 1365);
  CHECK(build(backbone_spec("vgg19"), 2).hidden_width() == 341);
  CHECK(build_single_view(backbone_spec("tinyconv"), 2).hidden_width() == 8);
}

TEST_CASE("build errors") {
  BackboneSpec unknown = backbone_spec("tinyconv");
  unknown.name = "alexnet";
  CHECK(kind_of([&] { build(unknown, 2); }) == ErrorKind::UnknownBackbone);
  CHECK(kind_of([] { backbone_spec("alexnet"); }) == ErrorKind::UnknownBackbone);
  BackboneSpec pretrained = backbone_spec("tinyconv");
  pretrained.weight_init = WeightInit::PretrainedImageNet;
  CHECK(kind_of([&] { build(pretrained, 2); }) == ErrorKind::PretrainedWeightsUnavailable);
  CHECK(kind_of([] { backbone_spec("resnet50", 512); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] { build(backbone_spec("tinyconv"), HeadConfig{3, 2, 24, 0.4}); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] { build(backbone_spec("tinyconv"), HeadConfig{4, 2, 31, 0.4}); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] { build(backbone_spec("tinyconv"), HeadConfig{4, 2, 32, 1.0}); }) == ErrorKind::InvalidArgument);

  auto rng = make_stream(1);
  const Batch batch = random_batch(1, 4, rng);
  const auto descriptor = build(backbone_spec("resnet50"), 2);
  CHECK(kind_of([&] { descriptor.forward(batch.samples, nn::Mode::Eval); }) == ErrorKind::BackboneNotExecutable);
}

TEST_CASE("forward contract") {
  auto rng = make_stream(17);
  const Batch batch = random_batch(5, 4, rng);

  for (int classes : {2, 3}) {
    auto model = build(backbone_spec("tinyconv"), classes, {.seed = 4});
    const auto p = model.forward(batch.samples, nn::Mode::Eval);
    check_row_stochastic(p, 5, classes);
    CHECK(model.forward(batch.samples, nn::Mode::Eval) == p);

    // permuting the batch permutes the rows
    std::vector<Sample> reversed(batch.samples.rbegin(), batch.samples.rend());
    const auto q = model.forward(reversed, nn::Mode::Eval);
    for (int r = 0; r < 5; ++r) CHECK((q.row(r) - p.row(4 - r)).cwiseAbs().maxCoeff() <= 1e-6f);

    auto dropout_rng = make_stream(2);
    check_row_stochastic(model.forward(batch.samples, nn::Mode::Train, &dropout_rng), 5, classes);

    for (auto* param : model.head().parameters()) param->value.setZero();
    const auto uniform = model.forward(batch.samples, nn::Mode::Eval);
    CHECK((uniform.array() - 1.0f / float(classes)).abs().maxCoeff() < 1e-7f);
  }

  SUBCASE("single view") {
    auto model = build_single_view(backbone_spec("tinyconv"), 2);
    const Batch singles = random_batch(3, 1, rng);
    check_row_stochastic(model.forward(singles.samples, nn::Mode::Eval), 3, 2);
    CHECK(kind_of([&] { model.forward(batch.samples, nn::Mode::Eval); }) == ErrorKind::ShapeMismatch);
  }
  SUBCASE("unstandardized input") {
    auto model = build(backbone_spec("tinyconv"), 2);
    std::vector<ImageRef> unit(4, test::shared(Image(100, 100)));
    std::vector<Sample> samples{Sample(unit)};
    CHECK(kind_of([&] { model.forward(samples, nn::Mode::Eval); }) == ErrorKind::ShapeMismatch);
  }
  SUBCASE("different seeds give different weights") {
    auto a = build(backbone_spec("tinyconv"), 2, {.seed = 1});
    auto b = build(backbone_spec("tinyconv"), 2, {.seed = 1});
    auto c = build(backbone_spec("tinyconv"), 2, {.seed = 2});
    CHECK(a.forward(batch.samples, nn::Mode::Eval) == b.forward(batch.samples, nn::Mode::Eval));
    CHECK(a.forward(batch.samples, nn::Mode::Eval) != c.forward(batch.samples, nn::Mode::Eval));
  }
}

namespace {

struct GradientCheck {
  double worst = 0;
  int probes = 0;
  /// Probes straddling a ReLU or max-pool switch; the loss has no derivative there.
  int kinks = 0;
};

/// Analytic versus central-difference gradients over the head parameters and
/// a sample of the backbone parameters. A probe whose one-sided slopes differ
/// by at least the analytic/numeric gap crossed a kink and is not scored.
GradientCheck gradient_check(MvsNet<double>& model, std::span<const Sample> batch, std::span<const int> targets,
                             std::uint64_t dropout_seed, bool include_backbone) {
  auto loss_at = [&] {
    auto rng = make_stream(dropout_seed);
    return model.loss_and_gradients(batch, targets, nn::Mode::Train, &rng);
  };
  const double base = loss_at();
  std::vector<nn::Matrix<double>> analytic;
  const auto params = model.parameters();
  for (auto* p : params) analytic.push_back(p->grad);

  const double h = 1e-5;
  GradientCheck result;
  auto probe = [&](std::size_t pi, Eigen::Index i) {
    auto* p = params[pi];
    const double saved = p->value.data()[i];
    p->value.data()[i] = saved + h;
    const double up = loss_at();
    p->value.data()[i] = saved - h;
    const double down = loss_at();
    p->value.data()[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic[pi].data()[i];
    const double gap = std::abs(a - numeric);
    const double rel = gap / std::max({std::abs(a), std::abs(numeric), 1e-6});
    ++result.probes;
    if (rel >= 1e-3 && std::abs((up - base) / h - (base - down) / h) >= gap) {
      ++result.kinks;
      return;
    }
    result.worst = std::max(result.worst, rel);
  };
  auto rng = make_stream(dropout_seed + 1);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto* p = params[pi];
    if (!p->trainable) continue;
    const bool head = p->name.rfind("head.", 0) == 0;
    if (!head && !include_backbone) continue;
    if (head && p->value.size() <= 64) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) probe(pi, i);
    } else {
      std::uniform_int_distribution<Eigen::Index> pick(0, p->value.size() - 1);
      for (int s = 0; s < 12; ++s) probe(pi, pick(rng));
    }
  }
  return result;
}

void check_gradients(const GradientCheck& g) {
  CAPTURE(g.kinks);
  CHECK(g.worst < 1e-3);
  CHECK(g.kinks * 10 <= g.probes);
}

}  // namespace

TEST_CASE("gradient check") {
  auto rng = make_stream(99);
  auto model = build<double>(backbone_spec("tinyconv", 12), 3, {.seed = 5});
  for (int trial = 0; trial < 2; ++trial) {
    const Batch batch = random_batch(4, 4, rng);
    const std::vector<int> targets{0, 1, 2, 1};
    check_gradients(gradient_check(model, batch.samples, targets, 100 + trial, true));
  }
  SUBCASE("separate bodies, single view, frozen backbone") {
    auto separate = build<double>(backbone_spec("tinyconv", 12), 2, {.share_backbone = false, .seed = 6});
    const Batch batch = random_batch(3, 4, rng);
    const std::vector<int> t2{1, 0, 1};
    check_gradients(gradient_check(separate, batch.samples, t2, 7, true));

    auto single = build_single_view<double>(backbone_spec("tinyconv", 12), 2, {.seed = 8});
    const Batch singles = random_batch(5, 1, rng);
    const std::vector<int> t5{1, 0, 1, 0, 0};
    check_gradients(gradient_check(single, singles.samples, t5, 9, true));

    BackboneSpec frozen_spec = backbone_spec("tinyconv", 12);
    frozen_spec.trainable = false;
    auto frozen = build<double>(frozen_spec, 2, {.seed = 10});
    check_gradients(gradient_check(frozen, batch.samples, t2, 11, false));
  }
}

TEST_CASE("loss rejects bad targets") {
  auto rng = make_stream(3);
  const Batch batch = random_batch(2, 4, rng);
  auto model = build(backbone_spec("tinyconv", 12), 2);
  const std::vector<int> bad{0, 2}, short_targets{0};
  CHECK(kind_of([&] { model.loss_and_gradients(batch.samples, bad, nn::Mode::Eval); }) == ErrorKind::ShapeMismatch);
  CHECK(kind_of([&] { model.loss_and_gradients(batch.samples, short_targets, nn::Mode::Eval); }) ==
        ErrorKind::ShapeMismatch);
}
