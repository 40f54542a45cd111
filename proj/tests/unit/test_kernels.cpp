#include <doctest.h>

#include <cstring>
#include <omp.h>

#include "../common/gradcheck.hpp"
#include "ncaswarm/train/kernels.hpp"

using namespace ncaswarm;
using namespace ncaswarm::train;

TEST_CASE("analytic gradients agree with central differences") {
  for (std::uint64_t seed : {1, 2}) {
    auto p = testing::make_grad_problem(seed);
    const auto rep = testing::check_gradients(p, 12, 1e-3, seed);
    CHECK(rep.checked == 60);
    CHECK(rep.max_rel_error <= 1e-3);
  }
  SUBCASE("without a head") {
    auto p = testing::make_grad_problem(3, 5, 8, 3, 0);
    const auto rep = testing::check_gradients(p, 10, 1e-3, 3);
    CHECK(rep.checked == 40);
    CHECK(rep.max_rel_error <= 1e-3);
  }
}

TEST_CASE("one step, one hidden unit, closed form") {
  // c = 2, h = 1, no head: class output is channel 1, label 0, single cell.
  auto m = model::NcaModel::zeros(2, 1, model::KernelSet({model::Kernel::Identity}), 1, std::nullopt);
  const auto L = ParamLayout::for_model(m);
  BatchGraph g;
  const std::uint8_t alive = 1, turn = 0;
  append_sample(g, 1, 1, &alive, &turn, 0);
  // params: W1 (2x1), B1, W2 (1x2), B2 (2)
  std::vector<double> params = {0.5, -0.25, 0.1, 0.0, 0.8, 0.0, 0.3};
  REQUIRE(params.size() == L.total);
  std::vector<double> s = {1.0, 0.4}, grad;
  const double loss = loss_and_gradient<double>({&m.kernels, L, Engine::Reference}, g, params.data(), s, 1, {}, grad);
  const double z = 0.5 * 1.0 - 0.25 * 0.4 + 0.1;  // 0.5 > 0
  const double o = 0.4 + 0.8 * z + 0.3;
  CHECK(loss == doctest::Approx((o - 1) * (o - 1)));
  const double dO = 2 * (o - 1);
  CHECK(grad[L.w2 + 1] == doctest::Approx(dO * z));
  CHECK(grad[L.b2 + 1] == doctest::Approx(dO));
  CHECK(grad[L.w2] == doctest::Approx(0.0));
  CHECK(grad[L.b1] == doctest::Approx(dO * 0.8));
  CHECK(grad[L.w1] == doctest::Approx(dO * 0.8 * 1.0));
  CHECK(grad[L.w1 + 1] == doctest::Approx(dO * 0.8 * 0.4));
}

TEST_CASE("rollout edge cases") {
  CounterRng rng(4);
  auto p = testing::make_grad_problem(9);
  const auto ctx = p.context();
  std::vector<float> params(p.params.begin(), p.params.end()), s0(p.s0.begin(), p.s0.end());

  SUBCASE("zero steps leave the seed untouched") {
    auto s = s0;
    rollout<float>(ctx, p.graph, params.data(), s, 0, {0.5f, 0.02f, 3});
    CHECK(s == s0);
  }
  SUBCASE("full dropout without noise freezes the state") {
    auto s = s0;
    rollout<float>(ctx, p.graph, params.data(), s, 10, {1.0f, 0.0f, 3});
    CHECK(s == s0);
  }
  SUBCASE("single cell matches a hand unroll") {
    BatchGraph g;
    const std::uint8_t alive = 1, turn = 2;
    append_sample(g, 1, 1, &alive, &turn, 0);
    model::NcaModel m = p.shape;
    unpack_params(params, m);
    std::vector<float> s(s0.begin(), s0.begin() + static_cast<long>(m.channels)), ref = s;
    rollout<float>(ctx, g, params.data(), s, 5, {});
    for (int t = 0; t < 5; ++t)
      model::update_in_place(m, ref, true, model::perceive(m.kernels, ref, {}, model::Rotation{2}));
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == doctest::Approx(ref[i]).epsilon(1e-6));
  }
}

TEST_CASE("parallel engine matches the reference engine") {
  auto p = testing::make_grad_problem(21, 14, 40, 9, 10);
  std::vector<float> params(p.params.begin(), p.params.end());
  for (auto& v : params) v *= 0.5f;
  // Enough rows to span several chunks.
  for (int k = 0; k < 60; ++k) {
    std::vector<std::uint8_t> alive(25, 1), turns(25);
    for (auto& t : turns) t = static_cast<std::uint8_t>(k % 4);
    append_sample(p.graph, 5, 5, alive.data(), turns.data(), k % 9);
  }
  std::vector<float> s0(p.graph.rows * 14);
  CounterRng rng(5);
  for (std::size_t r = 0; r < p.graph.rows; ++r) {
    s0[r * 14] = 1.0f;
    for (int ch = 1; ch < 14; ++ch) s0[r * 14 + ch] = static_cast<float>(rng.normal() * 0.3);
  }
  const RolloutNoise noise{0.5f, 0.02f, 77};
  KernelContext ref{&p.shape.kernels, p.layout, Engine::Reference}, par = ref;
  par.engine = Engine::Parallel;

  auto s_ref = s0, s_par = s0;
  std::vector<float> g_ref, g_par;
  const float l_ref = loss_and_gradient<float>(ref, p.graph, params.data(), s_ref, 8, noise, g_ref);
  const float l_par = loss_and_gradient<float>(par, p.graph, params.data(), s_par, 8, noise, g_par);
  CHECK(l_par == doctest::Approx(l_ref).epsilon(1e-5));
  for (std::size_t i = 0; i < s_ref.size(); ++i) REQUIRE(std::abs(s_ref[i] - s_par[i]) <= 1e-4f);
  double gmax = 0;
  for (float v : g_ref) gmax = std::max(gmax, double(std::abs(v)));
  for (std::size_t i = 0; i < g_ref.size(); ++i) REQUIRE(std::abs(g_ref[i] - g_par[i]) <= 1e-4 * gmax + 1e-7);

  SUBCASE("independent of the thread count") {
    const int saved = omp_get_max_threads();
    std::vector<float> g1, g3;
    auto s1 = s0, s3 = s0;
    omp_set_num_threads(1);
    loss_and_gradient<float>(par, p.graph, params.data(), s1, 8, noise, g1);
    omp_set_num_threads(3);
    loss_and_gradient<float>(par, p.graph, params.data(), s3, 8, noise, g3);
    omp_set_num_threads(saved);
    CHECK(std::memcmp(g1.data(), g3.data(), g1.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(s1.data(), s3.data(), s1.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("parameter packing round trip") {
  auto p = testing::make_grad_problem(2);
  std::vector<float> flat(p.params.begin(), p.params.end());
  model::NcaModel m = p.shape;
  unpack_params(flat, m);
  CHECK(pack_params<float>(m) == flat);
}
