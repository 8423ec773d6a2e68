#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <thread>

#include "avsync/diffnum/adam.hpp"
#include "avsync/diffnum/checkpoint.hpp"
#include "avsync/diffnum/gradcheck.hpp"
#include "avsync/diffnum/nn.hpp"
#include "avsync/diffnum/ops.hpp"

using namespace avsync::diff;

namespace {

Tensor random_param(Shape shape, Rng& rng, double sd = 1.0) {
  const auto n = numel(shape);
  return Tensor::parameter(std::move(shape), normal_init(n, sd, rng));
}

Tensor random_const(Shape shape, Rng& rng, double sd = 1.0) {
  const auto n = numel(shape);
  return Tensor::from(std::move(shape), normal_init(n, sd, rng));
}

void expect_gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> wrt,
                      double tol = 1e-4) {
  auto r = gradcheck(f, std::move(wrt));
  EXPECT_LT(r.max_rel_error, tol) << r.worst;
  EXPECT_GT(r.entries_checked, 0u);
}

}  // namespace

TEST(Forward, MatmulShape) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({3, 4});
  EXPECT_EQ(matmul(a, b).shape(), (Shape{2, 4}));
  auto batched = Tensor::zeros({5, 2, 3});
  EXPECT_EQ(matmul(batched, b).shape(), (Shape{5, 2, 4}));
  EXPECT_EQ(matmul(batched, Tensor::zeros({5, 4, 3}), true).shape(), (Shape{5, 2, 4}));
}

TEST(Forward, MatmulValues) {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
  auto c = matmul(a, b);
  EXPECT_DOUBLE_EQ(c.at({0, 0}), 19);
  EXPECT_DOUBLE_EQ(c.at({1, 1}), 50);
  auto ct = matmul(a, b, true);
  EXPECT_DOUBLE_EQ(ct.at({0, 1}), 1 * 7 + 2 * 8);
}

TEST(Forward, ShapeMismatchNamesPrimitiveAndShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 4}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x4]"), std::string::npos);
  }
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ShapeError);
}

TEST(Forward, SoftmaxUniform) {
  auto s = softmax(Tensor::from({3}, {0, 0, 0}));
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Forward, AvgPoolPreservesConstant) {
  auto x = Tensor::full({13, 2}, 2.5);
  auto y = avg_pool_time(x, 7, 2);
  EXPECT_EQ(y.shape(), (Shape{6, 2}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Forward, BroadcastGeneral) {
  auto a = Tensor::from({2, 1}, {1, 2});
  auto b = Tensor::from({1, 3}, {10, 20, 30});
  auto c = add(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_DOUBLE_EQ(c.at({1, 2}), 32);
}

TEST(Forward, InterpolateTime) {
  auto x = Tensor::from({3, 1}, {0, 2, 4});
  auto y = interpolate_time(x, 6, 2.0);
  std::vector<double> expect{0, 1, 2, 3, 4, 4};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(y.data()[i], expect[i]);
}

TEST(Forward, CosineGuardsZeroNorm) {
  auto c = cosine_similarity(Tensor::zeros({2}), Tensor::from({2}, {1, 0}));
  EXPECT_TRUE(std::isfinite(c.item()));
  EXPECT_DOUBLE_EQ(c.item(), 0.0);
}

TEST(Forward, NonFiniteDetection) {
  auto t = Tensor::from({2}, {1.0, NAN});
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(t.check_finite("probe"), NonFiniteError);
}

TEST(Backward, SumOfSquares) {
  auto x = Tensor::parameter({2}, {1, 2});
  Tape tape;
  TapeScope scope(tape);
  auto g = tape.backward(sum(mul(x, x)));
  auto gx = g.get(x);
  EXPECT_DOUBLE_EQ(gx[0], 2);
  EXPECT_DOUBLE_EQ(gx[1], 4);
}

TEST(Backward, UnusedParameterHasZeroGradient) {
  auto x = Tensor::parameter({2}, {1, 2});
  auto p = Tensor::parameter({3}, {1, 1, 1});
  Tape tape;
  TapeScope scope(tape);
  auto g = tape.backward(sum(x));
  for (double v : g.get(p)) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RejectsNonScalarAndDetached) {
  auto x = Tensor::parameter({2}, {1, 2});
  Tape tape;
  {
    TapeScope scope(tape);
    EXPECT_THROW(tape.backward(mul(x, x)), ShapeError);
  }
  auto detached = sum(x);  // no tape active
  EXPECT_THROW(tape.backward(detached), std::logic_error);
  Tape other;
  Tensor foreign;
  {
    TapeScope scope(other);
    foreign = sum(x);
  }
  EXPECT_THROW(tape.backward(foreign), std::logic_error);
}

TEST(Backward, VisitsRecordedOpsInReverseOnce) {
  auto x = Tensor::parameter({1}, {3.0});
  Tape tape;
  TapeScope scope(tape);
  auto y = mul(x, x);      // 9
  auto z = add(y, x);      // 12
  auto w = mul(z, y);      // 108
  EXPECT_EQ(tape.size(), 3u);
  auto g = tape.backward(sum(w));
  // d/dx (x^2 + x) x^2 = 4x^3 + 3x^2 = 108 + 27
  EXPECT_DOUBLE_EQ(g.get(x)[0], 135.0);
}

TEST(Backward, LinearityOfSumOfLosses) {
  Rng rng(3);
  auto w = random_param({4, 3}, rng);
  auto x = random_const({5, 4}, rng);
  auto l1 = [&] { return sum(tanh(matmul(x, w))); };
  auto l2 = [&] { return mean(square(matmul(x, w))); };
  std::vector<double> g1, g2, g12;
  {
    Tape t;
    TapeScope s(t);
    g1 = t.backward(l1()).get(w);
  }
  {
    Tape t;
    TapeScope s(t);
    g2 = t.backward(l2()).get(w);
  }
  {
    Tape t;
    TapeScope s(t);
    g12 = t.backward(add(l1(), l2())).get(w);
  }
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g12[i], g1[i] + g2[i], 1e-12);
}

TEST(Backward, TwelveParameterMlpMatchesFiniteDifferences) {
  // 2 -> 3 -> 1 with biases on the hidden layer: 6 + 3 + 3 = 12 parameters.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto w1 = random_param({2, 3}, rng);
    auto b1 = random_param({3}, rng);
    auto w2 = random_param({3, 1}, rng);
    auto x = random_const({4, 2}, rng);
    auto y = random_const({4, 1}, rng);
    auto f = [&] { return mean(square(sub(matmul(gelu(add(matmul(x, w1), b1)), w2), y))); };
    expect_gradcheck(f, {w1, b1, w2});
  }
}

TEST(Backward, EveryPrimitiveMatchesFiniteDifferences) {
  Rng rng(11);
  auto a = random_param({2, 3, 4}, rng);
  auto b = random_param({2, 4, 3}, rng);
  auto v = random_param({4}, rng);
  auto col = random_param({2, 3, 1}, rng);
  auto w = random_const({2, 3, 4}, rng);
  auto pos = Tensor::parameter({2, 3}, {0.5, 1.2, 2.0, 0.7, 1.5, 3.0});

  expect_gradcheck([&] { return sum(mul(add(a, v), w)); }, {a, v});
  expect_gradcheck([&] { return sum(mul(sub(a, col), a)); }, {a, col});
  expect_gradcheck([&] { return sum(mul(matmul(a, b), matmul(a, b))); }, {a, b});
  expect_gradcheck([&] { return sum(square(matmul(a, reshape(b, {2, 3, 4}), true))); }, {a, b});
  expect_gradcheck([&] { return sum(mul(softmax(a), w)); }, {a});
  expect_gradcheck([&] { return sum(mul(log_softmax(a), w)); }, {a});
  expect_gradcheck([&] { return sum(mul(layer_norm(a), w)); }, {a});
  expect_gradcheck([&] { return sum(mul(gelu(a), w)); }, {a});
  expect_gradcheck([&] { return sum(mul(tanh(a), w)); }, {a});
  expect_gradcheck([&] { return sum(mul(sigmoid(a), w)); }, {a});
  expect_gradcheck([&] { return sum(exp(scale(a, 0.3))); }, {a});
  expect_gradcheck([&] { return sum(log(pos)); }, {pos});
  expect_gradcheck([&] { return sum(l2_norm(a)); }, {a});
  expect_gradcheck([&] { return sum(cosine_similarity(a, w)); }, {a});
  expect_gradcheck([&] { return sum(mul(mean_axis(a, 1, true), col)); }, {a, col});
  expect_gradcheck([&] { return sum(square(sum_axis(a, -1))); }, {a});
  expect_gradcheck([&] { return sum(square(concat({a, w, a}, 1))); }, {a});
  expect_gradcheck([&] { return sum(square(slice(a, 2, 1, 2))); }, {a});
  expect_gradcheck([&] { return sum(square(index_select(a, 1, {2, 0, 2}))); }, {a});
  expect_gradcheck([&] { return sum(square(unfold_time(a, 2, 1))); }, {a});
  expect_gradcheck([&] { return sum(mul(avg_pool_time(a, 3, 2), slice(w, 1, 0, 1))); }, {a});
  expect_gradcheck([&] { return sum(square(interpolate_time(a, 7, 2.5))); }, {a});
  expect_gradcheck([&] { return sum(relu(add_scalar(a, 0.05))); }, {a});
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  ParameterStore store;
  auto p = store.add("p", {3}, {1, -2, 3});
  auto state = AdamState::for_store(store, {0.1, 0.0, 0.999, 1e-8});
  adam_step(store, GradientMap{}, state);
  EXPECT_EQ(p.data()[0], 1);
  EXPECT_EQ(p.data()[1], -2);
  EXPECT_EQ(p.data()[2], 3);
}

TEST(Adam, FirstStepHandEvaluation) {
  ParameterStore store;
  auto p = store.add("p", {}, {1.0});
  const double eps = 1e-8;
  auto state = AdamState::for_store(store, {0.1, 0.0, 0.999, eps});
  Tape tape;
  GradientMap g;
  {
    TapeScope scope(tape);
    g = tape.backward(scale(p, 1.0));  // dL/dp = 1
  }
  adam_step(store, g, state);
  EXPECT_DOUBLE_EQ(p.item(), 1.0 - 0.1 * (1.0 / (1.0 + eps)));
  EXPECT_EQ(state.step, 1u);
  EXPECT_EQ(state.m[0].size(), p.size());
}

TEST(Adam, NanGradientNamesParameter) {
  ParameterStore store;
  auto p = store.add("branch.w", {1}, {1.0});
  auto state = AdamState::for_store(store, {});
  Tape tape;
  GradientMap g;
  {
    TapeScope scope(tape);
    g = tape.backward(sum(mul(p, Tensor::from({1}, {NAN}))));
  }
  try {
    adam_step(store, g, state);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("branch.w"), std::string::npos);
  }
  EXPECT_EQ(p.item(), 1.0);
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = [] {
    Rng rng(5);
    ParameterStore store;
    Linear l(store, "l", 3, 2, rng);
    auto x = Tensor::from({4, 3}, normal_init(12, 1.0, rng));
    auto state = AdamState::for_store(store, {1e-2});
    for (int i = 0; i < 3; ++i) {
      Tape t;
      TapeScope s(t);
      adam_step(store, t.backward(sum(square(l(x)))), state);
    }
    return store.checksum();
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, ZeroLearningRateIsBitIdentical) {
  Rng rng(9);
  ParameterStore store;
  Linear l(store, "l", 3, 2, rng);
  const auto before = store.checksum();
  auto state = AdamState::for_store(store, {0.0});
  Tape t;
  TapeScope s(t);
  adam_step(store, t.backward(sum(square(l(Tensor::full({2, 3}, 1.0))))), state);
  EXPECT_EQ(store.checksum(), before);
}

TEST(Adam, FrozenStoreRefusesUpdate) {
  ParameterStore store;
  store.add("p", {1}, {1.0});
  store.freeze();
  auto state = AdamState::for_store(store, {});
  EXPECT_THROW(adam_step(store, GradientMap{}, state), std::logic_error);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(1);
  ParameterStore a;
  Linear l(a, "enc.l0", 4, 3, rng);
  a.add("scale", {}, {10.0});
  const auto path = (std::filesystem::temp_directory_path() / "avsync_ckpt_test.bin").string();
  save_checkpoint(a, path);

  Rng rng2(2);
  ParameterStore b;
  Linear l2(b, "enc.l0", 4, 3, rng2);
  b.add("scale", {}, {0.0});
  EXPECT_NE(a.checksum(), b.checksum());
  load_checkpoint(b, path);
  EXPECT_EQ(a.checksum(), b.checksum());
  std::filesystem::remove(path);
}

TEST(Checkpoint, HeaderLayout) {
  ParameterStore s;
  s.add("x", {2}, {1.0, -0.5});
  auto bytes = encode_checkpoint(s);
  ASSERT_GE(bytes.size(), 9u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "AVPC");
  EXPECT_EQ(bytes[4], kCheckpointVersion);
  EXPECT_EQ(bytes[5], 1);  // entry count, little-endian
  // 9 header + 4 name len + 1 name + 4 rank + 8 extent + 16 payload
  EXPECT_EQ(bytes.size(), 9u + 4 + 1 + 4 + 8 + 16);
  auto decoded = decode_checkpoint(bytes);
  EXPECT_EQ(decoded[0].values[1], -0.5);
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

TEST(Concurrency, FrozenInferenceFromManyThreads) {
  Rng rng(4);
  ParameterStore store;
  Linear l(store, "l", 8, 8, rng);
  store.freeze();
  auto x = Tensor::from({16, 8}, normal_init(128, 1.0, rng));
  const double ref = sum(tanh(l(x))).item();
  std::vector<double> got(4);
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i)
    threads.emplace_back([&, i] {
      for (int k = 0; k < 50; ++k) got[i] = sum(tanh(l(x))).item();
    });
  for (auto& t : threads) t.join();
  for (double g : got) EXPECT_EQ(g, ref);
}
