#include <gtest/gtest.h>

#include <limits>
#include <sstream>

#include "ksac/autograd.hpp"
#include "ksac/checkpoint.hpp"
#include "ksac/errors.hpp"
#include "ksac/gradcheck.hpp"
#include "ksac/tensor_ops.hpp"
#include "test_util.hpp"

using namespace ksac;
using ksac::testing::param;
using ksac::testing::random_tensor;

TEST(TensorNew, Fills) {
  Tensor z = tensor_new({1, 1, 2, 2}, fill::Zeros{});
  for (Real v : z.data()) EXPECT_EQ(v, 0.0);
  Tensor c = tensor_new({1, 1, 1, 1}, fill::Constant{3.5});
  EXPECT_EQ(c.item(), 3.5);
  Tensor o = tensor_new({2, 1, 1, 3}, fill::Ones{});
  EXPECT_EQ(o.numel(), 6);
  for (Real v : o.data()) EXPECT_EQ(v, 1.0);
}

TEST(TensorNew, SeededFillsAreBitIdentical) {
  Tensor a = tensor_new({1, 2, 3, 3}, fill::Uniform{-1, 1, 7});
  Tensor b = tensor_new({1, 2, 3, 3}, fill::Uniform{-1, 1, 7});
  ASSERT_EQ(a.numel(), 18);
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    EXPECT_EQ(a.data()[i], b.data()[i]);
    EXPECT_GE(a.data()[i], -1.0);
    EXPECT_LT(a.data()[i], 1.0);
  }
  Tensor h1 = tensor_new({8, 4, 3, 3}, fill::HeNormal{3});
  Tensor h2 = tensor_new({8, 4, 3, 3}, fill::HeNormal{3});
  EXPECT_TRUE(std::equal(h1.data().begin(), h1.data().end(), h2.data().begin()));
}

TEST(TensorNew, HeNormalStandardDeviation) {
  // fan_in = 64 * 3 * 3; over 256*576 draws the sample std is within 1%.
  Tensor k = tensor_new({256, 64, 3, 3}, fill::HeNormal{11});
  double sq = 0;
  for (Real v : k.data()) sq += v * v;
  const double std_dev = std::sqrt(sq / static_cast<double>(k.numel()));
  EXPECT_NEAR(std_dev, std::sqrt(2.0 / 576.0), 0.01 * std::sqrt(2.0 / 576.0));
}

TEST(TensorNew, RejectsNegativeAndOverflowingShapes) {
  EXPECT_THROW(tensor_new({1, -1, 2, 2}, fill::Zeros{}), ShapeError);
  const std::int64_t big = std::numeric_limits<std::int64_t>::max() / 2;
  EXPECT_THROW(tensor_new({big, 4, 1, 1}, fill::Zeros{}), AllocationError);
  EXPECT_THROW(tensor_new({1 << 20, 1 << 20, 1 << 20, 1}, fill::Zeros{}), AllocationError);
}

TEST(TensorNew, ZeroSizedDimensionIsAllowed) {
  Tensor t = tensor_new({0, 3, 4, 4}, fill::Ones{});
  EXPECT_EQ(t.numel(), 0);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = param({1, 1, 2, 2}, 1);
  backward(sum_all(x));
  for (Real g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, QuadraticDerivative) {
  Tensor x({1, 1, 2, 2}, std::vector<Real>{1, 2, 3, 4});
  x.set_requires_grad(true);
  backward(sum_all(mul(x, x)));
  const std::vector<Real> expected{2, 4, 6, 8};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], expected[i]);
}

TEST(Backward, ReusedTensorAccumulates) {
  Tensor x = param({1, 2, 2, 2}, 2);
  backward(sum_all(add(x, x)));
  for (Real g : x.grad()) EXPECT_EQ(g, 2.0);
}

TEST(Backward, GradientsAccumulateAcrossPasses) {
  Tensor x = param({1, 1, 1, 3}, 3);
  backward(sum_all(x));
  backward(sum_all(scalar_mul(x, 2)));
  for (Real g : x.grad()) EXPECT_EQ(g, 3.0);
  x.zero_grad();
  for (Real g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, KUsesEqualSumOfSingleUses) {
  // Gradient accumulation for a tensor used k times in a linear graph.
  for (int k = 1; k <= 5; ++k) {
    Tensor x = param({1, 2, 3, 3}, 10 + k);
    std::vector<Tensor> weights;
    std::vector<Tensor> terms;
    for (int i = 0; i < k; ++i) {
      weights.push_back(random_tensor(x.shape(), 100 + i));
      terms.push_back(mul(x, weights.back()));
    }
    backward(sum_all(add_n(terms)));
    for (std::int64_t j = 0; j < x.numel(); ++j) {
      Real expected = 0;
      for (const Tensor& w : weights) expected += w.data()[j];
      EXPECT_NEAR(x.grad()[j], expected, 1e-14);
    }
  }
}

TEST(Backward, ContractViolations) {
  Tensor x = param({1, 1, 2, 2}, 4);
  Tensor non_scalar = scalar_mul(x, 2);
  EXPECT_THROW(backward(non_scalar), ContractError);
  Tape::current().clear();
  Tensor detached = Tensor::scalar(1.0);
  EXPECT_THROW(backward(detached), ContractError);
  Tensor loss = sum_all(x);
  Tape::current().clear();
  EXPECT_THROW(backward(loss), ContractError);
}

TEST(Backward, NoGradGuardSkipsRecording) {
  Tensor x = param({1, 1, 2, 2}, 5);
  Tape::current().clear();
  {
    NoGradGuard guard;
    Tensor y = sum_all(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(Tape::current().size(), 0u);
}

TEST(TensorOps, AddAndShapeErrors) {
  Tensor a({1, 1, 1, 2}, std::vector<Real>{1, 2});
  Tensor b({1, 1, 1, 2}, std::vector<Real>{3, 4});
  Tensor c = add(a, b);
  EXPECT_EQ(c.data()[0], 4);
  EXPECT_EQ(c.data()[1], 6);
  Tensor d = Tensor::zeros({1, 1, 2, 1});
  try {
    add(a, d);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(1,1,1,2)"), std::string::npos);
    EXPECT_NE(msg.find("(1,1,2,1)"), std::string::npos);
  }
  EXPECT_THROW(mul(a, d), ShapeError);
}

TEST(TensorOps, ConcatChannels) {
  Tensor a = random_tensor({1, 2, 3, 4}, 1);
  Tensor b = random_tensor({1, 3, 3, 4}, 2);
  Tensor c = concat_channels({a, b});
  EXPECT_EQ(c.shape(), (Shape{1, 5, 3, 4}));
  EXPECT_EQ(c.at(0, 1, 2, 3), a.at(0, 1, 2, 3));
  EXPECT_EQ(c.at(0, 4, 1, 0), b.at(0, 2, 1, 0));
  EXPECT_THROW(concat_channels({a, Tensor::zeros({1, 1, 3, 5})}), ShapeError);
}

TEST(TensorOps, FiniteDifferenceAgreement) {
  Tensor a = param({2, 2, 3, 3}, 21);
  Tensor b = param({2, 2, 3, 3}, 22);
  Tensor c = param({2, 1, 3, 3}, 23);
  auto loss = [&] {
    Tensor cat = concat_channels({mul(a, b), c});
    Tensor prod = mul(add(a, scalar_mul(b, 0.5)), flip_horizontal(a));
    return add(ksac::testing::weighted_sum_loss(cat, 9), sum_all(prod));
  };
  auto report = gradcheck(loss, {{"a", a}, {"b", b}, {"c", c}}, {.tolerance = 1e-4});
  EXPECT_TRUE(report.passed) << report.summary();
}

TEST(Checkpoint, BitExactRoundTrip) {
  // Property: random shapes and names, including values without a short
  // decimal form, survive unchanged.
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<NamedTensor> tensors;
    const int count = static_cast<int>(rng.uniform_int(0, 4));
    for (int i = 0; i < count; ++i) {
      Shape s{rng.uniform_int(1, 2), rng.uniform_int(1, 3), rng.uniform_int(0, 4), rng.uniform_int(1, 4)};
      Tensor t = random_tensor(s, rng.next_u64(), -1e6, 1e6);
      tensors.push_back({"t" + std::to_string(i) + (i % 2 ? ".gamma" : "/ü"), t});
    }
    std::stringstream buf;
    write_checkpoint(buf, tensors);
    std::stringstream again(buf.str());
    auto back = read_checkpoint(again);
    ASSERT_EQ(back.size(), tensors.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      EXPECT_EQ(back[i].name, tensors[i].name);
      EXPECT_EQ(back[i].tensor.shape(), tensors[i].tensor.shape());
      EXPECT_TRUE(std::equal(back[i].tensor.data().begin(), back[i].tensor.data().end(),
                             tensors[i].tensor.data().begin()));
    }
    std::stringstream rewritten;
    write_checkpoint(rewritten, back);
    EXPECT_EQ(rewritten.str(), buf.str());
  }
}

TEST(Checkpoint, HeaderLayout) {
  std::stringstream buf;
  write_checkpoint(buf, {{"ab", Tensor::scalar(1.0)}});
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 2 + 32 + 8);
  EXPECT_EQ(bytes.substr(0, 4), "KSAC");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 1);  // tensor count
  EXPECT_EQ(bytes[12], 2); // name length
  EXPECT_EQ(bytes.substr(16, 2), "ab");
  // 1.0 as IEEE-754 binary64, little-endian: 00 .. 00 f0 3f
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 1]), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 2]), 0xf0);
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::stringstream bad("KSAX\x01\0\0\0");
  EXPECT_THROW(read_checkpoint(bad), IoError);
  std::stringstream buf;
  write_checkpoint(buf, {{"x", Tensor::zeros({1, 1, 2, 2})}});
  std::stringstream truncated(buf.str().substr(0, buf.str().size() - 3));
  EXPECT_THROW(read_checkpoint(truncated), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/file.ksac"), IoError);
}
