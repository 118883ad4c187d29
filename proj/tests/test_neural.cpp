#include <cmath>
#include <cstdio>
#include <random>

#include "doctest.h"
#include "feinn/neural.hpp"

using namespace feinn;

TEST_CASE("parameter packing length") {
  MLPArch a = make_arch(2, 5, 50, 2, Activation::Tanh);
  CHECK(param_count(a) == 10452);
  CHECK(a.sizes.size() == 7);
}

TEST_CASE("glorot init: determinism, support, zero biases") {
  MLPArch a = make_arch(2, 2, 20, 1, Activation::Softplus, true);
  VecX t1 = glorot_init(a, 42);
  VecX t2 = glorot_init(a, 42);
  CHECK((t1 - t2).lpNorm<Eigen::Infinity>() == 0.0);
  VecX t3 = glorot_init(a, 43);
  CHECK((t1 - t3).lpNorm<Eigen::Infinity>() > 0.0);
  // bounds per layer and zero biases
  long off = 0;
  for (int k = 0; k + 1 < static_cast<int>(a.sizes.size()); ++k) {
    const int nin = a.sizes[k], nout = a.sizes[k + 1];
    const double lim = std::sqrt(6.0 / (nin + nout));
    for (int i = 0; i < nout * nin; ++i) CHECK(std::abs(t1[off + i]) <= lim);
    off += static_cast<long>(nout) * nin;
    for (int i = 0; i < nout; ++i) CHECK(t1[off + i] == 0.0);
    off += nout;
  }
}

TEST_CASE("forward: zero last layer gives the bias, rectifier keeps outputs above 0.01") {
  MLPArch a = make_arch(2, 1, 8, 2, Activation::Tanh);
  VecX theta = glorot_init(a, 7);
  // zero the last weight matrix, set its bias
  long off = param_count(a) - (8 * 2 + 2);
  theta.segment(off, 16).setZero();
  theta[param_count(a) - 2] = 1.5;
  theta[param_count(a) - 1] = -0.5;
  MatX X(3, 2);
  X << 0, 0, 1, -1, 0.3, 0.7;
  MatX Y = forward(a, theta, X);
  for (int i = 0; i < 3; ++i) {
    CHECK(Y(i, 0) == doctest::Approx(1.5));
    CHECK(Y(i, 1) == doctest::Approx(-0.5));
  }
  MLPArch r = make_arch(2, 2, 10, 1, Activation::Softplus, true);
  VecX tr = glorot_init(r, 3);
  MatX Yr = forward(r, tr, X);
  for (int i = 0; i < 3; ++i) CHECK(Yr(i, 0) >= 0.01);
}

TEST_CASE("forward matches hand arithmetic on a tiny net") {
  // one hidden layer 2 -> 2 -> 1, tanh
  MLPArch a;
  a.sizes = {2, 2, 1};
  a.act = Activation::Tanh;
  VecX theta(param_count(a));
  // W1 = [[1, 2], [-1, 0.5]], b1 = [0.1, -0.2], W2 = [[3, -1]], b2 = [0.25]
  theta << 1, 2, -1, 0.5, 0.1, -0.2, 3, -1, 0.25;
  MatX X(1, 2);
  X << 0.4, -0.3;
  const double h1 = std::tanh(1 * 0.4 + 2 * -0.3 + 0.1);
  const double h2 = std::tanh(-1 * 0.4 + 0.5 * -0.3 - 0.2);
  const double expected = 3 * h1 - 1 * h2 + 0.25;
  MatX Y = forward(a, theta, X);
  CHECK(Y(0, 0) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("output bound for tanh networks") {
  MLPArch a = make_arch(2, 3, 16, 2, Activation::Tanh);
  VecX theta = glorot_init(a, 11);
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  MatX X(50, 2);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
  MatX Y = forward(a, theta, X);
  // |output_c| <= sum_j |W_L(c, j)| + |b_L(c)| since hidden activations are in [-1, 1]
  long off = param_count(a) - (16 * 2 + 2);
  for (int c = 0; c < 2; ++c) {
    double bound = std::abs(theta[param_count(a) - 2 + c]);
    for (int j = 0; j < 16; ++j) bound += std::abs(theta[off + c * 16 + j]);
    CHECK(Y.col(c).cwiseAbs().maxCoeff() <= bound + 1e-12);
  }
}

TEST_CASE("vjp: zero cotangent, linearity, finite differences") {
  for (auto act : {Activation::Tanh, Activation::Softplus}) {
    for (bool rect : {false, true}) {
      MLPArch a = make_arch(2, 2, 12, 2, act, rect);
      VecX theta = glorot_init(a, 5);
      std::mt19937 rng(2);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      MatX X(7, 2), C(7, 2), C2(7, 2);
      for (int i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
      for (int i = 0; i < C.size(); ++i) C.data()[i] = u(rng);
      for (int i = 0; i < C2.size(); ++i) C2.data()[i] = u(rng);

      CHECK(vjp_params(a, theta, X, MatX::Zero(7, 2)).norm() == 0.0);
      VecX g1 = vjp_params(a, theta, X, C);
      VecX g2 = vjp_params(a, theta, X, C2);
      VecX g12 = vjp_params(a, theta, X, C + C2);
      CHECK((g12 - g1 - g2).lpNorm<Eigen::Infinity>() < 1e-12);

      // directional FD of the scalar sum(C .* N(X)) along random directions
      for (int t = 0; t < 5; ++t) {
        VecX dir(theta.size());
        for (int i = 0; i < dir.size(); ++i) dir[i] = u(rng);
        dir.normalize();
        const double h = 1e-5;
        double fp = (forward(a, theta + h * dir, X).cwiseProduct(C)).sum();
        double fm = (forward(a, theta - h * dir, X).cwiseProduct(C)).sum();
        const double fd = (fp - fm) / (2 * h);
        const double an = g1.dot(dir);
        CHECK(std::abs(fd - an) / std::max(1.0, std::abs(an)) < 1e-6);
      }
    }
  }
}

TEST_CASE("vjp closed form for a linear network") {
  MLPArch a;
  a.sizes = {2, 3};
  a.act = Activation::Identity;
  VecX theta(param_count(a));
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < theta.size(); ++i) theta[i] = u(rng);
  MatX X(4, 2), C(4, 3);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
  for (int i = 0; i < C.size(); ++i) C.data()[i] = u(rng);
  VecX g = vjp_params(a, theta, X, C);
  // dL/dW = C^T X (row-major packing), dL/db = column sums of C
  MatX dW = C.transpose() * X;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) CHECK(g[r * 2 + c] == doctest::Approx(dW(r, c)).epsilon(1e-13));
  for (int r = 0; r < 3; ++r) CHECK(g[6 + r] == doctest::Approx(C.col(r).sum()).epsilon(1e-13));
}

TEST_CASE("input jets match finite differences") {
  MLPArch a = make_arch(2, 2, 10, 2, Activation::Tanh);
  VecX theta = glorot_init(a, 13);
  MatX X(3, 2);
  X << 0.3, -0.2, 0.9, 0.5, -0.7, 0.1;
  MatX Y;
  std::vector<MatX> dY, d2Y;
  forward_jet2(a, theta, X, Y, dY, d2Y);
  CHECK((Y - forward(a, theta, X)).cwiseAbs().maxCoeff() < 1e-14);
  const double h = 1e-5;
  for (int d = 0; d < 2; ++d) {
    MatX Xp = X, Xm = X;
    Xp.col(d).array() += h;
    Xm.col(d).array() -= h;
    MatX fd = (forward(a, theta, Xp) - forward(a, theta, Xm)) / (2 * h);
    CHECK((dY[d] - fd).cwiseAbs().maxCoeff() < 1e-8);
    // second derivatives (d, d)
    MatX fd2 = (forward(a, theta, Xp) - 2 * Y + forward(a, theta, Xm)) / (h * h);
    CHECK((d2Y[jet2_index(d, d, 2)] - fd2).cwiseAbs().maxCoeff() < 1e-5);
  }
  // mixed derivative
  MatX Xpp = X, Xpm = X, Xmp = X, Xmm = X;
  Xpp.col(0).array() += h;
  Xpp.col(1).array() += h;
  Xpm.col(0).array() += h;
  Xpm.col(1).array() -= h;
  Xmp.col(0).array() -= h;
  Xmp.col(1).array() += h;
  Xmm.col(0).array() -= h;
  Xmm.col(1).array() -= h;
  MatX fdm = (forward(a, theta, Xpp) - forward(a, theta, Xpm) - forward(a, theta, Xmp) +
              forward(a, theta, Xmm)) /
             (4 * h * h);
  CHECK((d2Y[jet2_index(0, 1, 2)] - fdm).cwiseAbs().maxCoeff() < 1e-5);
  // jet1 agrees with jet2
  MatX Y1;
  std::vector<MatX> dY1;
  forward_jet1(a, theta, X, Y1, dY1);
  CHECK((dY1[0] - dY[0]).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("checkpoint round trip") {
  MLPArch a = make_arch(3, 2, 9, 3, Activation::Softplus, true);
  VecX theta = glorot_init(a, 99);
  const std::string path = "ckpt_test.bin";
  save_checkpoint(path, a, theta);
  auto [a2, t2] = load_checkpoint(path);
  CHECK(a2.sizes == a.sizes);
  CHECK(a2.act == a.act);
  CHECK(a2.rectified_output == a.rectified_output);
  CHECK((t2 - theta).lpNorm<Eigen::Infinity>() == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("shape errors") {
  MLPArch a = make_arch(2, 1, 4, 1, Activation::Tanh);
  VecX theta = glorot_init(a, 1);
  MatX bad(3, 3);
  bad.setZero();
  CHECK_THROWS(forward(a, theta, bad));
  MatX X = MatX::Zero(3, 2);
  CHECK_THROWS(vjp_params(a, theta, X, MatX::Zero(3, 2)));
}
