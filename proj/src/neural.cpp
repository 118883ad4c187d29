#include "feinn/neural.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>

namespace feinn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LayerView {
  Eigen::Map<const RowMat> W;
  Eigen::Map<const VecX> b;
};

LayerView layer_view(const MLPArch& arch, const VecX& theta, int k, long& offset) {
  const int nin = arch.sizes[k], nout = arch.sizes[k + 1];
  Eigen::Map<const RowMat> W(theta.data() + offset, nout, nin);
  offset += static_cast<long>(nout) * nin;
  Eigen::Map<const VecX> b(theta.data() + offset, nout);
  offset += nout;
  return {W, b};
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Tanh: return std::tanh(x);
    case Activation::Softplus: return x > 20.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    case Activation::Identity: return x;
  }
  return x;
}

double activate_d(Activation a, double x) {
  switch (a) {
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Softplus: return 1.0 / (1.0 + std::exp(-x));
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

double activate_dd(Activation a, double x) {
  switch (a) {
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::Softplus: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 - s);
    }
    case Activation::Identity: return 0.0;
  }
  return 0.0;
}

inline double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

MLPArch make_arch(int in, int hidden_layers, int width, int out, Activation act, bool rectified) {
  MLPArch a;
  a.sizes.push_back(in);
  for (int i = 0; i < hidden_layers; ++i) a.sizes.push_back(width);
  a.sizes.push_back(out);
  a.act = act;
  a.rectified_output = rectified;
  return a;
}

long param_count(const MLPArch& arch) {
  long n = 0;
  for (int k = 0; k + 1 < static_cast<int>(arch.sizes.size()); ++k)
    n += static_cast<long>(arch.sizes[k + 1]) * arch.sizes[k] + arch.sizes[k + 1];
  return n;
}

VecX glorot_init(const MLPArch& arch, unsigned long long seed) {
  std::mt19937_64 rng(seed);
  auto uniform01 = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  VecX theta = VecX::Zero(param_count(arch));
  long offset = 0;
  for (int k = 0; k + 1 < static_cast<int>(arch.sizes.size()); ++k) {
    const int nin = arch.sizes[k], nout = arch.sizes[k + 1];
    const double limit = std::sqrt(6.0 / (nin + nout));
    for (int i = 0; i < nout * nin; ++i) theta[offset + i] = (2.0 * uniform01() - 1.0) * limit;
    offset += static_cast<long>(nout) * nin + nout;  // biases stay zero
  }
  return theta;
}

MatX forward(const MLPArch& arch, const VecX& theta, const MatX& X) {
  require(X.cols() == arch.input_dim(), "forward: input dimension mismatch");
  require(theta.size() == param_count(arch), "forward: parameter vector size mismatch");
  const int L = arch.num_layers();
  long offset = 0;
  MatX H = X;
  for (int k = 0; k < L; ++k) {
    LayerView lv = layer_view(arch, theta, k, offset);
    MatX A = (H * lv.W.transpose()).rowwise() + lv.b.transpose();
    if (k + 1 < L)
      H = A.unaryExpr([&](double x) { return activate(arch.act, x); });
    else
      H = arch.rectified_output ? MatX(A.array().abs() + 0.01) : A;
  }
  return H;
}

VecX vjp_params(const MLPArch& arch, const VecX& theta, const MatX& X, const MatX& cotangent) {
  require(X.cols() == arch.input_dim(), "vjp_params: input dimension mismatch");
  require(cotangent.rows() == X.rows() && cotangent.cols() == arch.output_dim(),
          "vjp_params: cotangent shape mismatch");
  const int L = arch.num_layers();
  std::vector<MatX> H(L + 1), A(L);
  H[0] = X;
  long offset = 0;
  for (int k = 0; k < L; ++k) {
    LayerView lv = layer_view(arch, theta, k, offset);
    A[k] = (H[k] * lv.W.transpose()).rowwise() + lv.b.transpose();
    H[k + 1] = (k + 1 < L) ? MatX(A[k].unaryExpr([&](double x) { return activate(arch.act, x); }))
                           : A[k];
  }
  VecX grad = VecX::Zero(theta.size());
  MatX dA = cotangent;
  if (arch.rectified_output) dA = dA.cwiseProduct(A[L - 1].unaryExpr(&sign0));
  for (int k = L - 1; k >= 0; --k) {
    const int nin = arch.sizes[k], nout = arch.sizes[k + 1];
    long base = 0;
    for (int j = 0; j < k; ++j) base += static_cast<long>(arch.sizes[j + 1]) * arch.sizes[j] + arch.sizes[j + 1];
    Eigen::Map<RowMat> dW(grad.data() + base, nout, nin);
    Eigen::Map<VecX> db(grad.data() + base + static_cast<long>(nout) * nin, nout);
    dW = dA.transpose() * H[k];
    db = dA.colwise().sum();
    if (k > 0) {
      long off2 = base;
      LayerView lv = layer_view(arch, theta, k, off2);
      MatX dH = dA * lv.W;
      dA = dH.cwiseProduct(A[k - 1].unaryExpr([&](double x) { return activate_d(arch.act, x); }));
    }
  }
  return grad;
}

void forward_jet1(const MLPArch& arch, const VecX& theta, const MatX& X, MatX& Y,
                  std::vector<MatX>& dY) {
  const int L = arch.num_layers();
  const int din = arch.input_dim();
  long offset = 0;
  MatX H = X;
  dY.assign(din, MatX::Zero(X.rows(), din));
  for (int d = 0; d < din; ++d) dY[d].col(d).setOnes();
  for (int k = 0; k < L; ++k) {
    LayerView lv = layer_view(arch, theta, k, offset);
    MatX A = (H * lv.W.transpose()).rowwise() + lv.b.transpose();
    for (int d = 0; d < din; ++d) dY[d] = dY[d] * lv.W.transpose();
    if (k + 1 < L) {
      MatX dact = A.unaryExpr([&](double x) { return activate_d(arch.act, x); });
      for (int d = 0; d < din; ++d) dY[d] = dY[d].cwiseProduct(dact);
      H = A.unaryExpr([&](double x) { return activate(arch.act, x); });
    } else if (arch.rectified_output) {
      MatX sg = A.unaryExpr(&sign0);
      for (int d = 0; d < din; ++d) dY[d] = dY[d].cwiseProduct(sg);
      H = A.array().abs() + 0.01;
    } else {
      H = A;
    }
  }
  Y = H;
}

int jet2_index(int d1, int d2, int dim) {
  if (d1 > d2) std::swap(d1, d2);
  return d1 * dim - d1 * (d1 - 1) / 2 + (d2 - d1);
}

void forward_jet2(const MLPArch& arch, const VecX& theta, const MatX& X, MatX& Y,
                  std::vector<MatX>& dY, std::vector<MatX>& d2Y) {
  const int L = arch.num_layers();
  const int din = arch.input_dim();
  const int npairs = din * (din + 1) / 2;
  long offset = 0;
  MatX H = X;
  dY.assign(din, MatX::Zero(X.rows(), din));
  for (int d = 0; d < din; ++d) dY[d].col(d).setOnes();
  d2Y.assign(npairs, MatX::Zero(X.rows(), din));
  for (int k = 0; k < L; ++k) {
    LayerView lv = layer_view(arch, theta, k, offset);
    MatX A = (H * lv.W.transpose()).rowwise() + lv.b.transpose();
    for (int d = 0; d < din; ++d) dY[d] = dY[d] * lv.W.transpose();
    for (int p = 0; p < npairs; ++p) d2Y[p] = d2Y[p] * lv.W.transpose();
    if (k + 1 < L) {
      MatX d1a = A.unaryExpr([&](double x) { return activate_d(arch.act, x); });
      MatX d2a = A.unaryExpr([&](double x) { return activate_dd(arch.act, x); });
      for (int d1 = 0; d1 < din; ++d1)
        for (int d2 = d1; d2 < din; ++d2) {
          MatX& S = d2Y[jet2_index(d1, d2, din)];
          S = S.cwiseProduct(d1a) + dY[d1].cwiseProduct(dY[d2]).cwiseProduct(d2a);
        }
      for (int d = 0; d < din; ++d) dY[d] = dY[d].cwiseProduct(d1a);
      H = A.unaryExpr([&](double x) { return activate(arch.act, x); });
    } else if (arch.rectified_output) {
      MatX sg = A.unaryExpr(&sign0);
      for (int p = 0; p < npairs; ++p) d2Y[p] = d2Y[p].cwiseProduct(sg);
      for (int d = 0; d < din; ++d) dY[d] = dY[d].cwiseProduct(sg);
      H = A.array().abs() + 0.01;
    } else {
      H = A;
    }
  }
  Y = H;
}

void save_checkpoint(const std::string& path, const MLPArch& arch, const VecX& theta) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "save_checkpoint: cannot open " + path);
  const char magic[4] = {'F', 'N', 'N', '1'};
  f.write(magic, 4);
  auto w64 = [&f](std::uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
  auto w32 = [&f](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  w64(arch.sizes.size());
  for (int s : arch.sizes) w64(static_cast<std::uint64_t>(s));
  w32(static_cast<std::uint32_t>(arch.act));
  w32(arch.rectified_output ? 1u : 0u);
  w64(static_cast<std::uint64_t>(theta.size()));
  f.write(reinterpret_cast<const char*>(theta.data()), theta.size() * 8);
  require(f.good(), "save_checkpoint: write failed");
}

std::pair<MLPArch, VecX> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  require(std::memcmp(magic, "FNN1", 4) == 0, "load_checkpoint: bad magic");
  auto r64 = [&f]() {
    std::uint64_t v;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  auto r32 = [&f]() {
    std::uint32_t v;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  MLPArch arch;
  const std::uint64_t ns = r64();
  require(ns >= 2 && ns < 64, "load_checkpoint: corrupt header");
  arch.sizes.resize(ns);
  for (auto& s : arch.sizes) s = static_cast<int>(r64());
  arch.act = static_cast<Activation>(r32());
  arch.rectified_output = r32() != 0;
  VecX theta(static_cast<long>(r64()));
  require(theta.size() == param_count(arch), "load_checkpoint: parameter count mismatch");
  f.read(reinterpret_cast<char*>(theta.data()), theta.size() * 8);
  require(f.good(), "load_checkpoint: truncated file");
  return {arch, theta};
}

}  // namespace feinn
