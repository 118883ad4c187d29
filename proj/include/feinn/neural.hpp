#pragma once

#include <string>
#include <vector>

#include "feinn/common.hpp"

namespace feinn {

enum class Activation { Tanh, Softplus, Identity };

/// Fully-connected feed-forward network. Parameters are packed layer-major:
/// for each layer, the weight matrix row-major (out x in), then the bias.
/// The optional output rectifier r(x) = |x| + 0.01 keeps outputs positive.
struct MLPArch {
  std::vector<int> sizes;  // (n_0, ..., n_L)
  Activation act = Activation::Tanh;
  bool rectified_output = false;

  int input_dim() const { return sizes.front(); }
  int output_dim() const { return sizes.back(); }
  int num_layers() const { return static_cast<int>(sizes.size()) - 1; }
};

MLPArch make_arch(int in, int hidden_layers, int width, int out, Activation act,
                  bool rectified = false);

long param_count(const MLPArch& arch);

/// Glorot-uniform weights, zero biases. The stream is a seeded mt19937_64
/// consumed layer by layer (weights row-major); uniforms are built from the
/// top 53 bits so draws are reproducible across platforms.
VecX glorot_init(const MLPArch& arch, unsigned long long seed);

/// Batched forward pass: X is N x n_0, result N x n_L.
MatX forward(const MLPArch& arch, const VecX& theta, const MatX& X);

/// Reverse-mode parameter gradient: sum over batch rows of
/// (d output_row / d theta)^T cotangent_row.
VecX vjp_params(const MLPArch& arch, const VecX& theta, const MatX& X, const MatX& cotangent);

/// Forward pass with first input derivatives: dY[d] is N x n_L holding
/// d output / d x_d.
void forward_jet1(const MLPArch& arch, const VecX& theta, const MatX& X, MatX& Y,
                  std::vector<MatX>& dY);

/// Forward pass with first and second input derivatives; d2Y is indexed by the
/// flattened upper-triangular pair (d1 <= d2).
void forward_jet2(const MLPArch& arch, const VecX& theta, const MatX& X, MatX& Y,
                  std::vector<MatX>& dY, std::vector<MatX>& d2Y);

int jet2_index(int d1, int d2, int dim);

/// Little-endian checkpoint: arch tuple, activation tags, then the raw
/// parameter array (layout documented in the README).
void save_checkpoint(const std::string& path, const MLPArch& arch, const VecX& theta);
std::pair<MLPArch, VecX> load_checkpoint(const std::string& path);

}  // namespace feinn
