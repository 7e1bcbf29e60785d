#pragma once

// Variational MLP encoder: x -> [mu; log sigma^2].
//
// Hidden layers are affine + activation; the output layer is affine only, so
// with 1-Lipschitz activations each layer contributes a factor rho_l to the
// Lipschitz constant of the whole map. When spectral bounds are configured
// the network is built bias-free, which makes f(0) = 0 and gives
// ||f(x)|| <= ||x|| * prod_l rho_l.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vcl/autodiff.hpp"
#include "vcl/projected_normal.hpp"
#include "vcl/random.hpp"

namespace vcl {

enum class Activation { kTanh, kRelu };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

struct EncoderConfig {
  std::vector<std::size_t> layer_dims;  // d_0 ... d_L, d_L = 2 * embed dim
  Activation activation = Activation::kTanh;
  std::uint64_t init_seed = 0;
  std::vector<double> spectral_bounds;  // empty, or one rho per layer

  std::size_t num_layers() const { return layer_dims.empty() ? 0 : layer_dims.size() - 1; }
  bool has_bias() const { return spectral_bounds.empty(); }
  void validate() const;
};

struct DenseLayer {
  Tensor weight;  // fan_in x fan_out, applied as x * W
  Tensor bias;    // fan_out
};

class MlpEncoder {
 public:
  MlpEncoder() = default;
  MlpEncoder(EncoderConfig config, std::vector<DenseLayer> layers);

  const EncoderConfig& config() const { return config_; }
  std::size_t input_dim() const { return config_.layer_dims.front(); }
  std::size_t embed_dim() const { return config_.layer_dims.back() / 2; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  // Parameter tensors in a fixed order: W_1, b_1, W_2, b_2, ...
  std::vector<Tensor*> parameters();

  bool operator==(const MlpEncoder&) const;

 private:
  EncoderConfig config_;
  std::vector<DenseLayer> layers_;
};

// Encoder parameters registered as graph leaves.
struct BoundEncoder {
  const MlpEncoder* encoder = nullptr;
  std::vector<Var> params;  // same order as MlpEncoder::parameters()
};

BoundEncoder bind(Graph& g, const MlpEncoder& enc);
// n x d_0 input -> n x 2d head (unclamped).
Var forward(const BoundEncoder& bound, Var x);
// n x d_0 input -> posterior batch with clamped log-variance.
PosteriorBatch encode_batch(const BoundEncoder& bound, Var x);

PosteriorParams encode(const MlpEncoder& enc, std::span<const double> x);
std::vector<PosteriorParams> encode_all(const MlpEncoder& enc, const Tensor& x);

MlpEncoder init_encoder(const EncoderConfig& config, Prng& prng);

struct SpectralLayerReport {
  double estimated_norm = 0.0;  // before projection
  bool converged = true;
  bool rescaled = false;
};

inline constexpr int kPowerIterations = 30;
inline constexpr double kPowerTolerance = 1e-8;

// Largest singular value of W by power iteration on W^T W.
struct PowerIterationResult {
  double value = 0.0;
  bool converged = false;
};
PowerIterationResult spectral_norm(const Tensor& w, int max_iter = kPowerIterations,
                                   double tol = kPowerTolerance);

// Rescales every layer whose spectral norm exceeds its bound. When power
// iteration does not converge the layer is rescaled by its Frobenius norm
// instead, which is always an upper bound on the spectral norm.
std::vector<SpectralLayerReport> spectral_project(MlpEncoder& enc);

// sum_l ||W_l^T||_{2,1}; reported, never enforced.
std::vector<double> two_one_norms(const MlpEncoder& enc);

// Text checkpoint block; doubles are written as hex floats so the round trip
// is exact.
void write_encoder(std::ostream& os, const MlpEncoder& enc);
MlpEncoder read_encoder(std::istream& is);

}  // namespace vcl
