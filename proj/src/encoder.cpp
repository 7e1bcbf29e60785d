#include "vcl/encoder.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "vcl/error.hpp"
#include "vcl/serialize.hpp"

namespace vcl {

std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

void EncoderConfig::validate() const {
  if (layer_dims.size() < 2) throw std::invalid_argument("encoder needs at least one layer");
  for (auto d : layer_dims) {
    if (d == 0) throw std::invalid_argument("encoder layer dimensions must be positive");
  }
  if (layer_dims.back() % 2 != 0) throw std::invalid_argument("encoder output dimension must be even");
  if (!spectral_bounds.empty()) {
    if (spectral_bounds.size() != num_layers()) {
      throw std::invalid_argument("one spectral bound per layer required");
    }
    for (double r : spectral_bounds) {
      if (!(r > 0.0)) throw std::invalid_argument("spectral bounds must be positive");
    }
  }
}

MlpEncoder::MlpEncoder(EncoderConfig config, std::vector<DenseLayer> layers)
    : config_(std::move(config)), layers_(std::move(layers)) {
  config_.validate();
  if (layers_.size() != config_.num_layers()) throw ShapeError("encoder: layer count mismatch");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& w = layers_[l].weight;
    if (w.rank() != 2 || w.rows() != config_.layer_dims[l] || w.cols() != config_.layer_dims[l + 1] ||
        layers_[l].bias.size() != config_.layer_dims[l + 1]) {
      throw ShapeError("encoder: layer " + std::to_string(l) + " has the wrong shape");
    }
  }
}

std::vector<Tensor*> MlpEncoder::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

bool MlpEncoder::operator==(const MlpEncoder& o) const {
  if (config_.layer_dims != o.config_.layer_dims || config_.activation != o.config_.activation ||
      config_.init_seed != o.config_.init_seed || config_.spectral_bounds != o.config_.spectral_bounds ||
      layers_.size() != o.layers_.size()) {
    return false;
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (!(layers_[l].weight == o.layers_[l].weight) || !(layers_[l].bias == o.layers_[l].bias)) return false;
  }
  return true;
}

BoundEncoder bind(Graph& g, const MlpEncoder& enc) {
  BoundEncoder b{&enc, {}};
  for (std::size_t l = 0; l < enc.layers().size(); ++l) {
    const auto& layer = enc.layers()[l];
    b.params.push_back(g.parameter(layer.weight, "W" + std::to_string(l)));
    if (enc.config().has_bias()) {
      b.params.push_back(g.parameter(layer.bias, "b" + std::to_string(l)));
    } else {
      b.params.push_back(g.constant(layer.bias, "b" + std::to_string(l)));
    }
  }
  return b;
}

Var forward(const BoundEncoder& bound, Var x) {
  const auto& cfg = bound.encoder->config();
  if (x.value().rank() != 2 || x.value().cols() != cfg.layer_dims.front()) {
    throw ShapeError("encoder: expected inputs with " + std::to_string(cfg.layer_dims.front()) +
                     " columns, got " + x.value().shape_string());
  }
  Var h = x;
  const std::size_t layers = cfg.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    h = matmul(h, bound.params[2 * l]);
    if (cfg.has_bias()) h = add_bias(h, bound.params[2 * l + 1]);
    if (l + 1 < layers) h = cfg.activation == Activation::kTanh ? tanh(h) : relu(h);
  }
  return h;
}

PosteriorBatch encode_batch(const BoundEncoder& bound, Var x) { return split_posterior(forward(bound, x)); }

std::vector<PosteriorParams> encode_all(const MlpEncoder& enc, const Tensor& x) {
  Graph g;
  BoundEncoder b = bind(g, enc);
  PosteriorBatch post = encode_batch(b, g.constant(x));
  std::vector<PosteriorParams> out;
  out.reserve(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out.push_back(posterior_row(post, i));
  return out;
}

PosteriorParams encode(const MlpEncoder& enc, std::span<const double> x) {
  if (x.size() != enc.input_dim()) throw ShapeError("encode: input dimension mismatch");
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("encode: non-finite input");
  }
  return encode_all(enc, Tensor::matrix(1, x.size(), std::vector<double>(x.begin(), x.end()))).front();
}

MlpEncoder init_encoder(const EncoderConfig& config, Prng& prng) {
  config.validate();
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < config.num_layers(); ++l) {
    const std::size_t in = config.layer_dims[l], out = config.layer_dims[l + 1];
    const double stddev = std::sqrt(2.0 / static_cast<double>(in));
    DenseLayer layer{Tensor::matrix(in, out), Tensor({out}, 0.0)};
    for (auto& w : layer.weight.data()) w = stddev * prng.normal();
    layers.push_back(std::move(layer));
  }
  return MlpEncoder(config, std::move(layers));
}

PowerIterationResult spectral_norm(const Tensor& w, int max_iter, double tol) {
  const std::size_t rows = w.rows(), cols = w.cols();
  std::vector<double> v(cols, 1.0 / std::sqrt(static_cast<double>(cols)));
  std::vector<double> u(rows);
  PowerIterationResult res;
  double prev = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    // u = W v ; v = W^T u / ||W^T u||
    for (std::size_t r = 0; r < rows; ++r) u[r] = dot(w.row(r), v);
    std::vector<double> next(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) next[c] += w.at(r, c) * u[r];
    }
    const double norm = l2_norm(next);
    if (norm == 0.0) {
      res.value = 0.0;
      res.converged = true;
      return res;
    }
    for (std::size_t c = 0; c < cols; ++c) v[c] = next[c] / norm;
    // ||W^T W v|| -> s^2 for the top singular vector.
    const double s = std::sqrt(norm);
    res.value = s;
    if (it > 0 && std::abs(s - prev) <= tol * s) {
      res.converged = true;
      break;
    }
    prev = s;
  }
  // Final estimate as ||W v|| with the unit iterate, never above the true norm.
  for (std::size_t r = 0; r < rows; ++r) u[r] = dot(w.row(r), v);
  res.value = l2_norm(u);
  return res;
}

std::vector<SpectralLayerReport> spectral_project(MlpEncoder& enc) {
  const auto& bounds = enc.config().spectral_bounds;
  if (bounds.empty()) throw std::invalid_argument("spectral_project: encoder has no spectral bounds");
  std::vector<SpectralLayerReport> out;
  for (std::size_t l = 0; l < enc.layers().size(); ++l) {
    Tensor& w = enc.layers()[l].weight;
    const double rho = bounds[l];
    const auto est = spectral_norm(w);
    SpectralLayerReport rep{est.value, est.converged, false};
    double factor = 1.0;
    if (est.converged) {
      if (est.value > rho) factor = rho / est.value;
    } else {
      const double fro = l2_norm(w.data());
      if (fro > rho) factor = rho / fro;
    }
    if (factor < 1.0) {
      for (auto& x : w.data()) x *= factor;
      rep.rescaled = true;
    }
    out.push_back(rep);
  }
  return out;
}

std::vector<double> two_one_norms(const MlpEncoder& enc) {
  // Theta^l maps d_{l-1} -> d_l, i.e. Theta = W^T; ||Theta^T||_{2,1} sums the
  // L2 norms of the columns of W^T, i.e. of the rows of W.
  std::vector<double> out;
  for (const auto& layer : enc.layers()) {
    double s = 0.0;
    for (std::size_t r = 0; r < layer.weight.rows(); ++r) s += l2_norm(layer.weight.row(r));
    out.push_back(s);
  }
  return out;
}

void write_encoder(std::ostream& os, const MlpEncoder& enc) {
  const auto& cfg = enc.config();
  os << "encoder 1\n";
  os << "activation " << to_string(cfg.activation) << '\n';
  os << "init_seed " << cfg.init_seed << '\n';
  os << "layer_dims " << cfg.layer_dims.size();
  for (auto d : cfg.layer_dims) os << ' ' << d;
  os << '\n';
  os << "spectral_bounds " << cfg.spectral_bounds.size() << '\n';
  write_doubles(os, cfg.spectral_bounds);
  for (std::size_t l = 0; l < enc.layers().size(); ++l) {
    os << "layer " << l << '\n';
    write_tensor(os, enc.layers()[l].weight);
    write_tensor(os, enc.layers()[l].bias);
  }
  os << "end_encoder\n";
}

MlpEncoder read_encoder(std::istream& is) {
  expect_token(is, "encoder");
  if (read_size(is) != 1) throw FormatError("unsupported encoder block version");
  EncoderConfig cfg;
  expect_token(is, "activation");
  cfg.activation = parse_activation(read_token(is));
  expect_token(is, "init_seed");
  cfg.init_seed = read_size(is);
  expect_token(is, "layer_dims");
  cfg.layer_dims.resize(read_size(is));
  for (auto& d : cfg.layer_dims) d = read_size(is);
  expect_token(is, "spectral_bounds");
  cfg.spectral_bounds = read_doubles(is, read_size(is));
  cfg.validate();
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
    expect_token(is, "layer");
    if (read_size(is) != l) throw FormatError("encoder layers out of order");
    DenseLayer layer;
    layer.weight = read_tensor(is);
    layer.bias = read_tensor(is);
    layers.push_back(std::move(layer));
  }
  expect_token(is, "end_encoder");
  return MlpEncoder(std::move(cfg), std::move(layers));
}

}  // namespace vcl
