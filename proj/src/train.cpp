#include "vcl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "vcl/error.hpp"
#include "vcl/serialize.hpp"

namespace vcl {

std::string to_string(Method m) {
  switch (m) {
    case Method::kSimclr: return "simclr";
    case Method::kVsimclr: return "vsimclr";
    case Method::kSupcon: return "supcon";
    case Method::kVsupcon: return "vsupcon";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "simclr") return Method::kSimclr;
  if (s == "vsimclr") return Method::kVsimclr;
  if (s == "supcon") return Method::kSupcon;
  if (s == "vsupcon") return Method::kVsupcon;
  throw std::invalid_argument("unknown method '" + s + "'");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd_momentum"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd_momentum" || s == "sgd") return OptimizerKind::kSgdMomentum;
  if (s == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

bool is_variational(Method m) { return m == Method::kVsimclr || m == Method::kVsupcon; }
bool is_supervised(Method m) { return m == Method::kSupcon || m == Method::kVsupcon; }

// ---------------------------------------------------------------------------
// Augmentation

void AugmentPolicy::validate() const {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(what) + " must lie in [0, 1]");
  };
  prob(dropout, "dropout rate");
  prob(flip_prob, "flip probability");
  if (!(noise_std >= 0.0) || !(pixel_noise_std >= 0.0)) throw std::invalid_argument("noise std must be >= 0");
  if (!(rotation_max_angle >= 0.0)) throw std::invalid_argument("rotation angle must be >= 0");
}

bool AugmentPolicy::is_identity() const {
  return noise_std == 0.0 && dropout == 0.0 && !rotation && flip_prob == 0.0 && crop_padding == 0 &&
         pixel_noise_std == 0.0;
}

std::vector<double> augment(std::span<const double> x, const AugmentPolicy& policy, Prng& prng,
                            const std::optional<ImageShape>& image) {
  std::vector<double> out(x.begin(), x.end());
  if (image && image->size() == out.size()) {
    const std::size_t ch = image->channels, h = image->height, w = image->width;
    if (policy.flip_prob > 0.0 && prng.uniform() < policy.flip_prob) {
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t r = 0; r < h; ++r) {
          auto* row = &out[(c * h + r) * w];
          std::reverse(row, row + w);
        }
      }
    }
    if (policy.crop_padding > 0) {
      const std::size_t p = policy.crop_padding;
      const auto dy = static_cast<long>(prng.below(2 * p + 1)) - static_cast<long>(p);
      const auto dx = static_cast<long>(prng.below(2 * p + 1)) - static_cast<long>(p);
      std::vector<double> cropped(out.size(), 0.0);
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t q = 0; q < w; ++q) {
            const long sr = static_cast<long>(r) + dy, sq = static_cast<long>(q) + dx;
            if (sr < 0 || sq < 0 || sr >= static_cast<long>(h) || sq >= static_cast<long>(w)) continue;
            cropped[(c * h + r) * w + q] = out[(c * h + static_cast<std::size_t>(sr)) * w + static_cast<std::size_t>(sq)];
          }
        }
      }
      out = std::move(cropped);
    }
    if (policy.pixel_noise_std > 0.0) {
      for (auto& v : out) v += policy.pixel_noise_std * prng.normal();
    }
  }
  if (policy.noise_std > 0.0) {
    for (auto& v : out) v += policy.noise_std * prng.normal();
  }
  if (policy.dropout > 0.0) {
    std::size_t kept = out.size();
    std::vector<double> before = out;
    for (auto& v : out) {
      if (prng.uniform() < policy.dropout) {
        v = 0.0;
        --kept;
      }
    }
    if (kept == 0 && !out.empty()) {
      const std::size_t keep = prng.below(out.size());
      out[keep] = before[keep];
    }
  }
  if (policy.rotation && out.size() >= 2) {
    const std::size_t i = prng.below(out.size());
    std::size_t j = prng.below(out.size() - 1);
    if (j >= i) ++j;
    const double a = (2.0 * prng.uniform() - 1.0) * policy.rotation_max_angle;
    const double xi = out[i], xj = out[j];
    out[i] = std::cos(a) * xi - std::sin(a) * xj;
    out[j] = std::sin(a) * xi + std::cos(a) * xj;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be > 0");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  if (m < 1) throw std::invalid_argument("m must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (!(lr >= 0.0)) throw std::invalid_argument("lr must be >= 0");
  if (embed_dim == 0) throw std::invalid_argument("embed_dim must be > 0");
  if (spectral_projection && !(spectral_bound > 0.0)) throw std::invalid_argument("spectral_bound must be > 0");
  if (!(dist_nce_weight >= 0.0)) throw std::invalid_argument("dist_nce_weight must be >= 0");
  augment.validate();
}

EncoderConfig TrainConfig::encoder_config(std::size_t input_dim) const {
  EncoderConfig ec;
  ec.layer_dims.push_back(input_dim);
  for (auto h : hidden_dims) ec.layer_dims.push_back(h);
  ec.layer_dims.push_back(2 * embed_dim);
  ec.activation = activation;
  ec.init_seed = seed;
  if (spectral_projection) ec.spectral_bounds.assign(ec.num_layers(), spectral_bound);
  return ec;
}

namespace {

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw std::invalid_argument("config key '" + key + "': bad number '" + v + "'");
  return d;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const unsigned long long n = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || v.front() == '-') {
    throw std::invalid_argument("config key '" + key + "': bad count '" + v + "'");
  }
  return static_cast<std::size_t>(n);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config key '" + key + "': bad boolean '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "method") method = parse_method(v);
  else if (key == "tau") tau = parse_double(key, v);
  else if (key == "beta") beta = parse_double(key, v);
  else if (key == "m") m = parse_count(key, v);
  else if (key == "epochs") epochs = parse_count(key, v);
  else if (key == "batch_size") batch_size = parse_count(key, v);
  else if (key == "optimizer") optimizer = parse_optimizer(v);
  else if (key == "lr") lr = parse_double(key, v);
  else if (key == "momentum") momentum = parse_double(key, v);
  else if (key == "adam_beta1") adam_beta1 = parse_double(key, v);
  else if (key == "adam_beta2") adam_beta2 = parse_double(key, v);
  else if (key == "adam_eps") adam_eps = parse_double(key, v);
  else if (key == "cosine_decay") cosine_decay = parse_bool(key, v);
  else if (key == "seed") seed = parse_count(key, v);
  else if (key == "spectral_projection") spectral_projection = parse_bool(key, v);
  else if (key == "spectral_bound") spectral_bound = parse_double(key, v);
  else if (key == "hidden_dims") {
    hidden_dims.clear();
    std::istringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (!tok.empty()) hidden_dims.push_back(parse_count(key, tok));
    }
  } else if (key == "embed_dim") embed_dim = parse_count(key, v);
  else if (key == "activation") activation = parse_activation(v);
  else if (key == "asymmetric") asymmetric = parse_bool(key, v);
  else if (key == "dist_nce_weight") dist_nce_weight = parse_double(key, v);
  else if (key == "zero_variance") zero_variance = parse_bool(key, v);
  else if (key == "freeze_logvar_head") freeze_logvar_head = parse_bool(key, v);
  else if (key == "checkpoint_every") checkpoint_every = parse_count(key, v);
  else if (key == "aug_noise_std") augment.noise_std = parse_double(key, v);
  else if (key == "aug_dropout") augment.dropout = parse_double(key, v);
  else if (key == "aug_rotation") augment.rotation = parse_bool(key, v);
  else if (key == "aug_rotation_max_angle") augment.rotation_max_angle = parse_double(key, v);
  else if (key == "aug_flip_prob") augment.flip_prob = parse_double(key, v);
  else if (key == "aug_crop_padding") augment.crop_padding = parse_count(key, v);
  else if (key == "aug_pixel_noise_std") augment.pixel_noise_std = parse_double(key, v);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  auto b = [](bool x) { return x ? "true" : "false"; };
  os << "method = " << to_string(method) << '\n'
     << "tau = " << fmt_double(tau) << '\n'
     << "beta = " << fmt_double(beta) << '\n'
     << "m = " << m << '\n'
     << "epochs = " << epochs << '\n'
     << "batch_size = " << batch_size << '\n'
     << "optimizer = " << to_string(optimizer) << '\n'
     << "lr = " << fmt_double(lr) << '\n'
     << "momentum = " << fmt_double(momentum) << '\n'
     << "adam_beta1 = " << fmt_double(adam_beta1) << '\n'
     << "adam_beta2 = " << fmt_double(adam_beta2) << '\n'
     << "adam_eps = " << fmt_double(adam_eps) << '\n'
     << "cosine_decay = " << b(cosine_decay) << '\n'
     << "seed = " << seed << '\n'
     << "spectral_projection = " << b(spectral_projection) << '\n'
     << "spectral_bound = " << fmt_double(spectral_bound) << '\n'
     << "hidden_dims = ";
  for (std::size_t i = 0; i < hidden_dims.size(); ++i) os << (i ? "," : "") << hidden_dims[i];
  os << '\n'
     << "embed_dim = " << embed_dim << '\n'
     << "activation = " << to_string(activation) << '\n'
     << "asymmetric = " << b(asymmetric) << '\n'
     << "dist_nce_weight = " << fmt_double(dist_nce_weight) << '\n'
     << "zero_variance = " << b(zero_variance) << '\n'
     << "freeze_logvar_head = " << b(freeze_logvar_head) << '\n'
     << "checkpoint_every = " << checkpoint_every << '\n'
     << "aug_noise_std = " << fmt_double(augment.noise_std) << '\n'
     << "aug_dropout = " << fmt_double(augment.dropout) << '\n'
     << "aug_rotation = " << b(augment.rotation) << '\n'
     << "aug_rotation_max_angle = " << fmt_double(augment.rotation_max_angle) << '\n'
     << "aug_flip_prob = " << fmt_double(augment.flip_prob) << '\n'
     << "aug_crop_padding = " << augment.crop_padding << '\n'
     << "aug_pixel_noise_std = " << fmt_double(augment.pixel_noise_std) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Records

bool EpochRecord::same_values(const EpochRecord& o) const {
  return epoch == o.epoch && loss == o.loss && kl == o.kl && contrastive == o.contrastive &&
         grad_norm == o.grad_norm && lr == o.lr && step_losses == o.step_losses;
}

nlohmann::json EpochRecord::to_json(bool include_wall_time) const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["loss"] = loss;
  j["kl"] = kl;
  j["contrastive"] = contrastive;
  j["grad_norm"] = grad_norm;
  j["lr"] = lr;
  if (include_wall_time) j["wall_time_s"] = wall_time_s;
  return j;
}

bool same_values(const TrainLog& a, const TrainLog& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].same_values(b[i])) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Optimisation

OptimizerState make_optimizer_state(const TrainConfig& cfg, MlpEncoder& enc) {
  OptimizerState st;
  st.kind = cfg.optimizer;
  for (Tensor* p : enc.parameters()) {
    st.first.emplace_back(p->shape(), 0.0);
    if (cfg.optimizer == OptimizerKind::kAdam) st.second.emplace_back(p->shape(), 0.0);
  }
  return st;
}

namespace {

double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (!cfg.cosine_decay || total_steps == 0) return cfg.lr;
  const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void apply_update(const TrainConfig& cfg, OptimizerState& st, std::vector<Tensor*>& params,
                  const std::vector<Tensor>& grads, double lr) {
  ++st.step;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    if (g.empty()) continue;
    if (st.kind == OptimizerKind::kSgdMomentum) {
      Tensor& buf = st.first[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        buf[i] = cfg.momentum * buf[i] + g[i];
        p[i] -= lr * buf[i];
      }
    } else {
      Tensor& m1 = st.first[k];
      Tensor& m2 = st.second[k];
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(st.step));
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(st.step));
      for (std::size_t i = 0; i < p.size(); ++i) {
        m1[i] = cfg.adam_beta1 * m1[i] + (1.0 - cfg.adam_beta1) * g[i];
        m2[i] = cfg.adam_beta2 * m2[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
        p[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.adam_eps);
      }
    }
  }
}

}  // namespace

BatchLoss batch_loss(const BoundEncoder& bound, const Tensor& view1, const Tensor& view2,
                     const std::vector<int>& labels, const TrainConfig& cfg, Prng& sampling_rng) {
  Graph& g = *bound.params.front().graph;
  const std::size_t n = view1.rows();
  std::vector<double> stacked(view1.data().begin(), view1.data().end());
  stacked.insert(stacked.end(), view2.data().begin(), view2.data().end());
  Var x = g.constant(Tensor::matrix(2 * n, view1.cols(), std::move(stacked)), "x");
  PosteriorBatch post = encode_batch(bound, x);

  BatchLoss out;
  if (!is_variational(cfg.method)) {
    Var z = row_l2_normalize(post.mu);
    LossNode l;
    if (cfg.method == Method::kSimclr) {
      l = info_nce(z, n, cfg.tau);
    } else {
      std::vector<int> row_labels(2 * n);
      for (std::size_t r = 0; r < 2 * n; ++r) row_labels[r] = labels[r % n];
      l = sup_con(z, row_labels, cfg.tau);
    }
    out.total = l.loss;
    out.contrastive = l.stats.value;
    return out;
  }

  PosteriorBatch v1{slice_rows(post.mu, 0, n), slice_rows(post.log_var, 0, n)};
  PosteriorBatch v2{slice_rows(post.mu, n, 2 * n), slice_rows(post.log_var, n, 2 * n)};
  VclOptions opt{cfg.tau, cfg.beta, cfg.m, cfg.zero_variance};
  VariationalLoss vl;
  if (cfg.method == Method::kVsupcon) {
    vl = vsupcon_loss(v1, v2, labels, sampling_rng, opt);
  } else if (cfg.asymmetric) {
    vl = vcl_loss_asym(v1, v2, sampling_rng, opt);
  } else {
    vl = vcl_loss(v1, v2, sampling_rng, opt);
  }
  out.total = vl.total;
  out.contrastive = vl.contrastive;
  out.kl = vl.kl;
  if (cfg.dist_nce_weight > 0.0) {
    LossNode dn = dist_nce(v1, v2, cfg.tau);
    out.total = add(out.total, scale(dn.loss, cfg.dist_nce_weight));
  }
  return out;
}

std::size_t batches_per_epoch(const TrainConfig& cfg, std::size_t n) { return n / cfg.batch_size; }

EpochRecord train_epoch(MlpEncoder& enc, const Dataset& data, const TrainConfig& cfg, OptimizerState& opt,
                        std::size_t epoch) {
  cfg.validate();
  data.validate();
  if (data.dim() != enc.input_dim()) throw ShapeError("train_epoch: data dimension does not match encoder");
  if (cfg.batch_size > data.size()) throw std::invalid_argument("train_epoch: batch_size exceeds dataset size");
  const auto t0 = std::chrono::steady_clock::now();

  const Prng epoch_rng = Prng(cfg.seed).split(1000 + epoch);
  Prng shuffle_rng = epoch_rng.split(0);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_rng.shuffle(order);

  const std::size_t n = cfg.batch_size;
  const std::size_t batches = batches_per_epoch(cfg, data.size());
  const std::size_t total_steps = batches * cfg.epochs;
  const std::size_t d0 = data.dim();
  const std::size_t embed = enc.embed_dim();

  EpochRecord rec;
  rec.epoch = epoch;
  for (std::size_t b = 0; b < batches; ++b) {
    Prng aug_rng = epoch_rng.split(1 + 2 * b);
    Prng sample_rng = epoch_rng.split(2 + 2 * b);
    Tensor v1 = Tensor::matrix(n, d0), v2 = Tensor::matrix(n, d0);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = order[b * n + i];
      labels[i] = data.labels[idx];
      auto a = augment(data.features.row(idx), cfg.augment, aug_rng, data.image);
      auto c = augment(data.features.row(idx), cfg.augment, aug_rng, data.image);
      std::copy(a.begin(), a.end(), v1.row(i).begin());
      std::copy(c.begin(), c.end(), v2.row(i).begin());
    }

    Graph g;
    BoundEncoder bound = bind(g, enc);
    BatchLoss bl;
    try {
      bl = batch_loss(bound, v1, v2, labels, cfg, sample_rng);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what());
    }
    const double loss = bl.total.value().item();
    if (!std::isfinite(loss)) {
      throw NonFiniteError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                           ": non-finite loss (contrastive " + std::to_string(bl.contrastive) + ", kl " +
                           std::to_string(bl.kl) + ")");
    }
    g.backward(bl.total);

    std::vector<Tensor> grads;
    double gn2 = 0.0;
    for (std::size_t k = 0; k < bound.params.size(); ++k) {
      if (!g.requires_grad(bound.params[k])) {
        grads.emplace_back();
        continue;
      }
      Tensor gr = bound.params[k].grad();
      if (cfg.freeze_logvar_head && k + 2 >= bound.params.size()) {
        // last layer: weight (k = size-2) and bias (k = size-1); columns [embed, 2*embed)
        for (std::size_t r = 0; r < gr.rows(); ++r) {
          for (std::size_t c = embed; c < 2 * embed; ++c) gr[r * gr.cols() + c] = 0.0;
        }
      }
      for (double v : gr.data()) gn2 += v * v;
      grads.push_back(std::move(gr));
    }
    const double lr = learning_rate(cfg, opt.step, total_steps);
    auto params = enc.parameters();
    apply_update(cfg, opt, params, grads, lr);
    if (cfg.spectral_projection) spectral_project(enc);

    rec.step_losses.push_back(loss);
    rec.loss += loss;
    rec.kl += bl.kl;
    rec.contrastive += bl.contrastive;
    rec.grad_norm += std::sqrt(gn2);
    rec.lr = lr;
  }
  if (batches > 0) {
    const double nb = static_cast<double>(batches);
    rec.loss /= nb;
    rec.kl /= nb;
    rec.contrastive /= nb;
    rec.grad_norm /= nb;
  }
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Checkpoints and fit

std::string checkpoint_text(const Checkpoint& ckpt) {
  std::ostringstream os;
  os << "vcl-checkpoint 1\n";
  os << "epochs_done " << ckpt.epochs_done << '\n';
  os << "config_begin\n" << ckpt.config.to_text() << "config_end\n";
  write_encoder(os, ckpt.encoder);
  const auto& st = ckpt.optimizer;
  os << "optimizer " << to_string(st.kind) << ' ' << st.step << ' ' << st.first.size() << ' ' << st.second.size()
     << '\n';
  for (const auto& t : st.first) write_tensor(os, t);
  for (const auto& t : st.second) write_tensor(os, t);
  os << "end_checkpoint\n";
  return os.str();
}

Checkpoint parse_checkpoint(const std::string& text) {
  std::istringstream is(text);
  expect_token(is, "vcl-checkpoint");
  if (read_size(is) != 1) throw FormatError("unsupported checkpoint version");
  Checkpoint ck;
  expect_token(is, "epochs_done");
  ck.epochs_done = read_size(is);
  expect_token(is, "config_begin");
  std::string line, cfg_text;
  std::getline(is, line);
  for (;;) {
    if (!std::getline(is, line)) throw FormatError("checkpoint: missing config_end");
    if (trim(line) == "config_end") break;
    cfg_text += line + '\n';
  }
  ck.config = TrainConfig::parse(cfg_text);
  ck.encoder = read_encoder(is);
  expect_token(is, "optimizer");
  ck.optimizer.kind = parse_optimizer(read_token(is));
  ck.optimizer.step = read_size(is);
  const std::size_t n1 = read_size(is), n2 = read_size(is);
  for (std::size_t i = 0; i < n1; ++i) ck.optimizer.first.push_back(read_tensor(is));
  for (std::size_t i = 0; i < n2; ++i) ck.optimizer.second.push_back(read_tensor(is));
  expect_token(is, "end_checkpoint");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string tmp = path + ".tmp";
  write_file(tmp, checkpoint_text(ckpt));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

FitResult fit(const TrainConfig& cfg, const Dataset& data, const FitOptions& options) {
  cfg.validate();
  data.validate();
  FitResult res;
  std::size_t start = 0;
  if (!options.resume_from.empty()) {
    Checkpoint ck = load_checkpoint(options.resume_from);
    if (ck.encoder.config().layer_dims != cfg.encoder_config(data.dim()).layer_dims) {
      throw std::invalid_argument("resume: checkpoint architecture does not match the configuration");
    }
    res.encoder = std::move(ck.encoder);
    res.optimizer = std::move(ck.optimizer);
    start = ck.epochs_done;
  } else {
    Prng init_rng = Prng(cfg.seed).split(7);
    res.encoder = init_encoder(cfg.encoder_config(data.dim()), init_rng);
    if (cfg.spectral_projection) spectral_project(res.encoder);
    res.optimizer = make_optimizer_state(cfg, res.encoder);
    if (!options.metrics_path.empty()) write_metrics_jsonl({}, options.metrics_path, false);
  }

  auto checkpoint = [&](std::size_t epochs_done) {
    if (options.checkpoint_path.empty()) return;
    save_checkpoint(options.checkpoint_path, Checkpoint{cfg, epochs_done, res.encoder, res.optimizer});
    res.checkpoint_path = options.checkpoint_path;
  };

  for (std::size_t e = start; e < cfg.epochs; ++e) {
    EpochRecord rec = train_epoch(res.encoder, data, cfg, res.optimizer, e);
    if (!options.metrics_path.empty()) {
      write_metrics_jsonl({rec.to_json(options.log_wall_time)}, options.metrics_path, true);
    }
    if (cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0 && e + 1 < cfg.epochs) checkpoint(e + 1);
    if (options.on_epoch) options.on_epoch(rec);
    res.log.push_back(std::move(rec));
  }
  checkpoint(std::max(start, cfg.epochs));
  return res;
}

}  // namespace vcl
