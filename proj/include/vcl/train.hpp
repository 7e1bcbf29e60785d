#pragma once

// Augmentation, optimizers and the contrastive training loops.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vcl/data_io.hpp"
#include "vcl/encoder.hpp"
#include "vcl/losses.hpp"
#include "vcl/random.hpp"

namespace vcl {

enum class Method { kSimclr, kVsimclr, kSupcon, kVsupcon };
enum class OptimizerKind { kSgdMomentum, kAdam };

std::string to_string(Method m);
Method parse_method(const std::string& s);
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);
bool is_variational(Method m);
bool is_supervised(Method m);

struct AugmentPolicy {
  // vector data
  double noise_std = 0.0;
  double dropout = 0.0;   // per-coordinate zeroing; one random coordinate survives if all drop
  bool rotation = false;  // random Givens rotation of one coordinate pair
  double rotation_max_angle = std::numbers::pi / 8.0;
  // image data (used only when the dataset carries an image shape)
  double flip_prob = 0.0;
  std::size_t crop_padding = 0;
  double pixel_noise_std = 0.0;

  void validate() const;
  bool is_identity() const;
};

// Image ops first (flip, padded crop, pixel noise), then vector ops (noise,
// dropout, rotation). Consumes draws from prng only.
std::vector<double> augment(std::span<const double> x, const AugmentPolicy& policy, Prng& prng,
                            const std::optional<ImageShape>& image = std::nullopt);

struct TrainConfig {
  Method method = Method::kVsimclr;
  double tau = 0.5;
  double beta = 1.0;
  std::size_t m = 1;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  OptimizerKind optimizer = OptimizerKind::kSgdMomentum;
  double lr = 0.05;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool cosine_decay = true;
  AugmentPolicy augment;
  std::uint64_t seed = 0;
  bool spectral_projection = false;
  double spectral_bound = 1.0;  // rho for every layer when projection is on

  std::vector<std::size_t> hidden_dims{64};
  std::size_t embed_dim = 16;
  Activation activation = Activation::kTanh;

  bool asymmetric = false;         // one-directional VCL bound
  double dist_nce_weight = 0.0;    // weight of the posterior-parameter contrastive term
  bool zero_variance = false;      // sampling with sigma == 0 (variational methods)
  bool freeze_logvar_head = false; // never update the log-variance half of the output layer
  std::size_t checkpoint_every = 0;

  void validate() const;
  EncoderConfig encoder_config(std::size_t input_dim) const;

  // Flat "key = value" text, one entry per line, '#' comments.
  static TrainConfig parse(const std::string& text);
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
};

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  std::size_t step = 0;
  std::vector<Tensor> first;   // momentum buffer or Adam first moment
  std::vector<Tensor> second;  // Adam second moment

  bool operator==(const OptimizerState&) const = default;
};

OptimizerState make_optimizer_state(const TrainConfig& cfg, MlpEncoder& enc);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double kl = 0.0;           // mean normalised KL (unweighted by beta)
  double contrastive = 0.0;  // mean InfoNCE / SupCon term
  double grad_norm = 0.0;    // mean global gradient norm over steps
  double lr = 0.0;           // learning rate of the last step
  double wall_time_s = 0.0;
  std::vector<double> step_losses;

  // Equality ignores wall time.
  bool same_values(const EpochRecord& o) const;
  nlohmann::json to_json(bool include_wall_time) const;
};

using TrainLog = std::vector<EpochRecord>;
bool same_values(const TrainLog& a, const TrainLog& b);

struct BatchLoss {
  Var total;
  double contrastive = 0.0;
  double kl = 0.0;
};

// Loss of one batch: view1 and view2 are N x d_0 augmented inputs, labels has
// one entry per sample.
BatchLoss batch_loss(const BoundEncoder& bound, const Tensor& view1, const Tensor& view2,
                     const std::vector<int>& labels, const TrainConfig& cfg, Prng& sampling_rng);

std::size_t batches_per_epoch(const TrainConfig& cfg, std::size_t n);

// One pass over the data (seeded shuffle, drop-last batching). Throws
// NonFiniteError naming the batch on a non-finite loss.
EpochRecord train_epoch(MlpEncoder& enc, const Dataset& data, const TrainConfig& cfg, OptimizerState& opt,
                        std::size_t epoch);

struct FitOptions {
  std::string checkpoint_path;  // empty: no checkpoints
  std::string metrics_path;     // empty: no metrics file
  std::string resume_from;      // checkpoint to continue from
  bool log_wall_time = false;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  MlpEncoder encoder;
  TrainLog log;
  std::string checkpoint_path;
  OptimizerState optimizer;
};

FitResult fit(const TrainConfig& cfg, const Dataset& data, const FitOptions& options = {});

struct Checkpoint {
  TrainConfig config;
  std::size_t epochs_done = 0;
  MlpEncoder encoder;
  OptimizerState optimizer;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
std::string checkpoint_text(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);

}  // namespace vcl
