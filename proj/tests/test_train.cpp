#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <unistd.h>

#include "doctest.h"
#include "vcl/error.hpp"
#include "vcl/train.hpp"

using namespace vcl;
namespace fs = std::filesystem;

namespace {

Dataset mixture(std::size_t per_class = 128, std::uint64_t seed = 1) {
  MixtureSpec spec;
  spec.per_class = per_class;
  spec.seed = seed;
  return gen_gaussian_mixture(spec);
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.hidden_dims = {16};
  cfg.embed_dim = 4;
  cfg.seed = 5;
  cfg.augment.noise_std = 0.3;
  return cfg;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("vcl_train_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("augment: identity, noise moments, flip") {
  Prng prng(1);
  const std::vector<double> x{1.0, -2.0, 0.5};
  CHECK(AugmentPolicy{}.is_identity());
  CHECK(augment(x, AugmentPolicy{}, prng) == x);

  AugmentPolicy noise;
  noise.noise_std = 0.1;
  const std::size_t trials = 100000;
  std::vector<double> m1(3, 0.0), m2(3, 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto y = augment(x, noise, prng);
    for (std::size_t i = 0; i < 3; ++i) {
      m1[i] += y[i] - x[i];
      m2[i] += (y[i] - x[i]) * (y[i] - x[i]);
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(m1[i] / trials) < 0.002);
    CHECK(std::abs(std::sqrt(m2[i] / trials) - 0.1) < 0.002);
  }

  AugmentPolicy flip;
  flip.flip_prob = 1.0;
  const ImageShape shape{1, 2, 3};
  const std::vector<double> img{1, 2, 3, 4, 5, 6};
  CHECK(augment(img, flip, prng, shape) == std::vector<double>{3, 2, 1, 6, 5, 4});

  AugmentPolicy drop;
  drop.dropout = 1.0;
  const auto d = augment(x, drop, prng);
  int survivors = 0;
  for (std::size_t i = 0; i < 3; ++i) survivors += d[i] != 0.0 ? (d[i] == x[i] ? 1 : 100) : 0;
  CHECK(survivors == 1);

  AugmentPolicy rot;
  rot.rotation = true;
  CHECK(std::abs(l2_norm(augment(x, rot, prng)) - l2_norm(x)) < 1e-12);

  Prng a(3), b(3);
  AugmentPolicy all;
  all.noise_std = 0.2;
  all.dropout = 0.3;
  all.rotation = true;
  CHECK(augment(x, all, a) == augment(x, all, b));

  AugmentPolicy bad;
  bad.dropout = 1.5;
  CHECK_THROWS(bad.validate());
  bad = AugmentPolicy{};
  bad.noise_std = -1.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("config text round trip and validation") {
  TrainConfig cfg = small_config();
  cfg.method = Method::kVsupcon;
  cfg.optimizer = OptimizerKind::kAdam;
  cfg.tau = 0.1234567890123;
  cfg.hidden_dims = {32, 8};
  cfg.augment.rotation = true;
  cfg.freeze_logvar_head = true;
  const TrainConfig back = TrainConfig::parse(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());
  CHECK(back.tau == cfg.tau);
  CHECK(back.hidden_dims == cfg.hidden_dims);

  CHECK(TrainConfig::parse("# comment\nmethod = simclr\n\nepochs=7\n").epochs == 7);
  CHECK_THROWS(TrainConfig::parse("nonsense = 1\n"));
  CHECK_THROWS(TrainConfig::parse("tau = 0\n"));
  CHECK_THROWS(TrainConfig::parse("batch_size = 1\n"));
  CHECK_THROWS(TrainConfig::parse("beta = -1\n"));
  CHECK_THROWS(TrainConfig::parse("m = 0\n"));
  CHECK_THROWS(TrainConfig::parse("method = moco\n"));
  CHECK_THROWS(TrainConfig::parse("epochs = many\n"));
}

TEST_CASE("learning rate 0 leaves the weights unchanged") {
  const Dataset data = mixture(32);
  TrainConfig cfg = small_config();
  cfg.lr = 0.0;
  cfg.epochs = 1;
  Prng init(1);
  MlpEncoder enc = init_encoder(cfg.encoder_config(data.dim()), init);
  const MlpEncoder before = enc;
  OptimizerState opt = make_optimizer_state(cfg, enc);
  const EpochRecord r = train_epoch(enc, data, cfg, opt, 0);
  CHECK(enc == before);
  CHECK(std::isfinite(r.loss));
  CHECK(r.step_losses.size() == batches_per_epoch(cfg, data.size()));
}

TEST_CASE("training reduces the loss and is deterministic") {
  const Dataset data = mixture();
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 2;
  cfg.augment.noise_std = 0.5;
  const FitResult a = fit(cfg, data);
  REQUIRE(a.log.size() == 30);
  CHECK(std::isfinite(a.log.front().loss));
  CHECK(a.log.back().loss < a.log.front().loss);
  for (const auto& r : a.log) CHECK(r.kl >= 0.0);

  const FitResult b = fit(cfg, data);
  CHECK(same_values(a.log, b.log));
  CHECK(a.encoder == b.encoder);
}

TEST_CASE("every method trains a few finite epochs") {
  const Dataset data = mixture(32);
  for (Method m : {Method::kSimclr, Method::kVsimclr, Method::kSupcon, Method::kVsupcon}) {
    for (OptimizerKind o : {OptimizerKind::kSgdMomentum, OptimizerKind::kAdam}) {
      TrainConfig cfg = small_config();
      cfg.method = m;
      cfg.optimizer = o;
      cfg.m = m == Method::kVsimclr ? 2 : 1;
      cfg.spectral_projection = o == OptimizerKind::kAdam;
      const FitResult r = fit(cfg, data);
      for (const auto& e : r.log) {
        CHECK(std::isfinite(e.loss));
        CHECK(e.kl >= 0.0);
        if (!is_variational(m)) CHECK(e.kl == 0.0);
      }
    }
  }
}

TEST_CASE("frozen log-variance head is never updated") {
  const Dataset data = mixture(32);
  TrainConfig cfg = small_config();
  cfg.freeze_logvar_head = true;
  Prng init(1);
  MlpEncoder enc = init_encoder(cfg.encoder_config(data.dim()), init);
  const MlpEncoder before = enc;
  OptimizerState opt = make_optimizer_state(cfg, enc);
  train_epoch(enc, data, cfg, opt, 0);
  const auto& w0 = before.layers().back().weight;
  const auto& w1 = enc.layers().back().weight;
  const std::size_t e = cfg.embed_dim;
  bool mu_changed = false;
  for (std::size_t i = 0; i < w0.rows(); ++i) {
    for (std::size_t j = 0; j < e; ++j) mu_changed = mu_changed || w0.at(i, j) != w1.at(i, j);
    for (std::size_t j = e; j < 2 * e; ++j) CHECK(w0.at(i, j) == w1.at(i, j));
  }
  CHECK(mu_changed);
  for (std::size_t j = e; j < 2 * e; ++j) CHECK(before.layers().back().bias[j] == enc.layers().back().bias[j]);
}

TEST_CASE("fit with zero epochs returns the initialised encoder") {
  const Dataset data = mixture(32);
  TrainConfig cfg = small_config();
  cfg.epochs = 0;
  const FitResult r = fit(cfg, data);
  CHECK(r.log.empty());
  TrainConfig one = cfg;
  one.epochs = 1;
  one.lr = 0.0;
  CHECK(fit(one, data).encoder == r.encoder);
}

TEST_CASE("resume reproduces an unbroken run and checkpoints are byte-identical") {
  TempDir dir;
  const Dataset data = mixture(64);
  TrainConfig cfg = small_config();
  cfg.epochs = 4;
  cfg.optimizer = OptimizerKind::kAdam;

  FitOptions full_opts;
  full_opts.checkpoint_path = dir.file("full.ckpt");
  full_opts.metrics_path = dir.file("full.jsonl");
  const FitResult full = fit(cfg, data, full_opts);

  FitOptions again_opts;
  again_opts.checkpoint_path = dir.file("again.ckpt");
  fit(cfg, data, again_opts);
  CHECK(read_file(dir.file("full.ckpt")) == read_file(dir.file("again.ckpt")));
  CHECK(read_metrics_jsonl(dir.file("full.jsonl")).size() == 4);

  // Interrupt the same run after two epochs, then continue it.
  FitOptions broken_opts;
  broken_opts.checkpoint_path = dir.file("broken.ckpt");
  TrainConfig every = cfg;
  every.checkpoint_every = 1;
  broken_opts.on_epoch = [](const EpochRecord& r) {
    if (r.epoch == 1) throw std::runtime_error("interrupted");
  };
  CHECK_THROWS(fit(every, data, broken_opts));
  CHECK(load_checkpoint(dir.file("broken.ckpt")).epochs_done == 2);
  FitOptions resume_opts;
  resume_opts.resume_from = dir.file("broken.ckpt");
  resume_opts.checkpoint_path = dir.file("resumed.ckpt");
  const FitResult resumed = fit(cfg, data, resume_opts);
  CHECK(resumed.encoder == full.encoder);
  CHECK(resumed.optimizer == full.optimizer);
  REQUIRE(resumed.log.size() == 2);
  CHECK(resumed.log[0].same_values(full.log[2]));
  CHECK(resumed.log[1].same_values(full.log[3]));
  CHECK(read_file(dir.file("resumed.ckpt")) == read_file(dir.file("full.ckpt")));

  const Checkpoint ck = load_checkpoint(dir.file("full.ckpt"));
  CHECK(ck.epochs_done == 4);
  CHECK(checkpoint_text(ck) == read_file(dir.file("full.ckpt")));
  CHECK_THROWS(parse_checkpoint("vcl-checkpoint 99\n"));
  CHECK_THROWS(load_checkpoint(dir.file("missing.ckpt")));

  TrainConfig other = cfg;
  other.hidden_dims = {8};
  CHECK_THROWS(fit(other, data, resume_opts));
}

TEST_CASE("a non-finite loss aborts with the batch index") {
  Dataset data = mixture(32);
  for (auto& v : data.features.data()) v = std::numeric_limits<double>::max();
  TrainConfig cfg = small_config();
  cfg.activation = Activation::kRelu;
  cfg.augment = AugmentPolicy{};
  Prng init(1);
  MlpEncoder enc = init_encoder(cfg.encoder_config(data.dim()), init);
  OptimizerState opt = make_optimizer_state(cfg, enc);
  try {
    train_epoch(enc, data, cfg, opt, 0);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("train_epoch preconditions") {
  const Dataset data = mixture(4);
  TrainConfig cfg = small_config();
  cfg.batch_size = 64;
  Prng init(1);
  MlpEncoder enc = init_encoder(cfg.encoder_config(data.dim()), init);
  OptimizerState opt = make_optimizer_state(cfg, enc);
  CHECK_THROWS(train_epoch(enc, data, cfg, opt, 0));
}
