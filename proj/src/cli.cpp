#include "vcl/cli.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "vcl/data_io.hpp"
#include "vcl/diagnostics.hpp"
#include "vcl/encoder.hpp"
#include "vcl/error.hpp"
#include "vcl/prop1.hpp"
#include "vcl/train.hpp"

namespace vcl::cli {

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string data;
  std::string checkpoint;
  std::string out;
  std::string format = "json";
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void emit(const Common& c, std::ostream& out, const std::string& text) {
  if (c.out.empty()) {
    out << text;
  } else {
    write_file(c.out, text);
  }
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Dataset load_dataset(const std::string& path, const std::string& label_column = "label") {
  if (path.empty()) throw UsageError("--data is required");
  if (ends_with(path, ".bin")) return load_cifar10_bin(path);
  return load_csv_dataset(path, label_column);
}

MlpEncoder load_encoder(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  return load_checkpoint(path).encoder;
}

Tensor unit_means(const std::vector<PosteriorParams>& params) {
  Tensor z = Tensor::matrix(params.size(), params.front().dim());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto u = l2_normalize(params[i].mu);
    std::copy(u.begin(), u.end(), z.row(i).begin());
  }
  return z;
}

Tensor raw_means(const std::vector<PosteriorParams>& params) {
  Tensor z = Tensor::matrix(params.size(), params.front().dim());
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(params[i].mu.begin(), params[i].mu.end(), z.row(i).begin());
  return z;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::istringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.front() == '-') throw UsageError("bad integer list entry '" + tok + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw UsageError("empty integer list");
  return out;
}

TrainConfig load_config(const Common& c) {
  return c.config.empty() ? TrainConfig{} : TrainConfig::parse(read_file(c.config));
}

void add_common(CLI::App* app, Common& c, bool data, bool checkpoint) {
  app->add_option("--config", c.config, "Training config file (key = value lines)");
  app->add_option("--seed", c.seed, "Seed for every random stream");
  if (data) app->add_option("--data", c.data, "Dataset: CSV with a 'label' column, or CIFAR-10 .bin");
  if (checkpoint) app->add_option("--checkpoint", c.checkpoint, "Checkpoint file");
  app->add_option("--out", c.out, "Output file (default: standard output)");
}

}  // namespace

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Variational contrastive learning toolkit", argv.empty() ? "vcl" : argv.front()};
  app.require_subcommand(1, 1);
  Common c;

  // synth
  MixtureSpec mix;
  auto* synth = app.add_subcommand("synth", "Generate a Gaussian-mixture dataset as CSV");
  add_common(synth, c, false, false);
  synth->add_option("--classes", mix.classes, "Number of classes")->check(CLI::PositiveNumber);
  synth->add_option("--per-class", mix.per_class, "Samples per class")->check(CLI::PositiveNumber);
  synth->add_option("--dim", mix.dim, "Feature dimension")->check(CLI::PositiveNumber);
  synth->add_option("--separation", mix.separation, "Distance of class means from the origin");
  synth->add_option("--noise", mix.noise, "Isotropic noise std")->check(CLI::NonNegativeNumber);
  synth->add_option("--noise-stream", mix.noise_stream, "Noise stream; same seed, other stream = fresh split")
      ->check(CLI::Range(2, 1 << 30));

  // train
  std::string method, resume;
  std::optional<double> beta, tau, lr;
  std::optional<std::size_t> epochs, batch_size, m;
  std::vector<std::string> sets;
  bool wall_time = false;
  auto* train = app.add_subcommand("train", "Fit an encoder; writes per-epoch JSON lines");
  add_common(train, c, true, true);
  train->add_option("--method", method, "simclr | vsimclr | supcon | vsupcon");
  train->add_option("--epochs", epochs, "Training epochs");
  train->add_option("--batch-size", batch_size, "Pairs per batch");
  train->add_option("--beta", beta, "KL weight");
  train->add_option("--tau", tau, "Temperature");
  train->add_option("--m", m, "Posterior samples per input");
  train->add_option("--lr", lr, "Learning rate");
  train->add_option("--set", sets, "Override any config key: key=value (repeatable)");
  train->add_option("--resume", resume, "Resume from this checkpoint");
  train->add_flag("--log-wall-time", wall_time, "Include wall time in the metrics");

  // probe
  std::string test_path, features = "mu";
  ProbeOptions probe_opt;
  auto* probe = app.add_subcommand("probe", "Linear probe on frozen embeddings of a checkpoint");
  add_common(probe, c, true, true);
  probe->add_option("--test", test_path, "Test split (same format as --data)")->required();
  probe->add_option("--epochs", probe_opt.epochs, "Gradient-descent epochs");
  probe->add_option("--lr", probe_opt.lr, "Learning rate");
  probe->add_option("--features", features, "mu (posterior mean) | unit (normalised mean)")
      ->check(CLI::IsMember({"mu", "unit"}));

  // spectrum
  auto* spectrum = app.add_subcommand("spectrum", "Embedding covariance spectrum and effective rank");
  add_common(spectrum, c, true, true);
  spectrum->add_option("--format", c.format, "json | csv")->check(CLI::IsMember({"json", "csv"}));

  // mi
  std::size_t k = kDefaultKsgNeighbors;
  auto* mi = app.add_subcommand("mi", "Mixed KSG mutual information between embeddings and labels");
  add_common(mi, c, true, true);
  mi->add_option("--k", k, "Neighbour count")->check(CLI::PositiveNumber);

  // uncertainty
  std::string soft_path;
  auto* unc = app.add_subcommand("uncertainty", "Posterior log-det / trace against soft-label entropy");
  add_common(unc, c, true, true);
  unc->add_option("--soft-labels", soft_path, "CSV of per-sample class probabilities")->required();

  // prop1
  std::size_t alphabet = 2, trials = 10000;
  std::string ns_text = "4,64,1024", joint_kind = "symmetric";
  double stay = 0.9;
  auto* prop1 = app.add_subcommand("prop1", "Optimal-critic InfoNCE convergence on a discrete joint");
  add_common(prop1, c, false, false);
  prop1->add_option("--alphabet", alphabet, "Alphabet size K")->check(CLI::PositiveNumber);
  prop1->add_option("--ns", ns_text, "Comma-separated negative counts");
  prop1->add_option("--trials", trials, "Monte Carlo trials per N");
  prop1->add_option("--joint", joint_kind, "symmetric | independent | deterministic")
      ->check(CLI::IsMember({"symmetric", "independent", "deterministic"}));
  prop1->add_option("--stay", stay, "p(z'=z|z) of the symmetric channel")->check(CLI::Range(0.0, 1.0));
  std::string prop1_format = "csv";
  prop1->add_option("--format", prop1_format, "csv | json")->check(CLI::IsMember({"json", "csv"}));

  // gap
  GapTrendOptions gap_opt;
  std::string gap_ns = "64,256,1024,4096";
  auto* gap = app.add_subcommand("gap", "KL generalisation gap across training-set sizes");
  add_common(gap, c, false, false);
  gap->add_option("--ns", gap_ns, "Comma-separated training-set sizes");
  gap->add_option("--seeds", gap_opt.seeds, "Repetitions per N")->check(CLI::PositiveNumber);
  gap->add_option("--steps", gap_opt.steps, "Optimizer steps per run")->check(CLI::PositiveNumber);
  gap->add_option("--heldout", gap_opt.heldout, "Heldout size (default 10 * max N)");
  gap->add_option("--format", c.format, "json | csv")->check(CLI::IsMember({"json", "csv"}));

  // ood
  std::string ood_path;
  double shift = 3.0;
  auto* ood = app.add_subcommand("ood", "Posterior dispersion: in-distribution vs shifted data");
  add_common(ood, c, true, true);
  ood->add_option("--ood-data", ood_path, "Out-of-distribution split; default: shifted synthetic copy");
  ood->add_option("--shift", shift, "Scale factor for the synthetic shift of --data features");

  std::vector<std::string> args(argv.size() > 1 ? argv.begin() + 1 : argv.end(), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      mix.seed = c.seed;
      if (!c.config.empty()) throw UsageError("synth does not read a config file");
      const Dataset ds = gen_gaussian_mixture(mix);
      emit(c, out, csv_dataset_text(ds));
      return kExitOk;
    }

    if (train->parsed()) {
      TrainConfig cfg = load_config(c);
      if (train->count("--seed")) cfg.seed = c.seed;
      if (!method.empty()) cfg.method = parse_method(method);
      if (epochs) cfg.epochs = *epochs;
      if (batch_size) cfg.batch_size = *batch_size;
      if (beta) cfg.beta = *beta;
      if (tau) cfg.tau = *tau;
      if (m) cfg.m = *m;
      if (lr) cfg.lr = *lr;
      for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      cfg.validate();
      const Dataset ds = load_dataset(c.data);
      FitOptions fo;
      fo.checkpoint_path = c.checkpoint;
      fo.metrics_path = c.out;
      fo.resume_from = resume;
      fo.log_wall_time = wall_time;
      if (c.out.empty()) {
        fo.on_epoch = [&](const EpochRecord& r) { out << r.to_json(wall_time).dump() << '\n'; };
      }
      fit(cfg, ds, fo);
      return kExitOk;
    }

    if (probe->parsed()) {
      const MlpEncoder enc = load_encoder(c.checkpoint);
      const Dataset tr = load_dataset(c.data), te = load_dataset(test_path);
      auto embed = [&](const Dataset& d) {
        const auto p = encode_all(enc, d.features);
        return features == "unit" ? unit_means(p) : raw_means(p);
      };
      const ProbeReport rep = linear_probe(embed(tr), tr.labels, embed(te), te.labels, probe_opt);
      if (!rep.unseen_classes.empty()) {
        err << "warning: " << rep.unseen_classes.size() << " test classes are absent from the training split\n";
      }
      emit(c, out, dump(rep.to_json()));
      return kExitOk;
    }

    if (spectrum->parsed()) {
      const MlpEncoder enc = load_encoder(c.checkpoint);
      const Dataset ds = load_dataset(c.data);
      const SpectrumReport rep = covariance_spectrum(unit_means(encode_all(enc, ds.features)));
      emit(c, out, c.format == "csv" ? rep.to_csv() : dump(rep.to_json()));
      return kExitOk;
    }

    if (mi->parsed()) {
      const MlpEncoder enc = load_encoder(c.checkpoint);
      const Dataset ds = load_dataset(c.data);
      const double v = mixed_ksg_mi(unit_means(encode_all(enc, ds.features)), ds.labels, k);
      emit(c, out, dump({{"mi_nats", v}, {"k", k}, {"n", ds.size()}}));
      return kExitOk;
    }

    if (unc->parsed()) {
      const MlpEncoder enc = load_encoder(c.checkpoint);
      const Dataset ds = load_dataset(c.data);
      const UncertaintyReport rep = uncertainty_regression(encode_all(enc, ds.features), load_soft_labels(soft_path));
      emit(c, out, dump(rep.to_json()));
      return kExitOk;
    }

    if (prop1->parsed()) {
      const auto ns = parse_sizes(ns_text);
      std::vector<double> q(alphabet, 1.0 / static_cast<double>(alphabet));
      DiscreteJoint joint;
      if (joint_kind == "independent") {
        joint = DiscreteJoint::independent(q);
      } else if (joint_kind == "deterministic") {
        joint = DiscreteJoint::deterministic(q);
      } else if (alphabet == 1) {
        joint = DiscreteJoint{{1.0}, {{1.0}}};
      } else {
        joint.q = q;
        const double other = (1.0 - stay) / static_cast<double>(alphabet - 1);
        joint.cond.assign(alphabet, std::vector<double>(alphabet, other));
        for (std::size_t z = 0; z < alphabet; ++z) joint.cond[z][z] = stay;
        // Renormalise away rounding so rows pass the 1e-12 sum check.
        for (auto& row : joint.cond) {
          double s = 0.0;
          for (double v : row) s += v;
          for (double& v : row) v /= s;
        }
      }
      if (alphabet == 2 && joint_kind == "symmetric" && stay == 0.9) joint = DiscreteJoint::benchmark();
      const ConvergenceTrace tr = convergence_check(joint, ns, trials, c.seed);
      emit(c, out, prop1_format == "json" ? dump(tr.to_json()) : tr.to_csv());
      return kExitOk;
    }

    if (gap->parsed()) {
      gap_opt.ns = parse_sizes(gap_ns);
      gap_opt.seed = c.seed;
      gap_opt.train = load_config(c);
      gap_opt.train.seed = c.seed;
      const GapTrend tr = gap_trend(gap_opt);
      emit(c, out, c.format == "csv" ? tr.to_csv() : dump(tr.to_json()));
      return kExitOk;
    }

    if (ood->parsed()) {
      const MlpEncoder enc = load_encoder(c.checkpoint);
      const Dataset in = load_dataset(c.data);
      Tensor shifted;
      if (!ood_path.empty()) {
        shifted = load_dataset(ood_path).features;
      } else {
        shifted = in.features;
        for (auto& v : shifted.data()) v *= shift;
      }
      const OodReport rep = ood_dispersion_report(encode_all(enc, in.features), encode_all(enc, shifted));
      emit(c, out, dump(rep.to_json()));
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace vcl::cli
