// Prints one PASS/FAIL line per acceptance criterion; exit status 1 if any failed.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "sdda/alignment.hpp"
#include "sdda/diagnostics.hpp"
#include "sdda/evaluation.hpp"

using namespace sdda;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << detail << std::endl;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// 1 -------------------------------------------------------------------------
void ea_identity() {
  const auto t0 = Clock::now();
  const Eigen::Index channels[] = {3, 8, 22};
  const std::size_t counts[] = {1, 10, 100};
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Eigen::Index c = channels[k % 3];
    const std::size_t n = counts[(k / 3) % 3];
    const Session s = fixture::random_session(mix_seed(2024, static_cast<std::uint64_t>(k)), c, n);
    const Session aligned = euclidean_align_session(s);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(c, c);
    for (const auto& t : aligned.trials) m += t.data * t.data.transpose();
    m /= static_cast<double>(n);
    const auto eye = Eigen::MatrixXd::Identity(c, c);
    worst = std::max(worst, (m - eye).norm() / eye.norm());
  }
  const double secs = seconds_since(t0);
  report(1, "EA whitening", worst <= 1e-5 && secs < 10.0,
         "100 sessions, worst relative Frobenius error " + fmt(worst) + ", " + fmt(secs) + " s");
}

// 2 -------------------------------------------------------------------------
void gradient_integrity() {
  const auto t0 = Clock::now();
  std::size_t checks = 0;
  std::vector<std::string> failed;
  double worst = 0.0;
  auto absorb = [&](const std::vector<NamedCheck>& list) {
    for (const auto& c : list) {
      ++checks;
      for (const auto& leaf : c.report.leaves) worst = std::max(worst, leaf.max_error);
      if (!c.report.passed) failed.push_back(c.name);
    }
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) absorb(primitive_grad_checks(seed, 1e-5));
  for (std::uint64_t seed = 0; seed < 3; ++seed) absorb(objective_grad_checks(seed, 1e-5));
  const double secs = seconds_since(t0);
  std::string detail = std::to_string(checks) + " checks, worst relative error " + fmt(worst) + ", " + fmt(secs) + " s";
  for (const auto& f : failed) detail += "; failed " + f;
  report(2, "gradient integrity", failed.empty() && secs < 120.0, detail);
}

// 3 -------------------------------------------------------------------------
double eval_graph(const std::function<Var<double>(Graph<double>&)>& build) {
  Graph<double> g;
  return g.forward(build(g)).item();
}

void loss_oracles() {
  Rng rng(99);
  double worst = 0.0;
  auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = 1 + rng.below(8), c = 2 + rng.below(5), d = 1 + rng.below(6);
    const double temp = rng.uniform(0.5, 4.0);
    const auto s = oracle::random_matrix(rng, n, c, 3.0), t = oracle::random_matrix(rng, n, c, 3.0);
    track(eval_graph([&](auto& g) { return sd_loss(g.parameter("s", oracle::to_tensor(s)), oracle::to_tensor(t), temp); }),
          oracle::sd(s, t, temp));
    track(eval_graph([&](auto& g) { return confusion_loss(g.parameter("s", oracle::to_tensor(s)), temp); }),
          oracle::confusion(s, temp));
    oracle::Matrix q;
    for (const auto& row : s) q.push_back(oracle::softened(row, temp));
    Graph<double> g;
    const auto v = g.forward(uncertainty_weights(g.parameter("q", oracle::to_tensor(q))));
    for (std::size_t i = 0; i < n; ++i) track(v[i], oracle::uncertainty(q[i]));
    const auto xs = oracle::random_matrix(rng, n, d), xt = oracle::random_matrix(rng, 1 + rng.below(8), d);
    const std::vector<double> sig{0.3 + rng.uniform(), 1.0 + rng.uniform(), 2.0 + 2.0 * rng.uniform()};
    const double w0 = rng.uniform(0.1, 0.5), w1 = rng.uniform(0.1, 0.4);
    KernelSpec spec = KernelSpec::fixed(sig);
    spec.weights = {w0, w1, 1.0 - w0 - w1};
    track(eval_graph([&](auto& h) {
            return mk_mmd(h.parameter("a", oracle::to_tensor(xs)), h.parameter("b", oracle::to_tensor(xt)), spec);
          }),
          oracle::mmd(xs, xt, sig, spec.weights));
  }
  // the worked examples
  bool examples = true;
  auto near = [&](double got, double want, double tol = 1e-12) { examples = examples && std::abs(got - want) <= tol; };
  near(eval_graph([](auto& g) {
         return mk_mmd(g.parameter("a", oracle::to_tensor({{0.0}})), g.parameter("b", oracle::to_tensor({{2.0}})),
                       KernelSpec::fixed({1.0}));
       }),
       2.0 - 2.0 * std::exp(-2.0));
  {
    Graph<double> g;
    const auto v = g.forward(uncertainty_weights(g.parameter("q", oracle::to_tensor({{1.0, 0.0}, {0.5, 0.5}}))));
    near(v[0], 2.0);
    near(v[1], 1.5);
  }
  near(eval_graph([](auto& g) { return confusion_loss(g.parameter("z", oracle::to_tensor({{0.4, 0.4}})), 2.0); }), 0.375);
  const double a = std::exp(1.0) / (1.0 + std::exp(1.0)), b = 1.0 - a;
  near(eval_graph([](auto& g) { return sd_loss(g.parameter("z", oracle::to_tensor({{1, 0}})), oracle::to_tensor({{0, 1}}), 1.0); }),
       a * std::log(a / b) + b * std::log(b / a));
  static const std::vector<int> ce_labels{1, 0};
  const double ce = 0.5 * (-std::log(oracle::softened({1, 2}, 1)[1]) - std::log(oracle::softened({3, 0}, 1)[0]));
  near(eval_graph([](auto& g) {
         return cross_entropy(g.parameter("z", oracle::to_tensor({{1, 2}, {3, 0}})), std::span<const int>(ce_labels));
       }),
       ce);
  {
    Graph<double> g;
    const auto w = g.forward(tempered_softmax(g.parameter("z", oracle::to_tensor({{3, 1, -1}})), 2.0));
    const double z = std::exp(1.5) + std::exp(0.5) + std::exp(-0.5);
    near(w[0], std::exp(1.5) / z);
    near(w[1], std::exp(0.5) / z);
    near(w[2], std::exp(-0.5) / z);
  }
  const double one = eval_graph([](auto& g) { return confusion_loss(g.parameter("z", oracle::to_tensor({{0.3, -0.4, 1.0}})), 2.0); });
  const double five = eval_graph([](auto& g) {
    return confusion_loss(g.parameter("z", oracle::to_tensor(oracle::Matrix(5, std::vector<double>{0.3, -0.4, 1.0}))), 2.0);
  });
  near(five, 5.0 * one, 1e-12);
  report(3, "loss oracles", worst <= 1e-9 && examples,
         "50 instances x 4 losses, worst absolute error " + fmt(worst) + (examples ? ", worked examples exact" : ", worked example mismatch"));
}

// 4 -------------------------------------------------------------------------
void auc_brute_force() {
  Rng rng(7);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(8)) / 7.0;  // coarse grid forces ties
      labels[i] = static_cast<int>(rng.below(2));
    }
    labels[0] = 0;  // both classes present
    labels[1] = 1;
    worst = std::max(worst, std::abs(auc(scores, labels) - oracle::auc_pairs(scores, labels)));
  }
  report(4, "rank AUC", worst <= 1e-12, "200 instances with ties, worst difference " + fmt(worst));
}

// 5, 6 ----------------------------------------------------------------------
double summary_mean(const Json& report_json, const std::string& scenario, const std::string& variant) {
  for (const auto& row : report_json["summary"]) {
    if (row["scenario"] == scenario && row["variant"] == variant) {
      return row["accuracy"]["mean"].is_null() ? std::nan("") : row["accuracy"]["mean"].get<double>();
    }
  }
  return std::nan("");
}

void write_report(const fs::path& dir, const std::string& name, const Json& r) {
  fs::create_directories(dir);
  std::ofstream(dir / name, std::ios::binary) << canonical_dump(r);
}

void transfer(const fs::path& out_dir) {
  ExperimentConfig uda;
  uda.data.synth = SynthSpec{};
  uda.train.epochs = 50;
  const auto t0 = Clock::now();
  const Json r = run_experiment(uda);
  const double secs = seconds_since(t0);
  write_report(out_dir, "uda_report.json", r);

  const double ce = summary_mean(r, "uda", "CE");
  std::ostringstream detail;
  detail << "means";
  bool ordering = true;
  for (const auto& v : uda.variants) {
    const double m = summary_mean(r, "uda", v);
    detail << " " << v << "=" << fmt(m, 4);
    if (v != "CE" && !(m >= ce)) ordering = false;
  }
  const double sdda = summary_mean(r, "uda", "SDDA");
  const bool margin = sdda >= ce + 5.0;
  detail << "; SDDA-CE=" << fmt(sdda - ce, 4) << " pp (need >= 5)" << "; every variant >= CE: "
         << (ordering ? "yes" : "no") << "; " << fmt(secs, 4) << " s";
  report(5, "UDA transfer on the default synthetic pair", margin && ordering && secs < 600.0, detail.str());

  ExperimentConfig sda = uda;
  sda.scenarios = {Scenario::SDA};
  sda.variants = {"SDDA"};
  sda.train.labeled_target = 32;
  const Json s = run_experiment(sda);
  write_report(out_dir, "sda_report.json", s);
  const double sda_mean = summary_mean(s, "sda", "SDDA");
  report(6, "SDA with 32 labelled target trials", sda_mean >= sdda,
         "SDDA mean SDA=" + fmt(sda_mean, 4) + " vs UDA=" + fmt(sdda, 4));
}

// 7 -------------------------------------------------------------------------
void byte_identical(const fs::path& out_dir) {
  const fs::path cfg = out_dir / "determinism_config.json";
  fs::create_directories(out_dir);
  std::ofstream(cfg) << R"({
  "data": {"synth": {"trials_per_class": 20}},
  "train": {"epochs": 3},
  "seeds": [0, 1],
  "variants": ["CE", "SDDA"],
  "scenarios": ["uda", "sda"]
}
)";
  run_experiment(cfg, out_dir / "run_a");
  run_experiment(cfg, out_dir / "run_b");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  const auto a = slurp(out_dir / "run_a" / "report.json"), b = slurp(out_dir / "run_b" / "report.json");
  const bool canonical = canonical_dump(Json::parse(a)) == a;
  report(7, "byte-identical reports", !a.empty() && a == b && canonical,
         std::to_string(a.size()) + " bytes, identical: " + (a == b ? "yes" : "no") +
             ", reserialization stable: " + (canonical ? "yes" : "no"));
}

// 8 -------------------------------------------------------------------------
bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

bool same_bits(const Domain& a, const Domain& b) {
  if (!(a.channel_names == b.channel_names) || a.classes != b.classes || a.sessions.size() != b.sessions.size()) {
    return false;
  }
  for (std::size_t s = 0; s < a.sessions.size(); ++s) {
    const auto& x = a.sessions[s];
    const auto& y = b.sessions[s];
    if (x.size() != y.size() || x.sampling_rate != y.sampling_rate || x.channel_names != y.channel_names) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto& p = x.trials[i].data;
      const auto& q = y.trials[i].data;
      if (x.trials[i].label != y.trials[i].label || p.rows() != q.rows() || p.cols() != q.cols()) return false;
      if (std::memcmp(p.data(), q.data(), static_cast<std::size_t>(p.size()) * sizeof(double)) != 0) return false;
    }
  }
  return true;
}

void round_trips(const fs::path& out_dir) {
  fs::create_directories(out_dir);
  Rng rng(31);
  int datasets = 0, checkpoints = 0;
  for (int k = 0; k < 20; ++k) {
    SynthSpec spec;
    spec.source_channels = 2 + rng.below(20);
    spec.common_channels = 1 + rng.below(spec.source_channels);
    spec.classes = 2 + rng.below(3);
    spec.samples = 32 + rng.below(100);
    spec.trials_per_class = 1 + rng.below(6);
    spec.source_sessions = 1 + rng.below(3);
    spec.target_sessions = 1 + rng.below(2);
    spec.sampling_rate = static_cast<double>(64 + rng.below(200));
    spec.seed = rng.bits();
    const auto [source, target] = synth_generate(spec);
    const auto path = out_dir / "roundtrip.sdda";
    save_dataset(source, path);
    const bool s_ok = same_bits(load_dataset(path, DomainRole::Source), source);
    save_dataset(target, path);
    const bool t_ok = same_bits(load_dataset(path, DomainRole::Target), target);
    datasets += s_ok && t_ok;

    ArchConfig arch;
    arch.temporal_filters = 1 + rng.below(8);
    arch.depth_multiplier = 1 + rng.below(3);
    arch.pointwise_filters = 1 + rng.below(16);
    arch.separable_length = 1 + rng.below(16);
    arch.sampling_rate = spec.sampling_rate;
    Network<float> net(spec.common_channels, 64, spec.classes, arch, rng.bits());
    Tensor<float> batch({3, spec.common_channels, 64});
    for (auto& v : batch.data()) v = static_cast<float>(rng.normal());
    net.forward_logits(batch, Mode::Train, rng.bits());  // non-trivial running statistics
    const auto ckpt = out_dir / "roundtrip.ckpt";
    save_checkpoint(net, ckpt);
    const auto back = load_checkpoint(ckpt);
    bool ok = back.layout() == net.layout() && back.arch() == net.arch();
    for (const auto& [name, p] : net.parameters()) ok = ok && same_bits(p, back.parameters().at(name));
    for (const auto& [name, st] : net.batch_norm_stats()) {
      ok = ok && same_bits(st.running_mean, back.batch_norm_stats().at(name).running_mean) &&
           same_bits(st.running_var, back.batch_norm_stats().at(name).running_var);
    }
    checkpoints += ok;
  }
  report(8, "format round-trips", datasets == 20 && checkpoints == 20,
         std::to_string(datasets) + "/20 dataset pairs and " + std::to_string(checkpoints) +
             "/20 checkpoints bit-exact");
}

void guarded(int id, const std::string& name, const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("threw: ") + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out_dir = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "sdda_acceptance";
  guarded(1, "EA whitening", ea_identity);
  guarded(2, "gradient integrity", gradient_integrity);
  guarded(3, "loss oracles", loss_oracles);
  guarded(4, "rank AUC", auc_brute_force);
  guarded(7, "byte-identical reports", [&] { byte_identical(out_dir / "determinism"); });
  guarded(8, "format round-trips", [&] { round_trips(out_dir / "roundtrip"); });
  guarded(5, "UDA transfer", [&] { transfer(out_dir); });
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion/criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
