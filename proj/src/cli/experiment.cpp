#include "wflow/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "wflow/datasets.hpp"
#include "wflow/dro.hpp"
#include "wflow/flow_chain.hpp"
#include "wflow/metrics.hpp"
#include "wflow/ot.hpp"
#include "wflow/ratio.hpp"
#include "wflow/svg.hpp"
#include "wflow/training.hpp"

namespace wflow {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const std::vector<std::string>& experiment_tasks() {
  static const std::vector<std::string> tasks{"train-cnf", "train-jko", "train-fm", "train-lfm", "ot",
                                              "dre",       "dro",       "eval",     "sample"};
  return tasks;
}

namespace {

// ---------------------------------------------------------------- settings

template <typename Parse>
auto parse_key(const Config& cfg, const std::string& key, const std::string& fallback, Parse parse) {
  const std::string v = cfg.text(key, fallback);
  try {
    return parse(v);
  } catch (const std::invalid_argument& e) {
    cfg.fail(key, e.what());
  }
}

struct Data {
  Tensor x;
  std::optional<AnalyticDensity> density;
};

DatasetSpec read_spec(const Config& cfg, const std::string& s, std::uint64_t seed, std::size_t count) {
  DatasetSpec spec;
  spec.preset = cfg.text(s + ".preset", "standard-gaussian");
  spec.dim = cfg.count(s + ".dim", 2);
  spec.count = cfg.count(s + ".count", count);
  spec.seed = cfg.seed(s + ".seed", seed);
  spec.scale = cfg.real(s + ".scale", 1.0);
  spec.shift = cfg.reals(s + ".shift", {});
  if (spec.preset == "mixture") {
    spec.weights = cfg.reals(s + ".weights", {});
    spec.means = cfg.reals(s + ".means", {});
    spec.variances = cfg.reals(s + ".variances", {});
  }
  try {
    spec.validate();
  } catch (const std::exception& e) {
    cfg.fail(s + ".preset", e.what());
  }
  return spec;
}

// A dataset section either names a CSV file or a sampler spec.
struct DataSource {
  std::string file;
  DatasetSpec spec;

  Data load() const {
    if (!file.empty()) return Data{read_ensemble_csv(file), std::nullopt};
    return Data{sample_dataset(spec).positions, dataset_density(spec)};
  }
};

DataSource read_source(const Config& cfg, const std::string& s, std::uint64_t seed, std::size_t count = 2000) {
  DataSource src;
  src.file = cfg.text(s + ".file", "");
  if (src.file.empty()) src.spec = read_spec(cfg, s, seed, count);
  return src;
}

ChainArchitecture read_model(const Config& cfg, std::size_t dim, std::size_t blocks) {
  ChainArchitecture a;
  a.dim = dim;
  a.blocks = cfg.count("model.blocks", blocks);
  a.block_length = cfg.real("model.block_length", 1.0);
  a.hidden = cfg.counts("model.hidden", {64, 64});
  a.activation = parse_key(cfg, "model.activation", "tanh", parse_activation);
  a.scheme = parse_key(cfg, "model.scheme", "rk4", parse_scheme);
  a.steps = static_cast<std::uint32_t>(cfg.count("model.steps", 8));
  if (a.blocks == 0) cfg.fail("model.blocks", "need at least one block");
  if (a.steps == 0) cfg.fail("model.steps", "need at least one step");
  if (!(a.block_length > 0)) cfg.fail("model.block_length", "must be positive");
  return a;
}

TrainConfig read_train(const Config& cfg, const std::string& s, std::uint64_t seed, std::size_t iterations = 500,
                       double lr = 5e-3) {
  TrainConfig t;
  t.learn_rate = cfg.real(s + ".learn_rate", lr);
  t.batch_size = cfg.count(s + ".batch_size", 256);
  t.iterations = cfg.count(s + ".iterations", iterations);
  t.seed = cfg.seed(s + ".seed", seed);
  t.gamma = cfg.real(s + ".gamma", 1.0);
  t.optimizer = parse_key(cfg, s + ".optimizer", "adam", parse_optimizer);
  t.schedule = parse_key(cfg, s + ".schedule", "constant", parse_lr_schedule);
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    cfg.fail(s, e.what());
  }
  return t;
}

DivergenceEstimator read_estimator(const Config& cfg, std::size_t dim) {
  const std::string mode = cfg.text("train.divergence", dim <= 8 ? "exact" : "hutchinson");
  if (mode == "exact") return DivergenceEstimator::exact();
  if (mode == "hutchinson") return DivergenceEstimator::hutchinson(cfg.count("train.probes", 8));
  cfg.fail("train.divergence", "expected exact or hutchinson, got '" + mode + "'");
}

RatioConfig read_ratio(const Config& cfg, std::uint64_t seed) {
  RatioConfig rc;
  rc.train = read_train(cfg, "ratio", seed, 1000, 1e-2);
  rc.hidden = cfg.counts("ratio.hidden", {32, 32});
  return rc;
}

// ---------------------------------------------------------------- artifacts

struct Run {
  Run(std::string t, Config& c, fs::path s, std::uint64_t sd, std::ostream& l)
      : task(std::move(t)), cfg(c), stage(std::move(s)), seed(sd), log(l) {}

  std::string task;
  Config& cfg;
  fs::path stage;
  std::uint64_t seed;
  std::ostream& log;
  json results = json::object();
  json metrics = json::array();
  std::vector<std::string> artifacts;
  LossTrace trace;
  bool plots = true;

  fs::path file(const std::string& name) {
    artifacts.push_back(name);
    return stage / name;
  }

  void csv(const std::string& name, const Tensor& x) { write_ensemble_csv(file(name).string(), x); }

  void chain(const FlowChain& c) { save_checkpoint(c, file("chain.wflw").string()); }

  void svg(const std::string& name, const SvgPlot& plot) {
    if (plots) plot.save(file(name).string());
  }

  void metric(MetricReport r) {
    r.seed = seed;
    r.config.insert(r.config.begin(), {"task", task});
    metrics.push_back(r.to_json());
  }

  void note(const std::string& msg) { log << "[" << task << "] " << msg << '\n'; }
};

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

void loss_plot(Run& run) {
  if (run.trace.empty()) return;
  SvgPlot plot("training loss");
  plot.set_axis_labels("iteration", "loss");
  std::vector<Point2> raw, smooth;
  for (std::size_t i = 0; i < run.trace.size(); ++i) {
    raw.push_back({double(i), run.trace.raw[i]});
    smooth.push_back({double(i), run.trace.smoothed[i]});
  }
  plot.polyline("#9ab", raw, 0.8, "loss");
  plot.polyline("#c33", smooth, 1.5, "smoothed");
  run.svg("loss.svg", plot);
}

void scatter_plot(Run& run, const std::string& name, const std::string& title,
                  const std::vector<std::pair<std::string, const Tensor*>>& layers) {
  if (layers.empty() || layers.front().second->cols() < 2) return;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  SvgPlot plot(title);
  for (std::size_t k = 0; k < layers.size(); ++k) plot.scatter(layers[k].first, colors[k % 4], *layers[k].second);
  run.svg(name, plot);
}

// Polylines through successive ensembles for the first particles.
void trajectory_plot(Run& run, const std::string& name, const std::string& title, const std::vector<Tensor>& steps,
                     const Tensor* target = nullptr) {
  if (steps.empty() || steps.front().cols() < 2) return;
  SvgPlot plot(title);
  if (target) plot.scatter("target", "#bbb", *target, 1.0);
  const std::size_t n = std::min<std::size_t>(60, steps.front().rows());
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Point2> path;
    for (const Tensor& s : steps) path.push_back({s(i, 0), s(i, 1)});
    plot.polyline("#888", path, 0.6);
  }
  plot.scatter("start", "#1f77b4", steps.front());
  plot.scatter("end", "#d62728", steps.back());
  run.svg(name, plot);
}

Tensor head(const Tensor& x, std::size_t n) { return take_rows(x, 0, std::min(n, x.rows())); }

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros(a.rows() + b.rows(), a.cols());
  out.matrix() << a.matrix(), b.matrix();
  return out;
}

// ---------------------------------------------------------------- flow training tasks

struct FlowSettings {
  DataSource data;
  ChainArchitecture arch;
  TrainConfig train;
  DivergenceEstimator est;
  std::uint64_t model_seed;
  std::size_t test_count, sample_count;
};

FlowSettings read_flow(Run& run, std::size_t default_blocks) {
  FlowSettings f;
  const Config& cfg = run.cfg;
  f.data = read_source(cfg, "data", run.seed);
  const std::size_t dim = f.data.file.empty() ? f.data.spec.dim : 0;
  f.arch = read_model(cfg, dim, default_blocks);
  f.model_seed = cfg.seed("model.seed", run.seed + 2);
  f.train = read_train(cfg, "train", run.seed + 3);
  f.est = read_estimator(cfg, dim ? dim : 2);
  f.test_count = cfg.count("eval.test_count", 2000);
  f.sample_count = cfg.count("sample.count", 2000);
  return f;
}

FlowChain new_chain(FlowSettings& f, std::size_t dim) {
  f.arch.dim = dim;
  return FlowChain::make(f.arch, AnalyticDensity::standard_normal(dim), f.model_seed);
}

// Held-out test set: a fresh draw from the same sampler.
Tensor test_set(const FlowSettings& f, const Data& data, std::uint64_t seed) {
  if (!f.data.file.empty()) return data.x;
  DatasetSpec spec = f.data.spec;
  spec.seed = Rng::mix(spec.seed ^ seed ^ 0x7e57);
  spec.count = f.test_count;
  return sample_dataset(spec).positions;
}

void flow_outputs(Run& run, const FlowSettings& f, const FlowChain& chain, const Data& data) {
  Rng rng = Rng(run.seed).derive(0x5a3);
  const Tensor test = test_set(f, data, run.seed);
  MetricReport nll = nll_eval(chain, test, f.est, rng);
  if (!f.data.file.empty()) nll.flags.push_back("evaluated-on-training-data");
  run.results["nll"] = nll.value;
  run.metric(nll);
  const Tensor samples = sample(chain, f.sample_count, rng).positions;
  if (samples.rows() > samples.cols() && test.rows() > test.cols()) run.metric(gauss_fid(samples, test));
  if (data.density) {
    const AnalyticDensity& p = *data.density;
    Rng lrng = rng.derive(1);
    MetricReport kl = kl_mc([&](const Tensor& x) { return p.log_pdf(x); },
                            [&](const Tensor& x) { return log_density(chain, x, f.est, lrng); }, test);
    kl.config.push_back({"direction", "data || model"});
    run.metric(kl);
  }
  run.chain(chain);
  run.csv("samples.csv", samples);
  scatter_plot(run, "samples.svg", run.task + ": data and generated samples",
               {{"data", &data.x}, {"generated", &samples}});
  loss_plot(run);
}

void task_train_cnf(Run& run) {
  FlowSettings f = read_flow(run, 1);
  run.cfg.reject_unused("task " + run.task);
  const Data data = f.data.load();
  FlowChain chain = new_chain(f, data.x.cols());
  run.note("maximum likelihood over " + std::to_string(chain.size()) + " block(s)");
  run.trace = train_cnf(chain, data.x, f.train, f.est);
  flow_outputs(run, f, chain, data);
}

void progressive_outputs(Run& run, const FlowSettings& f, const FlowChain& chain, const Data& data,
                         const ProgressiveResult& r) {
  json kl = json::array(), moves = json::array();
  for (std::size_t n = 0; n < r.ensembles.size(); ++n) {
    if (r.ensembles[n].rows() > r.ensembles[n].cols()) kl.push_back(gaussian_fit_kl(r.ensembles[n], chain.base().gaussian()));
    if (n > 0) moves.push_back(mean_squared_displacement(r.ensembles[n - 1], r.ensembles[n]));
  }
  run.results["moment_kl_trace"] = kl;
  run.results["block_displacement"] = moves;
  run.csv("pushed.csv", r.ensembles.back());
  trajectory_plot(run, "trajectories.svg", run.task + ": particle trajectories (data to noise)", r.ensembles);
  flow_outputs(run, f, chain, data);
}

void task_train_jko(Run& run) {
  FlowSettings f = read_flow(run, 6);
  run.cfg.reject_unused("task " + run.task);
  const Data data = f.data.load();
  FlowChain chain = new_chain(f, data.x.cols());
  run.note("progressive JKO over " + std::to_string(chain.size()) + " block(s), gamma " +
           format_double(f.train.gamma));
  const ProgressiveResult r = train_jko(chain, data.x, f.train, f.est);
  run.trace = r.trace;
  progressive_outputs(run, f, chain, data, r);
}

void task_train_fm(Run& run) {
  FlowSettings f = read_flow(run, 1);
  const Interpolant interp{parse_key(run.cfg, "fm.interpolant", "linear", parse_interpolant)};
  const std::size_t draws = run.cfg.count("fm.time_draws", 1);
  run.cfg.reject_unused("task " + run.task);
  const Data data = f.data.load();
  FlowChain chain = new_chain(f, data.x.cols());
  Rng rng = Rng(run.seed).derive(0xf3);
  const Tensor noise = chain.base().sample(data.x.rows(), rng);
  run.note("flow matching with " + std::string(interpolant_name(interp.kind)) + " interpolant");
  run.trace = train_fm(chain, data.x, noise, interp, f.train, draws);
  flow_outputs(run, f, chain, data);
}

void task_train_lfm(Run& run) {
  FlowSettings f = read_flow(run, 4);
  const GammaSchedule kind = parse_key(run.cfg, "lfm.schedule", "constant", parse_gamma_schedule);
  const double gamma0 = run.cfg.real("lfm.gamma0", 0.5);
  const double ratio = run.cfg.real("lfm.ratio", 1.0);
  const std::size_t draws = run.cfg.count("fm.time_draws", 1);
  run.cfg.reject_unused("task " + run.task);
  const Data data = f.data.load();
  FlowChain chain = new_chain(f, data.x.cols());
  const std::vector<double> gammas = make_gamma_schedule(kind, gamma0, ratio, chain.size());
  run.results["gammas"] = gammas;
  run.note("local flow matching over " + std::to_string(chain.size()) + " OU steps");
  const ProgressiveResult r = train_local_fm(chain, data.x, gammas, f.train, draws);
  run.trace = r.trace;
  progressive_outputs(run, f, chain, data, r);
}

// ---------------------------------------------------------------- transport tasks

void task_ot(Run& run) {
  const Config& cfg = run.cfg;
  const DataSource ps = read_source(cfg, "data", run.seed), qs = read_source(cfg, "target", run.seed + 1);
  ChainArchitecture arch = read_model(cfg, 0, 1);
  const std::uint64_t model_seed = cfg.seed("model.seed", run.seed + 2);
  OtConfig oc;
  oc.train = read_train(cfg, "train", run.seed + 3);
  oc.estimator = read_estimator(cfg, ps.file.empty() ? ps.spec.dim : 2);
  const std::string mode = cfg.text("ot.mode", "auto");
  if (mode != "auto" && mode != "analytic" && mode != "sample") {
    cfg.fail("ot.mode", "expected auto, analytic or sample, got '" + mode + "'");
  }
  if (mode != "analytic") {
    oc.refit_every = cfg.count("ot.refit_every", 50);
    oc.refit_samples = cfg.count("ot.refit_samples", 2000);
    oc.ratio = read_ratio(cfg, run.seed + 4);
  }
  cfg.reject_unused("task " + run.task);

  const Data p = ps.load(), q = qs.load();
  if (p.x.cols() != q.x.cols()) cfg.fail("target.dim", "data and target dimensions differ");
  arch.dim = p.x.cols();
  FlowChain chain = FlowChain::make(arch, AnalyticDensity::standard_normal(arch.dim), model_seed);
  const bool analytic = mode != "sample" && p.density && q.density;
  if (mode == "analytic" && !analytic) cfg.fail("ot.mode", "analytic mode needs sampler densities for data and target");
  run.note(std::string(analytic ? "analytic" : "sample-only") + " OT over " + std::to_string(chain.size()) +
           " block(s), gamma " + format_double(oc.train.gamma));
  const OtResult r = analytic ? ot_train(p.x, q.x, chain, oc, p.density, q.density) : ot_train(p.x, q.x, chain, oc);
  run.trace = r.trace;
  run.results["analytic"] = r.analytic;
  run.results["transport_cost"] = r.terms.cost;
  run.results["kl_p"] = r.terms.kl_p;
  run.results["kl_q"] = r.terms.kl_q;

  const Tensor sub = head(p.x, w2_max_particles);
  const MetricReport w2 = w2_exact(sub, push_through(chain, sub, 0, chain.size()));
  run.results["w2_squared_of_map"] = w2.value * w2.value;
  run.results["transport_cost_subset"] = transport_cost(chain, sub);
  run.metric(w2);
  const Tensor qsub = head(q.x, w2_max_particles), fsub = head(r.transported, qsub.rows());
  run.metric(w2_exact(fsub, head(qsub, fsub.rows())));
  if (r.transported.rows() > r.transported.cols() && q.x.rows() > q.x.cols()) run.metric(gauss_fid(r.transported, q.x));

  std::vector<Tensor> steps{head(p.x, 60)};
  for (std::size_t n = 0; n < chain.size(); ++n) steps.push_back(push_through(chain, steps.back(), n, n + 1));
  run.chain(chain);
  run.csv("samples.csv", r.transported);
  scatter_plot(run, "transport.svg", "ot: p, q and F(p)", {{"p", &p.x}, {"q", &q.x}, {"F(p)", &r.transported}});
  trajectory_plot(run, "trajectories.svg", "ot: particle paths through the blocks", steps, &q.x);
  loss_plot(run);
}

void task_dre(Run& run) {
  const Config& cfg = run.cfg;
  const DataSource ps = read_source(cfg, "data", run.seed), qs = read_source(cfg, "target", run.seed + 1);
  const BridgeKind bridge = parse_key(cfg, "dre.bridge", "ou", parse_bridge);
  RatioConfig rc = read_ratio(cfg, run.seed + 4);
  std::vector<double> gammas;
  std::optional<FlowSettings> flow;
  if (bridge == BridgeKind::ou) {
    const std::size_t links = cfg.count("dre.links", 3);
    gammas = make_gamma_schedule(parse_key(cfg, "dre.schedule", "constant", parse_gamma_schedule),
                                 cfg.real("dre.gamma0", 0.5), cfg.real("dre.ratio", 1.0), links);
  } else {
    FlowSettings f;
    f.arch = read_model(cfg, 0, 3);
    f.model_seed = cfg.seed("model.seed", run.seed + 2);
    f.train = read_train(cfg, "train", run.seed + 3);
    f.est = read_estimator(cfg, 2);
    flow = f;
  }
  const std::size_t grid = cfg.count("dre.grid", 60);
  const double threshold = cfg.real("dre.density_threshold", 0.01);
  const std::size_t eval_count = cfg.count("dre.eval_count", 2000);
  cfg.reject_unused("task " + run.task);

  const Data p = ps.load(), q = qs.load();
  const std::size_t d = p.x.cols();
  if (q.x.cols() != d) cfg.fail("target.dim", "data and target dimensions differ");
  Rng rng = Rng(run.seed).derive(0xd4e);

  std::vector<Tensor> path;
  if (bridge == BridgeKind::ou) {
    path = ou_bridge_path(p.x, q.x, gammas, rng);
  } else {
    FlowSettings& f = *flow;
    f.arch.dim = d;
    FlowChain cp = FlowChain::make(f.arch, AnalyticDensity::standard_normal(d), f.model_seed);
    FlowChain cq = FlowChain::make(f.arch, AnalyticDensity::standard_normal(d), f.model_seed + 1);
    run.note("training bridge flows");
    run.trace = train_cnf(cp, p.x, f.train, f.est);
    TrainConfig tq = f.train;
    tq.seed += 1;
    LossTrace tr = train_cnf(cq, q.x, tq, f.est);
    for (std::size_t& s : tr.stage) s += 1;
    run.trace.append(tr);
    path = flow_bridge_path(cp, p.x, cq, q.x);
  }
  run.results["bridge"] = std::string(bridge_name(bridge));
  run.results["path_length"] = path.size();

  // Evaluation points: a grid where the mean density is not negligible, or
  // pooled samples when no densities are known.
  const bool truth = p.density && q.density;
  Tensor pts;
  if (truth && d == 2) {
    Eigen::Vector2d lo = p.x.matrix().colwise().minCoeff().cwiseMin(q.x.matrix().colwise().minCoeff()).transpose();
    Eigen::Vector2d hi = p.x.matrix().colwise().maxCoeff().cwiseMax(q.x.matrix().colwise().maxCoeff()).transpose();
    std::vector<double> keep;
    for (std::size_t i = 0; i < grid; ++i) {
      for (std::size_t j = 0; j < grid; ++j) {
        const double a = lo(0) + (hi(0) - lo(0)) * (i + 0.5) / grid, b = lo(1) + (hi(1) - lo(1)) * (j + 0.5) / grid;
        const std::vector<double> x{a, b};
        const double mid = 0.5 * (std::exp(p.density->log_pdf_point(x)) + std::exp(q.density->log_pdf_point(x)));
        if (mid >= threshold) {
          keep.push_back(a);
          keep.push_back(b);
        }
      }
    }
    pts = Tensor::zeros(keep.size() / 2, 2);
    std::copy(keep.begin(), keep.end(), pts.data().begin());
    run.results["grid_points"] = pts.rows();
  } else {
    const std::size_t half = eval_count / 2;
    pts = stack_rows(head(p.x, half), head(q.x, eval_count - half));
  }
  if (pts.rows() == 0) cfg.fail("dre.density_threshold", "no evaluation point passes the density threshold");

  run.note("fitting " + std::to_string(path.size() - 1) + " classifier link(s)");
  const TelescopicEstimate est = telescopic_log_ratio(path, pts, rc);
  for (const RatioModel& m : est.links) {
    LossTrace tr = m.trace;
    for (std::size_t& s : tr.stage) s = 100 + m.step;
    run.trace.append(tr);
  }

  Tensor table = Tensor::zeros(pts.rows(), d + (truth ? 2 : 1));
  std::vector<double> err;
  Tensor true_lr;
  if (truth) true_lr = sub(q.density->log_pdf(pts), p.density->log_pdf(pts));
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    for (std::size_t k = 0; k < d; ++k) table(i, k) = pts(i, k);
    table(i, d) = est.log_ratio(i, 0);
    if (truth) {
      table(i, d + 1) = true_lr(i, 0);
      err.push_back(est.log_ratio(i, 0) - true_lr(i, 0));
    }
  }
  if (truth) {
    double mae = 0.0, mse = 0.0;
    for (double e : err) {
      mae += std::abs(e);
      mse += e * e;
    }
    run.results["mae"] = mae / err.size();
    run.results["rmse"] = std::sqrt(mse / err.size());
    MetricReport kl = kl_mc([&](const Tensor& x) { return p.density->log_pdf(x); },
                            [&](const Tensor& x) { return q.density->log_pdf(x); }, p.x);
    kl.config.push_back({"direction", "data || target"});
    run.metric(kl);
  }
  run.csv("log_ratio.csv", table);
  run.csv("samples.csv", pts);
  if (d == 2) {
    auto value_map = [&](const std::string& name, const std::string& title, std::size_t col) {
      double lo = table(0, col), hi = lo;
      for (std::size_t i = 0; i < table.rows(); ++i) {
        lo = std::min(lo, table(i, d)), hi = std::max(hi, table(i, d));
        if (truth) lo = std::min(lo, table(i, d + 1)), hi = std::max(hi, table(i, d + 1));
      }
      std::vector<Point2> xy;
      std::vector<std::string> colors;
      for (std::size_t i = 0; i < table.rows(); ++i) {
        xy.push_back({table(i, 0), table(i, 1)});
        colors.push_back(ramp_color(hi > lo ? (table(i, col) - lo) / (hi - lo) : 0.5));
      }
      SvgPlot plot(title);
      plot.colored_points(xy, colors, 2.5);
      run.svg(name, plot);
    };
    value_map("log_ratio_estimate.svg", "dre: estimated log(q/p)", d);
    if (truth) value_map("log_ratio_true.svg", "dre: true log(q/p)", d + 1);
    scatter_plot(run, "samples.svg", "dre: p and q samples", {{"p", &p.x}, {"q", &q.x}});
  }
  loss_plot(run);
}

RiskFunction read_risk(const Config& cfg, std::size_t dim, std::uint64_t seed, std::optional<DataSource>& target,
                       std::optional<RatioConfig>& rc) {
  const std::string kind = cfg.text("dro.risk", "linear");
  auto vector_of = [&](const std::string& key, double fill) {
    const std::vector<double> v = cfg.reals(key, std::vector<double>(dim, fill));
    if (v.size() != dim) cfg.fail(key, "expected " + std::to_string(dim) + " values");
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  if (kind == "constant") return RiskFunction::constant(cfg.real("dro.value", 0.0));
  if (kind == "linear") return RiskFunction::linear(vector_of("dro.c", 1.0));
  if (kind == "neg-quadratic") return RiskFunction::neg_quadratic(vector_of("dro.mu", 0.0));
  if (kind == "classifier") {
    target = read_source(cfg, "target", seed + 1);
    rc = read_ratio(cfg, seed + 4);
    // Placeholder; the classifier is fitted once data is loaded.
    return RiskFunction::constant(0.0);
  }
  cfg.fail("dro.risk", "expected constant, linear, neg-quadratic or classifier, got '" + kind + "'");
}

void task_dro(Run& run) {
  const Config& cfg = run.cfg;
  const DataSource ps = read_source(cfg, "data", run.seed);
  const std::size_t dim = ps.file.empty() ? ps.spec.dim : cfg.count("dro.dim", 2);
  ChainArchitecture arch = read_model(cfg, dim, 1);
  const std::uint64_t model_seed = cfg.seed("model.seed", run.seed + 2);
  DroConfig dc;
  dc.train = read_train(cfg, "train", run.seed + 3);
  dc.detector_window = cfg.count("dro.detector_window", 500);
  dc.detector_chunk = cfg.count("dro.detector_chunk", 50);
  std::optional<DataSource> ts;
  std::optional<RatioConfig> rc;
  RiskFunction risk = read_risk(cfg, dim, run.seed, ts, rc);
  const bool is_linear = risk.name() == "linear";
  const std::vector<double> c = is_linear ? cfg.reals("dro.c", {}) : std::vector<double>{};
  cfg.reject_unused("task " + run.task);

  const Data p = ps.load();
  if (p.x.cols() != dim) cfg.fail("dro.dim", "does not match the data file");
  if (ts) {
    const Data t = ts->load();
    run.note("fitting the classifier behind the risk");
    RatioModel clf = fit_logistic_ratio(p.x, t.x, *rc);
    run.results["classifier_final_loss"] = clf.trace.smoothed.empty() ? 0.0 : clf.trace.smoothed.back();
    risk = RiskFunction::classifier(clf.net, 0);
  }
  FlowChain chain = FlowChain::make(arch, AnalyticDensity::standard_normal(dim), model_seed);
  run.note("DRO with " + risk.name() + " risk, gamma " + format_double(dc.train.gamma));
  const DroResult r = dro_train(risk, p.x, chain, dc);
  run.trace = r.trace;
  run.results["risk"] = risk.name();
  run.results["risk_before"] = r.risk_before;
  run.results["risk_after"] = r.risk_after;
  run.results["degradation"] = r.risk_before - r.risk_after;
  run.results["movement"] = r.movement;
  run.results["objective"] = r.objective;
  if (is_linear) {
    // Pointwise optimum x - gamma c.
    double worst = 0.0, norm = 0.0;
    for (double ci : c) norm += ci * ci;
    norm = dc.train.gamma * std::sqrt(norm);
    for (std::size_t i = 0; i < p.x.rows(); ++i) {
      double e = 0.0;
      for (std::size_t k = 0; k < dim; ++k) e += std::pow(r.transported(i, k) - (p.x(i, k) - dc.train.gamma * c[k]), 2);
      worst = std::max(worst, std::sqrt(e));
    }
    run.results["closed_form_max_error"] = worst;
    run.results["closed_form_shift_norm"] = norm;
  }
  run.chain(chain);
  run.csv("samples.csv", r.transported);
  scatter_plot(run, "transport.svg", "dro: data and worst-case shift", {{"data", &p.x}, {"F(data)", &r.transported}});
  trajectory_plot(run, "trajectories.svg", "dro: particle shifts", {head(p.x, 60), head(r.transported, 60)});
  loss_plot(run);
}

// ---------------------------------------------------------------- eval and sample

FlowChain load_or_identity(const Config& cfg, const std::string& key, std::size_t dim) {
  const std::string path = cfg.text(key, "identity");
  if (path == "identity") {
    ChainArchitecture a;
    a.dim = dim;
    a.hidden = {1};
    a.steps = 1;
    return FlowChain::make(a, AnalyticDensity::standard_normal(dim), 0);
  }
  try {
    return load_checkpoint(path);
  } catch (const FormatError& e) {
    cfg.fail(key, e.what());
  } catch (const std::runtime_error& e) {
    cfg.fail(key, e.what());
  }
}

void task_eval(Run& run) {
  const Config& cfg = run.cfg;
  const DataSource ps = read_source(cfg, "data", run.seed);
  const std::vector<std::string> names = cfg.words("eval.metrics", {"kl_mc", "gauss_fid", "mmd_rbf", "w2_exact"});
  const bool has_target = cfg.has_section("target");
  const bool has_chain = cfg.has("eval.checkpoint");
  std::optional<DataSource> qs;
  if (has_target) qs = read_source(cfg, "target", run.seed + 1);
  std::string ckpt;
  if (has_chain) ckpt = cfg.text("eval.checkpoint");
  const std::size_t model_samples = cfg.count("eval.model_samples", 2000);
  const std::size_t w2_count = std::min<std::size_t>(cfg.count("eval.w2_count", w2_max_particles), w2_max_particles);
  const std::size_t permutations = cfg.count("eval.mmd_permutations", 100);
  // The kernel matrix is quadratic in the pooled size.
  const std::size_t mmd_count = cfg.count("eval.mmd_count", 2000);
  if (mmd_count < 2) cfg.fail("eval.mmd_count", "need at least 2 points per side");
  const double bandwidth = cfg.real("eval.mmd_bandwidth", 0.0);
  const DivergenceEstimator est = read_estimator(cfg, ps.file.empty() ? ps.spec.dim : 2);
  for (const std::string& m : names) {
    if (m != "nll" && m != "kl_mc" && m != "gauss_fid" && m != "mmd_rbf" && m != "w2_exact") {
      cfg.fail("eval.metrics", "unknown metric '" + m + "'");
    }
    if (m == "nll" && !has_chain) cfg.fail("eval.metrics", "nll needs eval.checkpoint");
  }
  if (!has_target && !has_chain) cfg.fail("eval.metrics", "need a [target] dataset or eval.checkpoint to compare against");
  cfg.reject_unused("task " + run.task);

  const Data p = ps.load();
  std::optional<FlowChain> chain;
  if (has_chain) chain = load_or_identity(cfg, "eval.checkpoint", p.x.cols());
  Rng rng = Rng(run.seed).derive(0xe7a1);
  Data q;
  std::string other;
  if (qs) {
    q = qs->load();
    other = "target";
  } else {
    q.x = sample(*chain, model_samples, rng).positions;
    other = "model";
  }
  if (q.x.cols() != p.x.cols()) cfg.fail("target.dim", "data and comparison dimensions differ");

  for (const std::string& m : names) {
    if (m == "nll") {
      run.metric(nll_eval(*chain, p.x, est, rng));
    } else if (m == "kl_mc") {
      if (!p.density) cfg.fail("eval.metrics", "kl_mc needs a data sampler with a known density");
      LogDensityFn log_q;
      Rng lrng = rng.derive(7);
      if (q.density) log_q = [&](const Tensor& x) { return q.density->log_pdf(x); };
      else if (chain) log_q = [&](const Tensor& x) { return log_density(*chain, x, est, lrng); };
      else cfg.fail("eval.metrics", "kl_mc needs a target density or a checkpoint");
      MetricReport r = kl_mc([&](const Tensor& x) { return p.density->log_pdf(x); }, log_q, p.x);
      r.config.push_back({"direction", "data || " + other});
      run.metric(r);
    } else if (m == "gauss_fid") {
      MetricReport r = gauss_fid(p.x, q.x);
      r.config.push_back({"against", other});
      run.metric(r);
    } else if (m == "mmd_rbf") {
      MetricReport r = mmd_rbf(head(p.x, mmd_count), head(q.x, mmd_count), bandwidth > 0 ? MmdBandwidth{bandwidth} : MmdBandwidth{}, permutations, &rng);
      r.config.push_back({"bandwidth", bandwidth > 0 ? "fixed" : "median"});
      r.config.push_back({"against", other});
      run.metric(r);
    } else if (m == "w2_exact") {
      const std::size_t n = std::min({w2_count, p.x.rows(), q.x.rows()});
      MetricReport r = w2_exact(head(p.x, n), head(q.x, n));
      r.config.push_back({"against", other});
      run.metric(r);
    }
  }
  for (const json& m : run.metrics) run.results[m["name"].get<std::string>()] = m["value"];
  scatter_plot(run, "samples.svg", "eval: data and " + other, {{"data", &p.x}, {other, &q.x}});
}

void task_sample(Run& run) {
  const Config& cfg = run.cfg;
  const std::size_t dim = cfg.count("sample.dim", 2);
  const std::size_t count = cfg.count("sample.count", 2000);
  cfg.text("sample.checkpoint", "identity");
  cfg.reject_unused("task " + run.task);
  const FlowChain chain = load_or_identity(cfg, "sample.checkpoint", dim);
  Rng rng = Rng(run.seed).derive(0x5a);
  const Tensor x = sample(chain, count, rng).positions;
  run.results["count"] = x.rows();
  run.results["dim"] = x.cols();
  run.results["mean"] = vec(sample_mean(x));
  run.csv("samples.csv", x);
  scatter_plot(run, "samples.svg", "generated samples", {{"samples", &x}});
}

const std::map<std::string, std::function<void(Run&)>>& task_table() {
  static const std::map<std::string, std::function<void(Run&)>> t{
      {"train-cnf", task_train_cnf}, {"train-jko", task_train_jko}, {"train-fm", task_train_fm},
      {"train-lfm", task_train_lfm}, {"ot", task_ot},               {"dre", task_dre},
      {"dro", task_dro},             {"eval", task_eval},           {"sample", task_sample}};
  return t;
}

json nested_config(const Config& cfg) {
  json top = json::object();
  for (const auto& [key, value] : cfg.resolved()) {
    if (key.find('.') == std::string::npos) top[key] = value;
  }
  for (const auto& [key, value] : cfg.resolved()) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    top[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
  return top;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void run_experiment(const std::string& task, Config& cfg, const std::string& out_dir, std::ostream& log) {
  auto it = task_table().find(task);
  if (it == task_table().end()) throw ConfigError(cfg.source(), 0, "task", "unknown task '" + task + "'");
  if (cfg.has("task")) {
    const std::string declared = cfg.text("task");
    if (declared != task) cfg.fail("task", "config is for task '" + declared + "', not '" + task + "'");
  } else {
    cfg.text("task", task);
  }
  const std::uint64_t seed = cfg.seed("seed", 0);
  const bool plots = cfg.flag("plots", true);
  cfg.consume("out");

  const fs::path out(out_dir);
  const bool created = !fs::exists(out);
  fs::create_directories(out);
  const fs::path stage = out / (".staging-" + task);
  fs::remove_all(stage);
  fs::create_directories(stage);

  const auto t0 = std::chrono::steady_clock::now();
  const std::string started = utc_now();
  Run run(task, cfg, stage, seed, log);
  run.plots = plots;
  try {
    it->second(run);

    if (!run.trace.empty()) {
      std::ofstream os(run.file("loss.csv"), std::ios::binary);
      write_loss_csv(os, run.trace);
      run.results["final_loss"] = run.trace.raw.back();
      run.results["iterations"] = run.trace.size();
    }
    {
      std::ofstream os(run.file("config.ini"), std::ios::binary);
      cfg.write_resolved(os);
    }
    const double total_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    {
      json timing;
      timing["started_utc"] = started;
      timing["finished_utc"] = utc_now();
      timing["total_ms"] = std::round(total_ms);
      json per = json::array();
      for (std::size_t i = 0; i < run.trace.size(); ++i) per.push_back(std::round(run.trace.wall_ms[i] * 1000.0) / 1000.0);
      timing["iteration_wall_ms"] = per;
      std::ofstream os(run.file("timing.json"), std::ios::binary);
      os << timing.dump(2) << '\n';
    }
    std::vector<std::string> names = run.artifacts;
    names.push_back("report.json");
    std::sort(names.begin(), names.end());
    json report;
    report["task"] = task;
    report["seed"] = seed;
    report["config"] = nested_config(cfg);
    report["results"] = run.results;
    report["metrics"] = run.metrics;
    report["artifacts"] = names;
    {
      std::ofstream os(stage / "report.json", std::ios::binary);
      os << report.dump(2) << '\n';
      if (!os) throw std::runtime_error("failed writing report.json");
    }
    for (const auto& entry : fs::directory_iterator(stage)) {
      const fs::path dest = out / entry.path().filename();
      fs::remove(dest);
      fs::rename(entry.path(), dest);
    }
    fs::remove_all(stage);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(stage, ec);
    if (created && fs::is_empty(out, ec)) fs::remove(out, ec);
    throw;
  }
}

int run_experiment(const RunOptions& opts, std::ostream& log) {
  try {
    Config cfg = Config::load(opts.config_path);
    if (opts.seed) cfg.set("seed", std::to_string(*opts.seed));
    std::string out = opts.out.value_or("");
    if (out.empty()) out = cfg.peek("out").value_or("wflow-out");
    cfg.consume("out");
    run_experiment(opts.task, cfg, out, log);
    log << "[" << opts.task << "] artifacts written to " << out << '\n';
    return exit_ok;
  } catch (const NumericError& e) {
    log << "numeric failure: " << e.what() << '\n';
    return exit_numeric;
  } catch (const FormatError& e) {
    log << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::invalid_argument& e) {
    log << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const fs::filesystem_error& e) {
    log << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return exit_failure;
  }
}

}  // namespace wflow
