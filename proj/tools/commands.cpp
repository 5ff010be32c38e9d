#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "rfp/check_suite.hpp"
#include "rfp/io.hpp"
#include "rfp/log.hpp"

namespace rfp::cli {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  return dynamic_cast<const NumericalError*>(&e) != nullptr ? kExitNumerical : kExitConfig;
}

config::RunConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  std::map<std::string, std::string> kv;
  if (!config_path.empty()) kv = config::parse_kv(io::read_file(config_path));
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw config::ConfigError("override '" + o + "' is not key=value");
    }
    for (const auto& [k, v] : config::parse_kv(o)) kv[k] = v;
  }
  config::RunConfig cfg = config::from_map(kv);
  cfg.validate();
  return cfg;
}

std::vector<data::VolumeSample> read_dataset(const fs::path& manifest) {
  const fs::path base = manifest.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::vector<data::VolumeSample> out;
  for (const io::ManifestEntry& e : io::parse_manifest(io::read_file(manifest))) {
    data::VolumeSample s;
    s.id = e.id;
    s.seed = e.seed;
    s.image = io::read_image(resolve(e.image_path), &s.spacing);
    s.labels = io::read_labels(resolve(e.label_path));
    if (s.labels.extent != Triple{s.image.extent(0), s.image.extent(1), s.image.extent(2)}) {
      throw io::FormatError("case " + e.id + ": image and label extents differ");
    }
    out.push_back(std::move(s));
  }
  return out;
}

int cmd_gen_data(const config::RunConfig& cfg, const GenDataOptions& opts, std::ostream& out) {
  if (opts.out_dir.empty()) throw config::ConfigError("gen-data needs an output directory");
  if (fs::exists(opts.out_dir)) {
    if (!fs::is_directory(opts.out_dir)) {
      throw config::ConfigError(opts.out_dir.string() + " exists and is not a directory");
    }
    if (!fs::is_empty(opts.out_dir)) {
      if (!opts.force) {
        throw config::ConfigError(opts.out_dir.string() + " is not empty; pass --force to overwrite");
      }
      fs::remove_all(opts.out_dir / "images");
      fs::remove_all(opts.out_dir / "labels");
    }
  }
  fs::create_directories(opts.out_dir / "images");
  fs::create_directories(opts.out_dir / "labels");

  data::SyntheticSpec spec = cfg.synthetic_spec();
  spec.seed = opts.seed;
  std::vector<io::ManifestEntry> manifest;
  for (std::size_t i = 0; i < opts.count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "case_%03zu", i);
    const data::VolumeSample s = data::generate_sample(spec, data::sample_seed(spec.seed, i), id);
    const std::string img = "images/" + s.id + ".rfpv";
    const std::string lab = "labels/" + s.id + ".rfpv";
    io::write_image(opts.out_dir / img, s.image, s.spacing);
    io::write_labels(opts.out_dir / lab, s.labels, s.spacing);
    manifest.push_back({s.id, img, lab, s.seed});
  }
  io::write_atomic(opts.out_dir / "manifest.txt", io::format_manifest(manifest));
  out << "wrote " << manifest.size() << " cases to " << opts.out_dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const config::RunConfig& cfg, const TrainOptions& opts, std::ostream& out) {
  if (cfg.train_manifest.empty()) throw config::ConfigError("train_manifest is not set");
  if (cfg.output_dir.empty()) throw config::ConfigError("output_dir is not set");
  fs::create_directories(cfg.output_dir);
  const auto train = train::prepare_all(read_dataset(cfg.train_manifest), cfg.edge_mode);
  std::vector<train::PreparedSample> val;
  if (!cfg.val_manifest.empty()) val = train::prepare_all(read_dataset(cfg.val_manifest), cfg.edge_mode);

  io::write_atomic(fs::path(cfg.output_dir) / "config.txt", config::format_kv(config::to_map(cfg)));
  log::Logger logger((fs::path(cfg.output_dir) / "train.log").string(), log::level_from_env());
  train::Trainer trainer(cfg, logger);
  if (!opts.resume.empty()) trainer.restore(io::read_checkpoint(opts.resume), opts.ignore_digest);
  const train::TrainResult r = trainer.run(train, val, opts.max_epochs);

  out << "epochs_run " << r.epochs_run << "  next_epoch " << trainer.next_epoch() << "/" << cfg.total_epochs;
  if (r.best_val_dsc) out << "  best_val_dsc " << *r.best_val_dsc << " (epoch " << r.best_epoch << ")";
  out << "  seconds " << r.seconds << "\n";
  return kExitOk;
}

int cmd_eval(const EvalOptions& opts, std::ostream& out) {
  const io::Checkpoint ck = io::read_checkpoint(opts.checkpoint);
  const config::RunConfig stored = config::from_map(config::parse_kv(ck.config_text));
  if (config::config_digest(stored) != ck.digest) {
    throw io::FormatError(opts.checkpoint.string() + ": stored config does not match its digest");
  }
  config::RunConfig cfg = stored;
  if (opts.expected) {
    if (config::config_digest(*opts.expected) != ck.digest && !opts.ignore_digest) {
      throw config::ConfigError("checkpoint digest " + config::digest_hex(ck.digest) +
                                " does not match the given config " +
                                config::digest_hex(config::config_digest(*opts.expected)) +
                                "; pass --ignore-digest to evaluate anyway");
    }
    cfg = *opts.expected;
  }
  net::Network<float> net(cfg.net, cfg.seed);
  train::load_weights(ck, cfg, net, true);
  const auto samples = train::prepare_all(read_dataset(opts.manifest), cfg.edge_mode);
  const metrics::MetricsReport rep = train::evaluate(net, samples);
  out << metrics::format_table(rep);
  if (!opts.records.empty()) io::write_atomic(opts.records, metrics::format_records(rep));
  return kExitOk;
}

namespace {

double time_scan(const Tensor& slice, const std::vector<graph::DagLayout>& layouts,
                 const std::vector<graph::RfpWeights<float>>& w, std::size_t depth, std::size_t repeats) {
  double best = 1e300;
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    float sink = 0;
    for (std::size_t z = 0; z < depth; ++z) {
      for (std::size_t i = 0; i < layouts.size(); ++i) sink += graph::dag_scan_forward(slice, layouts[i], w[i])[0];
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (sink != sink) throw NumericalError("bench scan produced NaN");
    best = std::min(best, s);
  }
  return best;
}

}  // namespace

BenchResult run_bench(const config::RunConfig& cfg, const BenchOptions& opts) {
  BenchResult b;
  b.extent = opts.extent ? *opts.extent : cfg.net.stage_extent(5);
  b.channels = opts.channels ? *opts.channels : cfg.net.stage_channels[4];
  const auto [h, w, d] = b.extent;
  if (h == 0 || w == 0 || d == 0 || b.channels == 0) throw config::ConfigError("bench needs positive extents");
  const std::size_t dirs = cfg.net.dag_count == 0 ? 4 : cfg.net.dag_count;
  b.slice_wise = head::cost_count(h, w, d, head::CostMode::slice_wise, dirs, cfg.net.neighborhood);
  b.volumetric = head::cost_count(h, w, d, head::CostMode::volumetric_3d, dirs, cfg.net.neighborhood);
  b.ratio = double(b.slice_wise.cell_updates) / double(b.volumetric.cell_updates);
  b.visits_four = head::cost_count(h, w, d, head::CostMode::slice_wise, 4, graph::Neighborhood::four).predecessor_visits;
  b.visits_eight =
      head::cost_count(h, w, d, head::CostMode::slice_wise, 4, graph::Neighborhood::eight).predecessor_visits;

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor slice({h, w, b.channels});
  for (float& v : slice.data()) v = n(rng);
  const graph::GridGraph g = graph::build_ucg(h, w, cfg.net.neighborhood);
  const float scale = 0.5f / float(b.channels);
  for (std::size_t count : {1, 4}) {
    std::vector<graph::DagLayout> layouts;
    std::vector<graph::RfpWeights<float>> weights;
    for (graph::Direction dir : graph::directions_for_count(count)) {
      layouts.push_back(graph::induce_dag(g, dir));
      graph::RfpWeights<float> rw{Tensor({b.channels, b.channels}), Tensor({b.channels, b.channels}),
                                  Tensor({b.channels})};
      for (float& v : rw.U.data()) v = n(rng) * scale;
      for (float& v : rw.W.data()) v = n(rng) * scale;
      weights.push_back(std::move(rw));
    }
    b.timings.push_back({count, time_scan(slice, layouts, weights, d, opts.repeats)});
  }
  return b;
}

int cmd_bench(const config::RunConfig& cfg, const BenchOptions& opts, std::ostream& out) {
  const BenchResult b = run_bench(cfg, opts);
  out << "extent " << b.extent[0] << "x" << b.extent[1] << "x" << b.extent[2] << "  channels " << b.channels
      << "  neighborhood " << graph::neighborhood_name(cfg.net.neighborhood) << "\n";
  out << std::left << std::setw(16) << "mode" << std::right << std::setw(16) << "cell_updates" << std::setw(20)
      << "predecessor_visits" << "\n";
  out << std::left << std::setw(16) << "slice_wise" << std::right << std::setw(16) << b.slice_wise.cell_updates
      << std::setw(20) << b.slice_wise.predecessor_visits << "\n";
  out << std::left << std::setw(16) << "volumetric_3d" << std::right << std::setw(16) << b.volumetric.cell_updates
      << std::setw(20) << b.volumetric.predecessor_visits << "\n";
  out << "cell_update_ratio " << b.ratio << "\n";
  out << "predecessor_visits four " << b.visits_four << "  eight " << b.visits_eight << "\n";
  for (const ScanTiming& t : b.timings) {
    out << "scan directions " << t.directions << "  seconds " << std::setprecision(6) << t.seconds << "\n";
  }
  if (b.timings.size() == 2 && b.timings[1].seconds > 0) {
    out << "time_ratio_1_over_4 " << b.timings[0].seconds / b.timings[1].seconds << "\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out) {
  const check::Scope scope = check::parse_scope(opts.scope);
  ad::Mutation m = ad::Mutation::none;
  if (opts.mutation == "conv_kernel_grad_transposed") {
    m = ad::Mutation::conv_kernel_grad_transposed;
  } else if (opts.mutation != "none") {
    throw config::ConfigError("unknown mutation '" + opts.mutation + "' (none, conv_kernel_grad_transposed)");
  }
  struct Reset {
    ~Reset() { ad::set_mutation(ad::Mutation::none); }
  } reset;
  ad::set_mutation(m);
  const auto results = check::run(scope, opts.seed, opts.only, opts.network_entries);
  bool ok = true;
  for (const check::CaseResult& r : results) {
    const bool pass = r.report.passed;
    ok = ok && pass;
    out << "case=" << r.name << " max_rel_error=" << r.report.max_rel_error() << " tensors=" << r.report.params.size()
        << " seconds=" << r.seconds << " status=" << (pass ? "pass" : "FAIL");
    if (!r.report.failure.empty()) out << " failure=\"" << r.report.failure << "\"";
    out << "\n";
  }
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (" << results.size() << " cases)\n";
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace rfp::cli
