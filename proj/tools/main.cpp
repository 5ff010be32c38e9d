#include <CLI11.hpp>

#include <iostream>

#include "commands.hpp"
#include "rfp/check_suite.hpp"

namespace {

using namespace rfp;

Triple parse_extent(const std::string& s) {
  Triple t{};
  std::size_t axis = 0;
  std::size_t pos = 0;
  while (axis < 3) {
    const std::size_t comma = s.find(',', pos);
    const std::string part = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      t[axis++] = std::stoul(part);
    } catch (const std::exception&) {
      throw config::ConfigError("extent '" + s + "' is not H,W,D");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (axis != 3 || s.find(',', pos) != std::string::npos) throw config::ConfigError("extent '" + s + "' is not H,W,D");
  return t;
}

int run(int argc, char** argv) {
  CLI::App app{"Volumetric segmentation with recurrent feature propagation"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  auto config_flags = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override one key, key=value (repeatable)");
  };

  auto* gen = app.add_subcommand("gen-data", "write a synthetic corpus and its manifest");
  config_flags(gen);
  cli::GenDataOptions gen_opts;
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_opts.count, "number of cases");
  gen->add_option("--seed", gen_opts.seed, "corpus seed");
  gen->add_flag("--force", gen_opts.force, "overwrite a non-empty directory");

  auto* tr = app.add_subcommand("train", "train a network");
  config_flags(tr);
  cli::TrainOptions train_opts;
  std::string train_manifest, val_manifest, out_dir;
  std::size_t max_epochs = 0;
  tr->add_option("--train", train_manifest, "training manifest (overrides train_manifest)");
  tr->add_option("--val", val_manifest, "validation manifest (overrides val_manifest)");
  tr->add_option("--out", out_dir, "output directory (overrides output_dir)");
  tr->add_option("--resume", train_opts.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  tr->add_option("--max-epochs", max_epochs, "stop after this many epochs");
  tr->add_flag("--ignore-digest", train_opts.ignore_digest, "resume despite a config digest mismatch");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  cli::EvalOptions eval_opts;
  std::string ckpt, eval_manifest, records;
  ev->add_option("--config", config_path, "expected configuration; default: the one stored in the checkpoint")
      ->check(CLI::ExistingFile);
  ev->add_option("--set", overrides, "override one key of the expected configuration");
  ev->add_option("--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_manifest, "manifest to evaluate")->required()->check(CLI::ExistingFile);
  ev->add_option("--records", records, "write line-oriented records here");
  ev->add_flag("--ignore-digest", eval_opts.ignore_digest, "evaluate despite a digest mismatch");

  auto* be = app.add_subcommand("bench", "operation counts and scan timings");
  config_flags(be);
  cli::BenchOptions bench_opts;
  std::string extent;
  std::size_t channels = 0;
  be->add_option("--extent", extent, "feature extent H,W,D; default: deepest encoder stage");
  be->add_option("--channels", channels, "feature channels; default: deepest stage width");
  be->add_option("--repeats", bench_opts.repeats, "timing repeats (best is reported)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks in 64-bit mode");
  cli::GradcheckOptions gc_opts;
  bool list = false;
  gc->add_option("--scope", gc_opts.scope, "op, module or network")->check(CLI::IsMember({"op", "module", "network"}));
  gc->add_option("--case", gc_opts.only, "run a single named case");
  gc->add_option("--seed", gc_opts.seed, "seed for random inputs");
  gc->add_option("--entries", gc_opts.network_entries, "entries per tensor in the network case (0 = all)");
  gc->add_option("--inject-mutation", gc_opts.mutation, "deliberately break a backward rule");
  gc->add_flag("--list", list, "print case names and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitConfig;
  }

  try {
    if (gen->parsed()) {
      gen_opts.out_dir = gen_out;
      return cli::cmd_gen_data(cli::load_config(config_path, overrides), gen_opts, std::cout);
    }
    if (tr->parsed()) {
      if (!train_manifest.empty()) overrides.push_back("train_manifest=" + train_manifest);
      if (!val_manifest.empty()) overrides.push_back("val_manifest=" + val_manifest);
      if (!out_dir.empty()) overrides.push_back("output_dir=" + out_dir);
      if (max_epochs > 0) train_opts.max_epochs = max_epochs;
      return cli::cmd_train(cli::load_config(config_path, overrides), train_opts, std::cout);
    }
    if (ev->parsed()) {
      eval_opts.checkpoint = ckpt;
      eval_opts.manifest = eval_manifest;
      eval_opts.records = records;
      if (!config_path.empty() || !overrides.empty()) eval_opts.expected = cli::load_config(config_path, overrides);
      return cli::cmd_eval(eval_opts, std::cout);
    }
    if (be->parsed()) {
      if (!extent.empty()) bench_opts.extent = parse_extent(extent);
      if (channels > 0) bench_opts.channels = channels;
      return cli::cmd_bench(cli::load_config(config_path, overrides), bench_opts, std::cout);
    }
    if (gc->parsed()) {
      if (list) {
        for (const std::string& n : check::case_names(check::parse_scope(gc_opts.scope))) std::cout << n << "\n";
        return cli::kExitOk;
      }
      return cli::cmd_gradcheck(gc_opts, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e);
  }
  return cli::kExitConfig;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
