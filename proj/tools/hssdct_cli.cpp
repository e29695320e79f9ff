// hssdct: command-line front end (synth, train, eval, fuse, bench, gradcheck).

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "hssdct/bench.hpp"
#include "hssdct/config.hpp"
#include "hssdct/data.hpp"
#include "hssdct/error.hpp"
#include "hssdct/gradsuite.hpp"
#include "hssdct/metrics.hpp"
#include "hssdct/network.hpp"
#include "hssdct/trainer.hpp"

namespace fs = std::filesystem;
using namespace hssdct;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitGradcheck = 11;
constexpr double kGradTolerance = 1e-4;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return 2;
    case ErrorKind::Config: return 3;
    case ErrorKind::Io: return 4;
    case ErrorKind::Format: return 5;
    case ErrorKind::Dimension: return 6;
    case ErrorKind::Checkpoint: return 7;
    case ErrorKind::Training: return 8;
    case ErrorKind::Bench: return 9;
    case ErrorKind::Metric: return 10;
  }
  return kExitInternal;
}

const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error\n"
    "  2  usage error (bad flags or arguments)\n"
    "  3  config error (malformed config, unknown key, invalid value)\n"
    "  4  io error (missing or unwritable file)\n"
    "  5  format error (corrupt cube, checkpoint or manifest)\n"
    "  6  dimension error (shape mismatch)\n"
    "  7  checkpoint error (checkpoint does not match the model)\n"
    "  8  training error (non-finite loss)\n"
    "  9  bench error (timer resolution, bad size grid)\n"
    " 10  metric error (undefined metric, e.g. zero-mean band)\n"
    " 11  gradcheck failed (max relative error above 1e-4)\n"
    "Environment: HSSDCT_THREADS bounds the number of eval worker threads.\n";

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed for data, model init and batch order");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. train.lr_max=1e-3 (repeatable)");
  cmd->add_option("--out", c.out, out_help);
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (c.seed) cfg.set_seed(*c.seed);
  cfg.validate();
  return cfg;
}

fs::path require_dir(const std::string& out, const char* fallback) {
  fs::path dir = out.empty() ? fs::path(fallback) : fs::path(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  return dir;
}

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HSSDCT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw UsageError(std::string("HSSDCT_THREADS must be a positive integer, got '") + env + "'");
    }
    n = static_cast<std::size_t>(v);
  }
  return std::min(n, std::max<std::size_t>(1, jobs));
}

Model model_from_checkpoint(const fs::path& path) {
  const auto ckpt = read_checkpoint(path);
  Model model(parse_model_config(ckpt.metadata));
  restore(model.params(), ckpt);
  return model;
}

// ---------------------------------------------------------------------------

int run_synth(const Common& c) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = require_dir(c.out, "synth_out");
  Manifest manifest;
  for (std::size_t i = 0; i < cfg.data.n_scenes; ++i) {
    const auto scene = make_scene_triple(cfg.scene_spec(i));
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03zu", i);
    ManifestEntry e;
    e.name = name;
    e.hr_hsi = std::string(name) + "_hr_hsi.cube";
    e.lr_hsi = std::string(name) + "_lr_hsi.cube";
    e.hr_msi = std::string(name) + "_hr_msi.cube";
    write_cube(dir / e.hr_hsi, scene.hr_hsi);
    write_cube(dir / e.lr_hsi, scene.lr_hsi);
    write_cube(dir / e.hr_msi, scene.hr_msi);
    e.seed = scene.seed;
    e.ratio = scene.ratio;
    e.blur_sigma = scene.blur_sigma;
    e.noise_sigma = cfg.data.noise_sigma;
    e.n_endmembers = cfg.data.n_endmembers;
    const auto srf = scene.srf.values();
    const std::size_t bands = scene.srf.extent(1);
    for (std::size_t m = 0; m < scene.srf.extent(0); ++m) {
      e.srf.emplace_back(srf.begin() + static_cast<std::ptrdiff_t>(m * bands),
                         srf.begin() + static_cast<std::ptrdiff_t>((m + 1) * bands));
    }
    manifest.scenes.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.json", manifest);
  std::ofstream(dir / "config.json") << to_json_text(cfg);
  std::cout << "wrote " << cfg.data.n_scenes << " scenes to " << dir.string() << "\n";
  return kExitOk;
}

int run_train(const Common& c, const std::string& manifest, const std::string& resume,
              std::size_t checkpoint_every, bool init_only) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = require_dir(c.out, "train_out");
  Model model(cfg.model);
  const std::string metadata = model_config_json(cfg.model);
  if (init_only) {
    save_checkpoint(dir / "checkpoint.hck", model.params(), metadata);
    std::cout << "wrote initial checkpoint (" << param_count(model) << " parameters)\n";
    return kExitOk;
  }
  if (manifest.empty()) throw UsageError("train needs --manifest");
  const auto dataset = load_dataset(manifest);
  if (!resume.empty()) load_checkpoint(resume, model.params());

  std::vector<HistoryRow> history;
  TrainOptions opts;
  opts.on_step = [&](const HistoryRow& row) {
    history.push_back(row);
    const std::size_t done = row.step + 1;
    if (done % 50 == 0 || done == cfg.train.total_steps) {
      std::fprintf(stderr, "step %zu/%zu loss %.6g lr %.3g\n", done, cfg.train.total_steps, row.loss,
                   row.lr);
    }
  };
  if (checkpoint_every == 0) {
    train(model, dataset, cfg.train, opts);
  } else {
    while (model.params().step < cfg.train.total_steps) {
      opts.stop_at = std::min(cfg.train.total_steps, model.params().step + checkpoint_every);
      train(model, dataset, cfg.train, opts);
      char name[48];
      std::snprintf(name, sizeof name, "checkpoint_step%06llu.hck",
                    static_cast<unsigned long long>(model.params().step));
      save_checkpoint(dir / name, model.params(), metadata);
    }
  }
  save_checkpoint(dir / "checkpoint.hck", model.params(), metadata);
  write_history_csv(dir / "history.csv", history);
  std::cout << "trained to step " << model.params().step << "; checkpoint "
            << (dir / "checkpoint.hck").string() << "\n";
  return kExitOk;
}

int run_eval(const std::string& checkpoint, const std::string& manifest, const std::string& out) {
  if (checkpoint.empty() || manifest.empty()) throw UsageError("eval needs --checkpoint and --manifest");
  const Model model = model_from_checkpoint(checkpoint);
  const auto dataset = load_dataset(manifest);
  const auto names = read_manifest(manifest);
  const double ratio = static_cast<double>(model.config().ratio);

  std::vector<MetricReport> fused(dataset.size()), bicubic(dataset.size());
  std::vector<std::exception_ptr> errors(dataset.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    NoGradGuard no_grad;
    for (std::size_t i = next++; i < dataset.size(); i = next++) {
      try {
        const auto& s = dataset[i];
        fused[i] = evaluate(model.forward(s.lr_hsi, s.hr_msi), s.hr_hsi, 1.0, ratio);
        bicubic[i] = evaluate(bicubic_upsample(s.lr_hsi, model.config().ratio), s.hr_hsi, 1.0, ratio);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n_workers = worker_count(dataset.size());
  for (std::size_t t = 1; t < n_workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::ostringstream csv;
  csv << "scene,method,psnr_db,sam_deg,rmse,ergas\n";
  char buf[256];
  auto row = [&](const std::string& scene, const char* method, const MetricReport& r) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.10g,%.10g,%.10g,%.10g\n", scene.c_str(), method, r.psnr_db,
                  r.sam_deg, r.rmse, r.ergas);
    csv << buf;
  };
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    row(names.scenes[i].name, "model", fused[i]);
    row(names.scenes[i].name, "bicubic", bicubic[i]);
  }
  row("mean", "model", average(fused));
  row("mean", "bicubic", average(bicubic));
  std::cout << csv.str();
  if (!out.empty()) {
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + out + "' for writing");
    f << csv.str();
  }
  return kExitOk;
}

int run_fuse(const std::string& checkpoint, const std::string& lr, const std::string& msi,
             const std::string& out) {
  if (checkpoint.empty() || lr.empty() || msi.empty() || out.empty()) {
    throw UsageError("fuse needs --checkpoint, --lr, --msi and --out");
  }
  const Model model = model_from_checkpoint(checkpoint);
  NoGradGuard no_grad;
  const Tensor fused = model.forward(read_cube(lr), read_cube(msi));
  write_cube(out, fused);
  std::cout << "wrote " << shape_str(fused.shape()) << " cube to " << out << "\n";
  return kExitOk;
}

int run_bench(const Common& c, bool svg) {
  const RunConfig cfg = resolve(c);
  const fs::path dir = require_dir(c.out, "bench_out");
  std::vector<ScalingResult> results;
  ScalingOptions opts;
  opts.repeats = cfg.bench.repeats;
  opts.warmup = cfg.bench.warmup;
  opts.seed = cfg.data.seed;
  for (const auto& name : cfg.bench.variants) {
    results.push_back(scaling_run(parse_variant(name), cfg.bench.token_counts, cfg.bench.channels, opts));
  }
  write_bench_csv(dir / "bench.csv", results);
  if (svg) write_bench_svg(dir / "bench.svg", results);

  std::printf("%-12s %10s %14s %16s\n", "variant", "n_tokens", "wall_ns", "flops");
  for (const auto& r : results) {
    for (const auto& rec : r.records) {
      std::printf("%-12s %10zu %14.0f %16llu\n", to_string(rec.variant), rec.n_tokens, rec.wall_ns,
                  static_cast<unsigned long long>(rec.flops));
    }
  }
  for (const auto& r : results) {
    std::printf("%s: fitted exponent %.3f, max rel diff vs naive order %.3e\n", to_string(r.variant),
                r.exponent, r.max_rel_diff);
  }

  std::ofstream flops(dir / "flops.csv", std::ios::trunc);
  if (!flops) throw IoError("cannot write flops.csv");
  flops << "config,layer,flops\n";
  const ModelConfig paper = ModelConfig::paper(cfg.model.msi_bands);
  const std::pair<const char*, std::pair<ModelConfig, std::size_t>> presets[] = {
      {"run", {cfg.model, cfg.data.height}}, {"paper", {paper, 256}}};
  for (const auto& [label, preset] : presets) {
    const auto rows = model_flops(preset.first, preset.second, preset.second);
    for (const auto& row : rows) flops << label << "," << row.layer << "," << row.flops << "\n";
    const Model m(preset.first);
    std::printf("%s model at %zux%zu: %zu parameters, %.3f GFLOPs\n", label, preset.second, preset.second,
                param_count(m), static_cast<double>(total_flops(rows)) / 1e9);
  }
  std::printf("reference (published, paper scale): 6.78M parameters, 283.84 GFLOPs\n");
  return kExitOk;
}

int run_gradcheck(const Common& c, double fraction) {
  const RunConfig cfg = resolve(c);
  GradSuiteOptions opts;
  opts.seed = cfg.model.seed;
  opts.model_fraction = fraction;
  double worst = 0;
  for (const auto& row : gradcheck_suite(opts)) {
    std::printf("%-28s max_rel_error %.3e (%zu coords)\n", row.name.c_str(), row.result.max_rel_error,
                row.result.checked);
    worst = std::max(worst, row.result.max_rel_error);
  }
  std::printf("max relative error %.3e (tolerance %.0e)\n", worst, kGradTolerance);
  return worst <= kGradTolerance ? kExitOk : kExitGradcheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperspectral/multispectral fusion toolkit"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);

  Common common;
  std::string manifest, checkpoint, resume, lr, msi;
  std::size_t checkpoint_every = 0;
  bool init_only = false, no_svg = false;
  double fraction = 0.01;

  auto* synth = app.add_subcommand("synth", "Write synthetic scene triples and a manifest");
  add_common(synth, common, "Output directory (default synth_out)");

  auto* train_cmd = app.add_subcommand("train", "Train from a manifest; writes checkpoints and history.csv");
  add_common(train_cmd, common, "Output directory (default train_out)");
  train_cmd->add_option("--manifest", manifest, "Dataset manifest from synth");
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train_cmd->add_option("--checkpoint-every", checkpoint_every, "Also save a checkpoint every N steps");
  train_cmd->add_flag("--init-only", init_only, "Write the freshly initialised model and exit");

  auto* eval = app.add_subcommand("eval", "Metrics of a checkpoint (and bicubic) on every scene");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--manifest", manifest, "Dataset manifest")->required();
  std::string eval_out;
  eval->add_option("--out", eval_out, "Also write the table to this CSV file");

  auto* fuse = app.add_subcommand("fuse", "Fuse one LR-HSI / HR-MSI pair into an HR-HSI cube");
  fuse->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  fuse->add_option("--lr", lr, "LR-HSI cube")->required();
  fuse->add_option("--msi", msi, "HR-MSI cube")->required();
  std::string fuse_out;
  fuse->add_option("--out", fuse_out, "Output cube")->required();

  auto* bench = app.add_subcommand("bench", "Attention scaling run and model FLOP counts");
  add_common(bench, common, "Output directory (default bench_out)");
  bench->add_flag("--no-svg", no_svg, "Skip the SVG plot");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  add_common(grad, common, "Unused");
  grad->add_option("--fraction", fraction, "Fraction of model parameters checked");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : exit_code(ErrorKind::Usage);
  }

  try {
    if (*synth) return run_synth(common);
    if (*train_cmd) return run_train(common, manifest, resume, checkpoint_every, init_only);
    if (*eval) return run_eval(checkpoint, manifest, eval_out);
    if (*fuse) return run_fuse(checkpoint, lr, msi, fuse_out);
    if (*bench) return run_bench(common, !no_svg);
    if (*grad) return run_gradcheck(common, fraction);
  } catch (const Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return kExitInternal;
  }
  return kExitInternal;
}
