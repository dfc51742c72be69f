#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ckgan/io.hpp"

namespace fs = std::filesystem;
using namespace ckgan;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

fs::path resolve_out(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("CKGAN_OUT_ROOT")) return fs::path(root) / p;
  return p;
}

void print_report(const MetricsReport& r) {
  std::cout << "iter " << r.iteration << "  modes " << r.modes_captured << "  hq "
            << csv_number(r.hq_percent) << "%  kl " << csv_number(r.kl) << "  loss_d "
            << csv_number(r.loss_d) << "  loss_g " << csv_number(r.loss_g) << "  xi [";
  for (int i = 0; i < 6; ++i) std::cout << (i ? " " : "") << csv_number(r.xi[i]);
  std::cout << "]  " << csv_number(r.wall_seconds) << "s\n";
}

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
  std::string resume_path;
  long seed = -1;
  bool quiet = false;
};

int run_train(const TrainArgs& args) {
  RunConfig cfg;
  try {
    cfg = load_run_config(args.config_path);
    if (args.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(args.seed);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  fs::path out = resolve_out(cfg.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);

  TrainState resumed;
  TrainState* resume = nullptr;
  if (!args.resume_path.empty()) {
    try {
      LoadedCheckpoint lc = load_checkpoint(args.resume_path);
      // resuming may extend the run and redirect output; everything else
      // must match the recorded configuration
      RunConfig normalized = lc.config;
      normalized.train.iterations = cfg.train.iterations;
      normalized.out_dir = cfg.out_dir;
      if (resolved_config_json(normalized) != resolved_config_json(cfg)) {
        std::cerr << "checkpoint configuration does not match the requested run\n";
        return kExitConfig;
      }
      resumed = std::move(lc.state);
      resume = &resumed;
    } catch (const std::exception& e) {
      std::cerr << "checkpoint error: " << e.what() << "\n";
      return kExitConfig;
    }
  }

  {
    std::ofstream rc(out / "resolved_config.json", std::ios::trunc | std::ios::binary);
    rc << resolved_config_json(cfg);
  }

  std::ofstream metrics(out / "metrics.csv",
                        resume ? std::ios::app | std::ios::binary
                               : std::ios::trunc | std::ios::binary);
  if (!resume) metrics << metrics_csv_header();

  TrainHooks hooks;
  hooks.on_report = [&](const MetricsReport& r) {
    metrics << metrics_csv_row(r);
    metrics.flush();
    if (!args.quiet) print_report(r);
  };
  hooks.on_checkpoint = [&](const TrainState& st, long iter) {
    fs::path p = (iter == cfg.train.iterations)
                     ? out / "final.ckpt"
                     : out / ("ckpt_" + std::to_string(iter) + ".ckpt");
    save_checkpoint(p, cfg, st);
  };

  try {
    TrainOutput result = train(cfg.train, hooks, resume);
    if (cfg.train.iterations == 0) save_checkpoint(out / "final.ckpt", cfg, result.state);
    Rng sr = Rng::stream(cfg.train.seed, "final-samples");
    Tensor samples = generate_samples(cfg.train, result.state,
                                      static_cast<std::size_t>(cfg.train.eval_samples), sr);
    write_points_csv(out / "samples.csv", samples);
  } catch (const TrainError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& dataset_override, long n,
             long seed, bool use_real, const std::string& out_path) {
  try {
    RunConfig cfg;
    TrainState state;
    if (use_real && ckpt_path.empty()) {
      cfg.train.dataset = dataset_from_name(dataset_override.empty() ? "ring" : dataset_override);
    } else {
      LoadedCheckpoint lc = load_checkpoint(ckpt_path);
      cfg = std::move(lc.config);
      state = std::move(lc.state);
      if (!dataset_override.empty()) cfg.train.dataset = dataset_from_name(dataset_override);
    }
    if (n <= 0) throw ConfigError("--n must be at least 1");
    cfg.train.eval_samples = n;
    if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);

    MetricsReport r;
    if (use_real) {
      Rng rr = Rng::stream(cfg.train.seed, "data");
      Tensor real = sample_dataset(cfg.train.dataset, static_cast<std::size_t>(n), rr);
      Rng er = Rng::stream(cfg.train.seed, "eval-ref");
      Tensor ref = sample_dataset(cfg.train.dataset, static_cast<std::size_t>(n), er);
      r.iteration = 0;
      r.modes_captured = modes_captured(cfg.train.dataset, real);
      r.hq_percent = high_quality_percent(cfg.train.dataset, real);
      r.kl = kl_modes(cfg.train.dataset, real, ref);
    } else {
      r = evaluate_metrics(cfg.train, state, state.iteration);
    }
    std::cout << metrics_csv_header() << metrics_csv_row(r);
    if (!out_path.empty()) {
      fs::path out = resolve_out(out_path);
      std::ofstream os(out, std::ios::trunc | std::ios::binary);
      os << metrics_csv_header() << metrics_csv_row(r);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_sample(const std::string& ckpt_path, long n, long seed, const std::string& out_path) {
  try {
    LoadedCheckpoint lc = load_checkpoint(ckpt_path);
    if (n <= 0) throw ConfigError("--n must be at least 1");
    std::uint64_t s = seed >= 0 ? static_cast<std::uint64_t>(seed) : lc.config.train.seed;
    Rng rng = Rng::stream(s, "sample");
    Tensor pts = generate_samples(lc.config.train, lc.state, static_cast<std::size_t>(n), rng);
    write_points_csv(resolve_out(out_path), pts);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int run_data_export(const std::string& dataset, long n, long seed, const std::string& out_path) {
  try {
    DatasetKind kind = dataset_from_name(dataset);
    if (n <= 0) throw ConfigError("--n must be at least 1");
    Rng rng = Rng::stream(static_cast<std::uint64_t>(seed < 0 ? 0 : seed), "data");
    Tensor pts = sample_dataset(kind, static_cast<std::size_t>(n), rng);
    write_points_csv(resolve_out(out_path), pts);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

struct SweepArgs {
  std::string config_path;
  std::vector<std::string> params;  // key=v1,v2,...
  long seeds = 1;
  std::string out_dir = "sweep";
  bool quiet = false;
};

int run_sweep(const SweepArgs& args) {
  RunConfig base;
  try {
    base = load_run_config(args.config_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  struct Axis {
    std::string key;
    std::vector<std::string> values;
  };
  std::vector<Axis> axes;
  for (const auto& p : args.params) {
    auto eq = p.find('=');
    if (eq == std::string::npos) {
      std::cerr << "bad --param '" << p << "' (expected key=v1,v2,...)\n";
      return kExitConfig;
    }
    Axis ax;
    ax.key = p.substr(0, eq);
    std::string rest = p.substr(eq + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      auto comma = rest.find(',', pos);
      if (comma == std::string::npos) comma = rest.size();
      ax.values.push_back(rest.substr(pos, comma - pos));
      pos = comma + 1;
    }
    if (ax.values.empty()) {
      std::cerr << "empty value list for '" << ax.key << "'\n";
      return kExitConfig;
    }
    axes.push_back(std::move(ax));
  }

  std::vector<std::vector<std::string>> cells{{}};
  for (const auto& ax : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& cell : cells)
      for (const auto& v : ax.values) {
        auto c = cell;
        c.push_back(v);
        next.push_back(std::move(c));
      }
    cells = std::move(next);
  }

  fs::path out = resolve_out(args.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  std::ofstream csv(out / "sweep.csv", std::ios::trunc | std::ios::binary);
  for (const auto& ax : axes) csv << ax.key << ',';
  csv << "seed,status,modes,hq,kl,loss_d,loss_g,seconds\n";

  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    double sum_modes = 0, sum_hq = 0, sum_kl = 0, sum_secs = 0;
    long ok_runs = 0;
    for (long s = 0; s < args.seeds; ++s) {
      RunConfig cfg = base;
      std::string status = "ok";
      MetricsReport last{};
      try {
        for (std::size_t ai = 0; ai < axes.size(); ++ai)
          apply_override(cfg, axes[ai].key, cells[ci][ai]);
        cfg.train.seed = base.train.seed + static_cast<std::uint64_t>(s);
        TrainOutput res = train(cfg.train);
        last = res.reports.back();
      } catch (const std::exception& e) {
        status = "failed";
        if (!args.quiet) std::cerr << "cell failed: " << e.what() << "\n";
      }
      for (std::size_t ai = 0; ai < axes.size(); ++ai) csv << cells[ci][ai] << ',';
      csv << cfg.train.seed << ',' << status << ',' << last.modes_captured << ','
          << csv_number(last.hq_percent) << ',' << csv_number(last.kl) << ','
          << csv_number(last.loss_d) << ',' << csv_number(last.loss_g) << ','
          << csv_number(last.wall_seconds) << '\n';
      csv.flush();
      if (status == "ok") {
        ++ok_runs;
        sum_modes += last.modes_captured;
        sum_hq += last.hq_percent;
        sum_kl += last.kl;
        sum_secs += last.wall_seconds;
      }
    }
    if (args.seeds > 1 && ok_runs > 0) {
      for (std::size_t ai = 0; ai < axes.size(); ++ai) csv << cells[ci][ai] << ',';
      csv << "mean,ok," << csv_number(sum_modes / ok_runs) << ','
          << csv_number(sum_hq / ok_runs) << ',' << csv_number(sum_kl / ok_runs) << ",,,"
          << csv_number(sum_secs / ok_runs) << '\n';
      csv.flush();
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"characteristic-kernel IPM GAN for 2D mixture benchmarks"};
  app.require_subcommand(1);

  TrainArgs targs;
  auto* t = app.add_subcommand("train", "train a model from a JSON config");
  t->add_option("--config", targs.config_path, "run configuration file")->required();
  t->add_option("--seed", targs.seed, "override the config seed");
  t->add_option("--out", targs.out_dir, "output directory (overrides config out_dir)");
  t->add_option("--checkpoint", targs.resume_path, "resume from a checkpoint");
  t->add_flag("--quiet", targs.quiet, "suppress per-report console output");

  std::string e_ckpt, e_dataset, e_out;
  long e_n = 2500, e_seed = -1;
  bool e_real = false;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint (or the real data with --real)");
  e->add_option("--checkpoint", e_ckpt, "checkpoint file");
  e->add_option("--dataset", e_dataset, "dataset kind: ring, grid, smile");
  e->add_option("--n", e_n, "number of samples to evaluate");
  e->add_option("--seed", e_seed, "evaluation seed");
  e->add_option("--out", e_out, "also write the report CSV here");
  e->add_flag("--real", e_real, "evaluate fresh real data instead of generated samples");

  std::string s_ckpt, s_out = "samples.csv";
  long s_n = 2500, s_seed = -1;
  auto* sc = app.add_subcommand("sample", "write generator samples as CSV");
  sc->add_option("--checkpoint", s_ckpt, "checkpoint file")->required();
  sc->add_option("--n", s_n, "number of samples");
  sc->add_option("--seed", s_seed, "sampling seed");
  sc->add_option("--out", s_out, "output CSV path");

  SweepArgs swargs;
  auto* sw = app.add_subcommand("sweep", "grid of train+eval runs");
  sw->add_option("--config", swargs.config_path, "base configuration")->required();
  sw->add_option("--param", swargs.params, "grid axis key=v1,v2,... (repeatable)");
  sw->add_option("--seeds", swargs.seeds, "seed repetitions per cell");
  sw->add_option("--out", swargs.out_dir, "output directory");
  sw->add_flag("--quiet", swargs.quiet, "suppress failure messages");

  auto* d = app.add_subcommand("data", "dataset utilities");
  std::string d_dataset = "ring", d_out = "data.csv";
  long d_n = 2500, d_seed = 0;
  auto* de = d->add_subcommand("export", "write dataset samples as CSV");
  de->add_option("--dataset", d_dataset, "ring, grid, smile")->required();
  de->add_option("--n", d_n, "number of points");
  de->add_option("--seed", d_seed, "sampling seed");
  de->add_option("--out", d_out, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  if (t->parsed()) return run_train(targs);
  if (e->parsed()) {
    if (!e_real && e_ckpt.empty()) {
      std::cerr << "eval requires --checkpoint (or --real with --dataset)\n";
      return kExitConfig;
    }
    return run_eval(e_ckpt, e_dataset, e_n, e_seed, e_real, e_out);
  }
  if (sc->parsed()) return run_sample(s_ckpt, s_n, s_seed, s_out);
  if (sw->parsed()) return run_sweep(swargs);
  if (d->parsed() && de->parsed()) return run_data_export(d_dataset, d_n, d_seed, d_out);
  std::cerr << "no subcommand\n";
  return kExitConfig;
}
