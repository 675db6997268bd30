#include "posepolicy/pipeline.hpp"
#include "posepolicy/policy.hpp"
#include "posepolicy/robustness.hpp"
#include "posepolicy/run_config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace posepolicy;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::string out;
};

RunConfig resolve_config(const Flags& flags) {
  RunConfig cfg = flags.config.empty() ? RunConfig{} : load_run_config(flags.config);
  if (flags.seed) cfg.policy.seed = *flags.seed;
  if (!flags.out.empty()) cfg.out_dir = flags.out;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_lock(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_text(dir / "run.lock", cfg.to_text());
}

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw std::runtime_error(std::string(what) + " not found: " + p.string());
}

synth::Dataset load_split(const fs::path& data, int split, int k, int image_size) {
  const fs::path dir = data / pipeline::split_name(split);
  require_exists(dir / "manifest.csv", (pipeline::split_name(split) + " split").c_str());
  auto seqs = synth::read_split(dir);
  for (const auto& s : seqs) {
    for (const auto& f : s.frames) {
      if (f.size != image_size) {
        throw std::runtime_error("image size mismatch: dataset has " + std::to_string(f.size) + ", model expects " +
                                 std::to_string(image_size));
      }
    }
  }
  return synth::build_dataset(std::move(seqs), static_cast<std::size_t>(k));
}

int cmd_gen(const Flags& flags) {
  const RunConfig cfg = resolve_config(flags);
  const fs::path out = cfg.data_path();
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!flags.force) throw std::runtime_error("output directory " + out.string() + " is not empty (use --force)");
    fs::remove_all(out);
  }
  fs::create_directories(out);
  std::size_t total_seq = 0, total_frames = 0, total_windows = 0;
  for (int split : {pipeline::kTrain, pipeline::kVal, pipeline::kTest}) {
    const auto params = split_scene(cfg, split);
    const auto scene = synth::make_scene(params);
    const auto seqs = pipeline::generate_split(cfg, split, scene);
    const fs::path dir = out / pipeline::split_name(split);
    synth::write_split(dir, seqs);
    pipeline::write_scene_params(dir / "scene.txt", params);
    std::size_t frames = 0, windows = 0;
    for (const auto& s : seqs) {
      frames += s.frames.size();
      if (s.frames.size() > static_cast<std::size_t>(cfg.policy.horizon)) {
        windows += s.frames.size() - static_cast<std::size_t>(cfg.policy.horizon);
      }
    }
    std::printf("%-5s sequences=%zu frames=%zu windows=%zu\n", pipeline::split_name(split).c_str(), seqs.size(),
                frames, windows);
    total_seq += seqs.size();
    total_frames += frames;
    total_windows += windows;
  }
  std::printf("total sequences=%zu frames=%zu windows=%zu\n", total_seq, total_frames, total_windows);
  write_lock(out, cfg);
  return 0;
}

int cmd_train(const Flags& flags) {
  const RunConfig cfg = resolve_config(flags);
  const fs::path data = cfg.data_path();
  const auto train_set = load_split(data, pipeline::kTrain, cfg.policy.horizon, cfg.policy.image_size);
  std::optional<synth::Dataset> val;
  if (fs::exists(data / "val" / "manifest.csv")) {
    val = load_split(data, pipeline::kVal, cfg.policy.horizon, cfg.policy.image_size);
  }

  const fs::path ckpt = cfg.checkpoint_path();
  const fs::path dir = ckpt.has_parent_path() ? ckpt.parent_path() : fs::path(".");
  fs::create_directories(dir);
  write_lock(dir, cfg);

  policy::PolicyModel model(cfg.policy, cfg.policy.seed);
  policy::TrainOptions opt;
  opt.validation = val ? &*val : nullptr;
  opt.validation_stride = cfg.val_stride;
  opt.on_epoch = [&](const policy::EpochStats& e, const policy::PolicyModel& m) {
    std::printf("epoch=%d loss=%.6g val_rpe_trans_mm=%.6g seconds=%.1f\n", e.epoch, e.mean_loss, e.val_rpe_trans,
                e.seconds);
    std::fflush(stdout);
    policy::save_checkpoint(dir / "last.ckpt", m);
  };
  const auto report = policy::train(model, train_set, opt);
  policy::save_checkpoint(ckpt, model);
  write_text(dir / "train_report.txt", report.to_text());
  std::printf("windows=%zu epochs=%zu best_epoch=%d checkpoint=%s\n", train_set.samples.size(),
              report.epochs.size(), report.best_epoch, ckpt.string().c_str());
  return 0;
}

int cmd_eval(const Flags& flags) {
  const RunConfig cfg = resolve_config(flags);
  const fs::path ckpt = cfg.checkpoint_path();
  require_exists(ckpt, "checkpoint");
  const fs::path data = cfg.data_path();
  const auto model = policy::load_checkpoint(ckpt);
  const int k = model.config().horizon;
  const auto test = load_split(data, pipeline::kTest, k, model.config().image_size);
  if (test.samples.empty()) throw std::runtime_error("test split has no windows");

  const fs::path out = cfg.eval_path();
  fs::create_directories(out);
  write_lock(out, cfg);

  std::optional<std::map<int, Trajectory>> eight;
  if (cfg.baseline_eight_point) {
    require_exists(data / "test" / "scene.txt", "test scene description");
    const auto scene = synth::make_scene(pipeline::read_scene_params(data / "test" / "scene.txt"));
    eight = pipeline::run_eight_point(cfg, scene, synth::Camera::ForSize(model.config().image_size), test.sequences);
  }

  for (int w : cfg.eval_w) {
    if (w > k) throw std::runtime_error("eval_w " + std::to_string(w) + " exceeds the model horizon");
    const auto results = pipeline::evaluate_methods(cfg, test, &model, eight ? &*eight : nullptr, w);
    std::vector<eval::MethodRow> rows;
    for (const auto& r : results) {
      rows.push_back(r.row);
      eval::write_records_csv(out / ("records_" + r.row.method + "_w" + std::to_string(w) + ".csv"), r.records);
    }
    const std::string table = eval::format_table(rows, w);
    write_text(out / ("report_w" + std::to_string(w) + ".txt"), table);
    std::fputs(table.c_str(), stdout);

    std::vector<synth::Sequence> seqs(test.sequences.begin(), test.sequences.end());
    const auto scores = robust::score_windows(seqs, w, static_cast<std::size_t>(k), cfg.eval_stride);
    robust::write_scores_csv(out / ("scores_w" + std::to_string(w) + ".csv"), scores);
  }
  return 0;
}

int cmd_stratify(const Flags& flags) {
  const RunConfig cfg = resolve_config(flags);
  const std::string tag = "_w" + std::to_string(cfg.stratify_w) + ".csv";
  const fs::path records_path = cfg.eval_path() / ("records_" + cfg.stratify_method + tag);
  const fs::path scores_path = cfg.eval_path() / ("scores" + tag);
  require_exists(records_path, "records file");
  require_exists(scores_path, "scores file");
  const auto records = eval::read_records_csv(records_path);
  const auto scores = robust::read_scores_csv(scores_path);
  const auto report = robust::stratify(scores, records);

  const fs::path out = cfg.stratify_path();
  fs::create_directories(out);
  write_lock(out, cfg);
  const std::string text = robust::format_report(report, cfg.stratify_method, cfg.stratify_w);
  write_text(out / "report.txt", text);
  std::fputs(text.c_str(), stdout);

  // Plot data: score vs error scatter per artifact, and per-bin bars.
  std::map<std::tuple<int, std::size_t, int>, const robust::WindowScore*> by_key;
  for (const auto& s : scores) by_key[{s.sequence, s.t, s.w}] = &s;
  std::ofstream scatter(out / "scatter.dat");
  scatter.precision(10);
  scatter << "# sequence t s_texture s_dillum trans_err_mm\n";
  for (const auto& r : records) {
    const auto* s = by_key.at({r.sequence, r.t, r.w});
    scatter << r.sequence << ' ' << r.t << ' ' << s->s_texture << ' ' << s->s_dillum << ' ' << r.trans_err_mm << '\n';
  }
  std::ofstream bars(out / "bins.dat");
  bars.precision(10);
  bars << "# artifact bin count mean_mm std_mm threshold\n";
  for (const auto* a : {&report.texture, &report.illumination}) {
    bars << a->name << " low " << a->low.count << ' ' << a->low.mean << ' ' << a->low.std << ' ' << a->p25 << '\n';
    bars << a->name << " high " << a->high.count << ' ' << a->high.mean << ' ' << a->high.std << ' ' << a->p75
         << '\n';
  }
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose recovery policy: data generation, training, evaluation and robustness reports"};
  app.require_subcommand(1);
  Flags flags;
  std::uint64_t seed = 0;
  for (const char* name : {"gen", "train", "eval", "stratify"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", flags.config, "run configuration file (key = value lines)");
    sub->add_option("--seed", seed, "overrides the training/sampling seed");
    sub->add_flag("--force", flags.force, "overwrite a non-empty output directory");
    sub->add_option("--out", flags.out, "output root directory");
  }
  app.get_subcommand("gen")->description("render seeded train/val/test splits");
  app.get_subcommand("train")->description("train the policy and write a checkpoint");
  app.get_subcommand("eval")->description("window RPE for the policy and baselines");
  app.get_subcommand("stratify")->description("texture / illumination stratified RPE");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
    return 2;
  }

  if (app.get_subcommands().front()->count("--seed") > 0) flags.seed = seed;
  try {
    if (app.got_subcommand("gen")) return cmd_gen(flags);
    if (app.got_subcommand("train")) return cmd_train(flags);
    if (app.got_subcommand("eval")) return cmd_eval(flags);
    return cmd_stratify(flags);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
    return 1;
  }
}
