#include "splq/error.hpp"
#include "splq/io.hpp"
#include "splq/metrics.hpp"
#include "splq/scenegen.hpp"
#include "splq/service.hpp"
#include "splq/supervision.hpp"
#include "splq/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <tbb/global_control.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

namespace fs = std::filesystem;
using namespace splq;

namespace {

std::unique_ptr<tbb::global_control> limit_threads(int threads) {
  if (threads <= 0) return nullptr;
  return std::make_unique<tbb::global_control>(tbb::global_control::max_allowed_parallelism,
                                               static_cast<std::size_t>(threads));
}

std::ofstream open_text(const fs::path &path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

SceneSpec scene_spec(const std::string &name, std::uint64_t seed) {
  if (name != "default") throw ConfigError("unknown scene spec '" + name + "' (only 'default' exists)");
  return SceneSpec::standard(seed);
}

std::string config_json(const TrainConfig &c, const std::string &source) {
  const AnchorConfig a = c.effective_anchor();
  nlohmann::ordered_json j;
  j["source"] = source;
  j["iters"] = c.total_iters;
  j["seed"] = c.seed;
  j["lr"] = {{"position", c.lr.position}, {"position_final", c.position_lr_final}, {"rotation", c.lr.rotation},
             {"log_scale", c.lr.log_scale}, {"opacity", c.lr.opacity}, {"color", c.lr.color}, {"net", c.lr.net}};
  j["w_ssim"] = c.w_ssim;
  j["grad_threshold"] = c.grad_threshold;
  j["densify"] = {{"enabled", c.densify.enabled},          {"from", c.densify.from_iter},
                  {"until", c.densify.until_iter},         {"interval", c.densify.interval},
                  {"threshold", c.densify.grad_threshold}, {"max_primitives", c.densify.max_primitives}};
  j["anchor"] = {{"lambda_hidden", a.lambda_hidden}, {"lambda_defective", a.lambda_defective},
                 {"tau", a.tau},                     {"every", a.anchor_every},
                 {"pairs", a.pairs_per_step},        {"start", a.start_iter},
                 {"l1_switch", a.l1_switch_iter},    {"hidden", a.use_hidden},
                 {"defective", a.use_defective},     {"confidence", a.use_confidence}};
  return j.dump();
}

struct TrainArgs {
  std::optional<fs::path> dataset;
  std::optional<std::string> generate;
  std::uint64_t scene_seed = 0;
  std::uint64_t seed = 0;
  std::uint64_t iters = 3000;
  std::vector<std::string> ablate;
  std::optional<double> lambda_hidden, lambda_defective, tau, grad_threshold, w_ssim, lr_net, lr_position;
  std::optional<std::uint64_t> anchor_start, l1_switch, anchor_every, max_primitives;
  std::optional<int> pairs;
  bool no_densify = false;
  fs::path out = "checkpoint.splq";
  std::optional<fs::path> log, events;
  bool quiet = false;
};

int run_generate(std::uint64_t seed, const std::string &spec_name, const fs::path &out) {
  const GeneratedScene scene = generate(scene_spec(spec_name, seed));
  save_scene(out, scene_from_generated(scene));
  std::printf("wrote %s: %zu frames, %zu primitives\n", out.string().c_str(), scene.dataset.size(),
              scene.truth.canonical.size());
  return 0;
}

int run_train(const TrainArgs &args) {
  if (!args.dataset && !args.generate) throw CLI::ValidationError("train", "either --dataset or --generate is required");

  SceneFile input;
  std::string source;
  if (args.generate) {
    input = scene_from_generated(generate(scene_spec(*args.generate, args.scene_seed)));
    source = "generate:" + *args.generate + ":" + std::to_string(args.scene_seed);
  } else {
    input = load_scene(*args.dataset);
    source = args.dataset->filename().string();
  }
  if (!input.cloud) throw ConfigError("dataset has no initial point cloud");
  const Dataset dataset = input.dataset();

  TrainConfig cfg = TrainConfig::desk_scale(args.iters);
  cfg.seed = args.seed;
  for (const auto &a : args.ablate) {
    if (a == "no_hidden") cfg.no_hidden = true;
    else if (a == "no_defective") cfg.no_defective = true;
    else if (a == "no_confidence") cfg.no_confidence = true;
    else if (a == "baseline") cfg.anchor.lambda_hidden = cfg.anchor.lambda_defective = 0.0;
  }
  if (args.lambda_hidden) cfg.anchor.lambda_hidden = *args.lambda_hidden;
  if (args.lambda_defective) cfg.anchor.lambda_defective = *args.lambda_defective;
  if (args.tau) cfg.anchor.tau = *args.tau;
  if (args.anchor_start) cfg.anchor.start_iter = *args.anchor_start;
  if (args.l1_switch) cfg.anchor.l1_switch_iter = *args.l1_switch;
  if (args.anchor_every) cfg.anchor.anchor_every = *args.anchor_every;
  if (args.pairs) cfg.anchor.pairs_per_step = *args.pairs;
  if (args.grad_threshold) cfg.grad_threshold = *args.grad_threshold;
  if (args.w_ssim) cfg.w_ssim = *args.w_ssim;
  if (args.lr_net) cfg.lr.net = *args.lr_net;
  if (args.lr_position) cfg.lr.position = *args.lr_position;
  if (args.max_primitives) cfg.densify.max_primitives = *args.max_primitives;
  if (args.no_densify) cfg.densify.enabled = false;
  cfg.record_events = args.events.has_value();
  cfg.validate();

  std::optional<std::ofstream> log;
  if (args.log) log = open_text(*args.log);
  const TrainResult result = train(dataset, *input.cloud, cfg, [&](const IterationRecord &r) {
    if (log) *log << to_json_line(r) << '\n';
    if (!args.quiet && (r.iter % 250 == 0 || r.iter == cfg.total_iters))
      std::fprintf(stderr, "iter %5llu  recon %.5f  hidden %.5f  defective %.5f  K %zu\n",
                   static_cast<unsigned long long>(r.iter), r.recon, r.hidden, r.defective, r.primitives);
  });
  if (args.events) {
    std::ofstream ev = open_text(*args.events);
    for (const auto &e : result.events) ev << to_json_line(e) << '\n';
  }

  SceneFile ckpt;
  ckpt.camera = input.camera;
  ckpt.scene_extent = input.scene_extent;
  ckpt.background = input.background;
  ckpt.cloud = result.model.canonical;
  ckpt.net = result.model.net;
  ckpt.frames = input.frames;
  for (auto &f : ckpt.frames) f.image = Image();
  ckpt.truth = input.truth;
  ckpt.config = config_json(cfg, source);
  save_scene(args.out, ckpt);
  std::printf("wrote %s: %zu primitives, %llu hidden and %llu defective anchor events\n", args.out.string().c_str(),
              result.model.canonical.size(), static_cast<unsigned long long>(result.hidden_events),
              static_cast<unsigned long long>(result.defective_events));
  return 0;
}

int run_freeze(const fs::path &checkpoint, std::optional<double> t, std::optional<std::size_t> stride,
               const fs::path &out) {
  if (t.has_value() == stride.has_value()) throw CLI::ValidationError("freeze", "give exactly one of --t and --stride");
  const SceneFile file = load_scene(checkpoint, false);
  const Model model = file.model();
  const Dataset dataset = file.dataset();
  std::vector<Pose> poses;
  for (const auto &f : dataset.frames) poses.push_back(f.pose);
  const RasterConfig raster = file.truth ? file.truth->raster : RasterConfig{};

  auto write_all = [&](double tstar, const fs::path &dir) {
    fs::create_directories(dir);
    const auto frames = freeze_frames(model, dataset.camera, poses, dataset.background, tstar, raster);
    char name[32];
    for (std::size_t n = 0; n < frames.size(); ++n) {
      std::snprintf(name, sizeof name, "frame_%04zu.png", n);
      write_png(dir / name, frames[n]);
    }
    std::printf("t*=%.6f: %zu frames in %s\n", tstar, frames.size(), dir.string().c_str());
  };
  if (t) {
    if (!(*t >= 0.0 && *t <= 1.0)) throw ArgumentError("freeze: --t must lie in [0, 1]");
    write_all(*t, out);
  } else {
    char name[32];
    for (const double tstar : freeze_timestamps(dataset, *stride)) {
      std::snprintf(name, sizeof name, "t_%.4f", tstar);
      write_all(tstar, out / name);
    }
  }
  return 0;
}

int run_eval(const fs::path &checkpoint, const std::optional<fs::path> &dataset_path, std::size_t stride,
             const fs::path &out) {
  const SceneFile ckpt = load_scene(checkpoint, false);
  SceneFile reference = dataset_path ? load_scene(*dataset_path, false) : ckpt;
  const EvalReport report =
      evaluate_freeze(ckpt.model(), reference.dataset(), reference.truth ? &*reference.truth : nullptr, stride,
                      reference.truth ? reference.truth->raster : RasterConfig{});
  fs::create_directories(out);
  open_text(out / "report.txt") << report.to_table();
  open_text(out / "report.jsonl") << report.to_jsonl();
  std::printf("%s", report.to_table().c_str());
  return 0;
}

int run_supervision(const fs::path &checkpoint, const fs::path &dataset_path, std::optional<double> threshold,
                    const fs::path &out) {
  const SceneFile ckpt = load_scene(checkpoint, false);
  const SceneFile data = load_scene(dataset_path);
  const Dataset dataset = data.dataset();
  SupervisionOptions options;
  if (data.truth) options.raster = data.truth->raster;
  if (threshold) options.threshold = *threshold;
  std::vector<std::size_t> frames(dataset.size());
  for (std::size_t n = 0; n < frames.size(); ++n) frames[n] = n;
  const SupervisionTable table = supervision_table(ckpt.model(), dataset, frames, options);
  open_text(out) << table.to_csv();
  return 0;
}

int run_serve(const std::vector<std::string> &checkpoints, const std::string &host, int port,
              const std::optional<fs::path> &static_dir) {
  std::map<std::string, fs::path> paths;
  for (const auto &spec : checkpoints) {
    const auto eq = spec.find('=');
    const std::string name = eq == std::string::npos ? "full" : spec.substr(0, eq);
    const fs::path path = eq == std::string::npos ? fs::path(spec) : fs::path(spec.substr(eq + 1));
    if (!paths.emplace(name, path).second) throw ConfigError("serve: variant '" + name + "' given twice");
  }
  const RenderService service(ServiceData::from_checkpoints(paths));
  serve(service, host, port, static_dir.value_or(fs::path()));
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Freeze-time rendering of dynamic Gaussian splatting scenes"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();

  std::uint64_t gen_seed = 0;
  std::string gen_spec = "default";
  fs::path gen_out = "scene.splq";
  auto *gen = app.add_subcommand("generate", "Render a synthetic scene to a scene file");
  gen->add_option("--seed", gen_seed, "Scene seed")->capture_default_str();
  gen->add_option("--spec", gen_spec, "Scene specification")->capture_default_str();
  gen->add_option("--out", gen_out, "Output scene file")->capture_default_str();

  TrainArgs ta;
  auto *tr = app.add_subcommand("train", "Fit a model to a dataset");
  auto *ds_opt = tr->add_option("--dataset", ta.dataset, "Scene file with frames and an initial cloud");
  tr->add_option("--generate", ta.generate, "Generate the named scene instead of loading one")->excludes(ds_opt);
  tr->add_option("--scene-seed", ta.scene_seed, "Seed of the generated scene")->capture_default_str();
  tr->add_option("--seed", ta.seed, "Training seed")->capture_default_str();
  tr->add_option("--iters", ta.iters, "Iterations")->capture_default_str();
  tr->add_option("--ablate", ta.ablate, "no_hidden, no_defective, no_confidence or baseline (repeatable)")
      ->check(CLI::IsMember({"no_hidden", "no_defective", "no_confidence", "baseline"}));
  tr->add_option("--lambda-hidden", ta.lambda_hidden, "Hidden anchoring weight [10]");
  tr->add_option("--lambda-defective", ta.lambda_defective, "Defective anchoring weight [10]");
  tr->add_option("--tau", ta.tau, "Confidence decay rate [5]");
  tr->add_option("--anchor-start", ta.anchor_start, "First anchoring iteration [iters/3]");
  tr->add_option("--l1-switch", ta.l1_switch, "Iteration where anchoring switches from L2 to L1 [2 iters/3]");
  tr->add_option("--anchor-every", ta.anchor_every, "Anchoring period in iterations [10]");
  tr->add_option("--pairs", ta.pairs, "Frame pairs per anchoring step [2]");
  tr->add_option("--grad-threshold", ta.grad_threshold, "Defective gradient threshold [1e-9]");
  tr->add_option("--w-ssim", ta.w_ssim, "D-SSIM weight in the reconstruction loss [0.2]");
  tr->add_option("--lr-net", ta.lr_net, "Deformation network learning rate [1e-4]");
  tr->add_option("--lr-position", ta.lr_position, "Initial position learning rate, times scene extent [1.6e-4]");
  tr->add_option("--max-primitives", ta.max_primitives, "Densification cap [1000]");
  tr->add_flag("--no-densify", ta.no_densify, "Disable densification and pruning");
  tr->add_option("--out", ta.out, "Checkpoint path")->capture_default_str();
  tr->add_option("--log", ta.log, "Per-iteration metrics (JSON lines)");
  tr->add_option("--events", ta.events, "Anchor events (JSON lines)");
  tr->add_flag("--quiet", ta.quiet, "No progress output");

  fs::path fr_ckpt, fr_out = "freeze";
  std::optional<double> fr_t;
  std::optional<std::size_t> fr_stride;
  auto *fr = app.add_subcommand("freeze", "Render every training pose at fixed timestamps");
  fr->add_option("checkpoint", fr_ckpt, "Checkpoint")->required();
  fr->add_option("--t", fr_t, "Freeze timestamp in [0, 1]");
  fr->add_option("--stride", fr_stride, "Freeze at every stride-th training timestamp")->check(CLI::PositiveNumber);
  fr->add_option("--out", fr_out, "Output directory")->capture_default_str();

  fs::path ev_ckpt, ev_out = "eval";
  std::optional<fs::path> ev_dataset;
  std::size_t ev_stride = 8;
  auto *ev = app.add_subcommand("eval", "Score freeze renders against ground truth");
  ev->add_option("checkpoint", ev_ckpt, "Checkpoint")->required();
  ev->add_option("--dataset", ev_dataset, "Scene file with ground truth [the checkpoint's own]");
  ev->add_option("--stride", ev_stride, "Freeze timestamp stride")->capture_default_str()->check(CLI::PositiveNumber);
  ev->add_option("--out", ev_out, "Output directory for report.txt and report.jsonl")->capture_default_str();

  fs::path sv_ckpt, sv_dataset, sv_out = "supervision.csv";
  std::optional<double> sv_threshold;
  auto *sv = app.add_subcommand("supervision", "Dump the per-frame supervision table as CSV");
  sv->add_option("checkpoint", sv_ckpt, "Checkpoint")->required();
  sv->add_option("--dataset", sv_dataset, "Scene file with the training frames")->required();
  sv->add_option("--threshold", sv_threshold, "Defective gradient threshold [1e-9]");
  sv->add_option("--out", sv_out, "CSV path")->capture_default_str();

  std::vector<std::string> se_ckpts;
  std::string se_host = "127.0.0.1";
  int se_port = 8080;
  std::optional<fs::path> se_static;
  auto *se = app.add_subcommand("serve", "HTTP rendering service (SPLQ_PORT overrides --port)");
  se->add_option("--checkpoint", se_ckpts, "variant=path, repeatable; a bare path is the 'full' variant")->required();
  se->add_option("--host", se_host, "Bind address")->capture_default_str();
  se->add_option("--port", se_port, "Port")->capture_default_str();
  se->add_option("--static", se_static, "Directory served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto control = limit_threads(threads);
    if (*gen) return run_generate(gen_seed, gen_spec, gen_out);
    if (*tr) return run_train(ta);
    if (*fr) return run_freeze(fr_ckpt, fr_t, fr_stride, fr_out);
    if (*ev) return run_eval(ev_ckpt, ev_dataset, ev_stride, ev_out);
    if (*sv) return run_supervision(sv_ckpt, sv_dataset, sv_threshold, sv_out);
    if (*se) return run_serve(se_ckpts, se_host, se_port, se_static);
  } catch (const CLI::ParseError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
