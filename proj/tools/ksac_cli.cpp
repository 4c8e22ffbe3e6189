#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "ksac/autograd.hpp"
#include "ksac/errors.hpp"
#include "ksac/gradcheck.hpp"
#include "ksac/kv_text.hpp"
#include "ksac/param_ledger.hpp"
#include "ksac/pnm.hpp"
#include "ksac/random.hpp"
#include "ksac/run_config.hpp"
#include "ksac/tensor_ops.hpp"

namespace fs = std::filesystem;
using namespace ksac;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flags that map onto RunConfig keys, plus subcommand-local extras.
struct Flags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::map<std::string, bool> switches;
  std::map<std::string, CLI::Option*> switch_options;
  std::string config_path;

  void value(CLI::App* app, const std::string& key, const std::string& help) {
    options[key] = app->add_option("--" + key, values[key], help);
  }
  void flag(CLI::App* app, const std::string& key, const std::string& help) {
    switch_options[key] = app->add_flag("--" + key, switches[key], help);
  }
  bool given(const std::string& key) const {
    auto it = options.find(key);
    return it != options.end() && it->second->count() > 0;
  }
  std::string get(const std::string& key, const std::string& fallback) const {
    return given(key) ? values.at(key) : fallback;
  }
};

const std::map<std::string, std::string> kHelp{
    {"eval-count", "number of evaluation scenes"},
    {"iterations", "SGD iterations"},
    {"batch-size", "scenes per mini-batch (at least 2)"},
    {"lr", "learning rate"},
    {"momentum", "SGD momentum"},
    {"eval-every", "evaluate every N iterations, 0 to disable"},
    {"crop", "square training crop side"},
    {"strategy", "single, flip, ms or ms+flip"},
    {"scales", "comma-separated multi-scale factors"},
    {"checkpoint-out", "checkpoint stem; writes <stem>.ksac and <stem>.manifest"},
    {"checkpoint-in", "checkpoint stem to load"},
    {"out-dir", "directory for logs and reports"},
    {"target", "model, pyramid or conv2d"},
    {"tolerance", "maximum relative error"},
    {"epsilon", "central-difference step"},
    {"samples", "scalars checked per run"},
    {"input-size", "square input side"},
    {"input", "zero, scene:<seed> or a PPM path"},
    {"branch", "all or a rate index"},
    {"scene-size", "synthetic scene height and width"},
    {"max-shapes", "maximum shapes per scene"},
};

void add_model_flags(CLI::App* app, Flags& f) {
  f.value(app, "head", "head kind: ksac or aspp");
  f.value(app, "rates", "comma-separated atrous rates, e.g. 6,12,18");
  f.value(app, "os", "output stride: 8 or 16");
  f.flag(app, "decoder", "add the OS-4 decoder");
  f.value(app, "classes", "number of classes");
  f.value(app, "cin", "channels entering the head");
  f.value(app, "cout", "head output channels");
  f.value(app, "seed", "random seed");
}

void add_data_flags(CLI::App* app, Flags& f) {
  f.value(app, "scene-size", "synthetic scene height and width");
  f.value(app, "max-shapes", "maximum shapes per scene");
  f.value(app, "count", "number of scenes");
  f.flag(app, "symmetric", "mirror scenes so they are left-right symmetric");
  f.value(app, "manifest", "dataset manifest (seed,H,W per line)");
  f.value(app, "threads", "worker threads");
}

/// Config file first, then every flag given on the command line.
RunConfig resolve(const std::string& subcommand, const Flags& f) {
  RunConfig cfg = f.config_path.empty() ? RunConfig{} : RunConfig::from_text(read_text_file(f.config_path));
  cfg.subcommand = subcommand;
  for (const auto& [key, opt] : f.options) {
    if (opt->count() > 0 && key != "format" && key != "target" && key != "tolerance" && key != "epsilon" &&
        key != "samples" && key != "input-size") {
      cfg.set(key, f.values.at(key));
    }
  }
  for (const auto& [key, opt] : f.switch_options) {
    if (opt->count() == 0) continue;
    if (key == "no-augment") cfg.augment = false;
    else cfg.set(key, "true");
  }
  return cfg;
}

std::vector<SceneRecord> dataset_records(const RunConfig& cfg, std::uint64_t stream, std::int64_t count) {
  if (!cfg.manifest.empty()) return parse_manifest(read_text_file(cfg.manifest));
  return make_records(derive_seed(cfg.seed, stream), count, cfg.scene_size, cfg.scene_size);
}

std::vector<SceneSample> load_scenes(const RunConfig& cfg, const std::vector<SceneRecord>& records) {
  std::vector<SceneSample> scenes = generate_scenes(records, static_cast<int>(cfg.max_shapes), cfg.threads);
  if (cfg.symmetric) {
    for (SceneSample& s : scenes) s = mirror_symmetrize(s);
  }
  return scenes;
}

std::unique_ptr<Model> model_for(const RunConfig& cfg) {
  if (!cfg.checkpoint_in.empty()) return load_model(cfg.checkpoint_in);
  return build_model(cfg.model_config());
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string format_iou(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

std::string eval_report(const EvalResult& r, const std::string& strategy) {
  std::ostringstream os;
  os << "strategy=" << strategy << '\n';
  for (std::size_t k = 0; k < r.iou.size(); ++k) os << "iou_class" << k << '=' << format_iou(r.iou[k]) << '\n';
  os << "miou=" << format_iou(r.miou) << '\n' << "confusion=";
  for (std::int64_t g = 0; g < r.confusion.classes(); ++g)
    for (std::int64_t p = 0; p < r.confusion.classes(); ++p)
      os << r.confusion.at(g, p) << (g + 1 == r.confusion.classes() && p + 1 == r.confusion.classes() ? "\n" : ",");
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg) {
  ensure_dir(cfg.out_dir);
  // The seed is used directly here so a manifest line regenerates its scene.
  const auto recs = cfg.manifest.empty() ? make_records(cfg.seed, cfg.count, cfg.scene_size, cfg.scene_size)
                                         : parse_manifest(read_text_file(cfg.manifest));
  const auto scenes = load_scenes(cfg, recs);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "scene_%04zu", i);
    write_ppm(cfg.out_dir + "/" + stem + ".ppm", scenes[i].image);
    write_pgm(cfg.out_dir + "/" + stem + ".pgm", scenes[i].labels);
  }
  write_text_file(cfg.out_dir + "/manifest.txt", format_manifest(recs));
  std::cout << "wrote " << scenes.size() << " scenes to " << cfg.out_dir << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
  const ModelConfig mc = cfg.model_config();
  const TrainConfig tc = cfg.train_config();
  const EvalOptions eo = cfg.eval_options();
  const auto train_set = load_scenes(cfg, dataset_records(cfg, 0, cfg.count));
  std::vector<SceneSample> eval_set;
  if (cfg.eval_count > 0) {
    RunConfig ecfg = cfg;
    ecfg.manifest.clear();
    eval_set = load_scenes(ecfg, dataset_records(ecfg, 1, cfg.eval_count));
  }
  auto model = build_model(mc);
  const auto start = std::chrono::steady_clock::now();
  const TrainLog log = train(*model, train_set, eval_set, tc, eo);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  ensure_dir(cfg.out_dir);
  write_text_file(cfg.out_dir + "/train_log.csv", log.to_csv());
  if (!cfg.checkpoint_out.empty()) {
    save_model(*model, cfg.checkpoint_out);
    if (log.best_miou) {
      auto best = build_model(mc);
      best->load_state(log.best_state);
      save_model(*best, cfg.checkpoint_out + ".best");
    }
  }
  std::cout << "iterations=" << tc.max_iterations << '\n';
  if (!log.rows.empty()) std::cout << "final_loss=" << log.rows.back().loss << '\n';
  if (log.best_miou) std::cout << "best_miou=" << *log.best_miou << " at iteration " << log.best_iteration << '\n';
  std::cerr << "train time " << seconds << " s\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg) {
  auto model = model_for(cfg);
  const std::int64_t count = cfg.eval_count > 0 ? cfg.eval_count : cfg.count;
  const auto samples = load_scenes(cfg, dataset_records(cfg, 1, count));
  const EvalOptions eo = cfg.eval_options();
  const EvalResult r = evaluate(*model, samples, eo);
  const std::string report = eval_report(r, to_string(eo.strategy));
  std::cout << report;
  if (cfg.out_dir != ".") {
    ensure_dir(cfg.out_dir);
    write_text_file(cfg.out_dir + "/eval_report.txt", report);
  }
  return kExitOk;
}

int cmd_count_params(const RunConfig& cfg, const Flags& f) {
  auto model = build_model(cfg.model_config());
  const ParamReport report = count_params(*model);
  const std::string format = f.get("format", "both");
  if (format != "table" && format != "machine" && format != "both") throw UsageError("--format: table, machine or both");
  if (format != "machine") {
    std::cout << report.to_table();
    std::printf("savings vs ASPP (N=%lld, M = 2*C_in*C_out): %.4f\n", static_cast<long long>(report.branches),
                savings_report(report.c_in, report.c_out, report.branches));
    const std::int64_t side = parse_int("input-size", f.get("input-size", "512"));
    std::cout << "\nMACs for input (1,3," << side << ',' << side << ")\n"
              << flops_estimate(*model, {1, 3, side, side}).to_table();
  }
  if (format == "both") std::cout << '\n';
  if (format != "table") std::cout << report.to_machine();
  return report.formula_check() ? kExitOk : kExitRuntime;
}

int cmd_gradcheck(const RunConfig& cfg, const Flags& f) {
  const std::string target = f.get("target", "model");
  GradcheckOptions opts;
  opts.tolerance = parse_real("tolerance", f.get("tolerance", "1e-4"));
  opts.epsilon = parse_real("epsilon", f.get("epsilon", "1e-5"));
  opts.max_samples = parse_int("samples", f.get("samples", "200"));
  opts.seed = cfg.seed;
  const std::int64_t side = parse_int("input-size", f.get("input-size", "16"));
  auto weighted = [&](const Tensor& out) {
    return sum_all(mul(out, Tensor(out.shape(), fill::Uniform{-1, 1, derive_seed(cfg.seed, 7)})));
  };

  GradcheckReport report;
  if (target == "model") {
    auto model = build_model(cfg.model_config());
    const Tensor x(Shape{1, 3, side, side}, fill::Uniform{0, 1, derive_seed(cfg.seed, 1)});
    std::vector<GradcheckParam> params;
    for (const ParamRef& p : model->parameters())
      if (p.trainable) params.push_back({p.name, p.tensor});
    report = gradcheck([&] { return weighted(model->forward(x, Mode::eval)); }, params, opts);
  } else if (target == "pyramid") {
    KsacHead head(cfg.cin, cfg.cout, cfg.rates, cfg.seed);
    const Tensor t = Tensor(Shape{1, cfg.cin, side, side}, fill::Uniform{-1, 1, derive_seed(cfg.seed, 1)})
                         .set_requires_grad(true);
    report = gradcheck([&] { return weighted(ksac_pyramid(t, head, Mode::eval)); },
                       {{"input", t}, {"head.shared_kernel", head.shared_kernel}}, opts);
  } else if (target == "conv2d") {
    const ConvSpec spec{.in_channels = cfg.cin, .out_channels = cfg.cout, .rate = cfg.rates.front()};
    const Tensor x = Tensor(Shape{1, cfg.cin, side, side}, fill::Uniform{-1, 1, derive_seed(cfg.seed, 1)})
                         .set_requires_grad(true);
    const Tensor k = Tensor(spec.kernel_shape(), fill::Uniform{-1, 1, derive_seed(cfg.seed, 2)})
                         .set_requires_grad(true);
    report = gradcheck([&] { return weighted(conv2d(x, k, std::nullopt, spec)); }, {{"input", x}, {"kernel", k}},
                       opts);
  } else {
    throw UsageError("--target must be model, pyramid or conv2d");
  }
  std::cout << report.summary() << '\n';
  return report.passed ? kExitOk : kExitRuntime;
}

Tensor feature_input(const RunConfig& cfg, Model& model) {
  const std::int64_t c_in = model.config().c_in;
  if (cfg.input == "zero" || cfg.input.empty()) {
    const std::int64_t side = std::max<std::int64_t>(1, (cfg.scene_size + model.config().output_stride - 1) /
                                                            model.config().output_stride);
    return Tensor::zeros({1, c_in, side, side});
  }
  Tensor image;
  if (cfg.input.starts_with("scene:")) {
    const auto seed = static_cast<std::uint64_t>(parse_int("input", cfg.input.substr(6)));
    SceneSample s = generate_scene(seed, cfg.scene_size, cfg.scene_size, static_cast<int>(cfg.max_shapes));
    image = (cfg.symmetric ? mirror_symmetrize(s) : s).image;
  } else {
    image = read_ppm(cfg.input);
  }
  NoGradGuard guard;
  return model.backbone().forward(image, Mode::eval).features;
}

int cmd_export_features(const RunConfig& cfg) {
  auto model = model_for(cfg);
  SegHead& head = model->head();
  const auto& rates = head.rates();
  std::vector<std::size_t> selected;
  if (cfg.branch == "all") {
    for (std::size_t i = 0; i < rates.size(); ++i) selected.push_back(i);
  } else {
    std::int64_t idx = -1;
    try {
      idx = parse_int("branch", cfg.branch);
    } catch (const ConfigError&) {
      throw UsageError("--branch must be 'all' or a rate index");
    }
    if (idx < 0 || idx >= static_cast<std::int64_t>(rates.size())) {
      throw UsageError("--branch " + cfg.branch + " out of range [0," + std::to_string(rates.size()) + ")");
    }
    selected.push_back(static_cast<std::size_t>(idx));
  }
  const Tensor t = feature_input(cfg, *model);
  std::vector<Tensor> branches;
  {
    NoGradGuard guard;
    branches = head.rate_branches(t, Mode::eval);
  }
  ensure_dir(cfg.out_dir);
  std::ostringstream index;
  index << "# file,rate,channel,min,max\n";
  const std::int64_t h = t.shape().h, w = t.shape().w;
  for (std::size_t bi : selected) {
    const Tensor& b = branches[bi];
    const std::string dir = "rate_" + std::to_string(rates[bi]);
    ensure_dir(cfg.out_dir + "/" + dir);
    for (std::int64_t c = 0; c < b.shape().c; ++c) {
      const Real* plane = b.data().data() + c * h * w;
      const auto [lo, hi] = std::minmax_element(plane, plane + h * w);
      std::vector<std::uint8_t> px(static_cast<std::size_t>(h * w));
      const Real range = *hi - *lo;
      for (std::int64_t i = 0; i < h * w; ++i) {
        px[static_cast<std::size_t>(i)] =
            range > 0 ? static_cast<std::uint8_t>(std::lround((plane[i] - *lo) / range * 255)) : 0;
      }
      char name[32];
      std::snprintf(name, sizeof name, "ch_%04lld.pgm", static_cast<long long>(c));
      const std::string rel = dir + "/" + name;
      write_pgm(cfg.out_dir + "/" + rel, h, w, px);
      char line[160];
      std::snprintf(line, sizeof line, "%s,%lld,%lld,%.9g,%.9g\n", rel.c_str(), static_cast<long long>(rates[bi]),
                    static_cast<long long>(c), static_cast<double>(*lo), static_cast<double>(*hi));
      index << line;
    }
  }
  write_text_file(cfg.out_dir + "/index.txt", index.str());
  std::cout << "exported " << selected.size() << " rate(s) x " << head.c_out() << " channels to " << cfg.out_dir
            << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KSAC and ASPP segmentation heads on synthetic scenes"};
  app.require_subcommand(1);
  std::map<std::string, Flags> flags;

  auto sub = [&](const std::string& name, const std::string& help) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--config", flags[name].config_path, "key = value config file; flags override it");
    return s;
  };

  CLI::App* train_cmd = sub("train", "train a model on synthetic scenes");
  add_model_flags(train_cmd, flags["train"]);
  add_data_flags(train_cmd, flags["train"]);
  for (const char* k : {"eval-count", "iterations", "batch-size", "lr", "momentum", "eval-every", "crop", "strategy",
                        "scales", "checkpoint-out", "out-dir"})
    flags["train"].value(train_cmd, k, kHelp.at(k));
  flags["train"].flag(train_cmd, "no-augment", "disable flip/scale/crop augmentation");

  CLI::App* eval_cmd = sub("eval", "evaluate a checkpoint");
  add_model_flags(eval_cmd, flags["eval"]);
  add_data_flags(eval_cmd, flags["eval"]);
  for (const char* k : {"eval-count", "checkpoint-in", "strategy", "scales", "out-dir"})
    flags["eval"].value(eval_cmd, k, kHelp.at(k));

  CLI::App* gen_cmd = sub("gen-data", "write synthetic scenes as PPM/PGM pairs");
  add_data_flags(gen_cmd, flags["gen-data"]);
  flags["gen-data"].value(gen_cmd, "seed", "base seed");
  flags["gen-data"].value(gen_cmd, "out-dir", "output directory");

  CLI::App* count_cmd = sub("count-params", "parameter and MAC report");
  add_model_flags(count_cmd, flags["count-params"]);
  flags["count-params"].value(count_cmd, "format", "table, machine or both");
  flags["count-params"].value(count_cmd, "input-size", "square input side for the MAC table");

  CLI::App* grad_cmd = sub("gradcheck", "finite-difference gradient check");
  add_model_flags(grad_cmd, flags["gradcheck"]);
  for (const char* k : {"target", "tolerance", "epsilon", "samples", "input-size"})
    flags["gradcheck"].value(grad_cmd, k, kHelp.at(k));

  CLI::App* export_cmd = sub("export-features", "write per-rate feature maps as PGM tiles");
  add_model_flags(export_cmd, flags["export-features"]);
  for (const char* k : {"checkpoint-in", "input", "branch", "out-dir", "scene-size", "max-shapes"})
    flags["export-features"].value(export_cmd, k, k == std::string("out-dir") ? "directory for the feature tiles" : kHelp.at(k));
  flags["export-features"].flag(export_cmd, "symmetric", "mirror the generated scene");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    for (auto* s : app.get_subcommands()) {
      const std::string name = s->get_name();
      const Flags& f = flags[name];
      const RunConfig cfg = resolve(name, f);
      if (name == "train") return cmd_train(cfg);
      if (name == "eval") return cmd_eval(cfg);
      if (name == "gen-data") return cmd_gen_data(cfg);
      if (name == "count-params") return cmd_count_params(cfg, f);
      if (name == "gradcheck") return cmd_gradcheck(cfg, f);
      if (name == "export-features") return cmd_export_features(cfg);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
