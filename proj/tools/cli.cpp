// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hdriqa/error.hpp"
#include "hdriqa/eval.hpp"
#include "hdriqa/gradcheck.hpp"
#include "hdriqa/io.hpp"
#include "hdriqa/maps.hpp"
#include "hdriqa/model.hpp"
#include "hdriqa/synth.hpp"
#include "hdriqa/trainer.hpp"

namespace hdriqa::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Options bound to variables, settable from flags or from a JSON config file.
// Flags win over the file; every value is echoed after resolution.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON file with option values (flags override it)");
  }

  template <typename T>
  CLI::Option* add(const std::string& key, T& field, const std::string& desc) {
    CLI::Option* opt = app_->add_option(flag_name(key), field, desc)->capture_default_str();
    items_.push_back({key, opt, [&field](const json& j) { field = j.get<T>(); },
                      [&field] { return json(field); }});
    return opt;
  }

  CLI::Option* flag(const std::string& key, bool& field, const std::string& desc) {
    CLI::Option* opt = app_->add_flag(flag_name(key), field, desc);
    items_.push_back({key, opt, [&field](const json& j) { field = j.get<bool>(); },
                      [&field] { return json(field); }});
    return opt;
  }

  // Applies the config file under the flags actually given.
  void resolve() {
    if (config_path_.empty()) return;
    std::ifstream in(config_path_);
    if (!in) throw IoError("cannot open config " + config_path_);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw FormatError(config_path_ + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError(config_path_ + ": config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      auto it = std::find_if(items_.begin(), items_.end(), [&](const Item& i) { return i.key == key; });
      if (it == items_.end()) throw UsageError(config_path_ + ": unknown option '" + key + "'");
      if (it->opt->count() > 0) continue;
      try {
        it->set(value);
      } catch (const json::exception& e) {
        throw UsageError(config_path_ + ": bad value for '" + key + "': " + e.what());
      }
    }
  }

  json echo() const {
    json j;
    for (const auto& i : items_) j[i.key] = i.get();
    return j;
  }

 private:
  struct Item {
    std::string key;
    CLI::Option* opt;
    std::function<void(const json&)> set;
    std::function<json()> get;
  };

  static std::string flag_name(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return "--" + key;
  }

  CLI::App* app_;
  std::string config_path_;
  std::vector<Item> items_;
};

struct ModelOpts {
  double l_peak = 4000.0;
  double d_scale = 100.0;
  double dropout = 0.25;
  bool pool_free_pnet = false;
  std::string domain = "linear";

  void bind(Options& o) {
    o.add("l_peak", l_peak, "peak luminance used to normalize E-Net inputs and targets");
    o.add("d_scale", d_scale, "DMOS scale mapping scores into tanh's range");
    o.add("dropout", dropout, "spatial dropout rate after each E-Net pool");
    o.flag("pool_free_pnet", pool_free_pnet, "drop the P-Net pools (about 10M dense weights)");
    o.add("domain", domain, "input domain: linear, pu, drago, reinhard02, reinhard05");
  }

  ModelConfig config() const {
    ModelConfig c;
    c.l_peak = l_peak;
    c.d_scale = d_scale;
    c.dropout = dropout;
    c.pnet_pool = !pool_free_pnet;
    c.domain = parse_input_domain(domain);
    c.validate();
    return c;
  }
};

struct TrainOpts {
  int epochs1 = 12;
  int epochs2 = 24;
  int batch = 64;
  int stride = 32;

  void bind(Options& o) {
    o.add("epochs1", epochs1, "stage-1 (E-Net) epochs");
    o.add("epochs2", epochs2, "stage-2 (P-Net and kappa) epochs");
    o.add("batch", batch, "mini-batch size");
    o.add("stride", stride, "training patch stride in pixels");
  }

  TrainConfig config(std::ostream* log) const {
    if (epochs1 < 0 || epochs2 < 0) throw UsageError("epochs must be non-negative");
    if (batch <= 0 || stride <= 0) throw UsageError("batch and stride must be positive");
    TrainConfig t;
    t.stage1_epochs = epochs1;
    t.stage2_epochs = epochs2;
    t.batch_size = static_cast<std::size_t>(batch);
    t.stride = stride;
    if (log) {
      t.on_epoch = [log](const EpochLog& e) {
        *log << "stage " << e.stage << " epoch " << e.epoch << " loss " << e.mean_loss << "\n" << std::flush;
      };
    }
    return t;
  }
};

PuCurve curve_for(const ModelConfig& c) { return c.domain == InputDomain::pu ? default_pu_curve() : PuCurve{}; }

void echo(std::ostream& out, const std::string& command, const json& config) {
  out << "config " << command << " " << config.dump() << "\n";
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text << "\n";
  } else {
    write_file_atomic(path, text + "\n");
  }
}

json map_json(const QualityMap& m) {
  return {{"grid_rows", m.grid_rows}, {"grid_cols", m.grid_cols}, {"patch_size", m.patch_size},
          {"stride", m.stride},       {"values", m.values}};
}

QualityMap pick_map(const ImagePrediction& p, const std::string& which) {
  if (which == "dmos") return p.qmap;
  if (which == "t") return p.tmap;
  if (which == "delta") return p.dmap;
  throw UsageError("map must be one of dmos, t, delta");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"No-reference HDR image quality assessment"};
  app.name("hdriqa");
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Options>> opts;
  std::map<CLI::App*, std::function<void()>> actions;
  std::map<CLI::App*, Options*> owner;
  auto command = [&](const std::string& name, const std::string& desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    opts.push_back(std::make_unique<Options>(sub));
    owner[sub] = opts.back().get();
    return std::make_pair(sub, opts.back().get());
  };

  // synth ---------------------------------------------------------------
  SynthConfig synth_cfg;
  std::string synth_out;
  {
    auto [sub, o] = command("synth", "generate the synthetic oracle dataset");
    o->add("out", synth_out, "output directory")->required();
    o->add("contents", synth_cfg.n_contents, "number of reference contents");
    o->add("levels", synth_cfg.levels, "severity levels per distortion");
    o->add("size", synth_cfg.size, "image side in pixels");
    o->add("peak", synth_cfg.peak, "peak luminance in cd/m^2");
    o->add("seed", synth_cfg.seed, "random seed");
    actions[sub] = [&, o = o] {
      echo(out, "synth", o->echo());
      const DatasetManifest m = synth_dataset(synth_out, synth_cfg);
      out << "wrote " << m.entries.size() << " images for " << m.content_ids().size() << " contents to "
          << (fs::path(synth_out) / "manifest.json").string() << "\n";
    };
  }

  // train ---------------------------------------------------------------
  ModelOpts train_model_opts;
  TrainOpts train_opts;
  std::string train_manifest, train_out, train_stage = "both", train_init;
  std::uint64_t train_seed = 0;
  bool train_quiet = false;
  {
    auto [sub, o] = command("train", "two-stage training on a manifest");
    o->add("manifest", train_manifest, "dataset manifest")->required();
    o->add("out", train_out, "output weight bundle")->required();
    o->add("seed", train_seed, "random seed");
    o->add("stage", train_stage, "both, 1 or 2 (2 needs --init)");
    o->add("init", train_init, "stage-1 bundle to continue from");
    o->flag("quiet", train_quiet, "no per-epoch log");
    train_model_opts.bind(*o);
    train_opts.bind(*o);
    actions[sub] = [&, o = o] {
      echo(out, "train", o->echo());
      const DatasetManifest m = load_manifest(train_manifest);
      const TrainConfig tc = train_opts.config(train_quiet ? nullptr : &out);
      ModelBundle bundle;
      if (train_stage == "both" || train_stage == "1") {
        bundle = create_bundle(train_model_opts.config(), train_seed);
      } else if (train_stage == "2") {
        if (train_init.empty()) throw UsageError("--stage 2 needs --init");
        bundle = load_bundle(train_init);
      } else {
        throw UsageError("--stage must be both, 1 or 2");
      }
      const bool s1 = train_stage != "2";
      const bool s2 = train_stage != "1";
      const TrainingSet data = build_training_set(m, bundle.config, curve_for(bundle.config), tc.stride,
                                                  s1 && tc.include_reference_pairs);
      if (s1) train_stage1(bundle, data, tc, train_seed);
      if (s2) train_stage2(bundle, data, tc, train_seed);
      save_bundle(bundle, train_out);
      out << "saved " << train_out << " k=" << bundle.k() << "\n";
    };
  }

  // predict -------------------------------------------------------------
  std::string pred_bundle, pred_image, pred_out, pred_maps;
  int pred_stride = 0;
  {
    auto [sub, o] = command("predict", "score one distorted image");
    o->add("bundle", pred_bundle, "weight bundle")->required();
    o->add("image", pred_image, "PFM or Radiance HDR image")->required();
    o->add("stride", pred_stride, "patch stride (0 = patch size)");
    o->add("out", pred_out, "JSON output path ('-' for stdout)");
    o->add("maps", pred_maps, "directory for dmos/t/delta heatmaps");
    actions[sub] = [&, o = o] {
      echo(out, "predict", o->echo());
      const ModelBundle b = load_bundle(pred_bundle);
      const ImagePrediction p = predict_image(b, read_image(pred_image), curve_for(b.config), pred_stride);
      json j;
      j["image"] = pred_image;
      j["score"] = p.score;
      j["dmos_patch"] = map_json(p.qmap);
      j["t_resist"] = map_json(p.tmap);
      j["delta_hat"] = map_json(p.dmap);
      if (!pred_maps.empty()) {
        fs::create_directories(pred_maps);
        render_heatmap(p.qmap, fs::path(pred_maps) / "dmos.ppm");
        render_heatmap(p.tmap, fs::path(pred_maps) / "t.ppm");
        render_heatmap(p.dmap, fs::path(pred_maps) / "delta.ppm");
      }
      out << "score " << p.score << "\n";
      if (!pred_out.empty()) write_text(pred_out, j.dump(2), out);
    };
  }

  // eval ----------------------------------------------------------------
  ModelOpts eval_model_opts;
  TrainOpts eval_train_opts;
  std::string eval_manifest, eval_bundle, eval_out;
  std::size_t eval_iterations = 10;
  double eval_fraction = 0.8;
  std::uint64_t eval_seed = 0;
  unsigned eval_threads = 1;
  {
    auto [sub, o] = command("eval", "metrics for a bundle, or the split protocol with retraining");
    o->add("manifest", eval_manifest, "dataset manifest")->required();
    o->add("bundle", eval_bundle, "score this bundle on every entry instead of running splits");
    o->add("iterations", eval_iterations, "train/test splits");
    o->add("train_fraction", eval_fraction, "fraction of contents on the train side");
    o->add("seed", eval_seed, "master seed for splits and training");
    o->add("threads", eval_threads, "parallel iterations");
    o->add("out", eval_out, "JSON report path");
    eval_model_opts.bind(*o);
    eval_train_opts.bind(*o);
    actions[sub] = [&, o = o] {
      echo(out, "eval", o->echo());
      const DatasetManifest m = load_manifest(eval_manifest);
      MetricsReport report;
      if (!eval_bundle.empty()) {
        const ModelBundle b = load_bundle(eval_bundle);
        const PuCurve curve = curve_for(b.config);
        std::vector<double> pred, truth;
        for (const auto& e : m.entries) {
          pred.push_back(predict_image(b, read_image(e.distorted), curve, 0).score);
          truth.push_back(e.dmos);
        }
        report = summarize({compute_metrics(pred, truth)});
      } else {
        const ModelConfig mc = eval_model_opts.config();
        const TrainConfig tc = eval_train_opts.config(nullptr);
        const Trainer trainer = [mc, tc](const DatasetManifest& train, std::uint64_t seed) -> Predictor {
          auto bundle = std::make_shared<ModelBundle>(train_model(train, mc, tc, seed));
          return [bundle](const ManifestEntry& e) {
            return predict_image(*bundle, read_image(e.distorted), curve_for(bundle->config), 0).score;
          };
        };
        const auto splits = make_splits(m, eval_fraction, eval_iterations, eval_seed);
        report = run_evaluation(trainer, m, splits, {eval_seed, eval_threads});
      }
      out << report.to_table();
      if (!eval_out.empty()) write_text(eval_out, report.to_json(), out);
    };
  }

  // heatmap -------------------------------------------------------------
  std::string heat_bundle, heat_image, heat_out, heat_map = "dmos";
  int heat_block = 0;
  {
    auto [sub, o] = command("heatmap", "render a per-patch map as a PPM heatmap");
    o->add("bundle", heat_bundle, "weight bundle")->required();
    o->add("image", heat_image, "input image")->required();
    o->add("map", heat_map, "dmos, t or delta");
    o->add("block", heat_block, "pixels per patch cell (0 = patch size)");
    o->add("out", heat_out, "output PPM")->required();
    actions[sub] = [&, o = o] {
      echo(out, "heatmap", o->echo());
      const ModelBundle b = load_bundle(heat_bundle);
      const ImagePrediction p = predict_image(b, read_image(heat_image), curve_for(b.config), 0);
      render_heatmap(pick_map(p, heat_map), heat_out, heat_block);
      out << "wrote " << heat_out << "\n";
    };
  }

  // grating -------------------------------------------------------------
  GratingSpec grating;
  std::string grating_out;
  {
    auto [sub, o] = command("grating", "write the chirped probe grating as PFM");
    o->add("out", grating_out, "output PFM")->required();
    o->add("width", grating.width, "pixels");
    o->add("height", grating.height, "pixels");
    o->add("peak", grating.peak, "maximum luminance in cd/m^2");
    o->add("f_start", grating.f_start, "cycles per pixel at the left edge");
    o->add("f_end", grating.f_end, "cycles per pixel at the right edge");
    o->add("a_min", grating.a_min, "amplitude at the bottom row");
    actions[sub] = [&, o = o] {
      echo(out, "grating", o->echo());
      write_pfm(make_grating(grating), grating_out);
      out << "wrote " << grating_out << "\n";
    };
  }

  // probe ---------------------------------------------------------------
  std::string probe_bundle, probe_image, probe_out, probe_heatmap;
  double probe_scale = 1.0;
  bool probe_oracle = false;
  {
    auto [sub, o] = command("probe", "P-Net error resistance over an image (the grating by default)");
    o->add("bundle", probe_bundle, "weight bundle")->required();
    o->add("image", probe_image, "image to probe instead of the grating");
    o->add("scale", probe_scale, "luminance scale factor applied to the grating (peak 4000 * scale)");
    o->add("out", probe_out, "JSON output path ('-' for stdout)");
    o->add("heatmap", probe_heatmap, "PPM heatmap of T");
    o->flag("oracle", probe_oracle, "also report rank correlation with the synthetic oracle T*");
    actions[sub] = [&, o = o] {
      echo(out, "probe", o->echo());
      if (!(probe_scale > 0.0)) throw UsageError("--scale must be positive");
      const ModelBundle b = load_bundle(probe_bundle);
      HdrImage img;
      if (probe_image.empty()) {
        GratingSpec g;
        g.peak *= probe_scale;
        img = make_grating(g);
      } else {
        img = luminance(read_image(probe_image));
      }
      const QualityMap t = probe_resistance(b, img);
      json j;
      j["t_resist"] = map_json(t);
      if (probe_oracle) {
        const QualityMap oracle = oracle_resistance_map(img);
        const double r = srcc(t.values, oracle.values);
        j["oracle_srcc"] = r;
        out << "oracle srcc " << r << "\n";
      }
      if (!probe_heatmap.empty()) render_heatmap(t, probe_heatmap);
      out << "mean T " << t.mean() << "\n";
      if (!probe_out.empty()) write_text(probe_out, j.dump(2), out);
    };
  }

  // gradcheck -----------------------------------------------------------
  std::uint64_t gc_seed = 0;
  std::string gc_out;
  bool gc_pool_free = false;
  std::size_t gc_entries = 24;
  {
    auto [sub, o] = command("gradcheck", "finite-difference check of every layer and the full chains");
    o->add("seed", gc_seed, "random seed");
    o->add("entries", gc_entries, "entries sampled per tensor (0 = all)");
    o->flag("pool_free_pnet", gc_pool_free, "check the pool-free P-Net");
    o->add("out", gc_out, "JSON report path ('-' for stdout)");
    actions[sub] = [&, o = o] {
      echo(out, "gradcheck", o->echo());
      ModelConfig mc;
      mc.pnet_pool = !gc_pool_free;
      nn::GradCheckOptions opt;
      opt.max_entries = gc_entries;
      const GradCheckSuite suite = run_gradcheck_suite(mc, gc_seed, opt);
      for (const auto& c : suite.cases) {
        out << (c.report.passed ? "ok   " : "FAIL ") << c.name << " max_rel_error " << c.report.max_rel_error
            << "\n";
      }
      out << "max relative error " << suite.max_rel_error << "\n";
      if (!gc_out.empty()) write_text(gc_out, suite.to_json(), out);
      if (!suite.passed) throw NumericError("gradient check exceeded tolerance");
    };
  }

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "hdriqa: usage error: " << e.what() << "\n";
    return 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    owner.at(sub)->resolve();
    actions.at(sub)();
  } catch (const Error& e) {
    err << "hdriqa: error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "hdriqa: error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace hdriqa::cli
