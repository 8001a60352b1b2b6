#include "srf/evaluate.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "srf/checkpoint.hpp"
#include "srf/train.hpp"

namespace srf {

std::vector<Scene> heldout_scenes(const RunConfig& config) {
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(config.data.eval_scenes));
  for (int i = 0; i < config.data.eval_scenes; ++i) {
    scenes.push_back(generate_scene(config.scene, config.data.eval_offset + static_cast<std::uint64_t>(i)));
  }
  return scenes;
}

namespace {

std::string scene_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%06zu", i);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  f.close();
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

LabelMap slice_labels(const LabelMap& labels, std::int64_t index) {
  LabelMap one(1, labels.h, labels.w);
  const auto n = static_cast<std::size_t>(labels.h * labels.w);
  std::copy_n(labels.values.begin() + static_cast<std::ptrdiff_t>(index) * static_cast<std::ptrdiff_t>(n), n, one.values.begin());
  return one;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes) {
  ensure_writable_dir(dir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    write_image(dir / (scene_stem(i) + ".ppm"), scenes[i].image);
    write_labels(dir / (scene_stem(i) + ".pgm"), scenes[i].labels);
  }
}

std::vector<Scene> read_dataset(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("dataset directory '" + dir.string() + "' not found");
  std::vector<std::filesystem::path> images;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".ppm") images.push_back(entry.path());
  }
  std::sort(images.begin(), images.end());
  std::vector<Scene> scenes;
  for (const auto& img : images) {
    auto lbl = img;
    lbl.replace_extension(".pgm");
    if (!std::filesystem::exists(lbl)) continue;
    Scene s{read_image(img), read_labels(lbl)};
    if (s.image.h != s.labels.h || s.image.w != s.labels.w) {
      throw FormatError("'" + img.string() + "' and its labels differ in size", 0);
    }
    scenes.push_back(std::move(s));
  }
  if (scenes.empty()) throw IoError("no image/label pairs in '" + dir.string() + "'");
  return scenes;
}

EvalReport evaluate(const SegNet* net, const std::vector<Scene>& scenes, int num_classes,
                    const std::optional<std::filesystem::path>& dump_dir) {
  if (dump_dir) ensure_writable_dir(*dump_dir);
  ConfusionMatrix conf(num_classes);
  BoundaryCounts b1, b3;
  for (std::size_t start = 0; start < scenes.size(); start += kEvalBatch) {
    const std::size_t end = std::min(scenes.size(), start + kEvalBatch);
    std::vector<const RgbImage*> images;
    std::vector<const LabelMap*> truths;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(&scenes[i].image);
      truths.push_back(&scenes[i].labels);
    }
    const LabelMap truth = stack_labels(truths);
    truth.validate(num_classes);
    LabelMap pred = truth;
    if (net != nullptr) {
      PrecisionScope precision(net->parameters().dtype());
      pred = net->segment(images_to_tensor(images));
    }
    conf.add(pred, truth);
    for (std::size_t i = start; i < end; ++i) {
      const auto k = static_cast<std::int64_t>(i - start);
      const LabelMap p = slice_labels(pred, k), t = slice_labels(truth, k);
      b1 += boundary_counts(p, t, 1);
      b3 += boundary_counts(p, t, 3);
      if (dump_dir) {
        write_labels(*dump_dir / (scene_stem(i) + "_pred.pgm"), p);
        write_image(*dump_dir / (scene_stem(i) + "_pred.ppm"), colorize(p));
      }
    }
  }
  EvalReport report;
  report.num_classes = num_classes;
  report.images = static_cast<std::int64_t>(scenes.size());
  report.oracle = net == nullptr;
  report.iou = miou(conf);
  report.boundary_f1 = b1.f_score();
  report.boundary_f3 = b3.f_score();
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string format_eval_report(const EvalReport& report, const RunConfig& config) {
  std::string s;
  s += "# variant: " + variant_string(config.variant) + "\n";
  s += "# optimizer: " + optimizer_description(config.optim) + "\n";
  s += "# inference: single scale, " + std::to_string(report.images) + " images" +
       (report.oracle ? ", oracle predictor" : "") + "\n";
  for (int c = 0; c < report.num_classes; ++c) {
    const auto& v = report.iou.per_class[static_cast<std::size_t>(c)];
    s += "class " + std::to_string(c) + " IoU: " + (v ? fmt(*v) : std::string("n/a")) + "\n";
  }
  s += "mIoU: " + fmt(report.iou.mean) + "\n";
  s += "boundary F (tol 1): " + fmt(report.boundary_f1) + "\n";
  s += "boundary F (tol 3): " + fmt(report.boundary_f3) + "\n";
  return s;
}

std::string format_eval_csv(const EvalReport& report) {
  std::string s = "metric,value\n";
  for (int c = 0; c < report.num_classes; ++c) {
    const auto& v = report.iou.per_class[static_cast<std::size_t>(c)];
    s += "iou_class_" + std::to_string(c) + "," + (v ? fmt(*v) : std::string("")) + "\n";
  }
  s += "mean_iou," + fmt(report.iou.mean) + "\n";
  s += "boundary_f1," + fmt(report.boundary_f1) + "\n";
  s += "boundary_f3," + fmt(report.boundary_f3) + "\n";
  return s;
}

EvalReport cmd_eval(const RunConfig& config, const EvalOptions& options) {
  config.validate();
  const std::filesystem::path out = config.out;
  ensure_writable_dir(out);
  const auto scenes = options.data_dir ? read_dataset(*options.data_dir) : heldout_scenes(config);
  std::optional<std::filesystem::path> dump;
  if (options.dump_predictions) dump = out / "predictions";
  EvalReport report;
  if (options.oracle) {
    report = evaluate(nullptr, scenes, config.scene.num_classes, dump);
  } else {
    SegNet net(config.net, config.variant, config.seed, DType::f32);
    load_checkpoint(options.checkpoint.string(), net.parameters());
    report = evaluate(&net, scenes, config.scene.num_classes, dump);
  }
  write_text(out / "eval.txt", format_eval_report(report, config));
  write_text(out / "eval.csv", format_eval_csv(report));
  return report;
}

}  // namespace srf
