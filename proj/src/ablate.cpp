#include "srf/ablate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "srf/evaluate.hpp"
#include "srf/train.hpp"
#include "srf/checkpoint.hpp"

namespace srf {

std::array<Variant, 4> ablation_variants() {
  return {Variant{Upsampler::bilinear, Context::none}, Variant{Upsampler::srm, Context::none},
          Variant{Upsampler::bilinear, Context::crm}, Variant{Upsampler::srm, Context::crm}};
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd r;
  if (values.empty()) return r;
  double s = 0.0;
  for (double v : values) s += v;
  r.mean = s / static_cast<double>(values.size());
  if (values.size() > 1) {
    double q = 0.0;
    for (double v : values) q += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(q / static_cast<double>(values.size() - 1));
  }
  return r;
}

AblationReport summarize_ablation(const std::vector<AblationRun>& runs) {
  AblationReport report;
  report.runs = runs;
  const auto variants = ablation_variants();
  for (std::size_t k = 0; k < variants.size(); ++k) {
    std::vector<double> m, b1, b3;
    for (const auto& r : runs) {
      if (!(r.variant == variants[k])) continue;
      m.push_back(r.miou);
      b1.push_back(r.boundary_f1);
      b3.push_back(r.boundary_f3);
    }
    report.rows[k] = AblationRow{variants[k], static_cast<int>(m.size()), mean_std(m), mean_std(b1), mean_std(b3)};
  }
  return report;
}

namespace {

std::string directory_name(const Variant& v) {
  std::string label = variant_label(v);
  if (!label.empty() && label.front() == '+') label.erase(0, 1);
  return label;
}

std::string pct(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%6.2f ± %5.2f", 100.0 * m.mean, 100.0 * m.std);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  f.close();
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

std::string format_ablation_table(const AblationReport& report, const RunConfig& config) {
  std::string s;
  s += "# variants:";
  for (const auto& row : report.rows) s += " [" + variant_string(row.variant) + "]";
  s += "\n";
  s += "# optimizer: " + optimizer_description(config.optim) + "\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "# budget: %ld steps, batch %d, %d training scenes, %d held-out scenes, seeds %llu..%llu\n",
                config.train.steps, config.train.batch, config.data.train_scenes, config.data.eval_scenes,
                static_cast<unsigned long long>(config.seed),
                static_cast<unsigned long long>(config.seed + static_cast<std::uint64_t>(config.ablate_seeds) - 1));
  s += buf;
  s += "Method     | SRM | CRM | mIoU (%)        | BF tol 1 (%)    | BF tol 3 (%)\n";
  s += "-----------+-----+-----+-----------------+-----------------+----------------\n";
  const char* names[4] = {"Baseline", "+SRM", "+CRM", "Both"};
  for (std::size_t k = 0; k < report.rows.size(); ++k) {
    const auto& row = report.rows[k];
    std::snprintf(buf, sizeof buf, "%-10s |  %s  |  %s  | %s | %s | %s\n", names[k],
                  row.variant.upsampler == Upsampler::srm ? "x" : " ", row.variant.context == Context::crm ? "x" : " ",
                  pct(row.miou).c_str(), pct(row.boundary_f1).c_str(), pct(row.boundary_f3).c_str());
    s += buf;
  }
  return s;
}

std::string format_ablation_csv(const AblationReport& report) {
  std::string s = "variant,upsampler,context,runs,miou_mean,miou_std,bf1_mean,bf1_std,bf3_mean,bf3_std\n";
  for (const auto& row : report.rows) {
    s += variant_label(row.variant) + "," + (row.variant.upsampler == Upsampler::srm ? "srm" : "bilinear") + "," +
         (row.variant.context == Context::crm ? "crm" : "none") + "," + std::to_string(row.runs) + "," +
         num(row.miou.mean) + "," + num(row.miou.std) + "," + num(row.boundary_f1.mean) + "," +
         num(row.boundary_f1.std) + "," + num(row.boundary_f3.mean) + "," + num(row.boundary_f3.std) + "\n";
  }
  return s;
}

std::string format_ablation_runs_csv(const AblationReport& report) {
  std::string s = "variant,seed,miou,bf1,bf3\n";
  for (const auto& r : report.runs) {
    s += variant_label(r.variant) + "," + std::to_string(r.seed) + "," + num(r.miou) + "," + num(r.boundary_f1) + "," +
         num(r.boundary_f3) + "\n";
  }
  return s;
}

AblationReport cmd_ablate(const RunConfig& config, const std::filesystem::path& out, unsigned workers) {
  config.validate();
  ensure_writable_dir(out);
  const auto variants = ablation_variants();
  std::vector<RunConfig> jobs;
  for (const auto& v : variants) {
    for (int r = 0; r < config.ablate_seeds; ++r) {
      RunConfig job = config;
      job.variant = v;
      job.seed = config.seed + static_cast<std::uint64_t>(r);
      job.out = (out / directory_name(v) / ("seed_" + std::to_string(job.seed))).string();
      jobs.push_back(std::move(job));
    }
  }
  const auto scenes = heldout_scenes(config);
  std::vector<AblationRun> runs(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&]() {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const RunConfig& job = jobs[i];
        const TrainOutcome trained = cmd_train(job, job.out);
        SegNet net(job.net, job.variant, job.seed, DType::f32);
        load_checkpoint(trained.checkpoint.string(), net.parameters());
        const EvalReport ev = evaluate(&net, scenes, job.scene.num_classes);
        write_text(std::filesystem::path(job.out) / "eval.txt", format_eval_report(ev, job));
        write_text(std::filesystem::path(job.out) / "eval.csv", format_eval_csv(ev));
        runs[i] = AblationRun{job.variant, job.seed, ev.iou.mean, ev.boundary_f1, ev.boundary_f3};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(jobs.size()));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  AblationReport report = summarize_ablation(runs);
  write_text(out / "ablation_runs.csv", format_ablation_runs_csv(report));
  write_text(out / "ablation.csv", format_ablation_csv(report));
  write_text(out / "ablation.txt", format_ablation_table(report, config));
  return report;
}

}  // namespace srf
