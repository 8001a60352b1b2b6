#include "srf/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "srf/checkpoint.hpp"
#include "srf/losses.hpp"

namespace srf {

double poly_lr(double base, long step, long total, double power) {
  if (total <= 0) return base;
  const double frac = 1.0 - static_cast<double>(step) / static_cast<double>(total);
  return base * std::pow(std::max(frac, 0.0), power);
}

MomentumSgd::MomentumSgd(const ParameterSet& params, const OptimConfig& config) : config_(config) {
  for (const auto& [name, p] : params) velocity_.emplace_back(static_cast<std::size_t>(p.value.numel()), 0.0);
}

void MomentumSgd::step(ParameterSet& params, const GradientMap& grads, double lr) {
  std::size_t k = 0;
  for (auto& [name, p] : params) {
    auto& v = velocity_.at(k++);
    const Tensor* g = grads.find(p.value.id());
    const double wd = p.value.rank() >= 2 ? config_.weight_decay : 0.0;
    dispatch(p.value.dtype(), [&]<class T>() {
      auto w = p.value.mutable_data<T>();
      std::span<const T> gv;
      if (g != nullptr) gv = g->data<T>();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = gv.empty() ? 0.0 : static_cast<double>(gv[i]);
        v[i] = config_.momentum * v[i] + gi + wd * static_cast<double>(w[i]);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * v[i]);
      }
    });
  }
}

std::vector<Scene> training_corpus(const RunConfig& config) {
  std::vector<Scene> corpus;
  corpus.reserve(static_cast<std::size_t>(config.data.train_scenes));
  for (int i = 0; i < config.data.train_scenes; ++i) corpus.push_back(generate_scene(config.scene, static_cast<std::uint64_t>(i)));
  return corpus;
}

BatchSampler::BatchSampler(const std::vector<Scene>& corpus, int batch, bool flip, std::uint64_t seed)
    : corpus_(&corpus), batch_(batch), flip_(flip), seed_(seed), flips_(mix_seed(seed, 0xF11Full)) {
  if (corpus.empty()) throw ConfigError("BatchSampler: empty corpus");
  if (batch < 1) throw ConfigError("BatchSampler: batch must be positive");
  order_.resize(corpus.size());
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed_, epoch_));
  std::shuffle(order_.begin(), order_.end(), rng);
  ++epoch_;
  cursor_ = 0;
}

BatchSampler::Batch BatchSampler::next() {
  std::vector<RgbImage> images;
  std::vector<LabelMap> labels;
  images.reserve(static_cast<std::size_t>(batch_));
  labels.reserve(static_cast<std::size_t>(batch_));
  std::bernoulli_distribution coin(0.5);
  for (int b = 0; b < batch_; ++b) {
    if (cursor_ == order_.size()) reshuffle();
    const Scene& s = (*corpus_)[order_[cursor_++]];
    if (flip_ && coin(flips_)) {
      images.push_back(flip_horizontal(s.image));
      labels.push_back(flip_horizontal(s.labels));
    } else {
      images.push_back(s.image);
      labels.push_back(s.labels);
    }
  }
  std::vector<const RgbImage*> ip;
  std::vector<const LabelMap*> lp;
  for (std::size_t i = 0; i < images.size(); ++i) {
    ip.push_back(&images[i]);
    lp.push_back(&labels[i]);
  }
  return Batch{images_to_tensor(ip), stack_labels(lp)};
}

void train_network(const RunConfig& config, const std::vector<Scene>& corpus, SegNet& net, const StepCallback& on_step) {
  const DType dtype = net.parameters().dtype();
  PrecisionScope precision(dtype);
  MomentumSgd optimizer(net.parameters(), config.optim);
  BatchSampler sampler(corpus, config.train.batch, config.train.flip, mix_seed(config.seed, 0xDA7Aull));
  const long steps = config.train.steps;
  for (long t = 0; t < steps; ++t) {
    StepLog row;
    row.step = t + 1;
    row.lr = poly_lr(config.optim.lr, t, steps, config.optim.power);
    const auto batch = sampler.next();
    const DecodeOutput out = net.forward(batch.images);
    const LossReport loss = hybrid_loss(out, batch.labels, net.handles(), config.loss, mix_seed(config.seed, static_cast<std::uint64_t>(row.step)));
    row.ce = loss.ce;
    row.cl = loss.cl;
    row.total = loss.total;
    if (!std::isfinite(loss.total)) {
      throw DivergenceError("training diverged at step " + std::to_string(row.step) + ": total loss is not finite", row.step);
    }
    const GradientMap grads = backward(loss.objective);
    optimizer.step(net.parameters(), grads, row.lr);
    if (on_step) on_step(row, net);
  }
}

std::string format_step_row(const StepLog& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g", row.step, row.lr, row.ce, row.cl, row.total);
  return buf;
}

void ensure_writable_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory '" + dir.string() + "'" + (ec ? ": " + ec.message() : ""));
  }
}

namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  return f;
}

void close_output(std::ofstream& f, const std::filesystem::path& path) {
  f.close();
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

TrainOutcome cmd_train(const RunConfig& config, const std::filesystem::path& out) {
  config.validate();
  ensure_writable_dir(out);
  {
    const auto path = out / "config.txt";
    auto f = open_output(path);
    f << config_to_text(config);
    close_output(f, path);
  }
  const auto metrics_path = out / "metrics.csv";
  auto metrics = open_output(metrics_path);
  metrics << kMetricsHeader << '\n';

  TrainOutcome outcome;
  SegNet net(config.net, config.variant, config.seed, DType::f32);
  const auto corpus = training_corpus(config);
  train_network(config, corpus, net, [&](const StepLog& row, const SegNet& n) {
    outcome.log.push_back(row);
    metrics << format_step_row(row) << '\n';
    if (config.train.checkpoint_every > 0 && row.step % config.train.checkpoint_every == 0) {
      save_checkpoint((out / ("checkpoint_step_" + std::to_string(row.step) + ".ckpt")).string(), n.parameters());
    }
  });
  close_output(metrics, metrics_path);
  outcome.checkpoint = out / "checkpoint_final.ckpt";
  save_checkpoint(outcome.checkpoint.string(), net.parameters());
  return outcome;
}

std::string optimizer_description(const OptimConfig& config) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "momentum SGD (lr %g, momentum %g, weight decay %g) with poly decay power %g",
                config.lr, config.momentum, config.weight_decay, config.power);
  return buf;
}

}  // namespace srf
