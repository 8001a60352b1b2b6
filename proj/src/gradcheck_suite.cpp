#include "srf/gradcheck_suite.hpp"

#include <cstdio>
#include <random>

#include "srf/crm.hpp"
#include "srf/data.hpp"
#include "srf/grid_sampler.hpp"
#include "srf/losses.hpp"
#include "srf/seg_net.hpp"
#include "srf/srm.hpp"

namespace srf {

namespace {

class Inputs {
 public:
  explicit Inputs(std::uint64_t seed) : rng_(seed) {}

  Tensor normal(Shape shape, double stddev = 1.0) {
    std::normal_distribution<double> d(0.0, stddev);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = d(rng_);
    return Tensor::from_values(std::move(shape), v, DType::f64);
  }

  Tensor uniform(Shape shape, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = d(rng_);
    return Tensor::from_values(std::move(shape), v, DType::f64);
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Fixed random weighting so that each output element enters the probe with a
// different coefficient.
Tensor probe(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

// Probes per input tensor for module-level targets.
constexpr std::size_t kModuleProbes = 40;

using Build = std::function<std::pair<ScalarFn, std::vector<Tensor>>(Inputs&)>;

GradCheckTarget unary_target(std::string name, Shape shape, std::function<Tensor(const Tensor&)> op) {
  return {name, [shape, op](const GradCheckOptions& o) {
            Inputs in(o.seed);
            Tensor x = in.normal(shape);
            const Tensor w = in.normal(op(x).shape());
            return grad_check_report([op, w](const std::vector<Tensor>& v) { return probe(op(v[0]), w); }, {x}, o);
          }};
}

GradCheckTarget simple_target(std::string name, Build build, std::size_t max_elements = 0) {
  return {name, [build, max_elements](const GradCheckOptions& o) {
            Inputs in(o.seed);
            auto [f, inputs] = build(in);
            GradCheckOptions opts = o;
            opts.max_elements_per_input = max_elements;
            return grad_check_report(f, inputs, opts);
          }};
}

// Gives the zero-initialized SRM output layers random values so that every
// subnet parameter has a nonzero gradient. Offsets are centred on half a
// pixel, keeping sample positions away from the sampler's kinks at integers.
void randomize_srm_outputs(ParameterSet& params, const std::string& prefix) {
  params.reinitialize(prefix + ".offset.out.weight", Init::uniform_fan_in, 7, 1.0);
  params.reinitialize(prefix + ".offset.out.bias", Init::ones, 7, 0.5);
  params.reinitialize(prefix + ".mask.out.weight", Init::uniform_fan_in, 7, 1.0);
  params.reinitialize(prefix + ".mask.out.bias", Init::uniform_fan_in, 7, 1.0);
}

// Keeps channel-attention hidden units active so no fc2 weight sees a
// near-zero activation.
void lift_mlp_hidden(ParameterSet& params) {
  for (auto& [name, param] : params) {
    if (name.ends_with(".fc1.bias")) params.reinitialize(name, Init::ones, 7, 0.5);
  }
}

ParameterSet f64_params(std::uint64_t seed) { return ParameterSet(seed, DType::f64); }

FeaturePyramid random_pyramid(Inputs& in, const std::array<std::int64_t, 4>& widths, std::int64_t n, std::int64_t base) {
  FeaturePyramid p;
  // Non-negative like rectified encoder features.
  for (int l = 0; l < 4; ++l) p.stages[l] = in.uniform({n, widths[l], base >> l, base >> l}, 0.0, 2.0);
  return p;
}

std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParameterSet& params) {
  for (const auto& t : params.tensors()) inputs.push_back(t);
  return inputs;
}

std::vector<GradCheckTarget> build_targets() {
  std::vector<GradCheckTarget> t;

  // Elementwise and shape operators.
  t.push_back(simple_target("add_broadcast", [](Inputs& in) {
    Tensor a = in.normal({2, 3, 4, 1}), b = in.normal({1, 3, 1, 5});
    const Tensor w = in.normal({2, 3, 4, 5});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(add(v[0], v[1]), w); }),
                     std::vector<Tensor>{a, b}};
  }));
  t.push_back(simple_target("sub", [](Inputs& in) {
    Tensor a = in.normal({3, 4}), b = in.normal({3, 4});
    const Tensor w = in.normal({3, 4});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(sub(v[0], v[1]), w); }),
                     std::vector<Tensor>{a, b}};
  }));
  t.push_back(simple_target("mul_broadcast", [](Inputs& in) {
    Tensor a = in.normal({2, 3, 4, 4}), b = in.normal({2, 3, 1, 1});
    const Tensor w = in.normal({2, 3, 4, 4});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(mul(v[0], v[1]), w); }),
                     std::vector<Tensor>{a, b}};
  }));
  t.push_back(unary_target("scale", {4, 5}, [](const Tensor& x) { return scale(x, -1.7); }));
  t.push_back(unary_target("relu", {2, 3, 4, 4}, [](const Tensor& x) { return relu(x); }));
  t.push_back(unary_target("sigmoid", {2, 3, 4, 4}, [](const Tensor& x) { return sigmoid(scale(x, 3.0)); }));
  t.push_back(unary_target("sum", {3, 4, 5}, [](const Tensor& x) { return sum(x); }));
  t.push_back(unary_target("mean", {3, 4, 5}, [](const Tensor& x) { return mean(x); }));
  t.push_back(unary_target("reshape", {2, 3, 4}, [](const Tensor& x) { return reshape(x, {6, 4}); }));
  t.push_back(simple_target("concat", [](Inputs& in) {
    Tensor a = in.normal({2, 3, 4, 4}), b = in.normal({2, 5, 4, 4});
    const Tensor w = in.normal({2, 8, 4, 4});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(concat({v[0], v[1]}, 1), w); }),
                     std::vector<Tensor>{a, b}};
  }));
  t.push_back(unary_target("softmax", {2, 5, 3, 3}, [](const Tensor& x) { return softmax(x, 1); }));
  t.push_back(unary_target("softmax_last_axis", {2, 3, 7}, [](const Tensor& x) { return softmax(x, 2); }));
  t.push_back(unary_target("center", {2, 4, 6}, [](const Tensor& x) { return center(x, 2); }));
  t.push_back(unary_target("l2_normalize", {2, 6, 3, 3}, [](const Tensor& x) { return l2_normalize(x, 1); }));

  // Linear algebra and convolution.
  t.push_back(simple_target("matmul", [](Inputs& in) {
    Tensor a = in.normal({4, 3}), b = in.normal({3, 5});
    const Tensor w = in.normal({4, 5});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(matmul(v[0], v[1]), w); }),
                     std::vector<Tensor>{a, b}};
  }));
  t.push_back(simple_target("matmul_batched_transposed", [](Inputs& in) {
    Tensor a = in.normal({2, 3, 4}), b = in.normal({2, 5, 3});
    const Tensor w = in.normal({2, 4, 5});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(matmul(v[0], v[1], true, true), w); }),
                     std::vector<Tensor>{a, b}};
  }));
  t.push_back(simple_target("linear", [](Inputs& in) {
    Tensor x = in.normal({3, 6}), wt = in.normal({4, 6}), b = in.normal({4});
    const Tensor w = in.normal({3, 4});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(linear(v[0], v[1], v[2]), w); }),
                     std::vector<Tensor>{x, wt, b}};
  }));
  t.push_back(simple_target("conv2d_3x3", [](Inputs& in) {
    Tensor x = in.normal({2, 3, 5, 5}), k = in.normal({4, 3, 3, 3}), b = in.normal({4});
    const Tensor w = in.normal({2, 4, 5, 5});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(conv2d(v[0], v[1], v[2], 1, 1), w); }),
                     std::vector<Tensor>{x, k, b}};
  }));
  t.push_back(simple_target("conv2d_stride2", [](Inputs& in) {
    Tensor x = in.normal({1, 2, 8, 8}), k = in.normal({3, 2, 3, 3});
    const Tensor w = in.normal({1, 3, 4, 4});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(conv2d(v[0], v[1], {}, 2, 1), w); }),
                     std::vector<Tensor>{x, k}};
  }));
  t.push_back(simple_target("conv2d_1x1", [](Inputs& in) {
    Tensor x = in.normal({2, 4, 3, 3}), k = in.normal({5, 4, 1, 1}), b = in.normal({5});
    const Tensor w = in.normal({2, 5, 3, 3});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(conv2d(v[0], v[1], v[2]), w); }),
                     std::vector<Tensor>{x, k, b}};
  }));
  t.push_back(simple_target("conv2d_depthwise", [](Inputs& in) {
    Tensor x = in.normal({2, 4, 5, 5}), k = in.normal({4, 1, 3, 3}), b = in.normal({4});
    const Tensor w = in.normal({2, 4, 5, 5});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(conv2d(v[0], v[1], v[2], 1, 1, 4), w); }),
                     std::vector<Tensor>{x, k, b}};
  }));
  t.push_back(unary_target("pool2d_average", {2, 3, 8, 8},
                           [](const Tensor& x) { return pool2d(x, PoolMode::average, 2, 4); }));
  t.push_back(unary_target("pool2d_global", {2, 3, 4, 6}, [](const Tensor& x) { return global_avg_pool(x); }));
  t.push_back(simple_target("channel_norm", [](Inputs& in) {
    Tensor x = in.normal({2, 3, 4, 4}), g = in.normal({3}), b = in.normal({3});
    const Tensor w = in.normal({2, 3, 4, 4});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(channel_norm(v[0], v[1], v[2]), w); }),
                     std::vector<Tensor>{x, g, b}};
  }));
  t.push_back(simple_target("scale_channels", [](Inputs& in) {
    Tensor x = in.normal({2, 3, 4, 4}), s = in.uniform({2, 3, 1, 1}, 0.1, 0.9);
    const Tensor w = in.normal({2, 3, 4, 4});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(scale_channels(v[0], v[1]), w); }),
                     std::vector<Tensor>{x, s}};
  }));
  t.push_back(simple_target("gather_pixels", [](Inputs& in) {
    Tensor x = in.normal({2, 3, 4, 4});
    const std::vector<std::int64_t> idx{0, 5, 17, 31, 5};
    const Tensor w = in.normal({5, 3});
    return std::pair{ScalarFn([w, idx](const std::vector<Tensor>& v) { return probe(gather_pixels(v[0], idx), w); }),
                     std::vector<Tensor>{x}};
  }));

  // Sampling.
  t.push_back(unary_target("bilinear_upsample_x2", {1, 2, 4, 5}, [](const Tensor& x) { return bilinear_upsample(x, 2); }));
  t.push_back(unary_target("bilinear_upsample_x4", {1, 2, 3, 3}, [](const Tensor& x) { return bilinear_upsample(x, 4); }));
  t.push_back(simple_target("sample_with_offsets", [](Inputs& in) {
    Tensor x = in.normal({2, 3, 5, 6}), d = in.uniform({2, 2, 5, 6}, -1.8, 1.8);
    const Tensor w = in.normal({2, 3, 5, 6});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(sample_with_offsets(v[0], v[1]), w); }),
                     std::vector<Tensor>{x, d}};
  }));
  t.push_back(simple_target("refine_offsets", [](Inputs& in) {
    Tensor d = in.normal({2, 2, 4, 5});
    Tensor m = in.uniform({2, kMaskNeighbors, 4, 5}, 0.0, 1.0);
    const Tensor w = in.normal({2, 2, 4, 5});
    return std::pair{ScalarFn([w](const std::vector<Tensor>& v) { return probe(refine_offsets(v[0], v[1]), w); }),
                     std::vector<Tensor>{d, m}};
  }));

  // Modules.
  t.push_back(simple_target("srm_forward", [](Inputs& in) {
    auto params = std::make_shared<ParameterSet>(f64_params(11));
    const SrmParams p = make_srm_params(*params, "srm", SrmConfig{8, 6, 8, 8}, true);
    randomize_srm_outputs(*params, "srm");
    Tensor coarse = in.normal({1, 8, 3, 3}), lateral = in.normal({1, 6, 6, 6});
    const Tensor w = in.normal({1, 8, 6, 6});
    return std::pair{ScalarFn([p, w, params](const std::vector<Tensor>& v) { return probe(srm_forward(v[0], v[1], p), w); }),
                     with_params({coarse, lateral}, *params)};
  }, kModuleProbes));
  t.push_back(simple_target("srm_bilinear_step", [](Inputs& in) {
    auto params = std::make_shared<ParameterSet>(f64_params(12));
    const SrmParams p = make_srm_params(*params, "srm", SrmConfig{8, 6, 8, 8}, false);
    Tensor coarse = in.normal({1, 8, 3, 3}), lateral = in.normal({1, 6, 6, 6});
    const Tensor w = in.normal({1, 8, 6, 6});
    return std::pair{ScalarFn([p, w, params](const std::vector<Tensor>& v) { return probe(srm_forward(v[0], v[1], p), w); }),
                     with_params({coarse, lateral}, *params)};
  }, kModuleProbes));
  t.push_back(simple_target("crm_channel_scale", [](Inputs& in) {
    auto params = std::make_shared<ParameterSet>(f64_params(13));
    const std::array<std::int64_t, 4> widths{4, 8, 12, 16};
    const ChannelAttentionParams p = make_channel_attention_params(*params, "ca", widths);
    lift_mlp_hidden(*params);
    FeaturePyramid pyr = random_pyramid(in, widths, 2, 16);
    const Tensor w = in.normal({2, 40, 2, 2});
    return std::pair{ScalarFn([p, w, params](const std::vector<Tensor>& v) {
                       FeaturePyramid q;
                       for (int l = 0; l < 4; ++l) q.stages[l] = v[l];
                       return probe(apply_channel_attention(concat_pyramid(q), channel_scale(q, p)), w);
                     }),
                     with_params({pyr.stages[0], pyr.stages[1], pyr.stages[2], pyr.stages[3]}, *params)};
  }, kModuleProbes));
  t.push_back(simple_target("crm_dnl_attention", [](Inputs& in) {
    auto params = std::make_shared<ParameterSet>(f64_params(14));
    const DnlParams p = make_dnl_params(*params, "dnl", 8);
    Tensor x = in.normal({2, 8, 3, 3});
    const Tensor w = in.normal({2, 8, 3, 3});
    return std::pair{ScalarFn([p, w, params](const std::vector<Tensor>& v) { return probe(dnl_spatial_attention(v[0], p), w); }),
                     with_params({x}, *params)};
  }, kModuleProbes));
  t.push_back(simple_target("crm_ffn", [](Inputs& in) {
    auto params = std::make_shared<ParameterSet>(f64_params(15));
    const FfnParams p = make_ffn_params(*params, "ffn", 8, 2);
    Tensor x = in.normal({1, 8, 4, 4});
    const Tensor w = in.normal({1, 8, 4, 4});
    return std::pair{ScalarFn([p, w, params](const std::vector<Tensor>& v) { return probe(ffn(v[0], p), w); }),
                     with_params({x}, *params)};
  }, kModuleProbes));
  t.push_back(simple_target("crm_forward", [](Inputs& in) {
    auto params = std::make_shared<ParameterSet>(f64_params(16));
    const std::array<std::int64_t, 4> widths{4, 8, 12, 16};
    const CrmParams p = make_crm_params(*params, "crm", CrmConfig{widths, 8, 2});
    lift_mlp_hidden(*params);
    FeaturePyramid pyr = random_pyramid(in, widths, 1, 16);
    const Tensor w = in.normal({1, 8, 2, 2});
    return std::pair{ScalarFn([p, w, params](const std::vector<Tensor>& v) {
                       FeaturePyramid q;
                       for (int l = 0; l < 4; ++l) q.stages[l] = v[l];
                       return probe(crm_forward(q, p), w);
                     }),
                     with_params({pyr.stages[0], pyr.stages[1], pyr.stages[2], pyr.stages[3]}, *params)};
  }, kModuleProbes));

  // Losses.
  t.push_back(simple_target("cross_entropy", [](Inputs& in) {
    Tensor z = in.normal({2, 4, 3, 3}, 2.0);
    LabelMap labels(2, 3, 3);
    std::uniform_int_distribution<int> cls(0, 3);
    for (auto& v : labels.values) v = static_cast<std::uint8_t>(cls(in.rng()));
    labels.values[4] = kIgnoreLabel;
    return std::pair{ScalarFn([labels](const std::vector<Tensor>& v) { return cross_entropy(v[0], labels); }),
                     std::vector<Tensor>{z}};
  }));
  t.push_back(simple_target("embed_contrastive", [](Inputs& in) {
    auto params = std::make_shared<ParameterSet>(f64_params(17));
    EmbedParams p{nn::make_conv(*params, "embed.proj", {.in = 6, .out = 16, .bias = false}),
                  nn::make_norm(*params, "embed.norm", 16)};
    Tensor x = in.normal({2, 6, 3, 3});
    const std::vector<std::int64_t> pixels{0, 2, 4, 7, 9, 11, 13, 16, 17};
    const std::vector<int> classes{0, 1, 0, 2, 1, 0, 2, 1, 1};
    return std::pair{ScalarFn([p, pixels, classes, params](const std::vector<Tensor>& v) {
                       return contrastive_loss(gather_pixels(embed(v[0], p), pixels), classes, kDefaultTau);
                     }),
                     with_params({x}, *params)};
  }, kModuleProbes));

  // Network pieces.
  t.push_back(simple_target("encoder_stage", [](Inputs& in) {
    auto params = std::make_shared<ParameterSet>(f64_params(18));
    const nn::ConvNorm down = nn::make_conv_norm(*params, "down", 4, 8, 3, 2);
    const ResBlock block{nn::make_conv_norm(*params, "b.conv1", 8, 8, 3), nn::make_conv_norm(*params, "b.conv2", 8, 8, 3, 1, false)};
    Tensor x = in.normal({1, 4, 8, 8});
    const Tensor w = in.normal({1, 8, 4, 4});
    return std::pair{ScalarFn([down, block, w, params](const std::vector<Tensor>& v) { return probe(block(down(v[0])), w); }),
                     with_params({x}, *params)};
  }, kModuleProbes));
  t.push_back(simple_target(
      "seg_net_total_loss_64x64",
      [](Inputs& in) {
        NetworkConfig cfg;
        cfg.num_classes = 3;
        cfg.stage_widths = {8, 12, 16, 24};
        cfg.decoder_width = 16;
        cfg.embedding_dim = 256;
        cfg.blocks_per_stage = 1;
        cfg.srm_hidden = 8;
        auto net = std::make_shared<SegNet>(cfg, Variant{Upsampler::srm, Context::crm}, 19, DType::f64);
        for (int l = 1; l <= 3; ++l) randomize_srm_outputs(net->parameters(), "decoder.srm" + std::to_string(l));
        SceneSpec spec;
        spec.num_classes = 3;
        const Scene scene = generate_scene(spec, 0);
        Tensor image = image_to_tensor(scene.image, DType::f64);
        const LabelMap labels = scene.labels;
        const LossConfig loss;
        AnchorSelection anchors;
        {
          NoGradScope no_grad;
          anchors = hybrid_anchor_selection(net->forward(image), labels, loss, 0);
        }
        (void)in;
        return std::pair{ScalarFn([net, labels, loss, anchors](const std::vector<Tensor>& v) {
                           return hybrid_loss(net->forward(v[0]), labels, net->handles(), loss, 0, &anchors).objective;
                         }),
                         with_params({image}, net->parameters())};
      },
      3));
  return t;
}

}  // namespace

std::vector<GradCheckTarget> gradcheck_targets() { return build_targets(); }

std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed, const std::string& corrupt) {
  PrecisionScope precision(DType::f64);
  std::vector<GradCheckRow> rows;
  for (const auto& target : gradcheck_targets()) {
    GradCheckOptions o;
    o.seed = seed;
    if (target.name == corrupt) o.analytic_perturbation = 0.01;
    GradCheckRow row;
    row.name = target.name;
    row.report = target.run(o);
    row.passed = row.report.max_rel_error < kGradCheckTolerance;
    rows.push_back(row);
  }
  return rows;
}

std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-28s %14s %10s  %s\n", "target", "max_rel_error", "elements", "status");
  out += line;
  int failed = 0;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-28s %14.6e %10zu  %s\n", r.name.c_str(), r.report.max_rel_error,
                  r.report.elements_checked, r.passed ? "ok" : "FAIL");
    out += line;
    failed += !r.passed;
  }
  std::snprintf(line, sizeof line, "%zu targets, %d failed (tolerance %.0e)\n", rows.size(), failed, kGradCheckTolerance);
  out += line;
  return out;
}

}  // namespace srf
