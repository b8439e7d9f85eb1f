#include "milnet/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "milnet/mil_heads.hpp"
#include "milnet/model.hpp"
#include "milnet/ops.hpp"
#include "milnet/rng.hpp"

namespace milnet {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

struct Probe {
  double value = 0.0;
  std::uint64_t signature = 0;
};

Probe evaluate(const ScalarBuilder& build, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.leaf(t, false));
  const double v = build(g, vars).value().item();
  return {v, g.branch_signature()};
}

std::vector<std::size_t> pick_coords(std::size_t numel, std::size_t wanted, Rng& rng) {
  std::vector<std::size_t> all(numel);
  for (std::size_t i = 0; i < numel; ++i) all[i] = i;
  if (wanted == 0 || wanted >= numel) return all;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(wanted);
  std::sort(all.begin(), all.end());
  return all;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

}  // namespace

GradCheckReport check_gradients(const std::string& name, const ScalarBuilder& build, const std::vector<Tensor>& inputs,
                                const GradCheckOptions& options) {
  GradCheckReport report;
  report.name = name;
  report.tolerance = options.tolerance;

  std::vector<Tensor> analytic;
  std::uint64_t base_signature = 0;
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.leaf(t, true));
    Var out = build(g, vars);
    base_signature = g.branch_signature();
    g.backward(out);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  Rng rng(options.seed);
  std::vector<Tensor> probe = inputs;
  const double h = options.step;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (auto j : pick_coords(inputs[i].numel(), options.coords_per_input, rng)) {
      const double orig = probe[i][j];
      probe[i][j] = orig + h;
      const Probe up = evaluate(build, probe);
      probe[i][j] = orig - h;
      const Probe down = evaluate(build, probe);
      probe[i][j] = orig;
      if (options.smoothness_guard && (up.signature != base_signature || down.signature != base_signature)) {
        ++report.skipped;
        continue;
      }
      const double numeric = (up.value - down.value) / (2.0 * h);
      report.max_error = std::max(report.max_error, relative_error(analytic[i][j], numeric, options.floor));
      ++report.checked;
    }
  }
  report.passed = report.checked > 0 && report.max_error <= options.tolerance;
  return report;
}

std::vector<GradCheckReport> run_op_gradchecks(std::uint64_t seed) {
  Rng rng = make_stream(seed, {0x6772616463686bULL});
  std::vector<GradCheckReport> reports;
  GradCheckOptions opt;
  opt.seed = seed;

  // Reduces an arbitrary-shaped op output to a scalar with fixed random weights.
  auto project = [&rng](const Shape& shape) { return random_tensor(shape, rng, -1.0, 1.0); };
  auto add_check = [&](const std::string& name, std::vector<Tensor> inputs, auto op, const Shape& out_shape) {
    const Tensor w = project(out_shape);
    ScalarBuilder b = [op, w](Graph&, std::span<const Var> v) { return ops::weighted_sum(op(v), w); };
    reports.push_back(check_gradients(name, b, inputs, opt));
  };

  add_check("conv2d", {random_tensor({1, 2, 5, 5}, rng, -1, 1), random_tensor({3, 2, 3, 3}, rng, -1, 1)},
            [](std::span<const Var> v) { return ops::conv2d(v[0], v[1]); }, Shape{1, 3, 3, 3});
  add_check("conv2d_stride2_pad1", {random_tensor({2, 2, 6, 5}, rng, -1, 1), random_tensor({2, 2, 3, 3}, rng, -1, 1)},
            [](std::span<const Var> v) { return ops::conv2d(v[0], v[1], {2, 1}); }, Shape{2, 2, 3, 3});
  add_check("add_channel_bias", {random_tensor({2, 3, 2, 2}, rng, -1, 1), random_tensor({3}, rng, -1, 1)},
            [](std::span<const Var> v) { return ops::add_channel_bias(v[0], v[1]); }, Shape{2, 3, 2, 2});
  add_check("maxpool2d", {random_tensor({1, 1, 6, 6}, rng, -1, 1)},
            [](std::span<const Var> v) { return ops::maxpool2d(v[0], 2, 2); }, Shape{1, 1, 3, 3});
  add_check("maxpool2d_overlap", {random_tensor({1, 2, 7, 7}, rng, -1, 1)},
            [](std::span<const Var> v) { return ops::maxpool2d(v[0], 3, 2); }, Shape{1, 2, 3, 3});
  add_check("relu", {random_tensor({12}, rng, -1, 1)}, [](std::span<const Var> v) { return ops::relu(v[0]); },
            Shape{12});
  add_check("sigmoid", {random_tensor({12}, rng, -4, 4)}, [](std::span<const Var> v) { return ops::sigmoid(v[0]); },
            Shape{12});
  add_check("affine_channel",
            {random_tensor({2, 3, 2, 2}, rng, -1, 1), random_tensor({3}, rng, -1, 1), random_tensor({1}, rng, -1, 1)},
            [](std::span<const Var> v) { return ops::affine_channel(v[0], v[1], v[2]); }, Shape{2, 2, 2});
  add_check("sort_descending", {random_tensor({2, 5}, rng, 0, 1)},
            [](std::span<const Var> v) { return ops::sort_descending(v[0]).sorted; }, Shape{2, 5});
  add_check("clamp", {random_tensor({8}, rng, 0.1, 0.9)},
            [](std::span<const Var> v) { return ops::clamp(v[0], 0.0, 1.0); }, Shape{8});
  add_check("one_minus", {random_tensor({5}, rng, -1, 1)}, [](std::span<const Var> v) { return ops::one_minus(v[0]); },
            Shape{5});
  add_check("log", {random_tensor({6}, rng, 0.5, 2.0)}, [](std::span<const Var> v) { return ops::log(v[0]); },
            Shape{6});
  add_check("scale", {random_tensor({4}, rng, -1, 1)}, [](std::span<const Var> v) { return ops::scale(v[0], -2.5); },
            Shape{4});
  add_check("add", {random_tensor({4}, rng, -1, 1), random_tensor({4}, rng, -1, 1)},
            [](std::span<const Var> v) { return ops::add(v[0], v[1]); }, Shape{4});
  add_check("reshape", {random_tensor({2, 3}, rng, -1, 1)},
            [](std::span<const Var> v) { return ops::reshape(v[0], Shape{3, 2}); }, Shape{3, 2});
  add_check("reduce_sum", {random_tensor({5}, rng, -1, 1)},
            [](std::span<const Var> v) { return ops::reduce_sum(v[0]); }, Shape{});
  add_check("l1_norm", {random_tensor({5}, rng, -1, 1)}, [](std::span<const Var> v) { return ops::l1_norm(v[0]); },
            Shape{});
  add_check("l2_norm_sq", {random_tensor({5}, rng, -1, 1)},
            [](std::span<const Var> v) { return ops::l2_norm_sq(v[0]); }, Shape{});
  return reports;
}

std::vector<GradCheckReport> run_head_gradchecks(std::uint64_t seed, std::size_t draws, const std::string& preset,
                                                 double tolerance) {
  const BackboneSpec spec = BackboneSpec::preset(preset);
  const auto shape = spec.output_shape();
  const std::size_t m = shape.height * shape.width;
  const std::size_t size = spec.input_size;
  const std::vector<int> labels{1, 0};
  const BagWeights weights{0.7, 0.3, 0.2, 0.8};
  const double lambda = 1e-3;
  const double mu = 0.05;
  const std::size_t k = std::min<std::size_t>(4, m);
  constexpr std::size_t kHeads = 3;
  const char* head_names[kHeads] = {"max_pool", "label_assign", "sparse"};

  auto losses = [&](Graph& g, const ModelParams& params, const Tensor& images, bool grad) {
    ForwardPass pass = forward(g, spec, params, images, grad);
    return std::make_pair(pass, std::array<Var, kHeads>{
                                    loss_max_pool(pass.ranked.sorted, labels, weights, lambda, pass.params),
                                    loss_label_assign(pass.ranked.sorted, labels, k, weights, lambda, pass.params),
                                    loss_sparse(pass.ranked.sorted, labels, mu, weights, lambda, pass.params)});
  };

  constexpr std::size_t kAttempts = 5;
  std::vector<GradCheckReport> reports;
  for (std::size_t d = 0; d < draws; ++d) {
   for (std::size_t attempt = 0; attempt < kAttempts; ++attempt) {
    Rng rng = make_stream(seed, {0x68656164ULL, d, attempt});
    ModelParams params = init_params(spec, derive_seed(seed, {d, attempt}));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params.names[i].ends_with(".bias")) params.values[i] = random_tensor(params.values[i].shape(), rng, -0.1, 0.1);
    }
    const Tensor images = random_tensor({2, 1, size, size}, rng, 0.0, 1.0);

    std::array<std::vector<Tensor>, kHeads> analytic;
    std::uint64_t base_signature = 0;
    for (std::size_t h = 0; h < kHeads; ++h) {
      Graph g;
      auto [pass, loss] = losses(g, params, images, true);
      base_signature = g.branch_signature();
      g.backward(loss[h]);
      for (const auto& v : pass.params) analytic[h].push_back(v.grad());
    }

    std::array<GradCheckReport, kHeads> rep;
    for (std::size_t h = 0; h < kHeads; ++h) {
      rep[h].name = std::string(head_names[h]) + "/" + preset + "/draw" + std::to_string(d);
      rep[h].tolerance = tolerance;
    }
    auto eval_all = [&](std::uint64_t& signature) {
      Graph g;
      auto [pass, loss] = losses(g, params, images, false);
      signature = g.branch_signature();
      std::array<double, kHeads> out{};
      for (std::size_t h = 0; h < kHeads; ++h) out[h] = loss[h].value().item();
      return out;
    };
    // Up to kQuota smooth coordinates per tensor, drawn from at most kTries candidates.
    constexpr std::size_t kQuota = 2, kTries = 64;
    const double step = 1e-5;
    bool covered = true;
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::size_t got = 0;
      for (auto j : pick_coords(params.values[i].numel(), kTries, rng)) {
        if (got == kQuota) break;
        const double orig = params.values[i][j];
        std::uint64_t sig_up = 0, sig_down = 0;
        params.values[i][j] = orig + step;
        const auto up = eval_all(sig_up);
        params.values[i][j] = orig - step;
        const auto down = eval_all(sig_down);
        params.values[i][j] = orig;
        if (sig_up != base_signature || sig_down != base_signature) {
          for (auto& r : rep) ++r.skipped;
          continue;
        }
        for (std::size_t h = 0; h < kHeads; ++h) {
          const double numeric = (up[h] - down[h]) / (2.0 * step);
          rep[h].max_error = std::max(rep[h].max_error, relative_error(analytic[h][i][j], numeric));
          ++rep[h].checked;
        }
        ++got;
      }
      covered = covered && got > 0;
    }
    if (!covered && attempt + 1 < kAttempts) continue;
    for (auto& r : rep) {
      r.redraws = attempt;
      r.passed = covered && r.max_error <= r.tolerance;
      reports.push_back(r);
    }
    break;
   }
  }
  return reports;
}

}  // namespace milnet
