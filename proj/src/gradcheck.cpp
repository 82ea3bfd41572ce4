#include "mtdqn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mtdqn/agent.hpp"
#include "mtdqn/fusion.hpp"
#include "mtdqn/temporal_graph.hpp"

namespace mtdqn {

std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double eps) {
  if (eps <= 0.0) throw ContractError("finite_diff_grad: eps must be > 0");
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + eps;
    const double hi = f(point);
    point[i] = saved - eps;
    const double lo = f(point);
    point[i] = saved;
    grad[i] = (hi - lo) / (2.0 * eps);
  }
  return grad;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

bool GradCheckReport::all_passed() const {
  return std::all_of(cases.begin(), cases.end(),
                     [](const GradCheckCase& c) { return c.passed; });
}

namespace {

constexpr double kEps = 1e-5;

// Moves every probe coordinate off its initialization point; zero-initialized
// biases would otherwise sit exactly on ReLU kinks, where central differences
// disagree with the subgradient.
void randomize(std::vector<Tensor>& inputs, Rng& rng) {
  for (Tensor& t : inputs) {
    for (double& v : t.raw_values()) v = rng.uniform(-0.6, 0.6);
  }
}

// Compares the tape gradient of forward() against central finite differences
// over every coordinate of the probe tensors. forward() must rebuild the
// graph from the tensors' current values on each call.
double probe(std::vector<Tensor>& inputs, const std::function<Tensor()>& forward) {
  std::vector<double> x0;
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    auto v = t.values();
    x0.insert(x0.end(), v.begin(), v.end());
  }
  auto write = [&inputs](std::span<const double> x) {
    std::size_t offset = 0;
    for (Tensor& t : inputs) {
      auto v = t.raw_values();
      std::copy(x.begin() + static_cast<std::ptrdiff_t>(offset),
                x.begin() + static_cast<std::ptrdiff_t>(offset + v.size()),
                v.begin());
      offset += v.size();
    }
  };
  auto f = [&](std::span<const double> x) {
    write(x);
    NoGradScope no_grad;
    return forward().item();
  };
  const std::vector<double> fd = finite_diff_grad(f, x0, kEps);
  write(x0);
  for (Tensor& t : inputs) t.zero_grad();
  {
    Tape tape;
    Tensor loss = forward();
    tape.backward(loss);
  }
  double worst = 0.0;
  std::size_t offset = 0;
  for (Tensor& t : inputs) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
      worst = std::max(worst, relative_error(analytic, fd[offset + i]));
    }
    offset += t.size();
  }
  return worst;
}

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng) {
  return Tensor::uniform(r, c, -2.0, 2.0, rng);
}

// Values bounded away from 0 so ReLU kinks cannot straddle the probe step.
Tensor random_signed_tensor(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t = Tensor::zeros(r, c);
  for (double& v : t.raw_values()) {
    const double magnitude = rng.uniform(0.2, 2.0);
    v = rng.bernoulli(0.5) ? magnitude : -magnitude;
  }
  return t;
}

// Scalarizes an op output with fixed random weights.
Tensor weighted_sum(const Tensor& out, const Tensor& weights) {
  return sum_all(mul(out, weights));
}

struct Runner {
  GradCheckReport& report;
  Rng& rng;
  int repeats = 10;

  void run(const std::string& name, double tolerance,
           const std::function<double(Rng&)>& one_instance) {
    GradCheckCase c;
    c.name = name;
    for (int i = 0; i < repeats; ++i) {
      c.worst_rel_error = std::max(c.worst_rel_error, one_instance(rng));
    }
    c.passed = c.worst_rel_error < tolerance;
    report.cases.push_back(c);
  }
};

GraphSnapshot random_snapshot(std::size_t nodes, Rng& rng) {
  GraphSnapshot snap;
  snap.num_nodes = nodes;
  snap.in_edges.resize(nodes);
  snap.raw_in_edges.resize(nodes);
  snap.degree.assign(nodes, 0.0);
  for (std::size_t v = 0; v < nodes; ++v) {
    for (std::size_t u = 0; u < nodes; ++u) {
      if (u == v || !rng.bernoulli(0.4)) continue;
      snap.in_edges[v].emplace_back(static_cast<int>(u), rng.uniform(0.1, 1.5));
    }
  }
  return snap;
}

}  // namespace

GradCheckReport run_gradcheck(std::uint64_t seed) {
  GradCheckReport report;
  Rng rng(derive_seed(seed, "gradcheck"));
  Runner runner{report, rng};
  constexpr double kOpTol = 1e-6;
  constexpr double kComposedTol = 1e-5;

  runner.run("matmul", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r), random_tensor(4, 2, r)};
    Tensor w = random_tensor(3, 2, r);
    return probe(in, [&] { return weighted_sum(matmul(in[0], in[1]), w); });
  });
  runner.run("transpose", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r)};
    Tensor w = random_tensor(4, 3, r);
    return probe(in, [&] { return weighted_sum(transpose(in[0]), w); });
  });
  runner.run("add", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r), random_tensor(3, 4, r)};
    Tensor w = random_tensor(3, 4, r);
    return probe(in, [&] { return weighted_sum(add(in[0], in[1]), w); });
  });
  runner.run("sub", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r), random_tensor(3, 4, r)};
    Tensor w = random_tensor(3, 4, r);
    return probe(in, [&] { return weighted_sum(sub(in[0], in[1]), w); });
  });
  runner.run("mul", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r), random_tensor(3, 4, r)};
    Tensor w = random_tensor(3, 4, r);
    return probe(in, [&] { return weighted_sum(mul(in[0], in[1]), w); });
  });
  runner.run("mul_scalar_broadcast", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r), random_tensor(1, 1, r)};
    Tensor w = random_tensor(3, 4, r);
    return probe(in, [&] { return weighted_sum(mul(in[0], in[1]), w); });
  });
  runner.run("scale", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r)};
    Tensor w = random_tensor(3, 4, r);
    const double factor = r.uniform(-2.0, 2.0);
    return probe(in, [&] { return weighted_sum(scale(in[0], factor), w); });
  });
  runner.run("sigmoid", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r)};
    Tensor w = random_tensor(3, 4, r);
    return probe(in, [&] { return weighted_sum(sigmoid(in[0]), w); });
  });
  runner.run("tanh", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r)};
    Tensor w = random_tensor(3, 4, r);
    return probe(in, [&] { return weighted_sum(tanh_act(in[0]), w); });
  });
  runner.run("relu", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_signed_tensor(3, 4, r)};
    Tensor w = random_tensor(3, 4, r);
    return probe(in, [&] { return weighted_sum(relu(in[0]), w); });
  });
  runner.run("softplus", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r)};
    Tensor w = random_tensor(3, 4, r);
    return probe(in, [&] { return weighted_sum(softplus(in[0]), w); });
  });
  runner.run("rowwise_softmax", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 5, r)};
    Tensor w = random_tensor(3, 5, r);
    return probe(in, [&] { return weighted_sum(rowwise_softmax(in[0]), w); });
  });
  runner.run("concat_axis0", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(2, 3, r), random_tensor(4, 3, r)};
    Tensor w = random_tensor(6, 3, r);
    return probe(in, [&] {
      return weighted_sum(concat({in[0], in[1]}, 0), w);
    });
  });
  runner.run("concat_axis1", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 2, r), random_tensor(3, 4, r)};
    Tensor w = random_tensor(3, 6, r);
    return probe(in, [&] {
      return weighted_sum(concat({in[0], in[1]}, 1), w);
    });
  });
  runner.run("reduce_mean_axis0", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(4, 3, r)};
    Tensor w = random_tensor(1, 3, r);
    return probe(in, [&] { return weighted_sum(reduce_mean(in[0], 0), w); });
  });
  runner.run("reduce_mean_axis1", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(4, 3, r)};
    Tensor w = random_tensor(4, 1, r);
    return probe(in, [&] { return weighted_sum(reduce_mean(in[0], 1), w); });
  });
  runner.run("reduce_sum_axis0", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(4, 3, r)};
    Tensor w = random_tensor(1, 3, r);
    return probe(in, [&] { return weighted_sum(reduce_sum(in[0], 0), w); });
  });
  runner.run("mean_all", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r)};
    return probe(in, [&] { return mean_all(in[0]); });
  });
  runner.run("sum_all", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r)};
    return probe(in, [&] { return sum_all(in[0]); });
  });
  runner.run("layer_norm", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 6, r), random_tensor(1, 6, r),
                              random_tensor(1, 6, r)};
    Tensor w = random_tensor(3, 6, r);
    return probe(in, [&] {
      return weighted_sum(layer_norm(in[0], in[1], in[2]), w);
    });
  });
  runner.run("slice_rows", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(5, 3, r)};
    Tensor w = random_tensor(2, 3, r);
    return probe(in, [&] { return weighted_sum(slice_rows(in[0], 1, 3), w); });
  });
  runner.run("slice_cols", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 5, r)};
    Tensor w = random_tensor(3, 2, r);
    return probe(in, [&] { return weighted_sum(slice_cols(in[0], 2, 4), w); });
  });
  runner.run("add_rowwise", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(4, 3, r), random_tensor(1, 3, r)};
    Tensor w = random_tensor(4, 3, r);
    return probe(in, [&] { return weighted_sum(add_rowwise(in[0], in[1]), w); });
  });
  runner.run("apply_mask(dropout)", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r)};
    Tensor mask = Tensor::zeros(3, 4);
    for (double& v : mask.raw_values()) v = r.bernoulli(0.7) ? 1.0 : 0.0;
    Tensor w = random_tensor(3, 4, r);
    return probe(in, [&] {
      return weighted_sum(apply_mask(in[0], mask, 1.25), w);
    });
  });
  runner.run("graph_propagate", kOpTol, [](Rng& r) {
    GraphSnapshot snap = random_snapshot(6, r);
    std::vector<Tensor> in = {random_tensor(6, 4, r)};
    Tensor w = random_tensor(6, 4, r);
    return probe(in, [&] {
      return weighted_sum(graph_propagate(snap, in[0]), w);
    });
  });
  runner.run("scaled_attention", kOpTol, [](Rng& r) {
    std::vector<Tensor> in = {random_tensor(3, 4, r), random_tensor(3, 4, r),
                              random_tensor(3, 4, r)};
    Tensor w = random_tensor(3, 4, r);
    return probe(in, [&] {
      return weighted_sum(scaled_attention(in[0], in[1], in[2]), w);
    });
  });

  // Composed forwards.
  runner.run("fusion_forward", kComposedTol, [](Rng& r) {
    FusionConfig cfg;
    cfg.visual_dim = 4;
    cfg.text_dim = 4;
    cfg.audio_dim = 4;
    cfg.model_dim = 8;
    cfg.heads = 2;
    cfg.layers = 1;
    FusionModel model(cfg, r);
    RawModalFeatures raw;
    for (int i = 0; i < 4; ++i) {
      raw.visual.push_back(r.uniform(-1.0, 1.0));
      raw.text.push_back(r.uniform(-1.0, 1.0));
      raw.audio.push_back(r.uniform(-1.0, 1.0));
    }
    std::vector<Tensor> in;
    for (NamedParam& p : model.parameters()) in.push_back(p.tensor);
    randomize(in, r);
    Tensor w = random_tensor(1, 8, r);
    return probe(in, [&] { return weighted_sum(model.forward(raw), w); });
  });
  runner.run("tgnn_forward", kComposedTol, [](Rng& r) {
    std::vector<InteractionEvent> events;
    for (int i = 0; i < 14; ++i) {
      events.push_back({static_cast<int>(r.uniform_int(3)),
                        static_cast<int>(r.uniform_int(3)), TargetKind::video,
                        Behavior::watch, static_cast<double>(i + 1),
                        r.uniform(0.2, 1.0)});
    }
    InteractionGraph graph(3, 3, events);
    TgnnConfig cfg;
    cfg.base_dim = 4;
    cfg.layer_widths = {4, 4};
    cfg.windows = 2;
    cfg.window_len = 8.0;
    TgnnModel model(graph.num_nodes(), cfg, r);
    std::vector<Tensor> in;
    for (NamedParam& p : model.parameters()) in.push_back(p.tensor);
    randomize(in, r);
    Tensor w = random_tensor(1, 4, r);
    return probe(in, [&] {
      return weighted_sum(model.forward(graph, 0, 16.0), w);
    });
  });
  runner.run("q_values(concat(f,h_seq))", kComposedTol, [](Rng& r) {
    FusionConfig fcfg;
    fcfg.visual_dim = 4;
    fcfg.text_dim = 4;
    fcfg.audio_dim = 4;
    fcfg.model_dim = 8;
    fcfg.heads = 2;
    fcfg.layers = 1;
    FusionModel fusion(fcfg, r);
    RawModalFeatures raw;
    for (int i = 0; i < 4; ++i) {
      raw.visual.push_back(r.uniform(-1.0, 1.0));
      raw.text.push_back(r.uniform(-1.0, 1.0));
      raw.audio.push_back(r.uniform(-1.0, 1.0));
    }
    std::vector<InteractionEvent> events;
    for (int i = 0; i < 10; ++i) {
      events.push_back({static_cast<int>(r.uniform_int(3)),
                        static_cast<int>(r.uniform_int(3)), TargetKind::video,
                        Behavior::watch, static_cast<double>(i + 1),
                        r.uniform(0.2, 1.0)});
    }
    InteractionGraph graph(3, 3, events);
    TgnnConfig gcfg;
    gcfg.base_dim = 4;
    gcfg.layer_widths = {4};
    gcfg.windows = 2;
    gcfg.window_len = 6.0;
    TgnnModel tgnn(graph.num_nodes(), gcfg, r);
    QNetwork qnet(12, {8, 6}, 3, r);
    std::vector<Tensor> in;
    for (NamedParam& p : fusion.parameters()) in.push_back(p.tensor);
    for (NamedParam& p : tgnn.parameters()) in.push_back(p.tensor);
    for (NamedParam& p : qnet.parameters("q")) in.push_back(p.tensor);
    randomize(in, r);
    Tensor w = random_tensor(1, 3, r);
    return probe(in, [&] {
      Tensor f = fusion.forward(raw);
      Tensor h_seq = tgnn.forward(graph, 1, 12.0);
      Tensor state = concat({f, h_seq}, 1);
      return weighted_sum(qnet.forward(state), w);
    });
  });

  return report;
}

}  // namespace mtdqn
