// Acceptance checks. Prints one PASS/FAIL line per criterion; exits 1 if any fails.
// Usage: acceptance [name...] runs only the named criteria.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>

#include "lwta/checkpoint.hpp"
#include "lwta/cli.hpp"
#include "lwta/errors.hpp"
#include "lwta/io.hpp"
#include "lwta/metrics.hpp"
#include "lwta/objective.hpp"
#include "lwta/train.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace lwta;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

struct Criterion {
  std::string name;
  double time_limit_s;  // 0 when unconstrained
  std::function<Outcome()> run;
};

Array<double> normals(Index n, Rng& rng, double scale = 1.0) {
  Array<double> v(n);
  for (Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  char buffer[256];
  std::snprintf(buffer, sizeof(buffer), format, a, b, c);
  return buffer;
}

Tensor random_inputs(Index n, const ModelSpec& spec, Rng& rng) {
  Shape shape{n};
  for (Index d : spec.input_shape()) shape.push_back(d);
  Array<float> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v(i) = static_cast<float>(rng.normal());
  return Tensor::constant(shape, v);
}

// Per-example winner count of every LWTA layer must be exactly width / U.
Outcome sparsity_law() {
  Rng rng(101);
  std::ostringstream detail;
  bool ok = true;
  for (Index u : {2, 8, 12, 16, 24}) {
    ModelSpec mlp;
    mlp.input_dim = 8;
    mlp.widths = {4 * u, 2 * u};
    mlp.competitors = {u};
    ModelSpec conv;
    conv.kind = ModelKind::conv;
    conv.height = conv.width = 6;
    conv.widths = {2 * u};
    conv.competitors = {u};
    double worst = 0.0;
    for (const ModelSpec& spec : {mlp, conv}) {
      const Model model = build_model(spec, rng);
      const auto x = random_inputs(1000, spec, rng);
      const auto result = forward(model, x, {&rng, std::nullopt});
      for (const auto& s : result.samples) {
        // xi is [n, B, U] or [n, B, H', W', U]; every example holds groups_per_example winners.
        const Index per_example = static_cast<Index>(s.xi.size()) / 1000;
        for (Index i = 0; i < 1000; ++i) {
          const double winners = s.xi.segment(i * per_example, per_example).sum();
          const double fraction = winners / static_cast<double>(per_example);
          if (winners * static_cast<double>(u) != static_cast<double>(per_example)) ok = false;
          worst = std::max(worst, std::abs(fraction - 1.0 / static_cast<double>(u)));
        }
      }
    }
    detail << "U=" << u << " max|f-1/U|=" << worst << "; ";
  }
  return {ok, detail.str()};
}

// Straight-through gradients against central differences of the relaxed forward with the
// hard winners held fixed: d/dW sum c*(xi*h(W) + soft(W)*h(W0)).
Outcome straight_through_gradients() {
  Rng rng(202);
  double worst = 0.0;
  const double tau = 0.67;
  int instances = 0;
  for (Index u : {2, 4}) {
    for (int trial = 0; trial < 100; ++trial, ++instances) {
      const Index j = 3, n = 2;
      auto layer = LwtaDenseLayer<double>::create(j, 1, u, rng);
      layer.bias.mutable_data() = normals(u, rng, 0.3);
      const Array<double> xv = normals(n * j, rng);
      const Array<double> g = normals(n * u, rng).unaryExpr([&](double) { return rng.gumbel(); });
      const Array<double> c = normals(n * u, rng);
      const auto x = TensorD::constant({n, j}, xv);
      const auto out = lwta_dense_forward(layer, x, GumbelSource<double>(g));
      backward(sum(mul(out.output, TensorD::constant({n, u}, c))));

      const Array<double> w0 = layer.weight.data(), b0 = layer.bias.data();
      auto linear = [&](const oracle::Vec& w, const oracle::Vec& b) {
        oracle::Vec h(static_cast<std::size_t>(n * u));
        for (Index i = 0; i < n; ++i) {
          for (Index k = 0; k < u; ++k) {
            double s = b[static_cast<std::size_t>(k)];
            for (Index r = 0; r < j; ++r) s += xv(i * j + r) * w[static_cast<std::size_t>(r * u + k)];
            h[static_cast<std::size_t>(i * u + k)] = s;
          }
        }
        return h;
      };
      const oracle::Vec w_start(w0.data(), w0.data() + w0.size()), b_start(b0.data(), b0.data() + b0.size());
      const oracle::Vec h0 = linear(w_start, b_start);
      std::vector<double> xi(h0.size(), 0.0);
      for (Index i = 0; i < n; ++i) {
        oracle::Vec perturbed;
        for (Index k = 0; k < u; ++k) perturbed.push_back(h0[static_cast<std::size_t>(i * u + k)] + g(i * u + k));
        xi[static_cast<std::size_t>(i * u) + oracle::argmax(perturbed)] = 1.0;
      }
      auto surrogate = [&](const oracle::Vec& w, const oracle::Vec& b) {
        const oracle::Vec h = linear(w, b);
        double total = 0.0;
        for (Index i = 0; i < n; ++i) {
          oracle::Vec z;
          for (Index k = 0; k < u; ++k) z.push_back((h[static_cast<std::size_t>(i * u + k)] + g(i * u + k)) / tau);
          const auto soft = oracle::softmax(z);
          for (Index k = 0; k < u; ++k) {
            const auto idx = static_cast<std::size_t>(i * u + k);
            total += c(i * u + k) * (xi[idx] * h[idx] + soft[static_cast<std::size_t>(k)] * h0[idx]);
          }
        }
        return total;
      };
      const auto num_w = oracle::finite_difference([&](const oracle::Vec& w) { return surrogate(w, b_start); }, w_start);
      const auto num_b = oracle::finite_difference([&](const oracle::Vec& b) { return surrogate(w_start, b); }, b_start);
      const Array<double> gw = layer.weight.grad(), gb = layer.bias.grad();
      worst = std::max(worst, oracle::norm_relative_error({gw.data(), gw.data() + gw.size()}, num_w));
      worst = std::max(worst, oracle::norm_relative_error({gb.data(), gb.data() + gb.size()}, num_b));
    }
  }
  return {worst < 1e-4, fmt("%.0f instances, max relative error %.3g (limit 1e-4)", instances, worst)};
}

Outcome kl_correctness() {
  Rng rng(303);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index u = 2 + static_cast<Index>(rng.uniform_index(31));
    oracle::Vec logits;
    const double spread = 0.1 + 5.0 * rng.uniform();
    for (Index k = 0; k < u; ++k) logits.push_back(spread * rng.normal());
    const auto p = oracle::softmax(logits);
    const Array<double> pi = Eigen::Map<const Array<double>>(p.data(), u);
    worst = std::max(worst, std::abs(kl_categorical_uniform(pi, {u}) - oracle::kl_uniform(p)));
  }
  double edge = 0.0;
  for (Index u : {2, 5, 16}) {
    edge = std::max(edge, std::abs(kl_categorical_uniform(Array<double>(Array<double>::Constant(u, 1.0 / static_cast<double>(u))), {u})));
    Array<double> onehot = Array<double>::Zero(u);
    onehot(u - 1) = 1.0;
    edge = std::max(edge, std::abs(kl_categorical_uniform(onehot, {u}) - std::log(static_cast<double>(u))));
  }
  return {worst < 1e-7 && edge < 1e-12, fmt("max |diff| %.3g on 1000 random pi, %.3g at uniform/degenerate", worst, edge)};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct ParityCase {
  std::string name;
  ModelSpec spec;
  TrainConfig config;
  std::function<Dataset(Rng&)> data;
};

Outcome training_parity() {
  std::vector<ParityCase> cases;
  {
    ParityCase c{"two-moons mlp", {}, {}, [](Rng& rng) { return make_two_moons(2000, 0.1, rng); }};
    c.spec.widths = {64, 64};
    c.config.learning_rate = 0.01;
    c.config.epochs = 30;
    c.config.batch_size = 64;
    cases.push_back(c);
  }
  {
    ParityCase c{"shapes mlp", {}, {}, [](Rng& rng) { return make_shapes(2000, 16, 0.2, rng); }};
    c.spec.input_dim = 256;
    c.spec.widths = {128};
    c.spec.classes = 10;
    c.config.learning_rate = 0.003;
    c.config.epochs = 15;
    c.config.batch_size = 64;
    cases.push_back(c);
  }
  {
    ParityCase c{"shapes conv", {}, {}, [](Rng& rng) { return make_shapes(2000, 16, 0.2, rng); }};
    c.spec.kind = ModelKind::conv;
    c.spec.widths = {8, 16};
    c.spec.strides = {2, 2};
    c.spec.classes = 10;
    c.config.learning_rate = 0.005;
    c.config.epochs = 12;
    c.config.batch_size = 64;
    cases.push_back(c);
  }
  std::ostringstream detail;
  bool ok = true;
  for (const auto& c : cases) {
    std::vector<double> lwta_acc, base_acc;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Rng data_rng(1000 + seed);
      Dataset data = c.data(data_rng);
      data.sample_shape = c.spec.input_shape();
      const auto [train_set, test_set] = split_dataset(data, 0.2, data_rng);
      for (Index u : {2, 1}) {
        ModelSpec spec = c.spec;
        spec.competitors = {u};
        TrainConfig config = c.config;
        config.seed = seed;
        Rng init(seed);
        Model model = build_model(spec, init);
        train(model, train_set, config);
        Rng eval(seed + 7);
        (u == 2 ? lwta_acc : base_acc).push_back(evaluate_accuracy(model, test_set, config.inference_samples, eval));
      }
    }
    const double a = median(lwta_acc), b = median(base_acc);
    ok = ok && a >= b - 0.02;
    detail << c.name << ": lwta " << fmt("%.4f", a) << " vs baseline " << fmt("%.4f", b) << "; ";
  }
  return {ok, detail.str()};
}

Outcome winner_frequency() {
  Rng rng(404);
  std::ostringstream detail;
  bool ok = true;
  for (Index u : {2, 4, 8}) {
    const Index draws = 10000;
    const auto s = sample_gumbel_softmax_st(Tensor::zeros({draws, u}), 0.67f, GumbelSource<float>(rng));
    double worst = 0.0;
    for (Index k = 0; k < u; ++k) {
      double wins = 0.0;
      for (Index i = 0; i < draws; ++i) wins += s.xi(i * u + k);
      worst = std::max(worst, std::abs(wins / static_cast<double>(draws) - 1.0 / static_cast<double>(u)));
    }
    ok = ok && worst <= 0.02;
    detail << "U=" << u << " max|freq-1/U|=" << fmt("%.4f", worst) << "; ";
  }
  return {ok, detail.str()};
}

Outcome matching_oracle() {
  Rng rng(505);
  double worst = 0.0;
  int argmax_mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.uniform_index(19));
    const Index m = 2 + static_cast<Index>(rng.uniform_index(9));
    const Index d = 3 + static_cast<Index>(rng.uniform_index(6));
    RowMatrix<float> images(n, d), texts(m, d);
    for (Index i = 0; i < images.size(); ++i) images.data()[i] = static_cast<float>(rng.normal());
    for (Index i = 0; i < texts.size(); ++i) texts.data()[i] = static_cast<float>(rng.normal());
    std::vector<std::string> names;
    for (Index k = 0; k < m; ++k) names.push_back("c" + std::to_string(k));
    const auto p = build_concept_matrix(images, texts, names);
    oracle::Mat pm(static_cast<std::size_t>(n), oracle::Vec(static_cast<std::size_t>(m)));
    for (Index i = 0; i < n; ++i) {
      for (Index k = 0; k < m; ++k) pm[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = p.similarities(i, k);
    }
    std::vector<ActivationRecord> records;
    for (Index r = 0; r < 4; ++r) {
      VectorXd q(n);
      for (Index i = 0; i < n; ++i) q(i) = rng.uniform() < 0.5 ? 0.0 : rng.normal();
      records.push_back({{"layer", r / 2, r % 2, 2}, q});
    }
    for (SimilarityKind kind : {SimilarityKind::cos, SimilarityKind::cos3, SimilarityKind::rank, SimilarityKind::wpmi,
                                SimilarityKind::softwpmi}) {
      const SimilarityFunction sim(kind, p.similarities);
      const auto descriptors = match_neurons(records, p, sim);
      for (std::size_t r = 0; r < records.size(); ++r) {
        const oracle::Vec q(records[r].q.data(), records[r].q.data() + n);
        oracle::Vec expected;
        switch (kind) {
          case SimilarityKind::cos: expected = oracle::sim_cos(q, pm); break;
          case SimilarityKind::cos3: expected = oracle::sim_cos3(q, pm); break;
          case SimilarityKind::rank: expected = oracle::sim_rank(q, pm); break;
          case SimilarityKind::wpmi:
            expected = oracle::sim_wpmi(q, pm, static_cast<std::size_t>(std::max<Index>(1, std::min<Index>(100, n / 10))), 0.3);
            break;
          case SimilarityKind::softwpmi: expected = oracle::sim_softwpmi(q, pm, 0.3, 1.0); break;
        }
        const auto& got = descriptors[r].scores;
        for (Index k = 0; k < m; ++k) worst = std::max(worst, std::abs(got(k) - expected[static_cast<std::size_t>(k)]));
        // Scores equal within the tolerance count as ties; either index is then a valid argmax.
        const double best = expected[oracle::argmax(expected)];
        if (expected[static_cast<std::size_t>(descriptors[r].concept_index)] < best - 1e-6) ++argmax_mismatches;
      }
    }
  }
  return {worst <= 1e-6 && argmax_mismatches == 0,
          fmt("50 instances x 5 functions, max score diff %.3g, %.0f argmax mismatches", worst, argmax_mismatches)};
}

struct CliRun {
  int code;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, err.str()};
}

double read_metric(const fs::path& file, const std::string& key) {
  const std::string text = read_file(file);
  const auto at = text.find(key + ",");
  if (at == std::string::npos) throw Error("metric " + key + " missing from " + file.string());
  return std::stod(text.substr(at + key.size() + 1));
}

Outcome identification_fixture() {
  const fs::path dir = fs::temp_directory_path() / "lwta_acceptance_identification";
  fs::remove_all(dir);
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  const std::vector<std::string> data{"--set", "data.kind=shapes", "--set", "model.input_dim=256", "--set",
                                      "model.classes=10"};
  auto with = [&](std::vector<std::string> args) {
    args.insert(args.end(), data.begin(), data.end());
    return args;
  };
  if (auto r = cli(with({"synth", "--seed", "11", "--out", p("fixture"), "--set", "data.n=300"})); r.code != 0) {
    return {false, "synth failed: " + r.err};
  }
  if (auto r = cli(with({"train", "--seed", "12", "--out", p("model"), "--set", "data.n=2000", "--set",
                         "model.widths=64", "--set", "train.epochs=10", "--set", "train.lr=0.003"}));
      r.code != 0) {
    return {false, "train failed: " + r.err};
  }
  if (auto r = cli({"dissect", "--seed", "13", "--out", p("dissect"), "--checkpoint", p("model/model.ckpt"),
                    "--probes", p("fixture/probes.bin"), "--images", p("fixture/image_embeddings.bin"), "--texts",
                    p("fixture/text_embeddings.bin"), "--concepts", p("fixture/concepts.txt"), "--set",
                    "dissect.layer=head"});
      r.code != 0) {
    return {false, "dissect failed: " + r.err};
  }
  const std::vector<std::string> eval_tail{"--classes", p("fixture/classes.txt"), "--concepts",
                                           p("fixture/concepts.txt")};
  std::vector<std::string> eval{"eval", "--out", p("eval"), "--descriptors", p("dissect/descriptors.csv")};
  eval.insert(eval.end(), eval_tail.begin(), eval_tail.end());
  if (auto r = cli(eval); r.code != 0) return {false, "eval failed: " + r.err};
  const double accuracy = read_metric(p("eval/metrics.csv"), "identification_accuracy");

  // Shuffled descriptors: permute the matched labels across head neurons.
  auto descriptors = descriptors_from_csv(read_file(p("dissect/descriptors.csv")));
  Rng rng(14);
  double shuffled_total = 0.0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    std::vector<std::size_t> perm(descriptors.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    auto shuffled = descriptors;
    for (std::size_t k = 0; k < perm.size(); ++k) {
      shuffled[k].label = descriptors[perm[k]].label;
      shuffled[k].concept_index = descriptors[perm[k]].concept_index;
    }
    write_file_atomic(p("shuffled.csv"), descriptors_to_csv(shuffled));
    std::vector<std::string> args{"eval", "--out", p("eval_shuffled"), "--descriptors", p("shuffled.csv")};
    args.insert(args.end(), eval_tail.begin(), eval_tail.end());
    if (auto r = cli(args); r.code != 0) return {false, "shuffled eval failed: " + r.err};
    shuffled_total += read_metric(p("eval_shuffled/metrics.csv"), "identification_accuracy");
  }
  const double shuffled = shuffled_total / trials;
  fs::remove_all(dir);
  return {accuracy == 1.0 && std::abs(shuffled - 0.1) <= 0.1,
          fmt("accuracy %.4f; mean over %.0f shuffles %.4f (target 0.1 +- 0.1)", accuracy, trials, shuffled)};
}

Outcome report_structure() {
  const fs::path dir = fs::temp_directory_path() / "lwta_acceptance_report";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  ModelSpec spec;
  spec.kind = ModelKind::encoder;
  spec.height = spec.width = 16;
  spec.patch = 4;
  spec.dim = 32;
  spec.depth = 2;
  spec.widths = {768};
  spec.competitors = {16};
  spec.classes = 10;
  Rng rng(606);
  const Model model = build_model(spec, rng);
  save_checkpoint(p("model.ckpt"), model, {});
  std::vector<NeuronDescriptor> descriptors;
  for (const std::string layer : {"block0", "block1"}) {
    for (Index k = 0; k < 768; ++k) descriptors.push_back({{layer, k / 16, k % 16, 16}, k % 10, "c" + std::to_string(k % 10), 0.0, {}});
  }
  write_file_atomic(p("descriptors.csv"), descriptors_to_csv(descriptors));
  const Index examples = 20;
  write_matrix(p("probes.bin"), to_matrix_file(Shape{examples, 1, 16, 16}, random_inputs(examples, spec, rng).data()));

  bool ok = true;
  Index min_pool = 1 << 30, max_pool = 0;
  for (Index i = 0; i < examples; ++i) {
    for (const std::string layer : {"block0", "block1"}) {
      for (const std::string mode : {"deterministic", "stochastic"}) {
        std::ostringstream out, err;
        const int code = run_cli({"report", "--seed", std::to_string(i), "--mode", mode, "--out", p("r"),
                                  "--checkpoint", p("model.ckpt"), "--descriptors", p("descriptors.csv"), "--probes",
                                  p("probes.bin"), "--set", "report.index=" + std::to_string(i), "--set",
                                  "report.layer=" + layer},
                                 out, err);
        ok = ok && code == 0 && out.str().find("Active neurons: 48/768 = 6.25%") != std::string::npos;
      }
      Shape shape{1, 1, 16, 16};
      const auto x = Tensor::constant(shape, random_inputs(1, spec, rng).data());
      const auto report = per_example_report(model, x, {layer, TapKind::class_token}, descriptors, 1000, 0, {});
      const auto pool = static_cast<Index>(report.top.size());
      min_pool = std::min(min_pool, pool);
      max_pool = std::max(max_pool, pool);
      ok = ok && report.active == 48 && pool <= 48;
    }
  }
  fs::remove_all(dir);
  return {ok, fmt("line \"Active neurons: 48/768 = 6.25%%\" printed for every run; nonzero pool %.0f..%.0f of 48",
                  static_cast<double>(min_pool), static_cast<double>(max_pool))};
}

Outcome conv_dense_consistency() {
  Rng rng(707);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index c = 1 + static_cast<Index>(rng.uniform_index(6));
    const Index blocks = 1 + static_cast<Index>(rng.uniform_index(4));
    const Index u = 2 + static_cast<Index>(rng.uniform_index(7));
    const Index n = 1 + static_cast<Index>(rng.uniform_index(5));
    auto conv = LwtaConvLayer<float>::create(c, blocks, u, 1, 1, 0, rng);
    conv.bias.mutable_data() = Array<float>::NullaryExpr(blocks * u, [&] { return static_cast<float>(rng.normal()); });
    LwtaDenseLayer<float> dense;
    dense.blocks = blocks;
    dense.competitors = u;
    dense.weight = Tensor::constant({c, blocks * u}, transpose(reshape(conv.weight, {blocks * u, c})).data());
    dense.bias = conv.bias;
    Array<float> x(n * c), g(n * blocks * u);
    for (Index i = 0; i < x.size(); ++i) x(i) = static_cast<float>(rng.normal());
    for (Index i = 0; i < g.size(); ++i) g(i) = static_cast<float>(rng.gumbel());
    const auto a = lwta_conv_forward(conv, Tensor::constant({n, c, 1, 1}, x), GumbelSource<float>(g));
    const auto d = lwta_dense_forward(dense, Tensor::constant({n, c}, x), GumbelSource<float>(g));
    const bool same = a.output.size() == d.output.size() &&
                      std::memcmp(a.output.data().data(), d.output.data().data(), sizeof(float) * a.output.size()) == 0 &&
                      (a.sample.xi == d.sample.xi).all();
    mismatches += same ? 0 : 1;
  }
  return {mismatches == 0, fmt("%.0f of 100 instances differ", mismatches)};
}

Outcome format_robustness() {
  Rng rng(808);
  int roundtrip_failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    MatrixFile m;
    const auto rank = 1 + rng.uniform_index(4);
    std::uint64_t count = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      m.dims.push_back(1 + rng.uniform_index(6));
      count *= m.dims.back();
    }
    for (std::uint64_t i = 0; i < count; ++i) m.values.push_back(static_cast<float>(rng.normal()));
    const MatrixFile back = decode_matrix(encode_matrix(m));
    if (back.dims != m.dims || std::memcmp(back.values.data(), m.values.data(), count * sizeof(float)) != 0) {
      ++roundtrip_failures;
    }
  }

  int crashes = 0, silent = 0, rejected = 0, reinterpreted = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    MatrixFile m;
    const auto rank = 1 + rng.uniform_index(3);
    std::uint64_t count = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      m.dims.push_back(1 + rng.uniform_index(4));
      count *= m.dims.back();
    }
    for (std::uint64_t i = 0; i < count; ++i) m.values.push_back(static_cast<float>(rng.normal()));
    std::string bytes = encode_matrix(m);
    const std::size_t header = matrix_header_size(rank);
    const auto flips = 1 + rng.uniform_index(3);
    for (std::uint64_t f = 0; f < flips; ++f) {
      const auto at = rng.uniform_index(header);
      const auto mode = rng.uniform_index(3);
      if (mode == 0) {
        bytes[at] = static_cast<char>(bytes[at] ^ static_cast<char>(1u << rng.uniform_index(8)));
      } else if (mode == 1) {
        bytes[at] = static_cast<char>(rng.uniform_index(256));
      } else {
        bytes[at] = static_cast<char>(0xFF);
      }
    }
    if (rng.uniform() < 0.1) bytes.resize(rng.uniform_index(bytes.size()));
    try {
      const MatrixFile got = decode_matrix(bytes);
      // A successful parse is only acceptable when it describes exactly these bytes.
      if (encode_matrix(got) != bytes) {
        ++silent;
      } else {
        ++reinterpreted;
      }
    } catch (const ParseError&) {
      ++rejected;
    } catch (...) {
      ++crashes;
    }
  }
  return {roundtrip_failures == 0 && crashes == 0 && silent == 0,
          "100 round trips, " + std::to_string(roundtrip_failures) + " failures; 10000 mutations: " +
              std::to_string(rejected) + " rejected, " + std::to_string(reinterpreted) +
              " valid reinterpretations, " + std::to_string(silent) + " silent misparses, " + std::to_string(crashes) +
              " crashes"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"sparsity_law", 10.0, sparsity_law},
      {"straight_through_gradient", 30.0, straight_through_gradients},
      {"kl_correctness", 5.0, kl_correctness},
      {"training_parity", 600.0, training_parity},
      {"winner_frequency", 10.0, winner_frequency},
      {"matching_oracle", 10.0, matching_oracle},
      {"identification_fixture", 60.0, identification_fixture},
      {"report_structure", 0.0, report_structure},
      {"conv_dense_consistency", 0.0, conv_dense_consistency},
      {"format_robustness", 0.0, format_robustness},
  };
  const std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.time_limit_s <= 0.0 || seconds < c.time_limit_s;
    const bool pass = outcome.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("%s %s: %s [%.1fs%s]\n", pass ? "PASS" : "FAIL", c.name.c_str(), outcome.detail.c_str(), seconds,
                in_time ? "" : fmt(", limit %.0fs", c.time_limit_s).c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
