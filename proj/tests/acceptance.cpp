// Desk-scale acceptance suite: synthetic 10-class 32x32 signs, small_cnn,
// seed 42. Prints one PASS/FAIL line per criterion and exits nonzero if any
// criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "poisonlab/attack.hpp"
#include "poisonlab/defense.hpp"
#include "poisonlab/detection.hpp"
#include "poisonlab/harness.hpp"
#include "poisonlab/synthetic.hpp"

using namespace poisonlab;

namespace {

constexpr std::uint64_t kSeed = 42;
constexpr std::array<std::uint64_t, 3> kSeeds = {42, 43, 44};
constexpr std::array<int, 3> kEps = {16, 8, 4};  // 1/255 units, strongest first

constexpr double kBaselineMin = 0.95;
constexpr double kLambda = 0.99;
constexpr double kVictimFactor = 0.5;
constexpr double kProportionSlack = 0.05;
constexpr double kDetectStrong = 0.95;  // eps 8 and 16
constexpr double kDetectWeak = 0.90;    // eps 4
constexpr double kMitigationSlack = 0.05;
constexpr double kPropertyBudgetSeconds = 120.0;

struct Verdict {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  verdicts.push_back({id, name, pass, detail});
  std::printf("[%s] %d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

void note(const std::string& msg) {
  static const auto t0 = std::chrono::steady_clock::now();
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::fprintf(stderr, "[%7.0fs] %s\n", s, msg.c_str());
}

float eps_of(int e) { return static_cast<float>(e) / 255.0f; }

// Naive double-precision small_cnn forward, sharing only the weights with the
// library model. Used as the finite-difference oracle.
class ReferenceCnn {
 public:
  explicit ReferenceCnn(const Model& m) {
    for (const auto* p : m.network().parameters()) {
      const std::string layer = p->name.substr(0, p->name.find('.'));
      std::vector<double> v(p->value.values().begin(), p->value.values().end());
      if (p->name.ends_with("weight")) {
        layers_[layer].w = std::move(v);
        layers_[layer].shape = p->value.shape();
      } else {
        layers_[layer].b = std::move(v);
      }
    }
  }

  double loss(const std::vector<double>& x, const std::vector<int>& labels) const {
    const std::size_t per = 3 * 32 * 32;
    double total = 0.0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
      std::vector<double> a(x.begin() + n * per, x.begin() + (n + 1) * per);
      a = relu(conv(a, 3, 32, layers_.at("conv1")));
      a = pool(relu(conv(a, 32, 32, layers_.at("conv2"))), 64, 32);
      a = pool(relu(conv(a, 64, 16, layers_.at("conv3"))), 64, 16);
      a = linear(relu(linear(a, layers_.at("fc1"))), layers_.at("fc2"));
      const double mx = *std::max_element(a.begin(), a.end());
      double z = 0.0;
      for (double v : a) z += std::exp(v - mx);
      total += mx + std::log(z) - a[labels[n]];
    }
    return total;
  }

 private:
  struct Layer {
    std::vector<double> w, b;
    Shape4 shape;
  };

  static std::vector<double> conv(const std::vector<double>& x, int c, int hw, const Layer& l) {
    std::vector<double> y(static_cast<std::size_t>(l.shape.n) * hw * hw);
    for (int o = 0; o < l.shape.n; ++o)
      for (int yy = 0; yy < hw; ++yy)
        for (int xx = 0; xx < hw; ++xx) {
          double acc = l.b[o];
          for (int i = 0; i < c; ++i)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj) {
                const int yi = yy + ki - 1, xj = xx + kj - 1;
                if (yi < 0 || xj < 0 || yi >= hw || xj >= hw) continue;
                acc += l.w[((o * c + i) * 3 + ki) * 3 + kj] * x[(static_cast<std::size_t>(i) * hw + yi) * hw + xj];
              }
          y[(static_cast<std::size_t>(o) * hw + yy) * hw + xx] = acc;
        }
    return y;
  }

  static std::vector<double> relu(std::vector<double> v) {
    for (double& a : v) a = std::max(a, 0.0);
    return v;
  }

  static std::vector<double> pool(const std::vector<double>& x, int c, int hw) {
    const int h = hw / 2;
    std::vector<double> y(static_cast<std::size_t>(c) * h * h);
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < h; ++j) {
          const std::size_t base = (static_cast<std::size_t>(ch) * hw + 2 * i) * hw + 2 * j;
          y[(static_cast<std::size_t>(ch) * h + i) * h + j] = std::max({x[base], x[base + 1], x[base + hw], x[base + hw + 1]});
        }
    return y;
  }

  static std::vector<double> linear(const std::vector<double>& x, const Layer& l) {
    const int in = l.shape.c;
    std::vector<double> y(l.shape.n);
    for (int o = 0; o < l.shape.n; ++o) {
      double acc = l.b[o];
      for (int k = 0; k < in; ++k) acc += l.w[static_cast<std::size_t>(o) * in + k] * x[k];
      y[o] = acc;
    }
    return y;
  }

  std::map<std::string, Layer> layers_;
};

AttackConfig attack_config(int eps, std::uint64_t seed) {
  AttackConfig a;
  a.epsilon = eps_of(eps);
  a.seed = seed;
  a.lambda_stop = kLambda;
  a.surrogate_optimizer = OptimizerConfig::sgd();
  a.surrogate_optimizer.seed = seed;
  return a;
}

VictimConfig victim_config(std::uint64_t seed) {
  VictimConfig v;
  v.architecture = Architecture::small_cnn;
  v.optimizer = OptimizerConfig::sgd();
  v.optimizer.seed = seed;
  return v;
}

double train_and_eval(const LabeledDataset& train_set, const LabeledDataset& predict, std::uint64_t seed) {
  const VictimConfig v = victim_config(seed);
  auto r = train(build_model(v.architecture, train_set.num_classes, seed, train_set.image_shape()), train_set, v.optimizer);
  return evaluate(r.model, predict);
}

// Rank of each value among `v` in ascending order (0 = smallest).
std::vector<int> ranks(const std::vector<double>& v) {
  std::vector<int> r(v.size(), 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = 0; j < v.size(); ++j) r[i] += v[j] < v[i] || (v[j] == v[i] && j < i);
  }
  return r;
}

// Criterion 8: property checks, timed as one suite.
void property_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> failed;
  auto check = [&](bool ok, const char* what) {
    if (!ok) failed.emplace_back(what);
  };

  Rng rng = make_stream(kSeed, {8});
  {
    bool bound = true, idem = true;
    for (float eps : {0.0f, 4.0f / 255, 16.0f / 255}) {
      std::vector<float> v(10000);
      for (float& x : v) x = static_cast<float>(uniform(rng, -1, 1));
      project_linf_inplace(v, eps);
      bound &= linf_norm(v) <= eps;
      auto again = v;
      project_linf_inplace(again, eps);
      idem &= again == v;
    }
    check(bound, "projection bound");
    check(idem, "projection idempotence");
  }
  {
    SyntheticSignSpec s;
    s.train_per_class = 2;
    s.eval_per_class = 1;
    const auto d = generate_synthetic_signs(s);
    bool gray = true, inv = true, jit = true;
    for (const auto& img : d.train.images) {
      const Image g = grayscale(img), gg = grayscale(g);
      for (std::size_t i = 0; i < g.size(); ++i) gray &= std::abs(g.values()[i] - gg.values()[i]) <= 1e-6f;
      Image q = img;
      for (float& v : q.values()) v = std::round(v * 16777216.0f) / 16777216.0f;
      inv &= invert(invert(q)) == q;
      jit &= color_jitter(img, JitterFactors{1.0, 0.0}) == img;
    }
    check(gray, "grayscale idempotent");
    check(inv, "invert involution");
    check(jit, "jitter identity");

    double worst = 0.0;
    for (int i = 0; i < 100000; ++i) {
      const Rgb p{static_cast<float>(uniform01(rng)), static_cast<float>(uniform01(rng)), static_cast<float>(uniform01(rng))};
      const Rgb q = hsv_to_rgb(rgb_to_hsv(p));
      worst = std::max({worst, std::abs(double(p.r) - q.r), std::abs(double(p.g) - q.g), std::abs(double(p.b) - q.b)});
    }
    check(worst < 1e-5, "hsv round trip");

    Model m = build_model(Architecture::small_cnn, 10, kSeed);
    // sign images are piecewise flat, so max-pool windows tie; use pixel values in general position
    std::vector<std::size_t> idx = {0, 5, 11};
    Tensor x(Shape4{3, 3, 32, 32});
    for (float& v : x.values()) v = static_cast<float>(uniform(rng, 0.2, 0.8));
    const auto labels = gather_labels(d.train, idx);
    const Tensor g = grad_wrt_input(m, x, labels);
    const ReferenceCnn ref(m);
    const std::vector<double> xd(x.values().begin(), x.values().end());
    const double h = 1e-3;
    double num = 0.0, den = 0.0;
    for (int k = 0; k < 20; ++k) {
      const std::size_t j = uniform_index(rng, x.size());
      std::vector<double> plus = xd, minus = xd;
      plus[j] += h;
      minus[j] -= h;
      const double fd = (ref.loss(plus, labels) - ref.loss(minus, labels)) / (2 * h);
      num += (fd - g[j]) * (fd - g[j]);
      den += double(g[j]) * g[j];
    }
    check(den > 0.0 && std::sqrt(num / den) <= 1e-2, "finite-difference gradient");

    AttackConfig a = attack_config(16, kSeed);
    a.max_rounds = 2;
    check(generate(d.train, Architecture::small_cnn, a) == generate(d.train, Architecture::small_cnn, a), "generate reproducible");
    OptimizerConfig o = OptimizerConfig::sgd();
    o.epochs = 2;
    o.batch_size = 8;
    check(train(build_model(Architecture::small_cnn, 10, kSeed), d.train, o).model.parameter_hash() ==
              train(build_model(Architecture::small_cnn, 10, kSeed), d.train, o).model.parameter_hash(),
          "train reproducible");
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string detail = fmt::format("{} checks in {:.1f}s (budget {:.0f}s)", 10, secs, kPropertyBudgetSeconds);
  for (const auto& f : failed) detail += "; failed: " + f;
  report(8, "property suites", failed.empty() && secs < kPropertyBudgetSeconds, detail);
}

}  // namespace

int main() {
  tune_allocator();
  property_suite();

  SyntheticSignSpec spec;
  spec.seed = kSeed;
  const auto data = generate_synthetic_signs(spec);
  note(fmt::format("dataset: {} train / {} predict", data.train.size(), data.predict.size()));

  // 1. clean baseline
  const double baseline = train_and_eval(data.train, data.predict, kSeed);
  note(fmt::format("baseline {:.4f}", baseline));
  report(1, "clean baseline", baseline >= kBaselineMin, fmt::format("predict_acc {:.4f} (>= {:.2f})", baseline, kBaselineMin));

  // Perturbation sets for every (seed, eps); shared by criteria 2-7.
  std::map<std::pair<std::uint64_t, int>, PerturbationSet> psets;
  std::map<std::pair<std::uint64_t, int>, double> attacked;
  for (std::uint64_t seed : kSeeds) {
    for (int e : kEps) {
      auto pset = generate(data.train, Architecture::small_cnn, attack_config(e, seed));
      note(fmt::format("seed {} eps {}: rounds {} train_acc(x+delta) {:.4f}", seed, e, pset.provenance.rounds_used,
                       pset.provenance.final_train_accuracy));
      const double acc = train_and_eval(apply(data.train, pset), data.predict, seed);
      note(fmt::format("seed {} eps {}: victim predict_acc {:.4f}", seed, e, acc));
      attacked[{seed, e}] = acc;
      psets.emplace(std::pair{seed, e}, std::move(pset));
      if (seed == kSeed && e == 16) {
        const auto& p = psets.at({seed, e}).provenance;
        const double victim = acc;
        const bool ok = p.final_train_accuracy >= kLambda && victim <= kVictimFactor * baseline;
        report(2, "attack efficacy", ok,
               fmt::format("surrogate train_acc {:.4f} (>= {:.2f}), victim predict_acc {:.4f} (<= {:.4f})", p.final_train_accuracy,
                           kLambda, victim, kVictimFactor * baseline));
      }
    }
  }
  const PerturbationSet& main_set = psets.at({kSeed, 16});
  const double attack16 = attacked.at({kSeed, 16});
  const bool attack_holds = main_set.provenance.final_train_accuracy >= kLambda && attack16 <= kVictimFactor * baseline;

  // 3. strength ordering
  {
    bool ok = true;
    std::array<double, 3> mean{};
    std::string detail;
    for (std::uint64_t seed : kSeeds) {
      std::vector<double> v;
      for (int e : kEps) v.push_back(attacked.at({seed, e}));
      const auto r = ranks(v);
      for (int i = 0; i < 3; ++i) {
        ok &= std::abs(r[i] - i) <= 1;
        mean[i] += v[i] / kSeeds.size();
      }
      detail += fmt::format("seed {}: {:.4f}/{:.4f}/{:.4f}; ", seed, v[0], v[1], v[2]);
    }
    ok &= mean[0] < mean[1] && mean[1] < mean[2];
    detail += fmt::format("mean {:.4f} < {:.4f} < {:.4f}", mean[0], mean[1], mean[2]);
    report(3, "strength ordering (16 < 8 < 4)", ok, detail);
  }

  // 4. poison proportion
  {
    bool ok = attack_holds;
    std::string detail;
    for (double p : {0.9, 0.75, 0.5}) {
      const auto mixed = mix_poison(data.train, main_set, p, kSeed);
      const double acc = train_and_eval(mixed.dataset, data.predict, kSeed);
      note(fmt::format("proportion {:g}: predict_acc {:.4f}", p, acc));
      ok &= std::abs(acc - baseline) <= kProportionSlack;
      detail += fmt::format("p={:g}: {:.4f}; ", p, acc);
    }
    detail += fmt::format("p=1: {:.4f} (criterion 2 {})", attack16, attack_holds ? "holds" : "fails");
    report(4, "poison proportion", ok, detail);
  }

  // 5. detection
  {
    bool ok = true;
    std::array<double, 3> mean_success{};
    std::string detail;
    for (std::uint64_t seed : kSeeds) {
      std::array<double, 3> success{}, initial{};
      for (int i = 0; i < 3; ++i) {
        const auto& pset = psets.at({seed, kEps[i]});
        const auto train_c = make_detection_corpus(data.train, pset, seed, 0.5);
        const auto held_out = make_detection_corpus(data.predict, pset, seed, 0.5);
        OptimizerConfig o = OptimizerConfig::adam();
        o.seed = seed;
        const auto tr = train_detector(train_c, &held_out, o);
        success[i] = *scan(tr.detector, held_out).success_rate;
        initial[i] = tr.log.records.front().val_loss;
        mean_success[i] += success[i] / kSeeds.size();
        ok &= success[i] >= (kEps[i] == 4 ? kDetectWeak : kDetectStrong);
        note(fmt::format("detector seed {} eps {}: success {:.4f} initial val BCE {:.4f}", seed, kEps[i], success[i], initial[i]));
      }
      ok &= initial[2] > initial[0];
      detail += fmt::format("seed {}: success {:.4f}/{:.4f}/{:.4f} initBCE(4)={:.4f} vs (16)={:.4f}; ", seed, success[0], success[1],
                            success[2], initial[2], initial[0]);
    }
    ok &= mean_success[0] >= mean_success[1] && mean_success[1] >= mean_success[2];
    detail += fmt::format("mean success {:.4f} >= {:.4f} >= {:.4f}", mean_success[0], mean_success[1], mean_success[2]);
    report(5, "detection", ok, detail);
  }

  // 6. mitigation
  const LabeledDataset poisoned = apply(data.train, main_set);
  MitigationConfig m;
  m.victim = victim_config(kSeed);
  m.seed = kSeed;
  m.target_accuracy = std::max(1e-6, baseline - kMitigationSlack);
  const auto mit = mitigate(poisoned, data.predict, m, [](const MitigationStep& s) {
    note(fmt::format("mitigation iteration {} (+{}): {} images, predict_acc {:.4f}", s.iteration, to_string(s.transform), s.train_size,
                     s.predict_accuracy));
  });
  {
    std::string used;
    for (auto t : mit.transforms_used) used += (used.empty() ? "" : "+") + to_string(t);
    report(6, "mitigation", mit.accuracy >= baseline - kMitigationSlack,
           fmt::format("{:.4f} -> {:.4f} with {} (>= {:.4f})", attack16, mit.accuracy, used, baseline - kMitigationSlack));
  }

  // 7. mitigation vs adversarial training
  {
    ATConfig at;  // radius 8/255, step 0.8/255, 10 steps, 20 epochs
    const auto r = adversarial_train(poisoned, data.predict, at, victim_config(kSeed), [](const EpochRecord& rec) {
      note(fmt::format("advtrain epoch {}: loss {:.4f} predict_acc {:.4f}", rec.epoch, rec.train_loss, rec.predict_accuracy));
    });
    const double at_acc = evaluate(r.model, data.predict);
    report(7, "defense ordering", mit.accuracy >= at_acc,
           fmt::format("mitigation {:.4f} >= adversarial training {:.4f}", mit.accuracy, at_acc));
  }

  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  std::printf("\nsummary\n");
  int failures = 0;
  for (const auto& v : verdicts) {
    std::printf("[%s] %d %s\n", v.pass ? "PASS" : "FAIL", v.id, v.name.c_str());
    failures += !v.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(verdicts.size()) - failures, verdicts.size());
  return failures == 0 ? 0 : 1;
}
