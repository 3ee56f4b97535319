// Acceptance run: one PASS/FAIL line per criterion. Criteria 1-4 are
// property checks against independent oracles; 5-9 share one training
// pipeline (upperbound, adaptive finetune, Random, Random+) that is then
// repeated in a second directory for the determinism check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include "cost_oracle.hpp"
#include "gatevit/harness.hpp"
#include "gatevit/objectives.hpp"
#include "support.hpp"

using namespace gatevit;
using gatevit::testing::DT;
using gatevit::testing::gradient_error;
using gatevit::testing::probe;
using gatevit::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

void scramble(BackboneParams<double>& p, Rng& rng, double amp) {
  p.for_each([&](const std::string&, DT& t) {
    for (auto& v : t.data()) v = amp * (2 * rng.uniform() - 1);
  });
}

DT random_images(const ModelConfig& c, std::size_t B, Rng& rng) {
  DT x({B, c.image_size, c.image_size, c.channels});
  for (auto& v : x.data()) v = 2 * rng.uniform() - 1;
  return x;
}

// ---------------------------------------------------------------------------
// 1. gates forced open reproduce the gate-free backbone

Verdict equivalence(std::size_t configs) {
  Rng rng(101);
  struct Grid {
    std::size_t image, patch;
  };
  const std::vector<Grid> grids{{4, 2}, {6, 2}, {8, 2}, {8, 4}, {12, 4}, {16, 4}};  // N = 4, 9, 16, 4, 9, 16
  const std::vector<std::size_t> heads{1, 2, 4};
  double worst = 0;
  std::size_t comparisons = 0;
  for (std::size_t k = 0; k < configs; ++k) {
    ModelConfig c;
    const Grid g = grids[rng.below(grids.size())];
    c.image_size = g.image;
    c.patch_size = g.patch;
    c.channels = 1 + rng.below(2);
    c.num_heads = heads[rng.below(heads.size())];
    c.embed_dim = c.num_heads * (1 + rng.below(32 / c.num_heads));
    c.num_blocks = 1 + rng.below(4);
    c.ffn_multiplier = 1 + rng.below(4);
    c.num_classes = 2 + rng.below(4);
    c.first_gated_block = rng.below(c.num_blocks);
    c.validate();
    auto bb = BackboneParams<double>::init(c, rng);
    scramble(bb, rng, 0.5);
    auto dp = DecisionParams<double>::init(c, rng, 100.0);
    const std::size_t B = 2 + rng.below(3);
    DT x = random_images(c, B, rng);
    DT vanilla = forward_vanilla(bb, x);
    std::vector<SamplePolicy> open(B, SamplePolicy::all_open(c));
    for (HeadSelectionMode mode : {HeadSelectionMode::Full, HeadSelectionMode::Partial})
      for (GateSource src : {GateSource::Open, GateSource::External, GateSource::Learned}) {
        GateControl ctl;
        ctl.source = src;
        ctl.mode = GateMode::Eval;
        ctl.head_mode = mode;
        ctl.external = &open;
        auto res = forward_adaptive(bb, src == GateSource::Learned ? &dp : nullptr, x, ctl);
        for (std::size_t i = 0; i < vanilla.size(); ++i) worst = std::max(worst, std::abs(res.logits[i] - vanilla[i]));
        ++comparisons;
      }
  }
  return {worst <= 1e-6, fmt("%zu random configs (L<=4, H<=4, N<=16, D<=32), %zu comparisons over open/external/learned "
                             "gates and both head modes; max |dlogit| %.2e (tol 1e-6)",
                             configs, comparisons, worst)};
}

// ---------------------------------------------------------------------------
// 2. central finite differences at 64-bit

Verdict gradients() {
  using Fn = std::function<DT(const std::vector<DT>&)>;
  struct Case {
    std::string name;
    Fn f;
    std::vector<DT> in;
  };
  Rng rng(202);
  auto r = [&](Shape s, double lo = -1, double hi = 1) { return random_tensor(std::move(s), rng, lo, hi); };
  const DT noise = random_tensor({3, 5}, rng, -2, 2, false);
  const DT soft_noise_k = random_tensor({3, 5}, rng, -1, 2, false), soft_noise_d = random_tensor({3, 5}, rng, -1, 2, false);
  std::vector<Case> cases{
      {"matmul", [](auto& v) { return nd::matmul(v[0], v[1]); }, {r({2, 3, 4}), r({4, 5})}},
      {"matmul_batched", [](auto& v) { return nd::matmul(v[0], v[1]); }, {r({2, 3, 4}), r({2, 4, 5})}},
      {"matmul_transposed", [](auto& v) { return nd::matmul(v[0], v[1], true); }, {r({2, 3, 4}), r({2, 5, 4})}},
      {"add_broadcast", [](auto& v) { return nd::add(v[0], v[1]); }, {r({2, 3, 4}), r({3, 4})}},
      {"sub_scalar", [](auto& v) { return nd::sub(v[0], v[1]); }, {r({2, 3}), r({})}},
      {"mul_broadcast", [](auto& v) { return nd::mul(v[0], v[1]); }, {r({2, 3, 4}), r({4})}},
      {"affine", [](auto& v) { return nd::affine(v[0], 1.7, -0.3); }, {r({3, 2})}},
      {"scale", [](auto& v) { return nd::scale(v[0], -2.5); }, {r({4})}},
      {"scale_prefix", [](auto& v) { return nd::scale_prefix(v[0], v[1]); }, {r({2, 3, 4}), r({2, 3})}},
      {"sigmoid", [](auto& v) { return nd::sigmoid(v[0]); }, {r({2, 5}, -4, 4)}},
      {"exp", [](auto& v) { return nd::exp(v[0]); }, {r({2, 5}, -2, 2)}},
      {"log", [](auto& v) { return nd::log(v[0]); }, {r({2, 5}, 0.2, 3)}},
      {"gelu", [](auto& v) { return nd::gelu(v[0]); }, {r({2, 5}, -3, 3)}},
      {"layernorm", [](auto& v) { return nd::layernorm(v[0], v[1], v[2], 1e-6); }, {r({2, 3, 6}, -2, 2), r({6}), r({6})}},
      {"softmax", [](auto& v) { return nd::softmax(v[0], 2); }, {r({2, 3, 4}, -3, 3)}},
      {"softmax_axis1", [](auto& v) { return nd::softmax(v[0], 1); }, {r({2, 3, 4}, -3, 3)}},
      {"weighted_softmax", [](auto& v) { return nd::weighted_softmax(v[0], v[1]); },
       {r({2, 3, 5}, -3, 3), r({2, 5}, 0.1, 1.0)}},
      {"reshape", [](auto& v) { return nd::reshape(v[0], {6, 2}); }, {r({3, 4})}},
      {"slice", [](auto& v) { return nd::slice(v[0], 1, 1, 2); }, {r({2, 4, 3})}},
      {"concat", [](auto& v) { return nd::concat<double>({v[0], v[1]}, 1); }, {r({2, 1, 3}), r({2, 4, 3})}},
      {"repeat_leading", [](auto& v) { return nd::repeat_leading(v[0], 3); }, {r({2, 3})}},
      {"sum", [](auto& v) { return nd::sum(v[0]); }, {r({2, 3})}},
      {"mean", [](auto& v) { return nd::mean(v[0]); }, {r({2, 3})}},
      {"cross_entropy", [](auto& v) { return cross_entropy(v[0], {2, 0, 1}); }, {r({3, 4}, -3, 3)}},
      {"gumbel_keep_from_logit", [&](auto& v) { return gumbel_keep_from_logit(v[0], noise, 0.7); }, {r({3, 5}, -2, 2)}},
      {"gumbel_softmax_keep", [&](auto& v) { return gumbel_softmax_keep(v[0], soft_noise_k, soft_noise_d, 0.9); },
       {r({3, 5}, 0.1, 0.9)}},
  };
  {
    DecisionBlock<double> d{r({6, 1}), r({1}), r({6, 3}), r({3}), r({6, 2}), r({2})};
    cases.push_back({"decision_forward",
                     [](auto& v) {
                       DecisionBlock<double> b{v[1], v[2], v[3], v[4], v[5], v[6]};
                       auto g = decision_forward(v[0], b);
                       return nd::concat<double>(
                           {nd::reshape(g.patch, {8}), nd::reshape(g.head, {6}), nd::reshape(g.block, {4})}, 0);
                     },
                     {r({2, 5, 6}), d.patch_w, d.patch_b, d.head_w, d.head_b, d.block_w, d.block_b}});
  }
  double worst_op = 0;
  std::string worst_name;
  std::uint64_t seed = 1;
  for (auto& c : cases) {
    const double e = gradient_error(probe(c.f, seed++), c.in);
    if (!(e <= worst_op)) {
      worst_op = e;
      worst_name = c.name;
    }
  }

  // Straight-through forwards the hard values and backpropagates as the soft
  // path, so its oracle is the finite-difference gradient of the soft path.
  {
    const DT hard({4}, std::vector<double>{0, 1, 1, 0});
    DT s = r({4}, -2, 2);
    const DT w = random_tensor({4}, rng, -1, 1, false);
    nd::Tape<double> tape;
    DT y;
    {
      nd::TapeScope<double> scope(tape);
      y = nd::straight_through(hard, nd::sigmoid(s));
      DT loss = nd::sum(nd::mul(y, w));
      tape.backward(loss);
    }
    double diff2 = 0, n2 = 0, h = 1e-6;
    bool forward_hard = true;
    for (std::size_t i = 0; i < 4; ++i) {
      forward_hard &= y[i] == hard[i];
      auto soft = [&](double v) { return w[i] / (1 + std::exp(-v)); };
      const double numeric = (soft(s[i] + h) - soft(s[i] - h)) / (2 * h);
      diff2 += (s.grad()[i] - numeric) * (s.grad()[i] - numeric);
      n2 += numeric * numeric;
    }
    const double e = forward_hard ? std::sqrt(diff2 / n2) : 1.0;
    if (!(e <= worst_op)) {
      worst_op = e;
      worst_name = "straight_through";
    }
  }

  // End to end: two gated blocks with decision networks, relaxed gates and
  // fixed Gumbel noise, cross-entropy plus usage loss.
  ModelConfig c;
  c.image_size = 4;
  c.patch_size = 2;
  c.channels = 1;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.num_blocks = 2;
  c.ffn_multiplier = 2;
  c.num_classes = 3;
  auto bb = BackboneParams<double>::init(c, rng);
  scramble(bb, rng, 0.4);
  auto dp = DecisionParams<double>::init(c, rng, 0.0);
  dp.for_each([&](const std::string&, DT& t) {
    for (auto& v : t.data()) v = 2 * rng.uniform() - 1;
  });
  DT x = random_images(c, 3, rng);
  const std::vector<int> labels{0, 2, 1};
  BudgetConfig budget;
  budget.gamma_patch = 0.4;
  budget.gamma_head = 0.6;
  budget.gamma_block = 0.7;
  std::vector<DT> params;
  bb.for_each([&](const std::string&, DT& t) { params.push_back(t); });
  dp.for_each([&](const std::string&, DT& t) { params.push_back(t); });
  double worst_e2e = 0;
  for (HeadSelectionMode mode : {HeadSelectionMode::Full, HeadSelectionMode::Partial}) {
    auto loss = [&](const std::vector<DT>&) {
      GateControl ctl;
      ctl.mode = GateMode::Train;
      ctl.head_mode = mode;
      ctl.tau = 1.5;
      ctl.straight_through = false;
      ctl.noise_seed = 42;
      ctl.noise_keys = {10, 11, 12};
      auto f = forward_adaptive(bb, &dp, x, ctl);
      auto u = usage_loss(UsageAccumulator<double>::from(f), budget);
      return nd::add(cross_entropy(f.logits, labels), u.loss);
    };
    worst_e2e = std::max(worst_e2e, gradient_error(loss, params));
  }
  return {worst_op < 1e-6 && worst_e2e < 1e-4,
          fmt("%zu op cases, worst rel. err %.2e (%s, tol 1e-6); end-to-end 2-block model with decision nets, both "
              "head modes, rel. err %.2e (tol 1e-4)",
              cases.size() + 1, worst_op, worst_name.c_str(), worst_e2e)};
}

// ---------------------------------------------------------------------------
// 3. binary Gumbel-Softmax

Verdict gumbel() {
  const int n = 100000;
  Rng rng(303);
  double worst_sum = 0;
  for (int i = 0; i < n; ++i) {
    const double p = 1e-4 + (1 - 2e-4) * rng.uniform(), tau = 0.01 + 10 * rng.uniform();
    auto s = gumbel_softmax_binary(p, tau, rng);
    worst_sum = std::max(worst_sum, std::abs(s.keep + s.drop - 1));
  }
  bool pass = worst_sum <= 1e-7;
  std::string rates, hardness;
  for (double p : {0.1, 0.5, 0.9}) {
    int kept = 0, close = 0;
    for (int i = 0; i < n; ++i) kept += gumbel_softmax_binary(p, 5.0, rng).keep >= 0.5;
    for (int i = 0; i < n; ++i) {
      auto s = gumbel_softmax_binary(p, 0.01, rng);
      close += std::abs(s.keep - std::round(s.keep)) <= 1e-3;
    }
    const double rate = static_cast<double>(kept) / n, frac = static_cast<double>(close) / n;
    // relaxed keep = sigmoid(x / tau), x logistic around logit(p)
    const double edge = 0.01 * std::log(999.0), s = logit(p);
    auto sig = [](double v) { return 1 / (1 + std::exp(-v)); };
    const double analytic = 1 - (sig(edge - s) - sig(-edge - s));
    pass &= std::abs(rate - p) <= 0.01 && frac >= 0.99;
    rates += fmt(" p=%.1f:%.4f", p, rate);
    hardness += fmt(" p=%.1f:%.4f(analytic %.4f)", p, frac, analytic);
  }
  return {pass, fmt("max |keep+drop-1| %.1e (tol 1e-7); keep rate at tau 5, 1e5 draws%s (tol 0.01); fraction within "
                    "1e-3 of hard at tau 0.01%s (target >= 0.99)",
                    worst_sum, rates.c_str(), hardness.c_str())};
}

// ---------------------------------------------------------------------------
// 4. cost model against a counting interpreter, every gate pattern

Verdict cost_oracle() {
  ModelConfig c;
  c.image_size = 4;
  c.patch_size = 2;
  c.channels = 1;
  c.embed_dim = 4;
  c.num_heads = 2;
  c.num_blocks = 2;
  c.ffn_multiplier = 2;
  c.num_classes = 3;
  const std::uint32_t patterns = 1u << 16;
  std::size_t mismatches = 0, head_off = 0, strict = 0, head_off_msa_skipped = 0, equal_when_skipped = 0;
  for (std::uint32_t bits = 0; bits < patterns; ++bits) {
    SamplePolicy pol = SamplePolicy::all_open(c);
    int k = 0;
    for (auto& b : pol.blocks) {
      for (auto& v : b.patches) v = static_cast<float>((bits >> k++) & 1);
      for (auto& v : b.heads) v = static_cast<float>((bits >> k++) & 1);
      for (auto& v : b.sublayers) v = static_cast<float>((bits >> k++) & 1);
    }
    for (bool charge : {true, false})
      for (HeadSelectionMode mode : {HeadSelectionMode::Full, HeadSelectionMode::Partial})
        mismatches += policy_flops(c, pol, mode, charge).total() != gatevit::testing::oracle_flops(c, pol, mode, charge);
    bool any_off = false, off_in_running_msa = false;
    for (const auto& b : pol.blocks)
      for (float h : b.heads)
        if (h == 0.0f) {
          any_off = true;
          off_in_running_msa |= b.sublayers[0] == 1.0f;
        }
    const auto full = policy_flops(c, pol, HeadSelectionMode::Full).total();
    const auto partial = policy_flops(c, pol, HeadSelectionMode::Partial).total();
    if (off_in_running_msa) {
      ++head_off;
      strict += partial > full;
    } else if (any_off) {
      ++head_off_msa_skipped;
      equal_when_skipped += partial == full;
    }
  }
  return {mismatches == 0 && strict == head_off && equal_when_skipped == head_off_msa_skipped,
          fmt("2^16 patterns x 2 head modes x 2 charge settings, %zu mismatches (tol 0); Partial > Full on %zu/%zu "
              "patterns with a head off in a running MSA; equal on %zu/%zu where every such MSA is skipped",
              mismatches, strict, head_off, equal_when_skipped, head_off_msa_skipped)};
}

// ---------------------------------------------------------------------------
// 5-9. training pipeline

// The backbone is pretrained gate-free once; Upperbound, adaptive and Random+
// then train from it for the same number of epochs (gates open, learned,
// random). Random evaluates the Upperbound weights under random gates.
struct Pipeline {
  RunSummary ub, ada, random, random_plus;
  UsageFractions matched;
  double seconds = 0;
};

Pipeline run_pipeline(const RunConfig& base, const std::string& dir, std::size_t pretrain_epochs,
                      std::size_t ft_epochs, const DataSplits& data) {
  Clock clock;
  RunOptions ro;
  ro.overwrite = true;
  ro.threads = 1;
  Pipeline out;

  RunConfig pre = base;
  pre.train.epochs = pretrain_epochs;
  pre.output_dir = dir + "/pretrain";
  run_training(pre, TrainMode::Upperbound, data, ro);

  RunConfig ft = base;
  ft.train.epochs = ft_epochs;
  ft.train.init_from = pre.output_dir + "/checkpoint.bin";
  ft.output_dir = dir + "/upperbound";
  out.ub = run_training(ft, TrainMode::Upperbound, data, ro);
  ft.output_dir = dir + "/adaptive";
  out.ada = run_training(ft, TrainMode::Adaptive, data, ro);

  std::vector<SamplePolicy> learned;
  for (const auto& s : out.ada.eval.samples) learned.push_back(s.policy);
  out.matched = match_flops(base.model, fractions_from_policies(base.model, learned), out.ada.eval.mean_gflops * 1e9,
                            base.head_mode, Rng::mix(base.seed ^ 0x5eed));

  const Model pretrained = load_checkpoint(pre.output_dir + "/checkpoint.bin").model;
  RunConfig rnd = base;
  rnd.train.epochs = ft_epochs;
  rnd.output_dir = dir + "/random";
  out.random = run_baseline(BaselineKind::Random, rnd, out.ub.model, out.matched, data, ro);
  rnd.output_dir = dir + "/random_plus";
  out.random_plus = run_baseline(BaselineKind::RandomPlus, rnd, pretrained, out.matched, data, ro);
  out.seconds = clock.seconds();
  return out;
}

Verdict budget_steering(const std::string& adaptive_dir, const EvalResult& eval, const BudgetConfig& budget) {
  std::ifstream in(adaptive_dir + "/train_log.jsonl");
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  if (last.empty()) return {false, "no train_log.jsonl under " + adaptive_dir};
  const auto j = nlohmann::json::parse(last);
  const double up = j.at("usage_patch"), uh = j.at("usage_head"), ub = j.at("usage_block");
  const bool pass = std::abs(up - budget.gamma_patch) <= 0.1 && std::abs(uh - budget.gamma_head) <= 0.1 &&
                    std::abs(ub - budget.gamma_block) <= 0.1;
  return {pass, fmt("final training epoch hard-gate usage patch %.3f head %.3f block %.3f vs budget (%.1f, %.1f, %.1f) "
                    "at tau %.1f (tol 0.1); test-set eval usage %.3f %.3f %.3f",
                    up, uh, ub, budget.gamma_patch, budget.gamma_head, budget.gamma_block, budget.tau, eval.usage_patch,
                    eval.usage_head, eval.usage_block)};
}

Verdict ordering(const Pipeline& p) {
  const double u = p.ub.eval.top1, a = p.ada.eval.top1, rp = p.random_plus.eval.top1, r = p.random.eval.top1;
  const double ratio = p.ada.eval.mean_gflops / p.ub.eval.mean_gflops;
  const double match_rp = p.random_plus.eval.mean_gflops / p.ada.eval.mean_gflops - 1;
  const double match_r = p.random.eval.mean_gflops / p.ada.eval.mean_gflops - 1;
  const bool pass = u >= a && a > rp && rp > r && a - rp >= 0.02 && u - a <= 0.05 && ratio <= 0.6 &&
                    std::abs(match_rp) <= 0.02 && std::abs(match_r) <= 0.02;
  return {pass, fmt("top1 Upperbound %.4f >= adaptive %.4f > Random+ %.4f > Random %.4f; adaptive - Random+ %.4f "
                    "(>= 0.02); Upperbound - adaptive %.4f (<= 0.05); adaptive FLOPs %.1f%% of Upperbound (<= 60%%); "
                    "baseline FLOPs off by %+.2f%% / %+.2f%% (tol 2%%)",
                    u, a, rp, r, a - rp, u - a, 100 * ratio, 100 * match_rp, 100 * match_r)};
}

Verdict patch_trend(const std::string& adaptive_dir, const ModelConfig& cfg) {
  std::ifstream in(adaptive_dir + "/stats/per_block.csv");
  std::string header, line;
  std::getline(in, header);
  const bool columns = header.find("head_kept_mean") != std::string::npos &&
                       header.find("block_kept_mean") != std::string::npos &&
                       header.find("patch_kept_mean") != std::string::npos;
  std::vector<double> patch;
  std::string row_text;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::getline(ss, cell, ',');
    patch.push_back(std::stod(cell));
    row_text += fmt(" %.3f", patch.back());
  }
  bool monotone = patch.size() == cfg.num_blocks;
  for (std::size_t l = 1; l < patch.size(); ++l) monotone &= patch[l] <= patch[l - 1];
  std::size_t violations = 0, samples = 0;
  for (const auto& s : read_policy_dump(adaptive_dir + "/policies.jsonl")) {
    ++samples;
    const auto alive = s.policy.alive_patches();
    for (std::size_t l = 1; l < alive.size(); ++l)
      for (std::size_t j = 0; j < alive[l].size(); ++j) violations += alive[l][j] && !alive[l - 1][j];
  }
  return {columns && monotone && violations == 0,
          fmt("per_block.csv patch kept mean by block%s (non-increasing: %s); head/block columns %s; %zu per-sample "
              "alive-set violations over %zu samples",
              row_text.c_str(), monotone ? "yes" : "no", columns ? "present" : "missing", violations, samples)};
}

Verdict hard_vs_easy(const EvalResult& eval) {
  std::vector<double> hard, easy;
  for (const auto& s : eval.samples) (s.difficulty == Difficulty::Hard ? hard : easy).push_back(s.flops);
  if (hard.size() < 2 || easy.size() < 2) return {false, "need both hard and easy samples"};
  const auto w = welch_t_test(hard, easy);
  return {w.mean_a > w.mean_b && w.p_two_sided < 0.01,
          fmt("mean FLOPs hard %.0f (n=%zu) vs easy %.0f (n=%zu), Welch t %.2f, dof %.1f, p %.3g (need hard > easy, "
              "p < 0.01)",
              w.mean_a, hard.size(), w.mean_b, easy.size(), w.t, w.dof, w.p_two_sided)};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict determinism(const std::string& a, const std::string& b) {
  std::size_t same = 0, total = 0;
  std::string diffs;
  for (const char* run : {"pretrain", "upperbound", "adaptive", "random", "random_plus"}) {
    ++total;
    const std::string x = slurp(a + "/" + run + "/metrics.csv"), y = slurp(b + "/" + run + "/metrics.csv");
    if (!x.empty() && x == y)
      ++same;
    else
      diffs += std::string(" ") + run;
  }
  return {same == total, fmt("metrics.csv byte-identical for %zu/%zu runs repeated with seed and one thread%s%s", same,
                             total, diffs.empty() ? "" : "; differing:", diffs.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work = "acceptance_work";
  std::size_t pretrain_epochs = 40, ft_epochs = 30, configs = 24;
  std::uint64_t seed = 1;
  std::vector<int> expect_fail, only;
  app.add_option("--work", work, "directory for the training runs");
  app.add_option("--pretrain-epochs", pretrain_epochs, "gate-free backbone pretraining epochs");
  app.add_option("--finetune-epochs", ft_epochs, "Upperbound, adaptive and Random+ epochs from the pretrained backbone");
  app.add_option("--configs", configs, "random configs for the equivalence suite");
  app.add_option("--seed", seed, "run seed");
  app.add_option("--expect-fail", expect_fail, "criteria known to be unattainable")->delimiter(',');
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::set<int> expected(expect_fail.begin(), expect_fail.end());
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int k) { return selected.empty() || selected.count(k) > 0; };
  int unexpected = 0;
  auto report = [&](int k, const Verdict& v, double seconds) {
    const bool known = expected.count(k) > 0;
    std::printf("C%d %s %s [%.1f s]%s\n", k, v.pass ? "PASS" : "FAIL", v.detail.c_str(), seconds,
                !v.pass && known ? " (expected failure)" : "");
    std::fflush(stdout);
    if (!v.pass && !known) ++unexpected;
  };
  auto timed = [&](int k, auto fn) {
    if (!wanted(k)) return;
    Clock c;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    report(k, v, c.seconds());
  };

  timed(1, [&] { return equivalence(configs); });
  timed(2, gradients);
  timed(3, gumbel);
  timed(4, cost_oracle);

  const bool train = wanted(5) || wanted(6) || wanted(7) || wanted(8) || wanted(9);
  if (train) {
    try {
      RunConfig run;
      run.seed = seed;
      run.data.synthetic = SyntheticTaskSpec{};
      run.validate();
      const DataSplits data = load_splits(run);
      const Pipeline first = run_pipeline(run, work + "/first", pretrain_epochs, ft_epochs, data);
      std::printf("pipeline: %.0f s (pretrain %zu epochs, then %zu epochs each for Upperbound, adaptive, Random+); "
                  "matched fractions %s\n",
                  first.seconds, pretrain_epochs, ft_epochs, first.matched.to_json().dump().c_str());
      std::printf("info: Upperbound %.5f GFLOPs, adaptive %.5f, Random %.5f, Random+ %.5f\n",
                  first.ub.eval.mean_gflops, first.ada.eval.mean_gflops, first.random.eval.mean_gflops,
                  first.random_plus.eval.mean_gflops);
      std::fflush(stdout);
      const std::string ada_dir = work + "/first/adaptive";
      timed(5, [&] { return budget_steering(ada_dir, first.ada.eval, run.budget); });
      timed(6, [&] { return ordering(first); });
      timed(7, [&] { return patch_trend(ada_dir, run.model); });
      timed(8, [&] { return hard_vs_easy(first.ada.eval); });
      {
        // Same matched budget, but with the learned per-block allocation
        // instead of an even one. Reported only.
        std::vector<SamplePolicy> learned;
        for (const auto& s : first.ada.eval.samples) learned.push_back(s.policy);
        RunConfig rp = run;
        rp.train.epochs = ft_epochs;
        rp.output_dir = work + "/first/random_plus_per_block";
        RunOptions ro;
        ro.overwrite = true;
        const Model pretrained = load_checkpoint(work + "/first/pretrain/checkpoint.bin").model;
        const auto alt = run_baseline(BaselineKind::RandomPlus, rp, pretrained,
                                      fractions_from_policies(run.model, learned), data, ro);
        std::printf("info: Random+ with the learned per-block allocation: top1 %.4f at %.5f GFLOPs\n", alt.eval.top1,
                    alt.eval.mean_gflops);
        std::fflush(stdout);
      }
      timed(9, [&] {
        const Pipeline second = run_pipeline(run, work + "/second", pretrain_epochs, ft_epochs, data);
        (void)second;
        return determinism(work + "/first", work + "/second");
      });
    } catch (const std::exception& e) {
      for (int k = 5; k <= 9; ++k)
        if (wanted(k)) report(k, {false, std::string("pipeline error: ") + e.what()}, 0);
    }
  }
  std::printf("%s\n", unexpected == 0 ? "ACCEPTANCE OK" : "ACCEPTANCE FAILED");
  return unexpected == 0 ? 0 : 1;
}
