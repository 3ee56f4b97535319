#include "gatevit/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "gatevit/objectives.hpp"

namespace gatevit {

using nlohmann::json;

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Upperbound:
      return "upperbound";
    case TrainMode::Adaptive:
      return "adaptive";
    case TrainMode::RandomPlus:
      return "random_plus";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "upperbound") return TrainMode::Upperbound;
  if (s == "adaptive") return TrainMode::Adaptive;
  if (s == "random_plus" || s == "random+") return TrainMode::RandomPlus;
  throw ConfigError("mode: expected upperbound, adaptive or random_plus, got \"" + s + "\"");
}

json EpochLog::to_json() const {
  return {{"epoch", epoch},
          {"lr", lr},
          {"tau", tau},
          {"gates_open", gates_open},
          {"L_ce", ce},
          {"L_usage", usage_loss},
          {"top1", top1},
          {"mean_flops", mean_gflops * 1e9},
          {"mean_gflops", mean_gflops},
          {"usage_patch", usage_patch},
          {"usage_head", usage_head},
          {"usage_block", usage_block}};
}

Model make_model(const RunConfig& run, TrainMode mode) {
  run.model.validate();
  Rng rng = Rng::stream(run.seed, 0x696e6974);
  Model m{run.model, BackboneParams<float>::init(run.model, rng), std::nullopt};
  if (mode == TrainMode::Adaptive) m.decision = DecisionParams<float>::init(run.model, rng, run.train.decision_bias_init);
  return m;
}

Model initial_model(const RunConfig& run, TrainMode mode) {
  Model m = make_model(run, mode);
  if (!run.train.init_from.empty()) {
    LoadedCheckpoint ck = load_checkpoint(run.train.init_from);
    if (!(ck.model.config == run.model))
      throw ConfigError("train.init_from: checkpoint " + run.train.init_from + " has a different model config");
    copy_matching(ck.model, m);
  }
  return m;
}

AdamW<float> make_optimizer(Model& model, double decision_lr_scale) {
  AdamW<float> opt;
  model.for_each([&](const std::string& name, nd::Tensor<float>& t) {
    t.set_requires_grad(true);
    opt.add(name, t, name.rfind("decision.", 0) == 0 ? decision_lr_scale : 1.0);
  });
  return opt;
}

namespace {

struct Usage {
  double patch = 1, head = 1, block = 1;
};

Usage hard_usage(const ModelConfig& cfg, const std::vector<SamplePolicy>& policies) {
  Usage u;
  const std::size_t G = cfg.gated_blocks();
  if (G == 0 || policies.empty()) return u;
  double p = 0, h = 0, b = 0;
  for (const auto& sp : policies) {
    const auto alive = sp.alive_patches();
    for (std::size_t l = cfg.first_gated_block; l < cfg.num_blocks; ++l) {
      p += static_cast<double>(std::count(alive[l].begin(), alive[l].end(), true));
      for (float v : sp.blocks[l].heads) h += v;
      for (float v : sp.blocks[l].sublayers) b += v;
    }
  }
  const double n = static_cast<double>(policies.size() * G);
  u.patch = p / (n * static_cast<double>(cfg.num_patches()));
  u.head = h / (n * static_cast<double>(cfg.num_heads));
  u.block = b / (n * 2.0);
  return u;
}

std::size_t count_correct(const nd::Tensor<float>& logits, const std::vector<int>& labels, std::vector<int>* preds) {
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const auto row = logits.data().subspan(b * C, C);
    const int arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (preds) preds->push_back(arg);
    correct += arg == labels[b];
  }
  return correct;
}

}  // namespace

StepStats train_step(Model& model, AdamW<float>& opt, const nd::Tensor<float>& images, const std::vector<int>& labels,
                     const GateControl& ctl, double usage_weight, const BudgetConfig& budget, double lr,
                     double weight_decay) {
  nd::Tape<float> tape;
  nd::TapeScope<float> scope(tape);
  const DecisionParams<float>* dp = model.decision ? &*model.decision : nullptr;
  ForwardResult<float> f = forward_adaptive(model.backbone, dp, images, ctl);
  nd::Tensor<float> ce = cross_entropy(f.logits, labels);
  nd::Tensor<float> loss = ce;
  StepStats st;
  st.ce = ce.item();
  if (ctl.source == GateSource::Learned && ctl.mode == GateMode::Train) {
    UsageAccumulator<float> acc = UsageAccumulator<float>::from(f);
    if (!acc.empty()) {
      UsageLoss<float> ul = usage_loss(acc, budget);
      st.usage_loss = ul.loss.item();
      st.usage_patch = ul.mean_patch;
      st.usage_head = ul.mean_head;
      st.usage_block = ul.mean_block;
      if (usage_weight > 0) loss = nd::add(ce, nd::scale(ul.loss, static_cast<float>(usage_weight)));
    }
  }
  if (!std::isfinite(loss.item()))
    throw NumericError("non-finite training loss (cross-entropy " + std::to_string(st.ce) + ", usage " +
                       std::to_string(st.usage_loss) + ")");
  opt.zero_grad();
  tape.backward(loss);
  for (const auto& slot : opt.slots())
    if (slot.param.has_grad())
      for (float g : slot.param.grad())
        if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + slot.name);
  opt.step(lr, weight_decay);
  st.correct = count_correct(f.logits, labels, nullptr);
  st.policies = f.policies(model.config);
  return st;
}

Model train(const RunConfig& run, const Dataset& data, Model model, const TrainOptions& opts) {
  run.validate();
  if (data.num_classes != run.model.num_classes)
    throw ConfigError("model.num_classes: " + std::to_string(run.model.num_classes) + " but the data has " +
                      std::to_string(data.num_classes) + " classes");
  if (data.size() == 0) throw DataError("training set is empty");
  if (opts.mode == TrainMode::Adaptive && !model.decision) throw ConfigError("adaptive training needs decision networks");
  if (opts.mode == TrainMode::RandomPlus && !opts.random_policies)
    throw std::invalid_argument("random_plus training needs a policy sampler");

  const TrainConfig& tc = run.train;
  AdamW<float> opt = make_optimizer(model, tc.decision_lr_scale);
  const std::size_t n = data.size();
  const std::size_t spe = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total = spe * tc.epochs;
  const std::size_t open_epochs =
      opts.mode == TrainMode::Adaptive ? static_cast<std::size_t>(std::lround(tc.gate_warmup_fraction * tc.epochs)) : 0;
  const double lr_warmup = static_cast<double>(tc.lr_warmup_epochs) / static_cast<double>(tc.epochs);
  const double kPi = 3.14159265358979323846;

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng::stream(run.seed, 0x73687566, epoch);
    shuffle_rng.shuffle(order.begin(), order.end());

    EpochLog log;
    log.epoch = epoch;
    log.gates_open = epoch < open_epochs;
    const double anneal_t =
        tc.epochs > open_epochs + 1
            ? static_cast<double>(epoch - std::min(epoch, open_epochs)) / static_cast<double>(tc.epochs - open_epochs - 1)
            : 0.0;
    log.tau = run.budget.tau_final + 0.5 * (run.budget.tau - run.budget.tau_final) * (1 + std::cos(kPi * anneal_t));
    double ce_sum = 0, ul_sum = 0, flops_sum = 0;
    double up = 0, uh = 0, ub = 0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < spe; ++s) {
      const std::size_t begin = s * tc.batch_size, end = std::min(n, begin + tc.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      const double progress = static_cast<double>(epoch * spe + s) / static_cast<double>(total);
      log.lr = cosine_lr(tc.learning_rate, tc.min_learning_rate, progress, lr_warmup);

      GateControl ctl;
      ctl.mode = GateMode::Train;
      ctl.head_mode = run.head_mode;
      ctl.tau = log.tau;
      ctl.straight_through = run.budget.straight_through;
      ctl.noise_seed = run.seed;
      std::vector<SamplePolicy> ext;
      if (opts.mode == TrainMode::Upperbound || log.gates_open) {
        ctl.source = GateSource::Open;
      } else if (opts.mode == TrainMode::RandomPlus) {
        Rng prng = Rng::stream(run.seed, 0x72616e64, epoch * spe + s);
        ext = opts.random_policies(idx.size(), prng);
        ctl.source = GateSource::External;
        ctl.external = &ext;
      } else {
        ctl.source = GateSource::Learned;
        for (std::size_t i : idx) ctl.noise_keys.push_back((static_cast<std::uint64_t>(epoch) << 32) | i);
      }
      StepStats st = train_step(model, opt, data.images(idx), data.labels_at(idx), ctl, run.budget.usage_weight,
                                run.budget, log.lr, tc.weight_decay);
      const double w = static_cast<double>(idx.size());
      ce_sum += st.ce * w;
      ul_sum += st.usage_loss * w;
      up += st.usage_patch * w;
      uh += st.usage_head * w;
      ub += st.usage_block * w;
      correct += st.correct;
      const bool charge = ctl.source == GateSource::Learned;
      for (const auto& p : st.policies) flops_sum += policy_flops(model.config, p, run.head_mode, charge).gflops();
    }
    const double nd_ = static_cast<double>(n);
    log.ce = ce_sum / nd_;
    log.usage_loss = ul_sum / nd_;
    log.usage_patch = up / nd_;
    log.usage_head = uh / nd_;
    log.usage_block = ub / nd_;
    log.top1 = static_cast<double>(correct) / nd_;
    log.mean_gflops = flops_sum / nd_;
    if (opts.on_epoch) opts.on_epoch(log);
  }
  return model;
}

EvalResult evaluate(const Model& model, const Dataset& data, const EvalOptions& opts) {
  const ModelConfig& cfg = model.config;
  if (data.num_classes != cfg.num_classes)
    throw ConfigError("model.num_classes: " + std::to_string(cfg.num_classes) + " but the data has " +
                      std::to_string(data.num_classes) + " classes");
  if (opts.source == GateSource::Learned && !model.decision)
    throw ConfigError("evaluation with learned gates needs a model with decision networks");
  if (opts.source == GateSource::External && (!opts.external || opts.external->size() != data.size()))
    throw std::invalid_argument("evaluate: external policies must cover every sample");
  const std::size_t n = data.size();
  const std::size_t bs = std::max<std::size_t>(1, opts.batch_size);
  const std::size_t batches = (n + bs - 1) / bs;
  const bool charge = opts.charge_decisions && opts.source == GateSource::Learned;

  EvalResult res;
  res.samples.resize(n);
  auto run_batch = [&](std::size_t bi) {
    nd::NoGradScope<float> no_grad;
    const std::size_t begin = bi * bs, end = std::min(n, begin + bs);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    GateControl ctl;
    ctl.source = opts.source;
    ctl.mode = GateMode::Eval;
    ctl.head_mode = opts.head_mode;
    std::vector<SamplePolicy> ext;
    if (opts.source == GateSource::External) {
      ext.assign(opts.external->begin() + static_cast<std::ptrdiff_t>(begin),
                 opts.external->begin() + static_cast<std::ptrdiff_t>(end));
      ctl.external = &ext;
    }
    const DecisionParams<float>* dp = model.decision ? &*model.decision : nullptr;
    ForwardResult<float> f = forward_adaptive(model.backbone, dp, data.images(idx), ctl);
    if (!nd::all_finite(f.logits)) throw NumericError("non-finite logits during evaluation");
    std::vector<int> preds;
    const std::vector<int> labels = data.labels_at(idx);
    count_correct(f.logits, labels, &preds);
    std::vector<SamplePolicy> pol = f.policies(cfg);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      SampleOutcome& o = res.samples[idx[i]];
      o.sample_id = idx[i];
      o.label = labels[i];
      o.prediction = preds[i];
      o.difficulty = data.difficulty[idx[i]];
      o.flops = static_cast<double>(policy_flops(cfg, pol[i], opts.head_mode, charge).total());
      o.policy = std::move(pol[i]);
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(opts.threads, 1, std::max<std::size_t>(1, batches));
  if (threads == 1) {
    for (std::size_t bi = 0; bi < batches; ++bi) run_batch(bi);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t bi = t; bi < batches; bi += threads) run_batch(bi);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::size_t correct = 0;
  double flops = 0;
  std::vector<SamplePolicy> pols;
  pols.reserve(n);
  for (const auto& s : res.samples) {
    correct += s.prediction == s.label;
    flops += s.flops;
    pols.push_back(s.policy);
  }
  res.top1 = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  res.mean_gflops = n ? flops / static_cast<double>(n) / 1e9 : 0.0;
  const Usage u = hard_usage(cfg, pols);
  res.usage_patch = u.patch;
  res.usage_head = u.head;
  res.usage_block = u.block;
  return res;
}

json policy_record(const SampleOutcome& s) {
  json patches = json::array(), heads = json::array(), blocks = json::array();
  for (const auto& b : s.policy.blocks) {
    json p = json::array(), h = json::array(), k = json::array();
    for (float v : b.patches) p.push_back(static_cast<int>(v));
    for (float v : b.heads) h.push_back(static_cast<int>(v));
    for (float v : b.sublayers) k.push_back(static_cast<int>(v));
    patches.push_back(p);
    heads.push_back(h);
    blocks.push_back(k);
  }
  const char* diff = s.difficulty == Difficulty::Easy ? "easy" : s.difficulty == Difficulty::Hard ? "hard" : "unknown";
  return {{"sample_id", s.sample_id}, {"label", s.label},   {"prediction", s.prediction}, {"difficulty", diff},
          {"patches", patches},       {"heads", heads},     {"blocks", blocks},           {"flops", s.flops}};
}

}  // namespace gatevit
