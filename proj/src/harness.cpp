#include "gatevit/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

namespace gatevit {

namespace fs = std::filesystem;
using nlohmann::json;

DataSplits load_splits(const RunConfig& run) {
  if (run.data.synthetic) {
    const SyntheticTaskSpec& s = *run.data.synthetic;
    if (s.image_size != run.model.image_size || run.model.channels != 1)
      throw ConfigError("data.synthetic.image_size: synthetic images are " + std::to_string(s.image_size) + "x" +
                        std::to_string(s.image_size) + "x1 but the model expects " +
                        std::to_string(run.model.image_size) + "x" + std::to_string(run.model.image_size) + "x" +
                        std::to_string(run.model.channels));
    return make_synthetic_splits(s, run.seed);
  }
  NormalizationStats stats;
  DataSplits out;
  out.train = load_image_folder(run.data.train_folder, run.model.image_size, run.model.channels, nullptr, &stats);
  out.test = load_image_folder(run.data.test_folder, run.model.image_size, run.model.channels, &stats);
  out.train.split = "train";
  out.test.split = "test";
  if (out.test.num_classes != out.train.num_classes)
    throw DataError("test folder " + run.data.test_folder + " has a different number of classes than " +
                    run.data.train_folder);
  return out;
}

// ---------------------------------------------------------------------------
// random policies

UsageFractions UsageFractions::uniform(const ModelConfig& cfg, double patch, double head, double block) {
  UsageFractions f;
  f.patch.assign(cfg.num_blocks, patch);
  f.head.assign(cfg.num_blocks, head);
  f.block.assign(cfg.num_blocks, block);
  for (std::size_t l = 0; l < cfg.first_gated_block && l < cfg.num_blocks; ++l) f.patch[l] = f.head[l] = f.block[l] = 1.0;
  return f;
}

void UsageFractions::validate(const ModelConfig& cfg) const {
  for (const auto* v : {&patch, &head, &block}) {
    if (v->size() != cfg.num_blocks)
      throw ConfigError("usage fractions: expected " + std::to_string(cfg.num_blocks) + " entries per family");
    for (double x : *v)
      if (!(x >= 0.0 && x <= 1.0)) throw ConfigError("usage fractions: values must lie in [0, 1]");
  }
  for (std::size_t l = cfg.first_gated_block + 1; l < cfg.num_blocks; ++l)
    if (patch[l] > patch[l - 1] + 1e-12)
      throw ConfigError("usage fractions: patch alive fraction must not increase across blocks");
}

json UsageFractions::to_json() const { return {{"patch", patch}, {"head", head}, {"block", block}}; }

UsageFractions fractions_from_policies(const ModelConfig& cfg, const std::vector<SamplePolicy>& policies) {
  UsageFractions f = UsageFractions::uniform(cfg, 1, 1, 1);
  if (policies.empty()) return f;
  for (std::size_t l = 0; l < cfg.num_blocks; ++l) f.patch[l] = f.head[l] = f.block[l] = 0;
  for (const auto& p : policies) {
    const auto alive = p.alive_patches();
    for (std::size_t l = 0; l < cfg.num_blocks; ++l) {
      f.patch[l] += static_cast<double>(std::count(alive[l].begin(), alive[l].end(), true)) / cfg.num_patches();
      for (float v : p.blocks[l].heads) f.head[l] += v / static_cast<double>(cfg.num_heads);
      for (float v : p.blocks[l].sublayers) f.block[l] += v / 2.0;
    }
  }
  const double n = static_cast<double>(policies.size());
  for (std::size_t l = 0; l < cfg.num_blocks; ++l) {
    f.patch[l] /= n;
    f.head[l] /= n;
    f.block[l] /= n;
  }
  return f;
}

UsageFractions spread_evenly(const ModelConfig& cfg, const UsageFractions& measured) {
  measured.validate(cfg);
  const std::size_t first = cfg.first_gated_block, G = cfg.gated_blocks();
  if (G == 0) return measured;
  double patch = 0, head = 0, block = 0;
  for (std::size_t l = first; l < cfg.num_blocks; ++l) {
    patch += measured.patch[l] / G;
    head += measured.head[l] / G;
    block += measured.block[l] / G;
  }
  // Constant per-block patch keep rate q with mean_k q^k (k = 1..G) = patch.
  auto mean_alive = [&](double q) {
    double s = 0, a = 1;
    for (std::size_t k = 0; k < G; ++k) s += (a *= q);
    return s / G;
  };
  double lo = 0, hi = 1;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_alive(mid) < patch ? lo : hi) = mid;
  }
  const double q = 0.5 * (lo + hi);
  UsageFractions f = UsageFractions::uniform(cfg, 1, head, block);
  double a = 1;
  for (std::size_t l = first; l < cfg.num_blocks; ++l) f.patch[l] = (a *= q);
  return f;
}

UsageFractions match_flops(const ModelConfig& cfg, const UsageFractions& measured, double target_flops,
                           HeadSelectionMode mode, std::uint64_t seed, std::size_t samples) {
  measured.validate(cfg);
  const std::size_t first = cfg.first_gated_block, G = cfg.gated_blocks();
  if (G == 0 || samples == 0) return measured;
  double mean[3] = {0, 0, 0};
  for (std::size_t l = first; l < cfg.num_blocks; ++l) {
    mean[0] += measured.patch[l] / G;
    mean[1] += measured.head[l] / G;
    mean[2] += measured.block[l] / G;
  }
  // s in [-1, 1] moves every family mean monotonically from 0 through the
  // measured value (s = 0) to 1.
  auto at = [&](double s) {
    UsageFractions f = measured;
    double m[3];
    for (int k = 0; k < 3; ++k) m[k] = s >= 0 ? mean[k] + s * (1 - mean[k]) : mean[k] * (1 + s);
    for (std::size_t l = first; l < cfg.num_blocks; ++l) {
      f.patch[l] = m[0];
      f.head[l] = m[1];
      f.block[l] = m[2];
    }
    return spread_evenly(cfg, f);
  };
  auto cost = [&](double s) {
    double total = 0;
    for (const auto& p : random_policies(cfg, at(s), samples, seed))
      total += static_cast<double>(policy_flops(cfg, p, mode, false).total());
    return total / static_cast<double>(samples);
  };
  double lo = -1, hi = 1;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (cost(mid) < target_flops ? lo : hi) = mid;
  }
  return at(0.5 * (lo + hi));
}

SamplePolicy random_policy(const ModelConfig& cfg, const UsageFractions& f, Rng& rng) {
  SamplePolicy p = SamplePolicy::all_open(cfg);
  const std::size_t N = cfg.num_patches();
  std::vector<bool> alive(N, true);
  double prev = 1.0;
  for (std::size_t l = cfg.first_gated_block; l < cfg.num_blocks; ++l) {
    BlockPolicy& bp = p.blocks[l];
    const double keep = prev > 0 ? std::min(1.0, f.patch[l] / prev) : 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      // Draw for every patch so the stream layout does not depend on the alive set.
      const bool k = rng.uniform() < keep;
      alive[j] = alive[j] && k;
      bp.patches[j] = alive[j] ? 1.0f : 0.0f;
    }
    prev = f.patch[l];
    for (auto& h : bp.heads) h = rng.uniform() < f.head[l] ? 1.0f : 0.0f;
    for (auto& s : bp.sublayers) s = rng.uniform() < f.block[l] ? 1.0f : 0.0f;
  }
  return p;
}

std::vector<SamplePolicy> random_policies(const ModelConfig& cfg, const UsageFractions& f, std::size_t count,
                                          std::uint64_t seed) {
  f.validate(cfg);
  std::vector<SamplePolicy> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::stream(seed, i, 0x706f6c);
    out.push_back(random_policy(cfg, f, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path);
  out << text;
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string s = "run_id,gamma_p,gamma_h,gamma_b,top1,gflops\n";
  for (const auto& r : rows)
    s += r.run_id + "," + fmt("%.4g", r.gamma_patch) + "," + fmt("%.4g", r.gamma_head) + "," +
         fmt("%.4g", r.gamma_block) + "," + fmt("%.4f", r.top1) + "," + format_gflops(r.gflops) + "\n";
  return s;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  write_text(path, metrics_csv(rows));
}

// ---------------------------------------------------------------------------
// analytics

namespace {

Difficulty difficulty_from_string(const std::string& s) {
  if (s == "easy") return Difficulty::Easy;
  if (s == "hard") return Difficulty::Hard;
  return Difficulty::Unknown;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

FlopsDistribution distribution(const std::string& group, const std::vector<double>& v) {
  FlopsDistribution d;
  d.group = group;
  d.count = v.size();
  if (v.empty()) return d;
  double s = 0;
  for (double x : v) s += x;
  d.mean = s / static_cast<double>(v.size());
  d.min = *std::min_element(v.begin(), v.end());
  d.max = *std::max_element(v.begin(), v.end());
  d.q25 = quantile(v, 0.25);
  d.median = quantile(v, 0.5);
  d.q75 = quantile(v, 0.75);
  return d;
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

std::vector<SampleOutcome> read_policy_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open policy dump " + path);
  std::vector<SampleOutcome> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      SampleOutcome s;
      s.sample_id = j.at("sample_id").get<std::size_t>();
      s.label = j.at("label").get<int>();
      s.prediction = j.value("prediction", -1);
      s.difficulty = difficulty_from_string(j.value("difficulty", "unknown"));
      s.flops = j.at("flops").get<double>();
      const auto& p = j.at("patches");
      const auto& h = j.at("heads");
      const auto& b = j.at("blocks");
      if (p.size() != h.size() || p.size() != b.size()) throw DataError("block count differs between families");
      for (std::size_t l = 0; l < p.size(); ++l) {
        BlockPolicy bp;
        for (int v : p[l]) bp.patches.push_back(static_cast<float>(v));
        for (int v : h[l]) bp.heads.push_back(static_cast<float>(v));
        for (int v : b[l]) bp.sublayers.push_back(static_cast<float>(v));
        s.policy.blocks.push_back(std::move(bp));
      }
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw DataError("policy dump " + path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

PolicyStats analyze_policies(const std::vector<SampleOutcome>& dump, const Dataset& data) {
  if (dump.size() != data.size())
    throw DataError("policy dump has " + std::to_string(dump.size()) + " records but the dataset has " +
                    std::to_string(data.size()) + " samples");
  if (dump.empty()) return {};
  const std::size_t L = dump.front().policy.blocks.size();
  std::vector<bool> seen(data.size(), false);
  for (const auto& s : dump) {
    if (s.sample_id >= data.size() || seen[s.sample_id])
      throw DataError("policy dump: sample_id " + std::to_string(s.sample_id) + " is out of range or repeated");
    seen[s.sample_id] = true;
    if (s.label != data.labels[s.sample_id])
      throw DataError("policy dump: sample " + std::to_string(s.sample_id) + " has label " + std::to_string(s.label) +
                      " but the dataset says " + std::to_string(data.labels[s.sample_id]));
    if (s.policy.blocks.size() != L) throw DataError("policy dump: records disagree on the number of blocks");
  }

  PolicyStats st;
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<double> p, h, b;
    for (const auto& s : dump) {
      const auto alive = s.policy.alive_patches();
      const auto& bp = s.policy.blocks[l];
      p.push_back(static_cast<double>(std::count(alive[l].begin(), alive[l].end(), true)) / alive[l].size());
      double hs = 0, bs = 0;
      for (float v : bp.heads) hs += v;
      for (float v : bp.sublayers) bs += v;
      h.push_back(hs / static_cast<double>(bp.heads.size()));
      b.push_back(bs / static_cast<double>(bp.sublayers.size()));
    }
    BlockUsageStats u;
    mean_std(p, u.patch_mean, u.patch_std);
    mean_std(h, u.head_mean, u.head_std);
    mean_std(b, u.block_mean, u.block_std);
    st.blocks.push_back(u);
  }

  std::vector<std::vector<double>> by_class(data.num_classes);
  std::vector<double> easy, hard, all;
  for (const auto& s : dump) {
    by_class.at(static_cast<std::size_t>(s.label)).push_back(s.flops);
    if (s.difficulty == Difficulty::Easy) easy.push_back(s.flops);
    if (s.difficulty == Difficulty::Hard) hard.push_back(s.flops);
    all.push_back(s.flops);
  }
  for (std::size_t c = 0; c < by_class.size(); ++c) st.groups.push_back(distribution("class_" + std::to_string(c), by_class[c]));
  st.groups.push_back(distribution("easy", easy));
  st.groups.push_back(distribution("hard", hard));
  st.groups.push_back(distribution("all", all));
  return st;
}

void write_policy_stats(const std::string& dir, const PolicyStats& stats, const std::vector<SampleOutcome>& dump) {
  fs::create_directories(dir);
  std::string pb = "block,patch_kept_mean,patch_kept_std,head_kept_mean,head_kept_std,block_kept_mean,block_kept_std\n";
  for (std::size_t l = 0; l < stats.blocks.size(); ++l) {
    const auto& u = stats.blocks[l];
    pb += std::to_string(l);
    for (double v : {u.patch_mean, u.patch_std, u.head_mean, u.head_std, u.block_mean, u.block_std}) pb += "," + fmt("%.6f", v);
    pb += "\n";
  }
  write_text(dir + "/per_block.csv", pb);

  std::string pc = "group,count,mean_flops,min,q25,median,q75,max\n";
  for (const auto& g : stats.groups) {
    pc += g.group + "," + std::to_string(g.count);
    for (double v : {g.mean, g.min, g.q25, g.median, g.q75, g.max}) pc += "," + fmt("%.1f", v);
    pc += "\n";
  }
  write_text(dir + "/per_class.csv", pc);

  std::string pm = "sample_id,label,difficulty,block,grid,alive\n";
  for (const auto& s : dump) {
    const auto alive = s.policy.alive_patches();
    const std::size_t grid = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(alive[0].size()))));
    const char* diff = s.difficulty == Difficulty::Easy ? "easy" : s.difficulty == Difficulty::Hard ? "hard" : "unknown";
    for (std::size_t l = 0; l < alive.size(); ++l) {
      pm += std::to_string(s.sample_id) + "," + std::to_string(s.label) + "," + diff + "," + std::to_string(l) + "," +
            std::to_string(grid) + ",";
      for (bool a : alive[l]) pm.push_back(a ? '1' : '0');
      pm += "\n";
    }
  }
  write_text(dir + "/patch_masks.csv", pm);
}

WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_t_test: each group needs >= 2 values");
  WelchResult r;
  double sa, sb;
  mean_std(a, r.mean_a, sa);
  mean_std(b, r.mean_b, sb);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  // Unbiased variances.
  const double va = sa * sa * na / (na - 1), vb = sb * sb * nb / (nb - 1);
  const double se2 = va / na + vb / nb;
  if (se2 == 0) {
    r.t = r.mean_a == r.mean_b ? 0 : std::copysign(INFINITY, r.mean_a - r.mean_b);
    r.dof = na + nb - 2;
    r.p_two_sided = r.mean_a == r.mean_b ? 1.0 : 0.0;
    return r;
  }
  r.t = (r.mean_a - r.mean_b) / std::sqrt(se2);
  r.dof = se2 * se2 / ((va / na) * (va / na) / (na - 1) + (vb / nb) * (vb / nb) / (nb - 1));
  boost::math::students_t dist(r.dof);
  r.p_two_sided = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

double linear_probe_accuracy(const Dataset& train, const Dataset& test, std::size_t epochs, double lr,
                             std::uint64_t seed) {
  const std::size_t F = train.image_elems(), C = train.num_classes;
  std::vector<double> w((F + 1) * C, 0.0);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> logits(C);
  auto score = [&](const float* x) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = w[F * C + c];
      for (std::size_t f = 0; f < F; ++f) s += x[f] * w[f * C + c];
      logits[c] = s;
    }
  };
  for (std::size_t e = 0; e < epochs; ++e) {
    Rng rng = Rng::stream(seed, e);
    rng.shuffle(order.begin(), order.end());
    for (std::size_t i : order) {
      const float* x = train.pixels.data() + i * F;
      score(x);
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0;
      for (double& v : logits) z += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < C; ++c) {
        const double g = logits[c] / z - (static_cast<int>(c) == train.labels[i] ? 1.0 : 0.0);
        for (std::size_t f = 0; f < F; ++f) w[f * C + c] -= lr * g * x[f];
        w[F * C + c] -= lr * g;
      }
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    score(test.pixels.data() + i * F);
    correct += static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin()) == test.labels[i];
  }
  return test.size() ? static_cast<double>(correct) / static_cast<double>(test.size()) : 0.0;
}

// ---------------------------------------------------------------------------
// runs

std::string to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::Upperbound:
      return "upperbound";
    case BaselineKind::Random:
      return "random";
    case BaselineKind::RandomPlus:
      return "random_plus";
  }
  return "?";
}

BaselineKind baseline_kind_from_string(const std::string& s) {
  if (s == "upperbound") return BaselineKind::Upperbound;
  if (s == "random") return BaselineKind::Random;
  if (s == "random_plus" || s == "random+") return BaselineKind::RandomPlus;
  throw ConfigError("baseline kind: expected upperbound, random or random_plus, got \"" + s + "\"");
}

void prepare_run_dir(const std::string& dir, const RunConfig& run, bool overwrite) {
  if (fs::exists(dir)) {
    if (!overwrite) throw ConfigError("output_dir: " + dir + " already exists (pass --overwrite to replace it)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  write_text(dir + "/config.json", to_json(run).dump(2) + "\n");
}

void write_run_outputs(const std::string& dir, const RunConfig& run, const Model& model, const EvalResult& eval,
                       const Dataset& test, const MetricsRow& row, const json& meta) {
  json m = meta;
  m["run_id"] = row.run_id;
  m["seed"] = run.seed;
  m["head_mode"] = to_string(run.head_mode);
  save_checkpoint(dir + "/checkpoint.bin", model, m);
  write_metrics_csv(dir + "/metrics.csv", {row});
  std::string pol;
  for (const auto& s : eval.samples) pol += policy_record(s).dump() + "\n";
  write_text(dir + "/policies.jsonl", pol);
  write_policy_stats(dir + "/stats", analyze_policies(eval.samples, test), eval.samples);
}

namespace {

std::string run_id_of(const std::string& dir) {
  std::string id = fs::path(dir).lexically_normal().filename().string();
  if (id.empty()) id = fs::path(dir).lexically_normal().parent_path().filename().string();
  return id.empty() ? "run" : id;
}

struct LogWriter {
  std::ofstream out;
  bool quiet;
  std::string tag;
  LogWriter(const std::string& path, bool q, std::string t) : out(path, std::ios::trunc), quiet(q), tag(std::move(t)) {
    if (!out) throw ConfigError("cannot write " + path);
  }
  void operator()(const EpochLog& l) {
    out << l.to_json().dump() << "\n";
    out.flush();
    if (!quiet)
      std::fprintf(stderr, "[%s] epoch %zu  ce %.4f  usage %.4f  top1 %.4f  gflops %s\n", tag.c_str(), l.epoch, l.ce,
                   l.usage_loss, l.top1, format_gflops(l.mean_gflops).c_str());
  }
};

}  // namespace

RunSummary run_training(const RunConfig& run, TrainMode mode, const DataSplits& data, const RunOptions& opts) {
  if (mode == TrainMode::RandomPlus) throw std::invalid_argument("run_training: use run_baseline for random_plus");
  run.validate();
  prepare_run_dir(run.output_dir, run, opts.overwrite);
  RunSummary out;
  out.dir = run.output_dir;
  LogWriter log(run.output_dir + "/train_log.jsonl", opts.quiet, run_id_of(run.output_dir));
  TrainOptions to;
  to.mode = mode;
  to.on_epoch = [&](const EpochLog& l) { log(l); };
  out.model = train(run, data.train, initial_model(run, mode), to);

  EvalOptions eo;
  eo.source = mode == TrainMode::Adaptive ? GateSource::Learned : GateSource::Open;
  eo.head_mode = run.head_mode;
  eo.threads = opts.threads;
  out.eval = evaluate(out.model, data.test, eo);
  out.metrics.run_id = run_id_of(run.output_dir);
  if (mode == TrainMode::Adaptive) {
    out.metrics.gamma_patch = run.budget.gamma_patch;
    out.metrics.gamma_head = run.budget.gamma_head;
    out.metrics.gamma_block = run.budget.gamma_block;
  }
  out.metrics.top1 = out.eval.top1;
  out.metrics.gflops = out.eval.mean_gflops;
  write_run_outputs(run.output_dir, run, out.model, out.eval, data.test, out.metrics, {{"mode", to_string(mode)}});
  return out;
}

RunSummary run_baseline(BaselineKind kind, const RunConfig& run, const Model& model, const UsageFractions& fractions,
                        const DataSplits& data, const RunOptions& opts) {
  run.validate();
  fractions.validate(model.config);
  prepare_run_dir(run.output_dir, run, opts.overwrite);
  RunSummary out;
  out.dir = run.output_dir;
  out.model = Model{model.config, model.backbone.clone(), std::nullopt};
  const ModelConfig& cfg = model.config;

  if (kind == BaselineKind::RandomPlus) {
    LogWriter log(run.output_dir + "/train_log.jsonl", opts.quiet, run_id_of(run.output_dir));
    TrainOptions to;
    to.mode = TrainMode::RandomPlus;
    to.on_epoch = [&](const EpochLog& l) { log(l); };
    to.random_policies = [&](std::size_t count, Rng& rng) {
      std::vector<SamplePolicy> p;
      for (std::size_t i = 0; i < count; ++i) p.push_back(random_policy(cfg, fractions, rng));
      return p;
    };
    out.model = train(run, data.train, std::move(out.model), to);
  }

  EvalOptions eo;
  eo.head_mode = run.head_mode;
  eo.threads = opts.threads;
  std::vector<SamplePolicy> pols;
  if (kind == BaselineKind::Upperbound) {
    eo.source = GateSource::Open;
  } else {
    // Same evaluation policies for Random and Random+ at equal seeds.
    pols = random_policies(cfg, fractions, data.test.size(), Rng::mix(run.seed ^ 0x6576616cULL));
    eo.source = GateSource::External;
    eo.external = &pols;
  }
  out.eval = evaluate(out.model, data.test, eo);
  out.metrics.run_id = run_id_of(run.output_dir);
  if (kind != BaselineKind::Upperbound) {
    const UsageFractions& f = fractions;
    double p = 0, h = 0, b = 0;
    const double g = static_cast<double>(std::max<std::size_t>(1, cfg.gated_blocks()));
    for (std::size_t l = cfg.first_gated_block; l < cfg.num_blocks; ++l) {
      p += f.patch[l];
      h += f.head[l];
      b += f.block[l];
    }
    out.metrics.gamma_patch = p / g;
    out.metrics.gamma_head = h / g;
    out.metrics.gamma_block = b / g;
  }
  out.metrics.top1 = out.eval.top1;
  out.metrics.gflops = out.eval.mean_gflops;
  write_run_outputs(run.output_dir, run, out.model, out.eval, data.test, out.metrics,
                    {{"mode", to_string(kind)}, {"fractions", fractions.to_json()}});
  return out;
}

std::vector<MetricsRow> sweep_budgets(const std::vector<BudgetPoint>& budgets, const RunConfig& run,
                                      const DataSplits& data, const RunOptions& opts) {
  if (budgets.size() < 2) throw ConfigError("sweep: need at least two budget points");
  if (fs::exists(run.output_dir) && !opts.overwrite)
    throw ConfigError("output_dir: " + run.output_dir + " already exists (pass --overwrite to replace it)");
  if (fs::exists(run.output_dir)) fs::remove_all(run.output_dir);
  fs::create_directories(run.output_dir);
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    RunConfig r = run;
    r.budget.gamma_patch = budgets[i].gamma_patch;
    r.budget.gamma_head = budgets[i].gamma_head;
    r.budget.gamma_block = budgets[i].gamma_block;
    r.output_dir = run.output_dir + "/budget_" + std::to_string(i);
    rows.push_back(run_training(r, TrainMode::Adaptive, data, opts).metrics);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const MetricsRow& a, const MetricsRow& b) { return a.gflops < b.gflops; });
  write_metrics_csv(run.output_dir + "/metrics.csv", rows);
  return rows;
}

}  // namespace gatevit
