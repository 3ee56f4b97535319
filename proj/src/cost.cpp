#include "gatevit/cost.hpp"

#include <cstdio>
#include <sstream>

namespace gatevit {

namespace {

constexpr std::uint64_t kMac = 2;
constexpr std::uint64_t kLayerNorm = 5;
constexpr std::uint64_t kSoftmax = 3;
constexpr std::uint64_t kGelu = 8;

bool is_binary(float v) { return v == 0.0f || v == 1.0f; }

void check_gates(const std::vector<float>& gates, std::size_t expected, const char* what, std::size_t block) {
  if (gates.size() != expected)
    throw ContractError(std::string("policy_flops: block ") + std::to_string(block) + " has " +
                        std::to_string(gates.size()) + " " + what + " gates, expected " + std::to_string(expected));
  for (float g : gates)
    if (!is_binary(g))
      throw ContractError(std::string("policy_flops: block ") + std::to_string(block) + " " + what +
                          " gate " + std::to_string(g) + " is not a hard decision");
}

std::uint64_t embed_cost(const ModelConfig& c) {
  const std::uint64_t N = c.num_patches(), D = c.embed_dim, PD = c.patch_dim();
  return N * (kMac * PD * D + D) + (N + 1) * D;
}

std::uint64_t ffn_cost(const ModelConfig& c, std::uint64_t n) {
  const std::uint64_t D = c.embed_dim, F = c.ffn_hidden();
  return kLayerNorm * n * D + n * (kMac * D * F + F) + kGelu * n * F + n * (kMac * F * D + D) + n * D;
}

std::uint64_t decision_cost(const ModelConfig& c, std::uint64_t alive_patches) {
  const std::uint64_t D = c.embed_dim, H = c.num_heads;
  return (alive_patches + H + 2) * (kMac * D + 1);
}

// MSA sublayer over n tokens with `active` attention maps; `value_only`
// heads (partial deactivation) keep their value projection.
void msa_cost(const ModelConfig& c, std::uint64_t n, std::uint64_t active, std::uint64_t value_only, bool full,
              BlockCost& out) {
  const std::uint64_t D = c.embed_dim, dk = c.head_dim();
  out.qkv_proj = kLayerNorm * n * D + active * 3 * kMac * n * D * dk + value_only * kMac * n * D * dk;
  out.attn_logits = active * (kMac * n * n * dk + kSoftmax * n * n);
  out.attn_apply = active * kMac * n * n * dk;
  const std::uint64_t in_width = full ? active * dk : D;
  out.out_proj = kMac * n * in_width * D + n * D;
}

}  // namespace

BlockPolicy BlockPolicy::all_open(const ModelConfig& cfg) {
  return {std::vector<float>(cfg.num_patches(), 1.0f), std::vector<float>(cfg.num_heads, 1.0f), {1.0f, 1.0f}};
}

SamplePolicy SamplePolicy::all_open(const ModelConfig& cfg) {
  return {std::vector<BlockPolicy>(cfg.num_blocks, BlockPolicy::all_open(cfg))};
}

std::vector<std::vector<bool>> SamplePolicy::alive_patches() const {
  std::vector<std::vector<bool>> out;
  if (blocks.empty()) return out;
  std::vector<bool> alive(blocks.front().patches.size(), true);
  for (const auto& b : blocks) {
    for (std::size_t j = 0; j < alive.size() && j < b.patches.size(); ++j) alive[j] = alive[j] && b.patches[j] > 0.5f;
    out.push_back(alive);
  }
  return out;
}

std::uint64_t CostReport::block_total() const {
  std::uint64_t t = 0;
  for (const auto& b : blocks) t += b.total();
  return t;
}

std::uint64_t CostReport::decision_total() const {
  std::uint64_t t = 0;
  for (const auto& b : blocks) t += b.decision_net;
  return t;
}

std::uint64_t CostReport::total() const { return embed + classifier + block_total(); }

double CostReport::mean_kept_patches() const {
  if (blocks.empty()) return 0.0;
  double s = 0.0;
  for (const auto& b : blocks) s += static_cast<double>(b.tokens) - 1.0;
  return s / static_cast<double>(blocks.size());
}

double CostReport::mean_active_heads() const {
  if (blocks.empty()) return 0.0;
  double s = 0.0;
  for (const auto& b : blocks) s += static_cast<double>(b.active_heads);
  return s / static_cast<double>(blocks.size());
}

double CostReport::kept_blocks() const {
  double s = 0.0;
  for (const auto& b : blocks) s += 0.5 * (static_cast<double>(b.msa_on) + static_cast<double>(b.ffn_on));
  return s;
}

nlohmann::json CostReport::to_json() const {
  nlohmann::json blocks_json = nlohmann::json::array();
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    blocks_json.push_back({{"block", l},
                           {"qkv_proj", b.qkv_proj},
                           {"attn_logits", b.attn_logits},
                           {"attn_apply", b.attn_apply},
                           {"out_proj", b.out_proj},
                           {"ffn", b.ffn},
                           {"decision_net", b.decision_net},
                           {"total", b.total()},
                           {"tokens", b.tokens},
                           {"active_heads", b.active_heads},
                           {"msa_on", b.msa_on},
                           {"ffn_on", b.ffn_on}});
  }
  return {{"embed", embed},
          {"classifier", classifier},
          {"blocks", blocks_json},
          {"block_total", block_total()},
          {"decision_total", decision_total()},
          {"total", total()},
          {"gflops", gflops()},
          {"mean_kept_patches", mean_kept_patches()},
          {"mean_active_heads", mean_active_heads()},
          {"kept_blocks", kept_blocks()}};
}

CostReport static_flops(const ModelConfig& cfg) {
  cfg.validate();
  CostReport r;
  r.embed = embed_cost(cfg);
  r.classifier = kMac * cfg.embed_dim * cfg.num_classes;
  const std::uint64_t n = cfg.tokens();
  for (std::size_t l = 0; l < cfg.num_blocks; ++l) {
    BlockCost b;
    b.tokens = n;
    b.active_heads = cfg.num_heads;
    msa_cost(cfg, n, cfg.num_heads, 0, true, b);
    b.ffn = ffn_cost(cfg, n);
    r.blocks.push_back(b);
  }
  return r;
}

CostReport policy_flops(const ModelConfig& cfg, const SamplePolicy& policy, HeadSelectionMode mode,
                        bool charge_decisions) {
  cfg.validate();
  const std::size_t N = cfg.num_patches(), H = cfg.num_heads;
  if (policy.blocks.size() != cfg.num_blocks)
    throw ContractError("policy_flops: policy has " + std::to_string(policy.blocks.size()) + " blocks, model has " +
                        std::to_string(cfg.num_blocks));
  CostReport r;
  r.embed = embed_cost(cfg);
  r.classifier = kMac * cfg.embed_dim * cfg.num_classes;
  std::vector<bool> alive(N, true);
  const bool full = mode == HeadSelectionMode::Full;
  for (std::size_t l = 0; l < cfg.num_blocks; ++l) {
    const BlockPolicy& g = policy.blocks[l];
    check_gates(g.patches, N, "patch", l);
    check_gates(g.heads, H, "head", l);
    check_gates(g.sublayers, 2, "block", l);
    const bool gated = cfg.is_gated(l);
    if (!gated) {
      for (float v : g.patches)
        if (v != 1.0f) throw ContractError("policy_flops: block " + std::to_string(l) + " has no decision network");
      for (float v : g.heads)
        if (v != 1.0f) throw ContractError("policy_flops: block " + std::to_string(l) + " has no decision network");
      for (float v : g.sublayers)
        if (v != 1.0f) throw ContractError("policy_flops: block " + std::to_string(l) + " has no decision network");
    }

    BlockCost b;
    std::uint64_t alive_before = 0;
    for (bool a : alive) alive_before += a;
    if (gated && charge_decisions) b.decision_net = decision_cost(cfg, alive_before);

    std::uint64_t kept = 0;
    for (std::size_t j = 0; j < N; ++j) {
      alive[j] = alive[j] && g.patches[j] == 1.0f;
      kept += alive[j];
    }
    const std::uint64_t n = kept + 1;
    b.tokens = n;

    std::uint64_t active = 0;
    for (float v : g.heads) active += v == 1.0f;
    b.msa_on = g.sublayers[0] == 1.0f;
    b.ffn_on = g.sublayers[1] == 1.0f;

    // Full deactivation of every head removes the sublayer altogether.
    const bool run_msa = b.msa_on && !(full && active == 0);
    if (run_msa) {
      b.active_heads = active;
      msa_cost(cfg, n, active, full ? 0 : H - active, full, b);
    }
    if (b.ffn_on) b.ffn = ffn_cost(cfg, n);
    r.blocks.push_back(b);
  }
  return r;
}

std::string format_gflops(double gflops) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", gflops);
  return buf;
}

std::string cost_table(const CostReport& report) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-6s %6s %6s %12s %12s %12s %12s %12s %12s %12s\n", "block", "tokens", "heads",
                "qkv_proj", "attn_logits", "attn_apply", "out_proj", "ffn", "decision", "total");
  os << line;
  for (std::size_t l = 0; l < report.blocks.size(); ++l) {
    const auto& b = report.blocks[l];
    std::snprintf(line, sizeof(line), "%-6zu %6zu %6zu %12llu %12llu %12llu %12llu %12llu %12llu %12llu\n", l,
                  b.tokens, b.active_heads, static_cast<unsigned long long>(b.qkv_proj),
                  static_cast<unsigned long long>(b.attn_logits), static_cast<unsigned long long>(b.attn_apply),
                  static_cast<unsigned long long>(b.out_proj), static_cast<unsigned long long>(b.ffn),
                  static_cast<unsigned long long>(b.decision_net), static_cast<unsigned long long>(b.total()));
    os << line;
  }
  std::snprintf(line, sizeof(line), "embed %llu  classifier %llu  total %llu  (%s GFLOPs)\n",
                static_cast<unsigned long long>(report.embed), static_cast<unsigned long long>(report.classifier),
                static_cast<unsigned long long>(report.total()), format_gflops(report.gflops()).c_str());
  os << line;
  return os.str();
}

}  // namespace gatevit
