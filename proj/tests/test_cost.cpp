#include <gtest/gtest.h>

#include <cstdint>
#include <vector>

#include "cost_oracle.hpp"
#include "gatevit/cost.hpp"

using namespace gatevit;

namespace {

using gatevit::testing::oracle_flops;

ModelConfig micro() {
  ModelConfig c;
  c.image_size = 4;
  c.patch_size = 2;
  c.channels = 1;
  c.embed_dim = 4;
  c.num_heads = 2;
  c.num_blocks = 2;
  c.ffn_multiplier = 2;
  c.num_classes = 3;
  c.first_gated_block = 0;
  return c;
}

SamplePolicy decode(const ModelConfig& cfg, std::uint32_t bits) {
  SamplePolicy p = SamplePolicy::all_open(cfg);
  int k = 0;
  for (auto& b : p.blocks) {
    for (auto& v : b.patches) v = static_cast<float>((bits >> k++) & 1);
    for (auto& v : b.heads) v = static_cast<float>((bits >> k++) & 1);
    for (auto& v : b.sublayers) v = static_cast<float>((bits >> k++) & 1);
  }
  return p;
}

}  // namespace

TEST(CostOracle, ExhaustiveMicroConfig) {
  const ModelConfig cfg = micro();
  const std::uint32_t patterns = 1u << 16;  // 2 blocks x (4 patch + 2 head + 2 sublayer) gates
  std::size_t strict = 0;
  for (std::uint32_t bits = 0; bits < patterns; ++bits) {
    const SamplePolicy pol = decode(cfg, bits);
    for (bool charge : {true, false})
      for (HeadSelectionMode mode : {HeadSelectionMode::Full, HeadSelectionMode::Partial})
        ASSERT_EQ(policy_flops(cfg, pol, mode, charge).total(), oracle_flops(cfg, pol, mode, charge))
            << "pattern " << bits << " mode " << to_string(mode);
    const auto full = policy_flops(cfg, pol, HeadSelectionMode::Full).total();
    const auto partial = policy_flops(cfg, pol, HeadSelectionMode::Partial).total();
    bool head_off_in_running_msa = false;
    for (const auto& b : pol.blocks)
      for (float h : b.heads)
        if (h == 0.0f) head_off_in_running_msa |= b.sublayers[0] == 1.0f;
    if (head_off_in_running_msa) {
      ASSERT_GT(partial, full) << "pattern " << bits;
      ++strict;
    } else {
      ASSERT_EQ(partial, full) << "pattern " << bits;
    }
  }
  EXPECT_GT(strict, 0u);
}

TEST(CostOracle, OpenPolicyEqualsStaticCostPlusDecisions) {
  ModelConfig cfg = micro();
  cfg.num_blocks = 3;
  cfg.first_gated_block = 1;
  const auto open = policy_flops(cfg, SamplePolicy::all_open(cfg), HeadSelectionMode::Full, false);
  EXPECT_EQ(open.total(), static_flops(cfg).total());
  EXPECT_EQ(open.total(), oracle_flops(cfg, SamplePolicy::all_open(cfg), HeadSelectionMode::Full, false));
  const auto charged = policy_flops(cfg, SamplePolicy::all_open(cfg), HeadSelectionMode::Full, true);
  EXPECT_EQ(charged.total(), oracle_flops(cfg, SamplePolicy::all_open(cfg), HeadSelectionMode::Full, true));
  EXPECT_EQ(charged.blocks[0].decision_net, 0u);
  EXPECT_GT(charged.blocks[1].decision_net, 0u);
}

TEST(CostOracle, DroppingNeverIncreasesCost) {
  const ModelConfig cfg = micro();
  const auto base = static_flops(cfg).total();
  for (std::uint32_t bits = 0; bits < (1u << 16); bits += 37)
    EXPECT_LE(policy_flops(cfg, decode(cfg, bits), HeadSelectionMode::Partial, false).total(), base);
}

TEST(CostModel, RejectsSoftOrMisshapenPolicies) {
  const ModelConfig cfg = micro();
  SamplePolicy p = SamplePolicy::all_open(cfg);
  p.blocks[1].heads[0] = 0.5f;
  EXPECT_THROW(policy_flops(cfg, p, HeadSelectionMode::Full), ContractError);
  p = SamplePolicy::all_open(cfg);
  p.blocks.pop_back();
  EXPECT_THROW(policy_flops(cfg, p, HeadSelectionMode::Full), ContractError);
  ModelConfig ungated = cfg;
  ungated.first_gated_block = 1;
  p = SamplePolicy::all_open(cfg);
  p.blocks[0].patches[2] = 0.0f;
  EXPECT_THROW(policy_flops(ungated, p, HeadSelectionMode::Full), ContractError);
}

TEST(CostModel, FormatsThreeSignificantDigits) {
  EXPECT_EQ(format_gflops(0.0012345), "0.00123");
  EXPECT_EQ(format_gflops(3.9), "3.9");
}
