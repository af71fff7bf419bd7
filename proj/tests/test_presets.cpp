#include <gtest/gtest.h>

#include <algorithm>

#include "prefillsim/errors.hpp"
#include "prefillsim/presets.hpp"

using namespace prefillsim;

TEST(KeyValueFile, ParsesCommentsAndWhitespace) {
  const auto kv = KeyValueFile::parse("# header\n  a = 1 \n\nb=two # trailing\nflag = Yes\n");
  EXPECT_EQ(kv.get("a"), "1");
  EXPECT_EQ(kv.get("b"), "two");
  EXPECT_EQ(kv.get_u64("a"), 1u);
  EXPECT_TRUE(kv.get_bool("flag"));
  EXPECT_EQ(kv.get_or("missing", "x"), "x");
}

TEST(KeyValueFile, RejectsMalformedLines) {
  EXPECT_THROW(KeyValueFile::parse("novalue\n"), ConfigError);
  EXPECT_THROW(KeyValueFile::parse("= 3\n"), ConfigError);
  EXPECT_THROW(KeyValueFile::parse("a = 1\na = 2\n"), ConfigError);
}

TEST(KeyValueFile, TypedGettersValidate) {
  const auto kv = KeyValueFile::parse("n = -3\nx = 1.5e3\nbad = 12abc\nb = maybe\n");
  EXPECT_THROW(kv.get_u64("n"), ConfigError);
  EXPECT_DOUBLE_EQ(kv.get_double("x"), 1500.0);
  EXPECT_THROW(kv.get_double("bad"), ConfigError);
  EXPECT_THROW(kv.get_bool("b"), ConfigError);
  EXPECT_THROW(kv.get("absent"), ConfigError);
}

TEST(Presets, BundledSetsLoad) {
  const auto models = list_presets("models");
  const auto gpus = list_presets("gpus");
  for (const char* m : {"llama-3.1-8b", "qwen-32b-fp8", "llama-3.3-70b-fp8"}) {
    EXPECT_NE(std::find(models.begin(), models.end(), m), models.end()) << m;
    EXPECT_NO_THROW(load_model_preset(m));
  }
  for (const char* g : {"l4", "a100-40gb", "h100-pcie", "h100-nvlink"}) {
    EXPECT_NE(std::find(gpus.begin(), gpus.end(), g), gpus.end()) << g;
    EXPECT_NO_THROW(load_gpu_preset(g));
  }
}

TEST(Presets, UnknownNameIsConfigError) {
  EXPECT_THROW(load_model_preset("gpt-17"), ConfigError);
  EXPECT_THROW(load_gpu_preset("tpu-v9"), ConfigError);
}

TEST(Presets, NvlinkDiffersOnlyInLink) {
  const auto pcie = load_gpu_preset("h100-pcie").gpu;
  const auto nvl = load_gpu_preset("h100-nvlink").gpu;
  EXPECT_EQ(pcie.total_memory, nvl.total_memory);
  EXPECT_DOUBLE_EQ(pcie.linear_rate, nvl.linear_rate);
  EXPECT_GT(nvl.link_bandwidth, pcie.link_bandwidth);
  EXPECT_TRUE(nvl.has_nvlink);
  EXPECT_FALSE(pcie.has_nvlink);
}
