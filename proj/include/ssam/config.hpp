#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ssam/backbone.hpp"
#include "ssam/losses.hpp"
#include "ssam/moe.hpp"

namespace ssam::pipeline {

struct StageConfig {
  std::size_t epochs = 0;
  std::size_t batch = 0;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.01;
};

struct TrainConfig {
  // Desk-scale schedule; full_schedule() restores 100 x 32 / 400 x 16.
  StageConfig stage1{30, 8};
  StageConfig stage2{60, 16};
  losses::LossWeights weights;
  std::string insertion = "last_2";  // preset name or explicit list such as "2,4"
  std::vector<moe::ExpertKind> experts = moe::all_experts();
  backbone::EncoderConfig encoder;
  std::uint64_t seed = 0;           // adapter / decoder / student init and batch order
  std::uint64_t backbone_seed = 1234;
  std::size_t eval_every = 0;       // 0: validate only after the last epoch
  double threshold = 0.5;
  std::string manifest;
  std::string out_dir;

  void full_schedule();
  /// Throws ConfigError for an unknown key or unparsable value.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::vector<std::size_t> injected_layers() const;
  /// Canonical "key = value" text; set() on each line reproduces the config.
  std::string text() const;
  std::uint64_t hash() const;
};

/// Reads `key = value` lines; '#' starts a comment.
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

/// none, first_half, last_half, all, last_2 (layers > L - 2), or a comma list.
std::vector<std::size_t> parse_insertion(const std::string& name, std::size_t layers);
std::vector<moe::ExpertKind> parse_experts(const std::string& list);
std::string experts_text(const std::vector<moe::ExpertKind>& kinds);

}  // namespace ssam::pipeline
