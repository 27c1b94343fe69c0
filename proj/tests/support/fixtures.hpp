#pragma once

#include <filesystem>
#include <string>

#include "flowplan/training.hpp"

namespace fixtures {

// Small enough to train 50 epochs on the toy corpus in seconds.
inline flowplan::TrainConfig toy_config() {
  flowplan::TrainConfig c;
  c.learning_rate = 0.003;
  c.batch_size = 4;
  c.epochs = 50;
  c.d_z = 8;
  c.max_utterance_len = 32;
  c.backbone.d_model = 32;
  c.backbone.encoder_layers = 1;
  c.backbone.decoder_layers = 1;
  c.backbone.heads = 2;
  c.backbone.ffn = 64;
  c.backbone.dropout = 0.0;
  c.backbone.max_turn_len = 64;
  return c;
}

// Gradient-check scale: a few thousand scalars.
inline flowplan::TrainConfig tiny_config() {
  flowplan::TrainConfig c = toy_config();
  c.kl_free_bits = 0.0;
  c.d_z = 3;
  c.max_utterance_len = 12;
  c.backbone.d_model = 8;
  c.backbone.heads = 2;
  c.backbone.ffn = 12;
  c.backbone.max_turn_len = 16;
  return c;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("flowplan-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixtures
