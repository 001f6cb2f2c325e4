#pragma once

// Smallest configuration that exercises every network; used by the trainer
// and experiment tests.

#include <string>

#include "mrtrans/config.hpp"

namespace testutil {

inline mrtrans::ExperimentConfig tiny_config(const std::string& mode, std::uint64_t seed = 1) {
  auto c = mrtrans::toy_preset();
  c.mode = mrtrans::TrainingMode::parse(mode);
  c.seed = seed;
  c.data.image_size = 16;
  c.data.train_pairs = 6;
  c.data.val_pairs = 3;
  c.data.test_pairs = 3;
  c.data.augmentation.translation = 2.0;
  c.data.noise.translation = 2.0;
  c.schedule.iterations = 6;
  c.schedule.batch_size = 2;
  c.schedule.validate_every = 2;
  c.model.generator = {1, 4, 3};
  c.model.discriminator = {3, 4};
  c.model.registration.encoder_channels = {4, 4, 4, 4};
  c.model.registration.decoder_channels = {4, 4, 4, 4};
  return c;
}

}  // namespace testutil
