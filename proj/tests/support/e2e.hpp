// SPDX-License-Identifier: Apache-2.0
//
// End-to-end run on the synthetic shape corpus: group, fine-tune the token
// bank, and segment the held-out images.
#pragma once

#include <cstdint>
#include <vector>

#include "seggroup/alignment.hpp"
#include "seggroup/grouping.hpp"

namespace seggroup::testing {

/// Optimizer settings for the desk-scale corpus: a few hundred steps in total, so a larger step size.
inline AdaptionConfig desk_adaption() {
  AdaptionConfig c;
  c.lr = 0.1;
  c.batch_size = 16;
  c.epochs = 5;
  return c;
}

struct E2EOptions {
  std::uint64_t seed = 0;
  int num_images = 320;
  int image_size = 224;
  double min_radius = 0.12;
  double max_radius = 0.2;
  double val_fraction = 0.2;
  int num_regions = 40;
  int eval_batch = 16;
  Metric metric = Metric::euclidean;
  AdaptionConfig adaption = desk_adaption();
};

struct E2EResult {
  double val_loss_initial = 0;   // zero tokens, noun_to_region
  double val_loss_n2r = 0;       // noun_to_region bank, noun_to_region loss
  double val_loss_r2n = 0;       // region_to_noun bank, noun_to_region loss
  double val_loss_r2n_own = 0;   // region_to_noun bank, region_to_noun loss
  double miou_zero = 0;          // segmentation of held-out images, zero tokens
  double miou_tuned = 0;         // noun_to_region bank
  double upper_bound = 0;        // majority labeling of the same regions
  bool partitions_ok = true;     // every RegionMaskSet produced was a partition
  double inverse_temperature = 0;
  double mean_token_norm = 0;         // noun_to_region bank after training
  std::vector<double> train_loss_by_epoch;  // noun_to_region run
  double seconds = 0;
};

E2EResult run_e2e(const E2EOptions& options);

}  // namespace seggroup::testing
