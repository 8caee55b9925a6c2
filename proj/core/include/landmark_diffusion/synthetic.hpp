#pragma once

#include <cstdint>
#include <memory>

#include "landmark_diffusion/dataset.hpp"

namespace lmd {

/// Procedural radiograph-like images: a jointed chain of bright capsules
/// ("bones") on a dim textured background, under a random global pose. The
/// landmarks are the chain's joints, so their positions are fixed exactly by
/// the generative parameters. A distractor blob that carries no landmark is
/// drawn as well. Same seed, same bytes.
std::shared_ptr<InMemorySource> generate_synthetic(size_t count, int64_t height, int64_t width,
                                                   int64_t num_landmarks, uint64_t seed,
                                                   const std::string& dataset_id = "synthetic");

}  // namespace lmd
