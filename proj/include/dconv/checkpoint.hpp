// Checkpoint container. Layout: magic "DCV1", then per tensor
//   u32 LE  name length
//   bytes   UTF-8 name
//   u32 LE  rank
//   u32 LE  dims[rank]
//   f32 LE  data (row-major)
// Round-trips are bit-exact. Optimizer state rides along under the reserved
// "opt." name prefix and is ignored by plain model loads.

#pragma once

#include "dconv/model.hpp"
#include "dconv/train.hpp"

#include <string>
#include <utility>
#include <vector>

namespace dconv {

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor*>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);

void save_model(const std::string& path, ModelParams& params,
                const AdamState* optimizer = nullptr);

// Fills an allocated ModelParams by tensor name; every model tensor must be
// present with a matching shape. Returns leftover "opt."-prefixed tensors.
std::vector<std::pair<std::string, Tensor>> load_model(const std::string& path,
                                                       ModelParams& params);

}  // namespace dconv
