#pragma once

#include <string>
#include <vector>

#include "capmt/transformer.hpp"

namespace capmt {

// Binary checkpoint container (little-endian):
//   bytes 0..7   magic "CAPMTCK1"
//   bytes 8..11  u32 format version (1)
//   u32 config length + that many bytes of JSON (the resolved run config)
//   u64 parameter count, then per parameter:
//     u32 name length + name bytes
//     u32 rank, then rank u64 dimensions
//     row-major f64 values
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& params,
                     const std::string& config_json);

struct Checkpoint {
  std::string config_json;
  std::vector<NamedTensor> params;
};
Checkpoint load_checkpoint(const std::string& path);

// Copies values into same-named model parameters; the name sets must match
// exactly and shapes must agree.
void apply_checkpoint(const Checkpoint& ck, const std::vector<NamedTensor>& params);

}  // namespace capmt
