#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mga/tensor.hpp"

namespace mga::nn {

// Flat binary parameter container, bit-exact on round-trip.
//
// Layout (little-endian):
//   magic    "MGACKPT1" (8 bytes)
//   u64      record count
//   records: u32 name length, name bytes,
//            u32 ndim, u64 dims[ndim],
//            f64 values[product(dims)] (raw IEEE-754 bits)
//
// Stores are written with a "prefix/" namespace so several model components
// can share one file.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const ParamStore*>>& stores);

// Loads into existing stores; every record must match an existing parameter
// with identical shape, and every parameter must be present in the file.
void load_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, ParamStore*>>& stores);

}  // namespace mga::nn
