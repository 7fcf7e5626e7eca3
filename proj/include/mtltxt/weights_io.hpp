#pragma once

#include <string>

#include "mtltxt/graph.hpp"

namespace mtltxt {

// Flat container: magic "MTLTXT1", u32 parameter count, then per parameter
// u32 name length, name bytes, u32 rank, u64 extents, and float64 values,
// all little-endian. Load into a compatible store round-trips bit-exactly.
void save_weights(const ParamStore& store, const std::string& path);

// The target store must declare exactly the parameters in the file (same
// names, same shapes); mismatches are rejected listing the missing and
// extra names.
void load_weights(ParamStore& store, const std::string& path);

}  // namespace mtltxt
