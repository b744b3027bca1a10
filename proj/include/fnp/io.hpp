#pragma once

// Binary field and observation files.
//
// Field file ("FNPGRID1"), all integers/floats little-endian:
//   char[8]  magic "FNPGRID1"
//   u32      H, W, C
//   f64      lat0, dlat, lon0, dlon      (first cell center and signed spacing;
//                                         grids are cell-centered)
//   u32[C]   variable-group id per channel
//   C x { u32 length; char[length] name }
//   f32[C*H*W] values, channel-major then row-major (lat, lon)
//
// Observation file ("FNPOBS01"):
//   char[8]  magic "FNPOBS01"
//   u32      n_points, C
//   f64      source_resolution (degrees, 0 = unknown)
//   f64[n*2] (lat, lon) per point
//   f32[n*C] values, row-major; masked entries hold NaN
//   u8[ceil(n*C/8)] presence mask, bit k of the flat index, LSB first
//
// Values are stored as f32, so in-memory doubles are rounded on write;
// fields produced by the synthetic generators are already f32-representable.

#include <filesystem>

#include "fnp/grid.hpp"

namespace fnp {

/// Writes the binary file and, when `sidecar` is set, a human-readable
/// `<path>.json` metadata echo (non-authoritative).
void write_field(const Field& field, const std::filesystem::path& path, bool sidecar = true);
Field read_field(const std::filesystem::path& path);

void write_obs(const ObservationSet& obs, const std::filesystem::path& path, bool sidecar = true);
ObservationSet read_obs(const std::filesystem::path& path);

/// Round every value to the nearest f32 (the on-disk precision).
void quantize_to_storage(std::vector<double>& values);

}  // namespace fnp
