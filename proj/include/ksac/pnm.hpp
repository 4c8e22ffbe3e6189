#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ksac/nn_ops.hpp"
#include "ksac/tensor.hpp"

namespace ksac {

// Binary Netpbm (P5/P6, maxval 255) so images can be inspected without an
// image library.

/// Writes image n of an (N,3,H,W) tensor with values in [0,1].
void write_ppm(const std::string& path, const Tensor& image, std::int64_t n = 0);
/// Returns a (1,3,H,W) tensor in [0,1].
Tensor read_ppm(const std::string& path);

/// Writes labels of image n as raw bytes (label values must be in [0,255]).
void write_pgm(const std::string& path, const LabelMap& labels, std::int64_t n = 0);
void write_pgm(const std::string& path, std::int64_t height, std::int64_t width,
               const std::vector<std::uint8_t>& pixels);
LabelMap read_pgm_labels(const std::string& path);

}  // namespace ksac
