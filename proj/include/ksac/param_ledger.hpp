#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ksac/model.hpp"
#include "ksac/seg_heads.hpp"

namespace ksac {

std::string to_string(ParamGroup group);

struct ParamEntry {
  std::string name;
  Shape shape;
  std::int64_t count = 0;
  bool trainable = true;
  ParamGroup group = ParamGroup::backbone;
};

/// Which layers make up the M term of the head complexity formula
/// 9*C_in*C_out*(1 or N) + M.
enum class MConvention {
  /// M = C_in * C_out
  one_layer,
  /// M = 2 * C_in * C_out: the 1x1 branch and the image-level 1x1 together.
  two_layers,
};

/// Parameter inventory of a model or a head.
///
/// Two views are offered. The full view enumerates every tensor, including
/// BN running statistics as non-trainable buffers. The formula view keeps
/// only the head's 3x3 kernels and its two branch 1x1 convolutions, which is
/// what the closed-form complexity 9*C_in*C_out*(1|N) + M describes.
struct ParamReport {
  HeadKind head_kind = HeadKind::ksac;
  std::int64_t c_in = 0;
  std::int64_t c_out = 0;
  std::int64_t branches = 0;
  std::vector<ParamEntry> entries;

  std::int64_t total() const;
  std::int64_t trainable_total() const;
  std::int64_t buffer_total() const;
  /// Trainable count in one group.
  std::int64_t group_total(ParamGroup group) const;
  /// Trainable BN parameters whose name starts with `prefix`.
  std::int64_t bn_total(const std::string& prefix = "") const;

  std::int64_t head_3x3() const { return group_total(ParamGroup::head_3x3); }
  std::int64_t head_1x1() const { return group_total(ParamGroup::head_1x1); }
  /// head_3x3 + head_1x1.
  std::int64_t formula_view_total() const { return head_3x3() + head_1x1(); }
  /// Head parameters excluding BN: 3x3 kernels, branch 1x1s and projection.
  std::int64_t head_non_bn_total() const {
    return head_3x3() + head_1x1() + group_total(ParamGroup::head_projection);
  }

  std::int64_t predicted_head_3x3() const;
  std::int64_t predicted_m(MConvention convention = MConvention::two_layers) const;
  std::int64_t predicted_formula_total(MConvention convention = MConvention::two_layers) const {
    return predicted_head_3x3() + predicted_m(convention);
  }
  /// head_3x3 and head_1x1 equal their closed forms exactly.
  bool formula_check() const;
  /// "O(1)" for a shared kernel, "O(N)" otherwise.
  std::string complexity() const;

  std::string to_table() const;
  /// key=value lines followed by a CSV block of the entries.
  std::string to_machine() const;
};

ParamReport count_params(const Model& model);
ParamReport count_params(const SegHead& head);

/// 1 - (9*C_in*C_out + M) / (9*C_in*C_out*N + M).
double savings_report(std::int64_t c_in, std::int64_t c_out, std::int64_t branches,
                      MConvention convention = MConvention::two_layers);

struct LayerCost {
  std::string name;
  ParamGroup group;
  Shape input;
  Shape output;
  std::int64_t macs = 0;
  /// False for layers whose cost does not depend on the feature grid (the
  /// image-level 1x1 convolution acting on a pooled 1x1 map).
  bool spatial = true;
};

struct FlopsReport {
  std::vector<LayerCost> layers;

  std::int64_t total() const;
  std::int64_t head_total() const;
  /// Head layers evaluated on the H x W feature grid.
  std::int64_t head_spatial_total() const;
  std::int64_t backbone_total() const;
  std::string to_table() const;
};

/// Analytic multiply-accumulate counts: conv = N*C_out*H_out*W_out*C_in*kh*kw,
/// global average pooling = N*C*H*W. BN, ReLU and resampling are not counted.
FlopsReport flops_estimate(const Model& model, const Shape& input);
FlopsReport flops_estimate(const SegHead& head, const Shape& features);

}  // namespace ksac
