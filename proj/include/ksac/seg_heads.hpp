#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ksac/nn_ops.hpp"
#include "ksac/tensor.hpp"

namespace ksac {

enum class HeadKind { ksac, aspp };

std::string to_string(HeadKind kind);
/// Accepts "ksac" or "aspp"; throws ConfigError otherwise.
HeadKind parse_head_kind(const std::string& text);

/// Accounting bucket a parameter belongs to.
enum class ParamGroup {
  backbone,
  head_3x3,
  /// The two 1x1 convolutions of the image-level and 1x1 branches.
  head_1x1,
  head_projection,
  batch_norm,
  decoder,
  classifier,
};

/// Named handle to a model tensor. Buffers (BN running statistics) carry
/// trainable = false.
struct ParamRef {
  std::string name;
  Tensor tensor;
  ParamGroup group;
  bool trainable = true;
};

/// Deterministic per-name seed so that a tensor's initial value depends only
/// on the model seed and the tensor's canonical name.
std::uint64_t param_seed(std::uint64_t model_seed, const std::string& name);

/// Convolution without bias, followed by batch norm and ReLU.
struct ConvBnRelu {
  ConvSpec spec;
  Tensor kernel;
  BatchNormState bn;

  static ConvBnRelu make(const ConvSpec& spec, std::uint64_t model_seed, const std::string& name);
  Tensor forward(const Tensor& x, Mode mode);
  void collect(std::vector<ParamRef>& out, const std::string& name, ParamGroup group) const;
};

void collect_bn(std::vector<ParamRef>& out, const std::string& prefix, const BatchNormState& bn);

/// Common interface of the KSAC and ASPP heads.
///
/// Both heads share the 1x1 branch, the image-level branch and a 1x1
/// projection with batch norm; they differ in how the atrous branches are
/// parameterized and fused.
class SegHead {
 public:
  virtual ~SegHead() = default;

  virtual HeadKind kind() const = 0;
  /// (N, C_in, H, W) -> (N, C_out, H, W)
  virtual Tensor forward(const Tensor& t, Mode mode) = 0;
  /// ReLU(BN_r(conv_r(T))) for every rate r, in rate order, before fusion.
  virtual std::vector<Tensor> rate_branches(const Tensor& t, Mode mode) = 0;
  /// Appends every parameter and buffer under `prefix` in a stable order.
  virtual void collect(std::vector<ParamRef>& out, const std::string& prefix) const = 0;
  /// Channel count entering the projection.
  virtual std::int64_t fused_channels() const = 0;

  std::int64_t c_in() const { return c_in_; }
  std::int64_t c_out() const { return c_out_; }
  const std::vector<std::int64_t>& rates() const { return rates_; }

  /// One state per rate, indexed like rates().
  std::vector<BatchNormState> bn_per_rate;
  ConvBnRelu conv1x1_branch;
  ConvBnRelu image_pool_branch;
  ConvBnRelu project;

 protected:
  SegHead(std::int64_t c_in, std::int64_t c_out, std::vector<std::int64_t> rates, std::uint64_t seed,
          std::int64_t fused_channels, const std::string& prefix);

  /// Branch A: ReLU(BN(1x1 conv(T))).
  Tensor pointwise_branch(const Tensor& t, Mode mode);
  /// Branch B: image-level features broadcast back to H x W.
  Tensor image_level_branch(const Tensor& t, Mode mode);
  Tensor rate_branch(const Tensor& t, const Tensor& kernel, std::size_t rate_index, Mode mode);
  void collect_common(std::vector<ParamRef>& out, const std::string& prefix) const;
  ConvSpec atrous_spec(std::int64_t rate) const;

  std::int64_t c_in_;
  std::int64_t c_out_;
  std::vector<std::int64_t> rates_;
};

/// Shared-kernel atrous head: one 3x3 kernel applied at every rate, one
/// batch norm per rate, rate outputs summed after ReLU.
class KsacHead final : public SegHead {
 public:
  KsacHead(std::int64_t c_in, std::int64_t c_out, std::vector<std::int64_t> rates, std::uint64_t seed,
           const std::string& prefix = "head");

  HeadKind kind() const override { return HeadKind::ksac; }
  Tensor forward(const Tensor& t, Mode mode) override;
  std::vector<Tensor> rate_branches(const Tensor& t, Mode mode) override;
  void collect(std::vector<ParamRef>& out, const std::string& prefix) const override;
  std::int64_t fused_channels() const override { return 3 * c_out_; }

  /// sum over r of ReLU(BN_r(conv2d(T, shared_kernel, rate = r))).
  Tensor pyramid(const Tensor& t, Mode mode);

  /// (C_out, C_in, 3, 3); the only 3x3 kernel of the head.
  Tensor shared_kernel;
};

/// Baseline atrous pyramid: an independent 3x3 kernel per rate, branch
/// outputs concatenated along channels.
class AsppHead final : public SegHead {
 public:
  AsppHead(std::int64_t c_in, std::int64_t c_out, std::vector<std::int64_t> rates, std::uint64_t seed,
           const std::string& prefix = "head");

  HeadKind kind() const override { return HeadKind::aspp; }
  Tensor forward(const Tensor& t, Mode mode) override;
  std::vector<Tensor> rate_branches(const Tensor& t, Mode mode) override;
  void collect(std::vector<ParamRef>& out, const std::string& prefix) const override;
  std::int64_t fused_channels() const override {
    return (2 + static_cast<std::int64_t>(rates_.size())) * c_out_;
  }

  /// One (C_out, C_in, 3, 3) kernel per rate.
  std::vector<Tensor> per_rate_kernels;
};

std::unique_ptr<SegHead> make_head(HeadKind kind, std::int64_t c_in, std::int64_t c_out,
                                   std::vector<std::int64_t> rates, std::uint64_t seed);

/// Free-function forms.
Tensor ksac_pyramid(const Tensor& t, KsacHead& head, Mode mode);
Tensor ksac_head_forward(const Tensor& t, KsacHead& head, Mode mode);
Tensor aspp_head_forward(const Tensor& t, AsppHead& head, Mode mode);

/// Throws ConfigError for an empty, non-positive or repeated rate list.
void validate_rates(const std::vector<std::int64_t>& rates);

}  // namespace ksac
