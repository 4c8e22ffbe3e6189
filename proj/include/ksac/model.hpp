#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ksac/checkpoint.hpp"
#include "ksac/seg_heads.hpp"

namespace ksac {

struct ModelConfig {
  HeadKind head = HeadKind::ksac;
  std::vector<std::int64_t> rates{6, 12, 18};
  /// Channels delivered by the backbone, i.e. the head's C_in.
  std::int64_t c_in = 64;
  std::int64_t c_out = 256;
  /// 8 or 16.
  std::int64_t output_stride = 16;
  bool decoder = false;
  std::int64_t decoder_reduce = 48;
  std::int64_t num_classes = 4;
  std::uint64_t seed = 0;

  void validate() const;
  /// Text manifest: one `key = value` per line.
  std::string manifest() const;
  static ModelConfig from_manifest(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Four conv+BN+ReLU stages with channels (16, 32, 64, C_in). Strides are
/// (2,2,2,2) for OS 16 and (2,2,2,1) with a rate-2 last stage for OS 8.
class ToyBackbone {
 public:
  static constexpr std::int64_t kStageChannels[3] = {16, 32, 64};

  ToyBackbone(std::int64_t c_in, std::int64_t output_stride, std::uint64_t seed);

  struct Output {
    Tensor features;
    /// Stage-2 activations at output stride 4.
    Tensor tap_os4;
  };
  Output forward(const Tensor& image, Mode mode);
  void collect(std::vector<ParamRef>& out) const;

  const std::vector<ConvBnRelu>& stages() const { return stages_; }
  std::int64_t output_stride() const { return output_stride_; }

 private:
  std::vector<ConvBnRelu> stages_;
  std::int64_t output_stride_;
};

/// Upsamples head output to the OS-4 tap, concatenates a 1x1-reduced tap,
/// then refines with two 3x3 conv+BN+ReLU blocks.
struct Decoder {
  ConvBnRelu reduce;
  ConvBnRelu refine1;
  ConvBnRelu refine2;

  Decoder(std::int64_t tap_channels, std::int64_t head_channels, std::int64_t reduce_channels,
          std::uint64_t seed);
  Tensor forward(const Tensor& head_out, const Tensor& tap, Mode mode);
  void collect(std::vector<ParamRef>& out) const;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  SegHead& head() { return *head_; }
  const SegHead& head() const { return *head_; }
  ToyBackbone& backbone() { return backbone_; }
  const ToyBackbone& backbone() const { return backbone_; }
  const std::optional<Decoder>& decoder() const { return decoder_; }

  /// (N,3,H,W) image -> (N,num_classes,H,W) logits.
  Tensor forward(const Tensor& image, Mode mode);

  struct Trace {
    Tensor backbone_features;
    Tensor tap_os4;
    Tensor head_output;
    Tensor logits;
  };
  Trace forward_trace(const Tensor& image, Mode mode);

  /// Every parameter and buffer, in a stable canonical order.
  std::vector<ParamRef> parameters() const;
  std::vector<Tensor> trainable_tensors() const;
  void zero_grad();

  /// Detached copies of every parameter and buffer.
  std::vector<NamedTensor> state_dict() const;
  /// Copies values in; throws ShapeError/IoError on missing or mismatched entries.
  void load_state(const std::vector<NamedTensor>& state);

  /// Parameter values with the same names, copied for snapshotting.
  std::vector<NamedTensor> snapshot() const { return state_dict(); }

 private:
  ModelConfig cfg_;
  ToyBackbone backbone_;
  std::unique_ptr<SegHead> head_;
  std::optional<Decoder> decoder_;
  Tensor classifier_kernel_;
  Tensor classifier_bias_;
};

/// Validates the configuration and constructs the model.
std::unique_ptr<Model> build_model(const ModelConfig& cfg);

/// Writes "<stem>.ksac" (tensors) and "<stem>.manifest" (configuration).
void save_model(const Model& model, const std::string& stem);
std::unique_ptr<Model> load_model(const std::string& stem);

}  // namespace ksac
