#include "ksac/model.hpp"

#include <map>
#include <sstream>

#include "ksac/errors.hpp"
#include "ksac/kv_text.hpp"
#include "ksac/tensor_ops.hpp"

namespace ksac {

void ModelConfig::validate() const {
  validate_rates(rates);
  if (output_stride != 8 && output_stride != 16) {
    throw ConfigError("output stride must be 8 or 16, got " + std::to_string(output_stride));
  }
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (c_in < 1 || c_out < 1) throw ConfigError("channel counts must be positive");
  if (decoder && decoder_reduce < 1) throw ConfigError("decoder_reduce must be positive");
}

std::string ModelConfig::manifest() const {
  std::ostringstream os;
  os << "head = " << to_string(head) << '\n'
     << "rates = " << format_int_list(rates) << '\n'
     << "c_in = " << c_in << '\n'
     << "c_out = " << c_out << '\n'
     << "output_stride = " << output_stride << '\n'
     << "decoder = " << (decoder ? "true" : "false") << '\n'
     << "decoder_reduce = " << decoder_reduce << '\n'
     << "num_classes = " << num_classes << '\n'
     << "seed = " << seed << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_manifest(const std::string& text) {
  const auto kv = parse_key_values(text);
  ModelConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "head") cfg.head = parse_head_kind(value);
    else if (key == "rates") cfg.rates = parse_int_list(value);
    else if (key == "c_in") cfg.c_in = parse_int(key, value);
    else if (key == "c_out") cfg.c_out = parse_int(key, value);
    else if (key == "output_stride") cfg.output_stride = parse_int(key, value);
    else if (key == "decoder") cfg.decoder = parse_bool(key, value);
    else if (key == "decoder_reduce") cfg.decoder_reduce = parse_int(key, value);
    else if (key == "num_classes") cfg.num_classes = parse_int(key, value);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else throw ConfigError("model manifest: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------

ToyBackbone::ToyBackbone(std::int64_t c_in, std::int64_t output_stride, std::uint64_t seed)
    : output_stride_(output_stride) {
  const std::int64_t channels[4] = {kStageChannels[0], kStageChannels[1], kStageChannels[2], c_in};
  const bool os8 = output_stride == 8;
  std::int64_t prev = 3;
  for (int i = 0; i < 4; ++i) {
    ConvSpec spec{.in_channels = prev, .out_channels = channels[i], .kh = 3, .kw = 3, .stride = 2, .rate = 1};
    if (i == 3 && os8) {
      spec.stride = 1;
      spec.rate = 2;
    }
    stages_.push_back(ConvBnRelu::make(spec, seed, "backbone.stage" + std::to_string(i + 1)));
    prev = channels[i];
  }
}

ToyBackbone::Output ToyBackbone::forward(const Tensor& image, Mode mode) {
  Output out;
  Tensor x = image;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    x = stages_[i].forward(x, mode);
    if (i == 1) out.tap_os4 = x;
  }
  out.features = x;
  return out;
}

void ToyBackbone::collect(std::vector<ParamRef>& out) const {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    stages_[i].collect(out, "backbone.stage" + std::to_string(i + 1), ParamGroup::backbone);
  }
}

// ---------------------------------------------------------------------------

Decoder::Decoder(std::int64_t tap_channels, std::int64_t head_channels, std::int64_t reduce_channels,
                 std::uint64_t seed)
    : reduce(ConvBnRelu::make({.in_channels = tap_channels, .out_channels = reduce_channels, .kh = 1, .kw = 1},
                              seed, "decoder.reduce")),
      refine1(ConvBnRelu::make({.in_channels = head_channels + reduce_channels, .out_channels = head_channels},
                               seed, "decoder.refine1")),
      refine2(ConvBnRelu::make({.in_channels = head_channels, .out_channels = head_channels}, seed,
                               "decoder.refine2")) {}

Tensor Decoder::forward(const Tensor& head_out, const Tensor& tap, Mode mode) {
  Tensor up = bilinear_upsample(head_out, tap.shape().h, tap.shape().w);
  Tensor fused = concat_channels({up, reduce.forward(tap, mode)});
  return refine2.forward(refine1.forward(fused, mode), mode);
}

void Decoder::collect(std::vector<ParamRef>& out) const {
  reduce.collect(out, "decoder.reduce", ParamGroup::decoder);
  refine1.collect(out, "decoder.refine1", ParamGroup::decoder);
  refine2.collect(out, "decoder.refine2", ParamGroup::decoder);
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)), backbone_((cfg_.validate(), cfg_.c_in), cfg_.output_stride, cfg_.seed) {
  head_ = make_head(cfg_.head, cfg_.c_in, cfg_.c_out, cfg_.rates, cfg_.seed);
  if (cfg_.decoder) {
    decoder_.emplace(ToyBackbone::kStageChannels[1], cfg_.c_out, cfg_.decoder_reduce, cfg_.seed);
  }
  classifier_kernel_ = Tensor({cfg_.num_classes, cfg_.c_out, 1, 1},
                              fill::HeNormal{param_seed(cfg_.seed, "classifier.kernel")});
  classifier_kernel_.set_requires_grad(true);
  classifier_bias_ = Tensor({1, cfg_.num_classes, 1, 1}, fill::Zeros{});
  classifier_bias_.set_requires_grad(true);
}

Model::Trace Model::forward_trace(const Tensor& image, Mode mode) {
  if (image.shape().c != 3) throw ShapeError("model expects 3-channel images, got " + image.shape().str());
  Trace t;
  auto bb = backbone_.forward(image, mode);
  t.backbone_features = bb.features;
  t.tap_os4 = bb.tap_os4;
  t.head_output = head_->forward(bb.features, mode);
  Tensor x = decoder_ ? decoder_->forward(t.head_output, bb.tap_os4, mode) : t.head_output;
  const ConvSpec cls{.in_channels = cfg_.c_out, .out_channels = cfg_.num_classes, .kh = 1, .kw = 1};
  Tensor logits = conv2d(x, classifier_kernel_, classifier_bias_, cls);
  t.logits = bilinear_upsample(logits, image.shape().h, image.shape().w);
  return t;
}

Tensor Model::forward(const Tensor& image, Mode mode) { return forward_trace(image, mode).logits; }

std::vector<ParamRef> Model::parameters() const {
  std::vector<ParamRef> out;
  backbone_.collect(out);
  head_->collect(out, "head");
  if (decoder_) decoder_->collect(out);
  out.push_back({"classifier.kernel", classifier_kernel_, ParamGroup::classifier, true});
  out.push_back({"classifier.bias", classifier_bias_, ParamGroup::classifier, true});
  return out;
}

std::vector<Tensor> Model::trainable_tensors() const {
  std::vector<Tensor> out;
  for (const ParamRef& p : parameters()) {
    if (p.trainable) out.push_back(p.tensor);
  }
  return out;
}

void Model::zero_grad() {
  for (ParamRef& p : parameters()) p.tensor.clear_grad();
}

std::vector<NamedTensor> Model::state_dict() const {
  std::vector<NamedTensor> out;
  for (const ParamRef& p : parameters()) out.push_back({p.name, p.tensor.detach()});
  return out;
}

void Model::load_state(const std::vector<NamedTensor>& state) {
  std::map<std::string, const Tensor*> by_name;
  for (const NamedTensor& nt : state) by_name[nt.name] = &nt.tensor;
  auto params = parameters();
  if (by_name.size() != params.size()) {
    throw IoError("checkpoint holds " + std::to_string(by_name.size()) + " tensors, model expects " +
                  std::to_string(params.size()));
  }
  for (ParamRef& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IoError("checkpoint is missing tensor '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw ShapeError("checkpoint tensor '" + p.name + "' has shape " + it->second->shape().str() +
                       ", model expects " + p.tensor.shape().str());
    }
    auto src = it->second->data();
    auto dst = p.tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

std::unique_ptr<Model> build_model(const ModelConfig& cfg) {
  cfg.validate();
  return std::make_unique<Model>(cfg);
}

void save_model(const Model& model, const std::string& stem) {
  save_checkpoint(stem + ".ksac", model.state_dict());
  write_text_file(stem + ".manifest", model.config().manifest());
}

std::unique_ptr<Model> load_model(const std::string& stem) {
  auto cfg = ModelConfig::from_manifest(read_text_file(stem + ".manifest"));
  auto model = build_model(cfg);
  model->load_state(load_checkpoint(stem + ".ksac"));
  return model;
}

}  // namespace ksac
