#include "ksac/seg_heads.hpp"

#include <set>

#include "ksac/errors.hpp"
#include "ksac/tensor_ops.hpp"

namespace ksac {

std::string to_string(HeadKind kind) { return kind == HeadKind::ksac ? "ksac" : "aspp"; }

HeadKind parse_head_kind(const std::string& text) {
  if (text == "ksac") return HeadKind::ksac;
  if (text == "aspp") return HeadKind::aspp;
  throw ConfigError("unknown head kind '" + text + "' (expected ksac or aspp)");
}

std::uint64_t param_seed(std::uint64_t model_seed, const std::string& name) {
  // FNV-1a over the name, then mixed with the model seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = h ^ (model_seed + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void validate_rates(const std::vector<std::int64_t>& rates) {
  if (rates.empty()) throw ConfigError("atrous rate list is empty");
  std::set<std::int64_t> seen;
  for (std::int64_t r : rates) {
    if (r < 1) throw ConfigError("atrous rate must be >= 1, got " + std::to_string(r));
    if (!seen.insert(r).second) throw ConfigError("atrous rate " + std::to_string(r) + " repeated");
  }
}

// ---------------------------------------------------------------------------

ConvBnRelu ConvBnRelu::make(const ConvSpec& spec, std::uint64_t model_seed, const std::string& name) {
  spec.validate();
  ConvBnRelu block;
  block.spec = spec;
  block.kernel = Tensor(spec.kernel_shape(), fill::HeNormal{param_seed(model_seed, name + ".kernel")});
  block.kernel.set_requires_grad(true);
  block.bn = BatchNormState::make(spec.out_channels);
  return block;
}

Tensor ConvBnRelu::forward(const Tensor& x, Mode mode) {
  return relu(batch_norm(conv2d(x, kernel, std::nullopt, spec), bn, mode));
}

void collect_bn(std::vector<ParamRef>& out, const std::string& prefix, const BatchNormState& bn) {
  out.push_back({prefix + ".gamma", bn.gamma, ParamGroup::batch_norm, true});
  out.push_back({prefix + ".beta", bn.beta, ParamGroup::batch_norm, true});
  out.push_back({prefix + ".running_mean", bn.running_mean, ParamGroup::batch_norm, false});
  out.push_back({prefix + ".running_var", bn.running_var, ParamGroup::batch_norm, false});
}

void ConvBnRelu::collect(std::vector<ParamRef>& out, const std::string& name, ParamGroup group) const {
  out.push_back({name + ".kernel", kernel, group, true});
  collect_bn(out, name + ".bn", bn);
}

// ---------------------------------------------------------------------------

SegHead::SegHead(std::int64_t c_in, std::int64_t c_out, std::vector<std::int64_t> rates, std::uint64_t seed,
                 std::int64_t fused_channels, const std::string& prefix)
    : c_in_(c_in), c_out_(c_out), rates_(std::move(rates)) {
  validate_rates(rates_);
  if (c_in < 1 || c_out < 1) throw ConfigError("head channel counts must be positive");
  ConvSpec pointwise{.in_channels = c_in, .out_channels = c_out, .kh = 1, .kw = 1};
  conv1x1_branch = ConvBnRelu::make(pointwise, seed, prefix + ".conv1x1");
  image_pool_branch = ConvBnRelu::make(pointwise, seed, prefix + ".image_pool");
  ConvSpec proj{.in_channels = fused_channels, .out_channels = c_out, .kh = 1, .kw = 1};
  project = ConvBnRelu::make(proj, seed, prefix + ".project");
  for (std::size_t i = 0; i < rates_.size(); ++i) bn_per_rate.push_back(BatchNormState::make(c_out));
}

ConvSpec SegHead::atrous_spec(std::int64_t rate) const {
  return ConvSpec{.in_channels = c_in_, .out_channels = c_out_, .kh = 3, .kw = 3, .stride = 1, .rate = rate};
}

Tensor SegHead::pointwise_branch(const Tensor& t, Mode mode) { return conv1x1_branch.forward(t, mode); }

Tensor SegHead::image_level_branch(const Tensor& t, Mode mode) {
  Tensor pooled = image_pool_branch.forward(global_avg_pool(t), mode);
  return bilinear_upsample(pooled, t.shape().h, t.shape().w);
}

Tensor SegHead::rate_branch(const Tensor& t, const Tensor& kernel, std::size_t rate_index, Mode mode) {
  const ConvSpec spec = atrous_spec(rates_[rate_index]);
  return relu(batch_norm(conv2d(t, kernel, std::nullopt, spec), bn_per_rate[rate_index], mode));
}

void SegHead::collect_common(std::vector<ParamRef>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < rates_.size(); ++i) {
    collect_bn(out, prefix + ".bn.r" + std::to_string(rates_[i]), bn_per_rate[i]);
  }
  conv1x1_branch.collect(out, prefix + ".conv1x1", ParamGroup::head_1x1);
  image_pool_branch.collect(out, prefix + ".image_pool", ParamGroup::head_1x1);
  project.collect(out, prefix + ".project", ParamGroup::head_projection);
}

// ---------------------------------------------------------------------------

KsacHead::KsacHead(std::int64_t c_in, std::int64_t c_out, std::vector<std::int64_t> rates, std::uint64_t seed,
                   const std::string& prefix)
    : SegHead(c_in, c_out, std::move(rates), seed, 3 * c_out, prefix) {
  shared_kernel = Tensor({c_out, c_in, 3, 3}, fill::HeNormal{param_seed(seed, prefix + ".shared_kernel")});
  shared_kernel.set_requires_grad(true);
}

std::vector<Tensor> KsacHead::rate_branches(const Tensor& t, Mode mode) {
  std::vector<Tensor> branches;
  branches.reserve(rates_.size());
  for (std::size_t i = 0; i < rates_.size(); ++i) branches.push_back(rate_branch(t, shared_kernel, i, mode));
  return branches;
}

Tensor KsacHead::pyramid(const Tensor& t, Mode mode) {
  if (t.shape().c != c_in_) {
    throw ShapeError("ksac_pyramid: input " + t.shape().str() + " expects " + std::to_string(c_in_) + " channels");
  }
  return add_n(rate_branches(t, mode));
}

Tensor KsacHead::forward(const Tensor& t, Mode mode) {
  Tensor a = pointwise_branch(t, mode);
  Tensor b = image_level_branch(t, mode);
  Tensor c = pyramid(t, mode);
  return project.forward(concat_channels({a, b, c}), mode);
}

void KsacHead::collect(std::vector<ParamRef>& out, const std::string& prefix) const {
  out.push_back({prefix + ".shared_kernel", shared_kernel, ParamGroup::head_3x3, true});
  collect_common(out, prefix);
}

// ---------------------------------------------------------------------------

AsppHead::AsppHead(std::int64_t c_in, std::int64_t c_out, std::vector<std::int64_t> rates, std::uint64_t seed,
                   const std::string& prefix)
    : SegHead(c_in, c_out, rates, seed, (2 + static_cast<std::int64_t>(rates.size())) * c_out, prefix) {
  for (std::int64_t r : rates_) {
    Tensor k({c_out, c_in, 3, 3}, fill::HeNormal{param_seed(seed, prefix + ".kernel.r" + std::to_string(r))});
    k.set_requires_grad(true);
    per_rate_kernels.push_back(std::move(k));
  }
}

std::vector<Tensor> AsppHead::rate_branches(const Tensor& t, Mode mode) {
  if (t.shape().c != c_in_) {
    throw ShapeError("aspp head: input " + t.shape().str() + " expects " + std::to_string(c_in_) + " channels");
  }
  std::vector<Tensor> branches;
  branches.reserve(rates_.size());
  for (std::size_t i = 0; i < rates_.size(); ++i) branches.push_back(rate_branch(t, per_rate_kernels[i], i, mode));
  return branches;
}

Tensor AsppHead::forward(const Tensor& t, Mode mode) {
  std::vector<Tensor> parts{pointwise_branch(t, mode), image_level_branch(t, mode)};
  for (Tensor& b : rate_branches(t, mode)) parts.push_back(std::move(b));
  return project.forward(concat_channels(parts), mode);
}

void AsppHead::collect(std::vector<ParamRef>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < rates_.size(); ++i) {
    out.push_back({prefix + ".kernel.r" + std::to_string(rates_[i]), per_rate_kernels[i], ParamGroup::head_3x3, true});
  }
  collect_common(out, prefix);
}

// ---------------------------------------------------------------------------

std::unique_ptr<SegHead> make_head(HeadKind kind, std::int64_t c_in, std::int64_t c_out,
                                   std::vector<std::int64_t> rates, std::uint64_t seed) {
  if (kind == HeadKind::ksac) return std::make_unique<KsacHead>(c_in, c_out, std::move(rates), seed);
  return std::make_unique<AsppHead>(c_in, c_out, std::move(rates), seed);
}

Tensor ksac_pyramid(const Tensor& t, KsacHead& head, Mode mode) { return head.pyramid(t, mode); }
Tensor ksac_head_forward(const Tensor& t, KsacHead& head, Mode mode) { return head.forward(t, mode); }
Tensor aspp_head_forward(const Tensor& t, AsppHead& head, Mode mode) { return head.forward(t, mode); }

}  // namespace ksac
