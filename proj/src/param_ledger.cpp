#include "ksac/param_ledger.hpp"

#include <cstdio>
#include <sstream>

#include "ksac/errors.hpp"

namespace ksac {

std::string to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::backbone: return "backbone";
    case ParamGroup::head_3x3: return "head_3x3";
    case ParamGroup::head_1x1: return "head_1x1";
    case ParamGroup::head_projection: return "head_projection";
    case ParamGroup::batch_norm: return "batch_norm";
    case ParamGroup::decoder: return "decoder";
    case ParamGroup::classifier: return "classifier";
  }
  return "unknown";
}

namespace {

ParamReport report_from(const std::vector<ParamRef>& params, const SegHead& head) {
  ParamReport r;
  r.head_kind = head.kind();
  r.c_in = head.c_in();
  r.c_out = head.c_out();
  r.branches = static_cast<std::int64_t>(head.rates().size());
  for (const ParamRef& p : params) {
    r.entries.push_back({p.name, p.tensor.shape(), p.tensor.numel(), p.trainable, p.group});
  }
  return r;
}

std::string with_commas(std::int64_t v) {
  std::string digits = std::to_string(v < 0 ? -v : v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return v < 0 ? "-" + out : out;
}

}  // namespace

std::int64_t ParamReport::total() const {
  std::int64_t t = 0;
  for (const auto& e : entries) t += e.count;
  return t;
}

std::int64_t ParamReport::trainable_total() const {
  std::int64_t t = 0;
  for (const auto& e : entries) t += e.trainable ? e.count : 0;
  return t;
}

std::int64_t ParamReport::buffer_total() const { return total() - trainable_total(); }

std::int64_t ParamReport::group_total(ParamGroup group) const {
  std::int64_t t = 0;
  for (const auto& e : entries) {
    if (e.trainable && e.group == group) t += e.count;
  }
  return t;
}

std::int64_t ParamReport::bn_total(const std::string& prefix) const {
  std::int64_t t = 0;
  for (const auto& e : entries) {
    if (e.trainable && e.group == ParamGroup::batch_norm && e.name.starts_with(prefix)) t += e.count;
  }
  return t;
}

std::int64_t ParamReport::predicted_head_3x3() const {
  return 9 * c_in * c_out * (head_kind == HeadKind::ksac ? 1 : branches);
}

std::int64_t ParamReport::predicted_m(MConvention convention) const {
  return (convention == MConvention::two_layers ? 2 : 1) * c_in * c_out;
}

bool ParamReport::formula_check() const {
  return head_3x3() == predicted_head_3x3() && head_1x1() == predicted_m(MConvention::two_layers);
}

std::string ParamReport::complexity() const { return head_kind == HeadKind::ksac ? "O(1)" : "O(N)"; }

std::string ParamReport::to_table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-36s %-18s %12s  %s\n", "name", "shape", "count", "kind");
  os << line;
  for (const auto& e : entries) {
    std::snprintf(line, sizeof line, "%-36s %-18s %12s  %s\n", e.name.c_str(), e.shape.str().c_str(),
                  with_commas(e.count).c_str(), e.trainable ? to_string(e.group).c_str() : "buffer");
    os << line;
  }
  os << "\nhead kind        : " << to_string(head_kind) << "  (C_in=" << c_in << ", C_out=" << c_out
     << ", N=" << branches << ", complexity " << complexity() << ")\n";
  const ParamGroup groups[] = {ParamGroup::backbone,   ParamGroup::head_3x3,   ParamGroup::head_1x1,
                               ParamGroup::head_projection, ParamGroup::batch_norm, ParamGroup::decoder,
                               ParamGroup::classifier};
  for (ParamGroup g : groups) {
    std::snprintf(line, sizeof line, "%-17s: %s\n", to_string(g).c_str(), with_commas(group_total(g)).c_str());
    os << line;
  }
  os << "trainable total  : " << with_commas(trainable_total()) << '\n'
     << "buffers (BN stats): " << with_commas(buffer_total()) << '\n'
     << "full total       : " << with_commas(total()) << '\n'
     << "formula view     : " << with_commas(formula_view_total()) << " (predicted "
     << with_commas(predicted_formula_total()) << ", M = 2*C_in*C_out)\n"
     << "head-3x3 predicted: " << with_commas(predicted_head_3x3()) << "  "
     << (formula_check() ? "[formula check OK]" : "[formula check FAILED]") << '\n';
  return os.str();
}

std::string ParamReport::to_machine() const {
  std::ostringstream os;
  os << "head_kind=" << to_string(head_kind) << '\n'
     << "c_in=" << c_in << '\n'
     << "c_out=" << c_out << '\n'
     << "branches=" << branches << '\n'
     << "complexity=" << complexity() << '\n';
  const ParamGroup groups[] = {ParamGroup::backbone,   ParamGroup::head_3x3,   ParamGroup::head_1x1,
                               ParamGroup::head_projection, ParamGroup::batch_norm, ParamGroup::decoder,
                               ParamGroup::classifier};
  for (ParamGroup g : groups) os << to_string(g) << '=' << group_total(g) << '\n';
  os << "trainable_total=" << trainable_total() << '\n'
     << "buffer_total=" << buffer_total() << '\n'
     << "total=" << total() << '\n'
     << "formula_view_total=" << formula_view_total() << '\n'
     << "predicted_head_3x3=" << predicted_head_3x3() << '\n'
     << "predicted_formula_total=" << predicted_formula_total() << '\n'
     << "formula_check=" << (formula_check() ? "pass" : "fail") << '\n'
     << "\nname,n,c,h,w,count,trainable,group\n";
  for (const auto& e : entries) {
    os << e.name << ',' << e.shape.n << ',' << e.shape.c << ',' << e.shape.h << ',' << e.shape.w << ',' << e.count
       << ',' << (e.trainable ? 1 : 0) << ',' << to_string(e.group) << '\n';
  }
  return os.str();
}

ParamReport count_params(const Model& model) { return report_from(model.parameters(), model.head()); }

ParamReport count_params(const SegHead& head) {
  std::vector<ParamRef> params;
  head.collect(params, "head");
  return report_from(params, head);
}

double savings_report(std::int64_t c_in, std::int64_t c_out, std::int64_t branches, MConvention convention) {
  if (c_in < 1 || c_out < 1 || branches < 1) throw ConfigError("savings_report: arguments must be positive");
  const double kernel = 9.0 * static_cast<double>(c_in) * static_cast<double>(c_out);
  const double m = (convention == MConvention::two_layers ? 2.0 : 1.0) * static_cast<double>(c_in) *
                   static_cast<double>(c_out);
  return 1.0 - (kernel + m) / (kernel * static_cast<double>(branches) + m);
}

// ---------------------------------------------------------------------------

namespace {

bool is_head(ParamGroup g) {
  return g == ParamGroup::head_3x3 || g == ParamGroup::head_1x1 || g == ParamGroup::head_projection;
}

LayerCost conv_cost(const std::string& name, ParamGroup group, const ConvSpec& spec, const Shape& in) {
  const Shape out{in.n, spec.out_channels, spec.out_h(in.h), spec.out_w(in.w)};
  return {name, group, in, out, out.n * out.c * out.h * out.w * spec.in_channels * spec.kh * spec.kw, true};
}

Shape append_head(std::vector<LayerCost>& layers, const SegHead& head, const Shape& in) {
  const Shape grid{in.n, head.c_out(), in.h, in.w};
  layers.push_back(conv_cost("head.conv1x1", ParamGroup::head_1x1, head.conv1x1_branch.spec, in));
  layers.push_back({"head.image_pool.avg", ParamGroup::head_1x1, in, {in.n, in.c, 1, 1}, in.n * in.c * in.h * in.w, true});
  LayerCost pooled = conv_cost("head.image_pool", ParamGroup::head_1x1, head.image_pool_branch.spec, {in.n, in.c, 1, 1});
  pooled.spatial = false;
  layers.push_back(pooled);
  for (std::int64_t r : head.rates()) {
    const ConvSpec spec{.in_channels = head.c_in(), .out_channels = head.c_out(), .kh = 3, .kw = 3, .rate = r};
    const std::string name = head.kind() == HeadKind::ksac ? "head.shared_kernel@r" + std::to_string(r)
                                                           : "head.kernel.r" + std::to_string(r);
    layers.push_back(conv_cost(name, ParamGroup::head_3x3, spec, in));
  }
  layers.push_back(conv_cost("head.project", ParamGroup::head_projection, head.project.spec,
                             {in.n, head.fused_channels(), in.h, in.w}));
  return grid;
}

}  // namespace

std::int64_t FlopsReport::total() const {
  std::int64_t t = 0;
  for (const auto& l : layers) t += l.macs;
  return t;
}

std::int64_t FlopsReport::head_total() const {
  std::int64_t t = 0;
  for (const auto& l : layers) t += is_head(l.group) ? l.macs : 0;
  return t;
}

std::int64_t FlopsReport::head_spatial_total() const {
  std::int64_t t = 0;
  for (const auto& l : layers) t += (is_head(l.group) && l.spatial) ? l.macs : 0;
  return t;
}

std::int64_t FlopsReport::backbone_total() const {
  std::int64_t t = 0;
  for (const auto& l : layers) t += l.group == ParamGroup::backbone ? l.macs : 0;
  return t;
}

std::string FlopsReport::to_table() const {
  std::ostringstream os;
  char line[200];
  for (const auto& l : layers) {
    std::snprintf(line, sizeof line, "%-28s %-18s -> %-18s %16s\n", l.name.c_str(), l.input.str().c_str(),
                  l.output.str().c_str(), with_commas(l.macs).c_str());
    os << line;
  }
  os << "backbone MACs : " << with_commas(backbone_total()) << '\n'
     << "head MACs     : " << with_commas(head_total()) << " (spatial " << with_commas(head_spatial_total()) << ")\n"
     << "total MACs    : " << with_commas(total()) << '\n';
  return os.str();
}

FlopsReport flops_estimate(const SegHead& head, const Shape& features) {
  FlopsReport r;
  append_head(r.layers, head, features);
  return r;
}

FlopsReport flops_estimate(const Model& model, const Shape& input) {
  FlopsReport r;
  Shape x = input;
  Shape tap;
  const auto& stages = model.backbone().stages();
  for (std::size_t i = 0; i < stages.size(); ++i) {
    LayerCost c = conv_cost("backbone.stage" + std::to_string(i + 1), ParamGroup::backbone, stages[i].spec, x);
    x = c.output;
    if (i == 1) tap = x;
    r.layers.push_back(c);
  }
  x = append_head(r.layers, model.head(), x);
  if (const auto& dec = model.decoder()) {
    LayerCost red = conv_cost("decoder.reduce", ParamGroup::decoder, dec->reduce.spec, tap);
    r.layers.push_back(red);
    const Shape fused{tap.n, x.c + red.output.c, tap.h, tap.w};
    LayerCost r1 = conv_cost("decoder.refine1", ParamGroup::decoder, dec->refine1.spec, fused);
    r.layers.push_back(r1);
    LayerCost r2 = conv_cost("decoder.refine2", ParamGroup::decoder, dec->refine2.spec, r1.output);
    r.layers.push_back(r2);
    x = r2.output;
  }
  const ConvSpec cls{.in_channels = model.config().c_out, .out_channels = model.config().num_classes, .kh = 1, .kw = 1};
  r.layers.push_back(conv_cost("classifier", ParamGroup::classifier, cls, x));
  return r;
}

}  // namespace ksac
