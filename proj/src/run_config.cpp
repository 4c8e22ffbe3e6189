#include "ksac/run_config.hpp"

#include <sstream>

#include "ksac/errors.hpp"
#include "ksac/kv_text.hpp"

namespace ksac {

namespace {

std::string format_real_list(const std::vector<double>& values) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
  return os.str();
}

std::vector<double> parse_real_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_real(key, item));
  return out;
}

std::string format_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string RunConfig::to_text() const {
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "subcommand = " << subcommand << '\n'
     << "head = " << head << '\n'
     << "rates = " << format_int_list(rates) << '\n'
     << "os = " << output_stride << '\n'
     << "decoder = " << b(decoder) << '\n'
     << "classes = " << classes << '\n'
     << "cin = " << cin << '\n'
     << "cout = " << cout << '\n'
     << "crop = " << crop << '\n'
     << "scene-size = " << scene_size << '\n'
     << "max-shapes = " << max_shapes << '\n'
     << "seed = " << seed << '\n'
     << "count = " << count << '\n'
     << "eval-count = " << eval_count << '\n'
     << "symmetric = " << b(symmetric) << '\n'
     << "iterations = " << iterations << '\n'
     << "batch-size = " << batch_size << '\n'
     << "lr = " << format_real(lr) << '\n'
     << "momentum = " << format_real(momentum) << '\n'
     << "eval-every = " << eval_every << '\n'
     << "augment = " << b(augment) << '\n'
     << "strategy = " << strategy << '\n'
     << "scales = " << format_real_list(scales) << '\n'
     << "threads = " << threads << '\n'
     << "checkpoint-in = " << checkpoint_in << '\n'
     << "checkpoint-out = " << checkpoint_out << '\n'
     << "manifest = " << manifest << '\n'
     << "out-dir = " << out_dir << '\n'
     << "input = " << input << '\n'
     << "branch = " << branch << '\n';
  return os.str();
}

void RunConfig::set(const std::string& key, const std::string& v) {
  if (key == "subcommand") subcommand = v;
  else if (key == "head") head = v;
  else if (key == "rates") rates = parse_int_list(v);
  else if (key == "os") output_stride = parse_int(key, v);
  else if (key == "decoder") decoder = parse_bool(key, v);
  else if (key == "classes") classes = parse_int(key, v);
  else if (key == "cin") cin = parse_int(key, v);
  else if (key == "cout") cout = parse_int(key, v);
  else if (key == "crop") crop = parse_int(key, v);
  else if (key == "scene-size") scene_size = parse_int(key, v);
  else if (key == "max-shapes") max_shapes = parse_int(key, v);
  else if (key == "seed") seed = parse_u64(key, v);
  else if (key == "count") count = parse_int(key, v);
  else if (key == "eval-count") eval_count = parse_int(key, v);
  else if (key == "symmetric") symmetric = parse_bool(key, v);
  else if (key == "iterations") iterations = parse_int(key, v);
  else if (key == "batch-size") batch_size = parse_int(key, v);
  else if (key == "lr") lr = parse_real(key, v);
  else if (key == "momentum") momentum = parse_real(key, v);
  else if (key == "eval-every") eval_every = parse_int(key, v);
  else if (key == "augment") augment = parse_bool(key, v);
  else if (key == "strategy") strategy = v;
  else if (key == "scales") scales = parse_real_list(key, v);
  else if (key == "threads") threads = static_cast<int>(parse_int(key, v));
  else if (key == "checkpoint-in") checkpoint_in = v;
  else if (key == "checkpoint-out") checkpoint_out = v;
  else if (key == "manifest") manifest = v;
  else if (key == "out-dir") out_dir = v;
  else if (key == "input") input = v;
  else if (key == "branch") branch = v;
  else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  for (const auto& [key, value] : parse_key_values(text)) cfg.set(key, value);
  return cfg;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.head = parse_head_kind(head);
  m.rates = rates;
  m.c_in = cin;
  m.c_out = cout;
  m.output_stride = output_stride;
  m.decoder = decoder;
  m.num_classes = classes;
  m.seed = seed;
  m.validate();
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lr_schedule = {{0, lr}};
  t.momentum = momentum;
  t.batch_size = batch_size;
  t.max_iterations = iterations;
  t.seed = seed;
  t.eval_every = eval_every;
  t.use_augmentation = augment;
  t.augment.crop_h = crop;
  t.augment.crop_w = crop;
  t.validate();
  return t;
}

EvalOptions RunConfig::eval_options() const {
  EvalOptions e;
  e.strategy = parse_eval_strategy(strategy);
  e.scales = scales;
  e.threads = threads;
  return e;
}

}  // namespace ksac
