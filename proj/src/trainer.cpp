#include "acr/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "acr/error.hpp"
#include "acr/log.hpp"
#include "acr/rng.hpp"

namespace acr {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (s.empty() || s[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(s, &used);
  } catch (const std::exception&) {
    throw ContractError(std::string(key) + ": expected a non-negative integer, got '" + s + "'");
  }
  if (used != s.size()) {
    throw ContractError(std::string(key) + ": expected a non-negative integer, got '" + s + "'");
  }
  return static_cast<std::size_t>(x);
}

double parse_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ContractError(std::string(key) + ": expected a number, got '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(x)) {
    throw ContractError(std::string(key) + ": expected a finite number, got '" + s + "'");
  }
  return x;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ContractError(std::string(key) + ": expected on/off, got '" + std::string(v) + "'");
}

std::optional<LayerRange> parse_optional_range(std::string_view v) {
  if (v == "all" || v == "default" || v.empty()) return std::nullopt;
  return LayerRange::parse(v);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Momentum: return "momentum";
    case OptimizerKind::Adam: return "adam";
  }
  return "?";
}

std::string augmentation_text(const std::vector<SpatialTransform>& augs) {
  std::string s;
  for (std::size_t i = 0; i < augs.size(); ++i) {
    if (i) s += ",";
    s += augs[i].name();
  }
  return s;
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += jobs) {
          {
            std::lock_guard lock(mu);
            if (failure) return;
          }
          fn(i);
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

void check_dataset(const ViTConfig& vit, const Dataset& dataset) {
  if (dataset.empty()) throw ContractError("dataset is empty");
  for (const auto& s : dataset.samples) {
    if (s.image.rank() != 3 || s.image.dim(0) != vit.channels ||
        s.image.dim(1) != vit.image_height() || s.image.dim(2) != vit.image_width()) {
      throw DimensionError("image " + shape_str(s.image.shape()) + " does not fit model input " +
                           std::to_string(vit.channels) + "x" +
                           std::to_string(vit.image_height()) + "x" +
                           std::to_string(vit.image_width()));
    }
    if (s.labels.size() != vit.num_classes) {
      throw DimensionError("sample has " + std::to_string(s.labels.size()) +
                           " labels, model has " + std::to_string(vit.num_classes) + " classes");
    }
  }
}

LossBreakdown step_on_tape(Tape& tape, Parameters& params, const TrainConfig& config,
                           const SyntheticSample& sample, const SpatialTransform& t,
                           std::optional<double> backward_scale) {
  const ViTConfig& vit = config.vit;
  const Tensor view_b = augment(sample.image, t, vit.patch_size);
  const ForwardResult ra = forward(tape, sample.image, params, vit);
  const ForwardResult rb = forward(tape, view_b, params, vit);
  const LayerRange layers = config.resolve_loss_layers();
  std::vector<Var> la, lb;
  for (std::size_t l = layers.first; l <= layers.last; ++l) {
    la.push_back(ra.attentions[l].matrix);
    lb.push_back(rb.attentions[l].matrix);
  }
  const Distance d = config.weights.distance;
  const Var act = region_activation_loss(la, lb, t, ra.grid, d);
  const Var aff = region_affinity_loss(la, lb, t, ra.grid, d);
  const LossTerms terms =
      total_loss(ra.logits, rb.logits, sample.targets(), act, aff, config.weights);
  if (backward_scale) tape.backward(scale(terms.total, *backward_scale));
  return terms.breakdown();
}

struct StepContext {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::size_t sample_index = 0;
  std::string transform;
};

void write_nan_dump(const std::filesystem::path& dir, const StepContext& ctx,
                    const std::string& what, const SyntheticSample* sample, const Tape* tape,
                    const Parameters& params) {
  nlohmann::json j;
  j["error"] = what;
  j["epoch"] = ctx.epoch;
  j["step"] = ctx.step;
  j["sample_index"] = ctx.sample_index;
  j["transform"] = ctx.transform;
  if (sample) {
    j["sample_seed"] = sample->seed;
    j["labels"] = sample->labels;
  }
  nlohmann::json ps = nlohmann::json::array();
  for (const auto& e : params.entries()) {
    double mx = 0.0;
    bool finite = true;
    for (double v : e.tensor.values()) {
      if (!std::isfinite(v)) finite = false;
      else mx = std::max(mx, std::abs(v));
    }
    double gmx = 0.0;
    bool gfinite = true;
    if (e.tensor.has_grad()) {
      for (double v : e.tensor.grad()) {
        if (!std::isfinite(v)) gfinite = false;
        else gmx = std::max(gmx, std::abs(v));
      }
    }
    ps.push_back({{"name", e.name},
                  {"max_abs", mx},
                  {"finite", finite},
                  {"grad_max_abs", gmx},
                  {"grad_finite", gfinite}});
  }
  j["parameters"] = ps;
  nlohmann::json att = nlohmann::json::array();
  if (tape) {
    for (std::size_t id = 0; id < tape->size(); ++id) {
      const auto& n = tape->node(id);
      if (n.op != OpKind::SoftmaxRows) continue;
      att.push_back({{"node", id}, {"shape", n.value.shape()}, {"values", n.value.values()}});
    }
  }
  j["attention_matrices"] = att;
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "nan_dump.json");
  out << j.dump(1) << '\n';
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

LayerRange LocalizationConfig::resolve_layers(std::size_t num_layers) const {
  const LayerRange r = layers ? *layers : LayerRange::last_n(num_layers, 2);
  r.validate(num_layers);
  return r;
}

LayerRange TrainConfig::resolve_loss_layers() const {
  const LayerRange r = loss_layers ? *loss_layers : LayerRange::all(vit.num_layers);
  r.validate(vit.num_layers);
  return r;
}

void TrainConfig::validate() const {
  vit.validate();
  weights.validate();
  if (augmentations.empty()) throw ContractError("at least one augmentation is required");
  for (const auto& a : augmentations) a.validate();
  if (epochs == 0) throw ContractError("epochs must be positive");
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  if (!(learning_rate >= 0.0)) throw ContractError("learning_rate must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ContractError("momentum must be in [0, 1)");
  if (adam_beta2 < 0.0 || adam_beta2 >= 1.0) throw ContractError("adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ContractError("adam_eps must be positive");
  if (weight_decay < 0.0) throw ContractError("weight_decay must be non-negative");
  if (!(poly_power > 0.0)) throw ContractError("poly_power must be positive");
  if (holdout < 0.0 || holdout >= 1.0) throw ContractError("holdout must be in [0, 1)");
  if (!(localization.threshold_step > 0.0) || localization.threshold_step >= 1.0) {
    throw ContractError("threshold_step must be in (0, 1)");
  }
  resolve_loss_layers();
  localization.resolve_layers(vit.num_layers);
  if (ablation_seeds.empty()) throw ContractError("ablate.seeds must not be empty");
}

std::vector<SpatialTransform> parse_augmentations(std::string_view text) {
  std::vector<SpatialTransform> out;
  for (const auto& part : split(text, ',')) {
    if (part.empty()) throw ContractError("empty augmentation name in '" + std::string(text) + "'");
    out.push_back(SpatialTransform::parse(part));
  }
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "vit.patch_size",      "vit.grid",           "vit.channels",       "vit.embed_dim",
      "vit.num_layers",      "vit.num_heads",      "vit.mlp_ratio",      "vit.num_classes",
      "vit.positional_embedding",
      "loss.alpha",          "loss.beta",          "loss.distance",      "loss.layers",
      "train.augmentations", "train.epochs",       "train.batch_size",   "train.learning_rate",
      "train.optimizer",     "train.momentum",     "train.adam_beta2",   "train.adam_eps",
      "train.weight_decay", "train.poly_lr",
      "train.poly_power",    "train.grad_clip",    "train.seed",         "train.holdout",
      "loc.layers",          "loc.refined",        "loc.threshold_step", "ablate.seeds"};
  return keys;
}

void apply_config_value(TrainConfig& c, std::string_view key_in, std::string_view value_in) {
  const std::string key = trim(key_in);
  const std::string v = trim(value_in);
  if (key == "vit.patch_size") c.vit.patch_size = parse_size(key, v);
  else if (key == "vit.grid") c.vit.grid = GridShape::parse(v);
  else if (key == "vit.channels") c.vit.channels = parse_size(key, v);
  else if (key == "vit.embed_dim") c.vit.embed_dim = parse_size(key, v);
  else if (key == "vit.num_layers") c.vit.num_layers = parse_size(key, v);
  else if (key == "vit.num_heads") c.vit.num_heads = parse_size(key, v);
  else if (key == "vit.mlp_ratio") c.vit.mlp_ratio = parse_size(key, v);
  else if (key == "vit.num_classes") c.vit.num_classes = parse_size(key, v);
  else if (key == "vit.positional_embedding") c.vit.use_positional_embedding = parse_bool(key, v);
  else if (key == "loss.alpha") c.weights.alpha = parse_double(key, v);
  else if (key == "loss.beta") c.weights.beta = parse_double(key, v);
  else if (key == "loss.distance") c.weights.distance = parse_distance(v);
  else if (key == "loss.layers") c.loss_layers = parse_optional_range(v);
  else if (key == "train.augmentations") c.augmentations = parse_augmentations(v);
  else if (key == "train.epochs") c.epochs = parse_size(key, v);
  else if (key == "train.batch_size") c.batch_size = parse_size(key, v);
  else if (key == "train.learning_rate") c.learning_rate = parse_double(key, v);
  else if (key == "train.optimizer") {
    if (v == "sgd") c.optimizer = OptimizerKind::Sgd;
    else if (v == "momentum") c.optimizer = OptimizerKind::Momentum;
    else if (v == "adam") c.optimizer = OptimizerKind::Adam;
    else throw ContractError("train.optimizer: expected sgd, momentum or adam, got '" + v + "'");
  } else if (key == "train.momentum") c.momentum = parse_double(key, v);
  else if (key == "train.adam_beta2") c.adam_beta2 = parse_double(key, v);
  else if (key == "train.adam_eps") c.adam_eps = parse_double(key, v);
  else if (key == "train.weight_decay") c.weight_decay = parse_double(key, v);
  else if (key == "train.poly_lr") c.poly_lr = parse_bool(key, v);
  else if (key == "train.poly_power") c.poly_power = parse_double(key, v);
  else if (key == "train.grad_clip") c.grad_clip = parse_double(key, v);
  else if (key == "train.seed") c.seed = parse_size(key, v);
  else if (key == "train.holdout") c.holdout = parse_double(key, v);
  else if (key == "loc.layers") c.localization.layers = parse_optional_range(v);
  else if (key == "loc.refined") c.localization.refined = parse_bool(key, v);
  else if (key == "loc.threshold_step") c.localization.threshold_step = parse_double(key, v);
  else if (key == "ablate.seeds") {
    c.ablation_seeds.clear();
    for (const auto& s : split(v, ',')) c.ablation_seeds.push_back(parse_size(key, s));
  } else {
    throw ContractError("unknown config key '" + key + "'");
  }
}

TrainConfig parse_train_config(std::string_view text) {
  TrainConfig c;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ContractError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    try {
      apply_config_value(c, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ContractError& e) {
      throw ContractError("config line " + std::to_string(line_no) + ": " + e.what());
    }
    if (end == text.size()) break;
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string to_config_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "vit.patch_size = " << c.vit.patch_size << '\n'
     << "vit.grid = " << c.vit.grid.str() << '\n'
     << "vit.channels = " << c.vit.channels << '\n'
     << "vit.embed_dim = " << c.vit.embed_dim << '\n'
     << "vit.num_layers = " << c.vit.num_layers << '\n'
     << "vit.num_heads = " << c.vit.num_heads << '\n'
     << "vit.mlp_ratio = " << c.vit.mlp_ratio << '\n'
     << "vit.num_classes = " << c.vit.num_classes << '\n'
     << "vit.positional_embedding = " << (c.vit.use_positional_embedding ? "on" : "off") << '\n'
     << "loss.alpha = " << fmt_double(c.weights.alpha) << '\n'
     << "loss.beta = " << fmt_double(c.weights.beta) << '\n'
     << "loss.distance = " << distance_name(c.weights.distance) << '\n'
     << "loss.layers = " << (c.loss_layers ? c.loss_layers->str() : "all") << '\n'
     << "train.augmentations = " << augmentation_text(c.augmentations) << '\n'
     << "train.epochs = " << c.epochs << '\n'
     << "train.batch_size = " << c.batch_size << '\n'
     << "train.learning_rate = " << fmt_double(c.learning_rate) << '\n'
     << "train.optimizer = " << optimizer_name(c.optimizer) << '\n'
     << "train.momentum = " << fmt_double(c.momentum) << '\n'
     << "train.adam_beta2 = " << fmt_double(c.adam_beta2) << '\n'
     << "train.adam_eps = " << fmt_double(c.adam_eps) << '\n'
     << "train.weight_decay = " << fmt_double(c.weight_decay) << '\n'
     << "train.poly_lr = " << (c.poly_lr ? "on" : "off") << '\n'
     << "train.poly_power = " << fmt_double(c.poly_power) << '\n'
     << "train.grad_clip = " << fmt_double(c.grad_clip) << '\n'
     << "train.seed = " << c.seed << '\n'
     << "train.holdout = " << fmt_double(c.holdout) << '\n'
     << "loc.layers = " << (c.localization.layers ? c.localization.layers->str() : "default")
     << '\n'
     << "loc.refined = " << (c.localization.refined ? "on" : "off") << '\n'
     << "loc.threshold_step = " << fmt_double(c.localization.threshold_step) << '\n'
     << "ablate.seeds = ";
  for (std::size_t i = 0; i < c.ablation_seeds.size(); ++i) {
    os << (i ? "," : "") << c.ablation_seeds[i];
  }
  os << '\n';
  return os.str();
}

nlohmann::json to_json(const EpochLog& log) {
  nlohmann::json j{{"epoch", log.epoch},
                   {"l_cls", log.mean_loss.l_cls},
                   {"l_act", log.mean_loss.l_act},
                   {"l_aff", log.mean_loss.l_aff},
                   {"total", log.mean_loss.total},
                   {"lr", log.learning_rate}};
  j["holdout_seed_miou"] =
      log.holdout_seed_miou ? nlohmann::json(*log.holdout_seed_miou) : nlohmann::json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Training

LossBreakdown siamese_step(Parameters& params, const TrainConfig& config,
                           const SyntheticSample& sample, const SpatialTransform& t,
                           std::optional<double> backward_scale) {
  Tape tape;
  return step_on_tape(tape, params, config, sample, t, backward_scale);
}

TrainResult train(const TrainConfig& config, const Dataset& dataset, const TrainHooks& hooks) {
  config.validate();
  check_dataset(config.vit, dataset);
  const std::size_t total = dataset.size();
  const auto held = static_cast<std::size_t>(std::floor(config.holdout * static_cast<double>(total)));
  if (held >= total) throw ContractError("holdout leaves no training samples");
  std::vector<std::size_t> train_idx(total - held);
  for (std::size_t i = 0; i < train_idx.size(); ++i) train_idx[i] = i;
  Dataset holdout_set{dataset.config, {}};
  for (std::size_t i = total - held; i < total; ++i) holdout_set.samples.push_back(dataset.samples[i]);

  TrainResult result;
  result.params = init_parameters(config.vit, Rng::derive(config.seed, 0));
  Parameters& params = result.params;
  Rng rng(Rng::derive(config.seed, 1));
  std::vector<std::vector<double>> velocity, second_moment;
  for (const auto& e : params.entries()) {
    velocity.emplace_back(e.tensor.numel(), 0.0);
    second_moment.emplace_back(config.optimizer == OptimizerKind::Adam ? e.tensor.numel() : 0, 0.0);
  }

  const std::size_t steps_per_epoch = (train_idx.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    LossBreakdown sums;
    double lr = config.learning_rate;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size, ++step) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      lr = config.learning_rate;
      if (config.poly_lr) {
        lr *= std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total_steps),
                       config.poly_power);
      }
      params.zero_grad();
      const double weight = 1.0 / static_cast<double>(b1 - b0);
      for (std::size_t k = b0; k < b1; ++k) {
        const std::size_t idx = order[k];
        const SyntheticSample& sample = dataset.samples[idx];
        const SpatialTransform& t = config.augmentations[rng.index(config.augmentations.size())];
        StepContext ctx{epoch, step, idx, t.name()};
        Tape tape;
        try {
          const LossBreakdown bd = step_on_tape(tape, params, config, sample, t, weight);
          sums.l_cls += bd.l_cls;
          sums.l_act += bd.l_act;
          sums.l_aff += bd.l_aff;
          sums.total += bd.total;
        } catch (const NumericalError& e) {
          if (hooks.dump_dir) write_nan_dump(*hooks.dump_dir, ctx, e.what(), &sample, &tape, params);
          throw NumericalError("non-finite value at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step) + ", sample " + std::to_string(idx) + " (" +
                               t.name() + "): " + e.what());
        }
      }

      double norm2 = 0.0;
      for (auto& e : params.entries()) {
        auto g = e.tensor.grad();
        const auto w = e.tensor.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (config.weight_decay > 0.0 && config.optimizer != OptimizerKind::Adam) {
            g[i] += config.weight_decay * w[i];
          }
          norm2 += g[i] * g[i];
        }
      }
      if (!std::isfinite(norm2)) {
        StepContext ctx{epoch, step, order[b0], ""};
        if (hooks.dump_dir) write_nan_dump(*hooks.dump_dir, ctx, "non-finite gradient", nullptr, nullptr, params);
        throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step));
      }
      const double norm = std::sqrt(norm2);
      const double clip = (config.grad_clip > 0.0 && norm > config.grad_clip) ? config.grad_clip / norm : 1.0;
      const double t_adam = static_cast<double>(step + 1);
      const double bc1 = 1.0 - std::pow(config.momentum, t_adam);
      const double bc2 = 1.0 - std::pow(config.adam_beta2, t_adam);
      auto& entries = params.entries();
      for (std::size_t p = 0; p < entries.size(); ++p) {
        auto g = entries[p].tensor.grad();
        auto w = entries[p].tensor.data();
        auto& v = velocity[p];
        auto& s2 = second_moment[p];
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double gi = g[i] * clip;
          switch (config.optimizer) {
            case OptimizerKind::Sgd:
              w[i] -= lr * gi;
              break;
            case OptimizerKind::Momentum:
              v[i] = config.momentum * v[i] + gi;
              w[i] -= lr * v[i];
              break;
            case OptimizerKind::Adam:
              v[i] = config.momentum * v[i] + (1.0 - config.momentum) * gi;
              s2[i] = config.adam_beta2 * s2[i] + (1.0 - config.adam_beta2) * gi * gi;
              w[i] -= lr * ((v[i] / bc1) / (std::sqrt(s2[i] / bc2) + config.adam_eps) +
                            config.weight_decay * w[i]);
              break;
          }
        }
      }
    }
    params.zero_grad();

    const double n = static_cast<double>(train_idx.size());
    EpochLog log;
    log.epoch = epoch;
    log.mean_loss = {sums.l_cls / n, sums.l_act / n, sums.l_aff / n, sums.total / n};
    log.learning_rate = lr;
    if (!holdout_set.empty()) {
      EvalOptions opts;
      opts.localization = config.localization;
      opts.layer_sweep = false;
      log.holdout_seed_miou = evaluate(params, config.vit, holdout_set, opts).seed_miou();
    }
    log::info("epoch ", epoch, " total=", log.mean_loss.total, " cls=", log.mean_loss.l_cls,
              " act=", log.mean_loss.l_act, " aff=", log.mean_loss.l_aff);
    if (hooks.on_epoch) hooks.on_epoch(log);
    result.log.push_back(log);
  }
  for (auto& e : params.entries()) e.tensor.clear_grad();
  return result;
}

TrainResult train_to_directory(const TrainConfig& config, const Dataset& dataset,
                               const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream cfg(out_dir / "config.txt");
    if (!cfg) throw IoError("cannot write " + (out_dir / "config.txt").string());
    cfg << to_config_text(config);
  }
  std::ofstream metrics(out_dir / "metrics.jsonl");
  if (!metrics) throw IoError("cannot write " + (out_dir / "metrics.jsonl").string());
  TrainHooks hooks;
  hooks.dump_dir = out_dir;
  hooks.on_epoch = [&](const EpochLog& log) {
    metrics << to_json(log).dump() << '\n';
    metrics.flush();
  };
  TrainResult result = train(config, dataset, hooks);
  save_checkpoint(out_dir / "checkpoint.bin", config.vit, result.params);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

ImageEvidence collect_evidence(const Parameters& params, const ViTConfig& config,
                               const SyntheticSample& sample) {
  Tape tape;
  const ForwardResult r = forward(tape, sample.image, params, config);
  ImageEvidence ev;
  ev.grid = r.grid;
  ev.classes = sample.present_classes();
  for (const auto& a : r.attentions) ev.attentions.push_back(a.value());
  for (std::size_t c : ev.classes) ev.adjoints.push_back(compute_attention_adjoints(r, c));
  return ev;
}

EvalReport evaluate(const Parameters& params, const ViTConfig& config, const Dataset& dataset,
                    const EvalOptions& options) {
  check_dataset(config, dataset);
  EvalReport report;
  report.layers = options.localization.resolve_layers(config.num_layers);
  report.refined = options.localization.refined;
  report.images = dataset.size();
  const std::size_t count = dataset.size();

  std::vector<ImageEvidence> evidence(count);
  std::vector<std::vector<LocalizationMap>> plain(count), refined(count);
  std::vector<LabelMask> gt;
  gt.reserve(count);
  for (const auto& s : dataset.samples) gt.push_back(s.mask);

  parallel_for(count, options.jobs, [&](std::size_t i) {
    evidence[i] = collect_evidence(params, config, dataset.samples[i]);
    plain[i] = localize(evidence[i], report.layers, false, gt[i].height, gt[i].width);
    refined[i] = localize(evidence[i], report.layers, true, gt[i].height, gt[i].width);
  });

  const auto grid = threshold_grid(options.localization.threshold_step);
  const std::size_t labels = config.num_classes + 1;
  report.unrefined = best_threshold_miou(plain, gt, labels, grid);
  report.refined_sweep = best_threshold_miou(refined, gt, labels, grid);
  if (options.layer_sweep) {
    std::vector<std::size_t> starts(config.num_layers);
    for (std::size_t s = 0; s < starts.size(); ++s) starts[s] = s;
    report.sweep = layer_sweep(evidence, gt, starts, report.refined, labels);
  }
  return report;
}

nlohmann::json EvalReport::to_json() const {
  const auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json sweep_rows = nlohmann::json::array();
  for (const auto& r : sweep) {
    sweep_rows.push_back({{"start_layer", r.start_layer},
                          {"threshold", r.threshold},
                          {"miou", r.miou},
                          {"fp", r.fp},
                          {"fn", r.fn}});
  }
  return {{"images", images},
          {"layers", layers.str()},
          {"headline", refined ? "refined" : "unrefined"},
          {"seed_miou", opt(seed_miou())},
          {"unrefined", acr::to_json(unrefined)},
          {"refined", acr::to_json(refined_sweep)},
          {"layer_sweep", sweep_rows}};
}

// ---------------------------------------------------------------------------
// Ablations

std::vector<AblationCell> regularizer_grid(const TrainConfig& base) {
  const double a = base.weights.alpha, b = base.weights.beta;
  const Distance d = base.weights.distance;
  const auto& augs = base.augmentations;
  return {{"baseline", 0.0, 0.0, d, augs},
          {"act_only", a, 0.0, d, augs},
          {"aff_only", 0.0, b, d, augs},
          {"act_aff", a, b, d, augs}};
}

std::vector<AblationCell> distance_sweep(const TrainConfig& base) {
  std::vector<AblationCell> cells;
  for (Distance d : {Distance::L1, Distance::L2, Distance::SmoothL1}) {
    cells.push_back({distance_name(d), base.weights.alpha, base.weights.beta, d, base.augmentations});
  }
  return cells;
}

std::vector<AblationCell> augmentation_sweep(const TrainConfig& base) {
  const GridShape g = base.vit.grid;
  const auto scaled = [&](double f) {
    return SpatialTransform::resize(
        {std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(g.h * f))),
         std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(g.w * f)))});
  };
  const SpatialTransform down = scaled(0.75), up = scaled(1.25);
  const auto flip_h = SpatialTransform::of(TransformKind::FlipH);
  const auto flip_v = SpatialTransform::of(TransformKind::FlipV);
  const double a = base.weights.alpha, b = base.weights.beta;
  const Distance d = base.weights.distance;
  return {{"none", 0.0, 0.0, d, {flip_h}},
          {"resize", a, b, d, {down, up}},
          {"rotation", a, b, d,
           {SpatialTransform::of(TransformKind::Rot90), SpatialTransform::of(TransformKind::Rot180),
            SpatialTransform::of(TransformKind::Rot270)}},
          {"flip_h+resize", a, b, d, {flip_h, down, up}},
          {"flip_h+flip_v", a, b, d, {flip_h, flip_v}},
          {"flip_h", a, b, d, {flip_h}}};
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& dataset,
                                      const std::vector<AblationCell>& cells,
                                      const EvalOptions& eval_options,
                                      const AblationProgress& progress) {
  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    AblationRow row;
    row.cell = cell;
    for (std::uint64_t seed : base.ablation_seeds) {
      TrainConfig cfg = base;
      cfg.weights.alpha = cell.alpha;
      cfg.weights.beta = cell.beta;
      cfg.weights.distance = cell.distance;
      cfg.augmentations = cell.augmentations;
      cfg.seed = seed;
      cfg.holdout = 0.0;
      const TrainResult trained = train(cfg, dataset);
      const EvalReport rep = evaluate(trained.params, cfg.vit, dataset, eval_options);
      row.seeds.push_back(seed);
      row.unrefined_miou.push_back(rep.unrefined.best_miou.value_or(0.0));
      row.refined_miou.push_back(rep.refined_sweep.best_miou.value_or(0.0));
      if (progress) progress(cell, seed, rep);
    }
    const double n = static_cast<double>(row.seeds.size());
    for (std::size_t i = 0; i < row.seeds.size(); ++i) {
      row.mean_unrefined += row.unrefined_miou[i] / n;
      row.mean_refined += row.refined_miou[i] / n;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json ablation_table(std::string_view title, const std::vector<AblationRow>& rows) {
  nlohmann::json out{{"table", std::string(title)}, {"rows", nlohmann::json::array()}};
  for (const auto& r : rows) {
    nlohmann::json augs = nlohmann::json::array();
    for (const auto& a : r.cell.augmentations) augs.push_back(a.name());
    out["rows"].push_back({{"name", r.cell.name},
                           {"alpha", r.cell.alpha},
                           {"beta", r.cell.beta},
                           {"distance", distance_name(r.cell.distance)},
                           {"augmentations", augs},
                           {"seeds", r.seeds},
                           {"seed_miou_unrefined", r.unrefined_miou},
                           {"seed_miou_refined", r.refined_miou},
                           {"mean_unrefined", r.mean_unrefined},
                           {"mean_refined", r.mean_refined}});
  }
  return out;
}

}  // namespace acr
