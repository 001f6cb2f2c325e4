#pragma once

// Experiment configuration: JSON document, preset defaults, validation and a
// fingerprint identifying the training-relevant settings.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "mrtrans/adversarial.hpp"
#include "mrtrans/data.hpp"
#include "mrtrans/networks.hpp"
#include "mrtrans/optim.hpp"
#include "mrtrans/registration.hpp"

namespace mrtrans {

using Json = nlohmann::json;

struct ScheduleConfig {
  std::int64_t iterations = 5000;
  int batch_size = 8;
  int validate_every = 200;
  int log_every = 1;
  int d_steps = 1;
  int g_steps = 1;
};

struct DataConfig {
  bool synthetic = true;
  std::string root;
  std::string source_modality = "t1";
  std::string target_modality = "t2";
  int image_size = 64;
  // Synthetic pool sizes.
  int train_pairs = 512;
  int val_pairs = 32;
  int test_pairs = 64;
  SplitFractions split;
  bool augment = true;
  AugmentationRanges augmentation;
  AugmentationRanges noise;
  double noise_magnitude = 1.0;
  float blank_threshold = 0.0f;
};

struct ModelConfig {
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
  RegistrationNetworkSpec registration;
};

struct ExperimentConfig {
  std::string preset = "toy";
  TrainingMode mode;
  LossWeights weights;
  // Unset: 1 for f_hi, 0.1 otherwise.
  std::optional<double> frequency_lambda;
  AdamOptions optimizer;
  ScheduleConfig schedule;
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  bool deterministic = true;
  std::string output_dir = "runs/experiment";

  LossWeights resolved_weights() const {
    LossWeights w = weights;
    w.frequency = frequency_lambda.value_or(default_frequency_lambda(mode.frequency));
    return w;
  }
};

/// 64x64 synthetic pairs, three residual blocks, 5000 iterations of batch 8.
inline ExperimentConfig toy_preset() {
  ExperimentConfig c;
  c.preset = "toy";
  c.optimizer = {2e-4, 0.5, 0.999, 1e-8, 0.0};
  c.schedule = {5000, 8, 200, 1, 1, 1};
  c.data.synthetic = true;
  c.data.image_size = 64;
  // Translation ranges scaled from 240 px slices to 64 px.
  c.data.augmentation = {10.0, 26.0 * 64.0 / 240.0, 0.9, 1.1};
  c.data.noise = c.data.augmentation;
  c.model.generator = {3, 8, 3};
  c.model.discriminator = {4, 8};
  c.model.registration.decoder_channels = {32, 32, 16, 8};
  c.output_dir = "runs/toy";
  return c;
}

/// 240x240 slices with the published optimizer, weights and schedule.
inline ExperimentConfig full_preset() {
  ExperimentConfig c;
  c.preset = "full";
  c.optimizer = {1e-4, 0.5, 0.999, 1e-8, 0.0};
  c.schedule = {1000000, 4, 1000, 100, 1, 1};
  c.weights = LossWeights{};
  c.data.synthetic = false;
  c.data.image_size = 240;
  c.data.augmentation = AugmentationRanges{};
  c.data.noise = AugmentationRanges{};
  c.model.generator = {9, 64, 7};
  c.model.discriminator = {4, 64};
  c.model.registration = RegistrationNetworkSpec{};
  c.output_dir = "runs/full";
  return c;
}

inline ExperimentConfig preset_config(const std::string& name) {
  if (name == "toy") return toy_preset();
  if (name == "full") return full_preset();
  throw std::invalid_argument("unknown preset '" + name + "' (expected toy or full)");
}

inline void validate(const ExperimentConfig& c) {
  c.mode.validate();
  c.resolved_weights().validate();
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (c.schedule.iterations < 0) fail("schedule.iterations must be >= 0");
  if (c.schedule.batch_size < 1) fail("schedule.batch_size must be >= 1");
  if (c.schedule.validate_every < 1 || c.schedule.log_every < 1) fail("schedule cadences must be >= 1");
  if (c.schedule.d_steps < 1 || c.schedule.g_steps < 1) fail("schedule step ratios must be >= 1");
  if (!(c.optimizer.lr > 0)) fail("optimizer.lr must be positive");
  if (c.optimizer.beta1 < 0 || c.optimizer.beta1 >= 1 || c.optimizer.beta2 < 0 || c.optimizer.beta2 >= 1)
    fail("optimizer betas must lie in [0,1)");
  if (c.data.image_size < 16 || c.data.image_size % 16 != 0) fail("data.image_size must be a multiple of 16, >= 16");
  if (c.data.synthetic && (c.data.train_pairs < 1 || c.data.val_pairs < 1 || c.data.test_pairs < 1))
    fail("synthetic pools must be nonempty");
  if (!c.data.synthetic && c.data.root.empty()) fail("data.root is required when data.synthetic is false");
  if (c.data.noise_magnitude < 0 || c.data.noise_magnitude > 1) fail("data.noise_magnitude must lie in [0,1]");
  if (c.preset == "full") {
    const auto w = c.resolved_weights();
    const bool pinned = c.optimizer.lr == 1e-4 && c.optimizer.beta1 == 0.5 && c.optimizer.beta2 == 0.999 &&
                        c.optimizer.weight_decay == 0.0 && c.schedule.iterations == 1000000 &&
                        c.schedule.batch_size == 4 && w.correction == 20 && w.smoothness == 10 && w.cycle == 10 &&
                        w.identity == 1 && w.radius == 21 && w.frequency == default_frequency_lambda(c.mode.frequency);
    if (!pinned) fail("the full preset pins optimizer, schedule and loss weights; use preset toy to change them");
  } else if (c.preset != "toy") {
    fail("preset must be toy or full");
  }
}

// ---------------------------------------------------------------------------
// JSON mapping

namespace config_detail {

// Reads members of one JSON object and rejects any it did not consume.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw std::invalid_argument("config: " + where() + " must be an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument("config: " + where() + "." + key + " has the wrong type");
    }
  }

  const Json* child(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string child_path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw std::invalid_argument("config: unknown key " + child_path(it.key().c_str()));
  }

 private:
  std::string where() const { return path_.empty() ? "document" : path_; }

  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline void read_ranges(const Json& j, const std::string& path, AugmentationRanges& r) {
  ObjectReader o(j, path);
  o.get("rotation", r.rotation);
  o.get("translation", r.translation);
  o.get("scale_min", r.scale_min);
  o.get("scale_max", r.scale_max);
  o.finish();
}

inline Json write_ranges(const AugmentationRanges& r) {
  return {{"rotation", r.rotation}, {"translation", r.translation}, {"scale_min", r.scale_min}, {"scale_max", r.scale_max}};
}

}  // namespace config_detail

inline Json to_json(const ExperimentConfig& c) {
  const auto& w = c.weights;
  Json j;
  j["preset"] = c.preset;
  j["mode"] = c.mode.str();
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["output_dir"] = c.output_dir;
  j["weights"] = {{"correction", w.correction},
                  {"smoothness", w.smoothness},
                  {"cycle", w.cycle},
                  {"identity", w.identity},
                  {"radius", w.radius},
                  {"cycle_form", w.cycle_form == CycleForm::literal ? "literal" : "standard"}};
  j["weights"]["frequency"] = c.frequency_lambda ? Json(*c.frequency_lambda) : Json("auto");
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"weight_decay", c.optimizer.weight_decay}};
  const auto& s = c.schedule;
  j["schedule"] = {{"iterations", s.iterations},         {"batch_size", s.batch_size}, {"validate_every", s.validate_every},
                   {"log_every", s.log_every},           {"d_steps", s.d_steps},       {"g_steps", s.g_steps}};
  const auto& d = c.data;
  j["data"] = {{"synthetic", d.synthetic},
               {"root", d.root},
               {"source_modality", d.source_modality},
               {"target_modality", d.target_modality},
               {"image_size", d.image_size},
               {"train_pairs", d.train_pairs},
               {"val_pairs", d.val_pairs},
               {"test_pairs", d.test_pairs},
               {"split", {{"train", d.split.train}, {"val", d.split.val}, {"test", d.split.test}}},
               {"augment", d.augment},
               {"augmentation", config_detail::write_ranges(d.augmentation)},
               {"noise", config_detail::write_ranges(d.noise)},
               {"noise_magnitude", d.noise_magnitude},
               {"blank_threshold", d.blank_threshold}};
  const auto& m = c.model;
  j["model"] = {{"generator",
                 {{"residual_blocks", m.generator.residual_blocks},
                  {"base_channels", m.generator.base_channels},
                  {"outer_kernel", m.generator.outer_kernel}}},
                {"discriminator", {{"layers", m.discriminator.layers}, {"base_channels", m.discriminator.base_channels}}},
                {"registration",
                 {{"encoder_channels", m.registration.encoder_channels},
                  {"decoder_channels", m.registration.decoder_channels}}}};
  return j;
}

/// Builds a config from the document's preset (default toy) and overrides
/// every key present. Unknown keys anywhere are rejected.
inline ExperimentConfig config_from_json(const Json& j, std::optional<std::string> preset_override = std::nullopt) {
  using config_detail::ObjectReader;
  ObjectReader root(j, "");
  std::string preset = "toy";
  root.get("preset", preset);
  if (preset_override) preset = *preset_override;
  ExperimentConfig c = preset_config(preset);
  std::string mode = c.mode.str();
  root.get("mode", mode);
  c.mode = TrainingMode::parse(mode);
  root.get("seed", c.seed);
  root.get("deterministic", c.deterministic);
  root.get("output_dir", c.output_dir);
  if (const Json* w = root.child("weights")) {
    ObjectReader o(*w, "weights");
    o.get("correction", c.weights.correction);
    o.get("smoothness", c.weights.smoothness);
    o.get("cycle", c.weights.cycle);
    o.get("identity", c.weights.identity);
    o.get("radius", c.weights.radius);
    std::string form = c.weights.cycle_form == CycleForm::literal ? "literal" : "standard";
    o.get("cycle_form", form);
    if (form != "standard" && form != "literal") throw std::invalid_argument("config: weights.cycle_form must be standard or literal");
    c.weights.cycle_form = form == "literal" ? CycleForm::literal : CycleForm::standard;
    if (const Json* f = o.child("frequency")) {
      if (f->is_string() && f->get<std::string>() == "auto") c.frequency_lambda.reset();
      else if (f->is_number()) c.frequency_lambda = f->get<double>();
      else throw std::invalid_argument("config: weights.frequency must be a number or \"auto\"");
    }
    o.finish();
  }
  if (const Json* opt = root.child("optimizer")) {
    ObjectReader o(*opt, "optimizer");
    o.get("lr", c.optimizer.lr);
    o.get("beta1", c.optimizer.beta1);
    o.get("beta2", c.optimizer.beta2);
    o.get("eps", c.optimizer.eps);
    o.get("weight_decay", c.optimizer.weight_decay);
    o.finish();
  }
  if (const Json* s = root.child("schedule")) {
    ObjectReader o(*s, "schedule");
    o.get("iterations", c.schedule.iterations);
    o.get("batch_size", c.schedule.batch_size);
    o.get("validate_every", c.schedule.validate_every);
    o.get("log_every", c.schedule.log_every);
    o.get("d_steps", c.schedule.d_steps);
    o.get("g_steps", c.schedule.g_steps);
    o.finish();
  }
  if (const Json* d = root.child("data")) {
    ObjectReader o(*d, "data");
    o.get("synthetic", c.data.synthetic);
    o.get("root", c.data.root);
    o.get("source_modality", c.data.source_modality);
    o.get("target_modality", c.data.target_modality);
    o.get("image_size", c.data.image_size);
    o.get("train_pairs", c.data.train_pairs);
    o.get("val_pairs", c.data.val_pairs);
    o.get("test_pairs", c.data.test_pairs);
    if (const Json* sp = o.child("split")) {
      ObjectReader so(*sp, "data.split");
      so.get("train", c.data.split.train);
      so.get("val", c.data.split.val);
      so.get("test", c.data.split.test);
      so.finish();
    }
    o.get("augment", c.data.augment);
    if (const Json* a = o.child("augmentation")) config_detail::read_ranges(*a, "data.augmentation", c.data.augmentation);
    if (const Json* n = o.child("noise")) config_detail::read_ranges(*n, "data.noise", c.data.noise);
    o.get("noise_magnitude", c.data.noise_magnitude);
    o.get("blank_threshold", c.data.blank_threshold);
    o.finish();
  }
  if (const Json* m = root.child("model")) {
    ObjectReader o(*m, "model");
    if (const Json* g = o.child("generator")) {
      ObjectReader go(*g, "model.generator");
      go.get("residual_blocks", c.model.generator.residual_blocks);
      go.get("base_channels", c.model.generator.base_channels);
      go.get("outer_kernel", c.model.generator.outer_kernel);
      go.finish();
    }
    if (const Json* dsc = o.child("discriminator")) {
      ObjectReader dco(*dsc, "model.discriminator");
      dco.get("layers", c.model.discriminator.layers);
      dco.get("base_channels", c.model.discriminator.base_channels);
      dco.finish();
    }
    if (const Json* r = o.child("registration")) {
      ObjectReader ro(*r, "model.registration");
      ro.get("encoder_channels", c.model.registration.encoder_channels);
      ro.get("decoder_channels", c.model.registration.decoder_channels);
      ro.finish();
    }
    o.finish();
  }
  root.finish();
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path, std::optional<std::string> preset_override = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return config_from_json(j, std::move(preset_override));
}

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Hex FNV-1a of the canonical JSON without output locations.
inline std::string fingerprint(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("output_dir");
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(j.dump());
  return os.str();
}

}  // namespace mrtrans
