#pragma once

// Alternating D/G training, validation-based model selection, checkpoints and
// evaluation of trained generators.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrtrans/adversarial.hpp"
#include "mrtrans/checkpoint.hpp"
#include "mrtrans/config.hpp"
#include "mrtrans/dataset.hpp"
#include "mrtrans/metrics.hpp"
#include "mrtrans/networks.hpp"
#include "mrtrans/optim.hpp"
#include "mrtrans/registration.hpp"

namespace mrtrans {

/// The networks a mode needs, built deterministically from the config seed.
class ModelSet {
 public:
  explicit ModelSet(const ExperimentConfig& cfg) : mode_(cfg.mode) {
    auto rng = derive_rng(cfg.seed, kInitStream);
    const auto& m = cfg.model;
    G_ = std::make_unique<ResnetGenerator<float>>(m.generator, rng);
    D_Y_ = std::make_unique<PatchDiscriminator<float>>(m.discriminator, rng);
    if (mode_.cycle()) {
      F_ = std::make_unique<ResnetGenerator<float>>(m.generator, rng);
      D_X_ = std::make_unique<PatchDiscriminator<float>>(m.discriminator, rng);
    }
    if (mode_.registers_y()) R_Y_ = std::make_unique<RegistrationUNet<float>>(m.registration, rng);
    if (mode_.registers_x()) R_X_ = std::make_unique<RegistrationUNet<float>>(m.registration, rng);
  }

  TranslationNetworks<float> networks() const {
    return {G_.get(), F_.get(), D_X_.get(), D_Y_.get(), R_X_.get(), R_Y_.get()};
  }

  nn::ImageNetwork<float>& G() { return *G_; }
  nn::ImageNetwork<float>* F() { return F_.get(); }

  /// G, F, R_X, R_Y parameters, names prefixed by network.
  nn::ParameterList<float> generator_side() const {
    nn::ParameterList<float> out;
    append("G", G_.get(), out);
    append("F", F_.get(), out);
    append("R_X", R_X_.get(), out);
    append("R_Y", R_Y_.get(), out);
    return out;
  }

  nn::ParameterList<float> discriminator_side() const {
    nn::ParameterList<float> out;
    append("D_X", D_X_.get(), out);
    append("D_Y", D_Y_.get(), out);
    return out;
  }

  nn::ParameterList<float> all() const {
    auto out = generator_side();
    for (auto& p : discriminator_side()) out.push_back(p);
    return out;
  }

  void export_to(std::map<std::string, Tensor<float>>& blobs) const {
    for (const auto& p : all()) blobs["net/" + p.name] = p.var.value();
  }

  void import_from(const std::map<std::string, Tensor<float>>& blobs) {
    for (const auto& p : all()) {
      auto it = blobs.find("net/" + p.name);
      if (it == blobs.end()) throw std::runtime_error("checkpoint lacks parameter " + p.name);
      if (it->second.shape() != p.var.shape())
        throw std::runtime_error("checkpoint parameter " + p.name + " has shape " + to_string(it->second.shape()) +
                                 ", expected " + to_string(p.var.shape()));
      auto v = p.var;
      v.value() = it->second;
    }
  }

 private:
  static constexpr std::uint64_t kInitStream = 0x1417;

  template <typename Net>
  static void append(const std::string& prefix, const Net* net, nn::ParameterList<float>& out) {
    if (!net) return;
    for (auto& p : net->parameters()) out.push_back({prefix + "/" + p.name, p.var});
  }

  TrainingMode mode_;
  std::unique_ptr<nn::ImageNetwork<float>> G_, F_, D_X_, D_Y_;
  std::unique_ptr<nn::RegistrationNetwork<float>> R_X_, R_Y_;
};

/// Runs a generator over images in batches, without building gradients.
inline std::vector<Image2D> predict(nn::ImageNetwork<float>& net, const nn::ParameterList<float>& params,
                                    const std::vector<const Image2D*>& inputs, int batch = 16) {
  nn::FreezeGuard<float> frozen(params);
  std::vector<Image2D> out;
  out.reserve(inputs.size());
  for (std::size_t start = 0; start < inputs.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(inputs.size(), start + static_cast<std::size_t>(batch));
    std::vector<Image2D> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(*inputs[i]);
    const auto y = net.forward(ad::constant(stack_images<float, float>(chunk)));
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(image_from_plane<float>(y.value(), static_cast<int>(i)));
  }
  return out;
}

struct EvaluationResult {
  MetricsReport g;                // G(x) against y
  std::optional<MetricsReport> f;  // F(y) against x, cycle modes
};

/// Scores G (and F) on aligned pairs; no augmentation or misalignment.
inline EvaluationResult evaluate_models(ModelSet& models, const TrainingMode& mode, const std::vector<SlicePair>& pairs,
                                        const std::string& fingerprint = "") {
  if (pairs.empty()) throw std::invalid_argument("evaluate: empty split");
  auto score = [&](nn::ImageNetwork<float>& net, const std::string& name, bool forward_direction) {
    std::vector<const Image2D*> inputs;
    for (const auto& p : pairs) inputs.push_back(forward_direction ? &p.source : &p.target);
    const auto preds = predict(net, models.all(), inputs);
    std::vector<MetricRecord> recs;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      recs.push_back(score_pair(preds[i], forward_direction ? pairs[i].target : pairs[i].source));
    return aggregate(std::move(recs), name, fingerprint,
                     ms_ssim_scales_for(pairs[0].source.rows(), pairs[0].source.cols()));
  };
  EvaluationResult r{score(models.G(), "G", true), std::nullopt};
  if (mode.cycle()) r.f = score(*models.F(), "F", false);
  return r;
}

inline double mean_psnr(nn::ImageNetwork<float>& net, const nn::ParameterList<float>& params,
                        const std::vector<SlicePair>& pairs) {
  std::vector<const Image2D*> inputs;
  for (const auto& p : pairs) inputs.push_back(&p.source);
  const auto preds = predict(net, params, inputs);
  double s = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) s += psnr(preds[i], pairs[i].target);
  return s / static_cast<double>(pairs.size());
}

struct TrainOptions {
  bool write_files = true;
  // Compare parameter hashes around every sub-step.
  bool check_alternation = false;
  std::function<void(const Json&)> on_record;
};

struct TrainResult {
  double initial_val_psnr = 0.0;
  double best_val_psnr = 0.0;
  std::int64_t best_iteration = 0;
  double final_val_psnr = 0.0;
  std::int64_t iterations = 0;
  std::vector<Json> log;
  Checkpoint best;
  Checkpoint last;
};

/// Raised when a sub-step modified parameters it must leave untouched.
class AlternationViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Trainer {
 public:
  Trainer(ExperimentConfig cfg, const PairDataset& data, TrainOptions opt = {})
      : cfg_(std::move(cfg)), data_(data), opt_(std::move(opt)), models_(cfg_), weights_(cfg_.resolved_weights()),
        adam_g_(models_.generator_side(), cfg_.optimizer), adam_d_(models_.discriminator_side(), cfg_.optimizer),
        rng_(derive_rng(cfg_.seed, kBatchStream)), fingerprint_(fingerprint(cfg_)) {
    validate(cfg_);
    require_networks(cfg_.mode, models_.networks());
    if (data_.train.empty() || data_.val.empty()) throw std::invalid_argument("Trainer: train and val splits must be nonempty");
  }

  /// Restores parameters, optimizer moments, RNG and iteration.
  void restore(const Checkpoint& ck) {
    if (ck.fingerprint != fingerprint_)
      throw std::invalid_argument("checkpoint fingerprint " + ck.fingerprint + " does not match config " + fingerprint_);
    models_.import_from(ck.blobs);
    adam_g_.import_state("adam_g/", ck.blobs, ck.iteration);
    adam_d_.import_state("adam_d/", ck.blobs, ck.iteration);
    std::istringstream is(ck.rng_state);
    is >> rng_;
    iteration_ = ck.iteration;
    best_val_ = ck.extra.value("best_val_psnr", -1.0);
    best_iteration_ = ck.extra.value("best_iteration", std::int64_t{0});
    initial_val_ = ck.extra.value("initial_val_psnr", 0.0);
  }

  Checkpoint snapshot() const {
    Checkpoint ck;
    ck.config = to_json(cfg_);
    ck.fingerprint = fingerprint_;
    ck.iteration = iteration_;
    std::ostringstream os;
    os << rng_;
    ck.rng_state = os.str();
    ck.extra = {{"best_val_psnr", best_val_}, {"best_iteration", best_iteration_}, {"initial_val_psnr", initial_val_}};
    models_.export_to(ck.blobs);
    adam_g_.export_state("adam_g/", ck.blobs);
    adam_d_.export_state("adam_d/", ck.blobs);
    return ck;
  }

  TrainResult train() {
    namespace fs = std::filesystem;
    TrainResult result;
    std::ofstream log_file;
    if (opt_.write_files) {
      fs::create_directories(cfg_.output_dir);
      log_file.open(fs::path(cfg_.output_dir) / "log.jsonl", iteration_ == 0 ? std::ios::trunc : std::ios::app);
      if (!log_file) throw std::runtime_error("cannot write log in " + cfg_.output_dir);
    }
    auto emit = [&](const Json& rec) {
      result.log.push_back(rec);
      if (log_file) log_file << rec.dump() << "\n" << std::flush;
      if (opt_.on_record) opt_.on_record(rec);
    };

    if (iteration_ == 0 && best_val_ < 0) {
      initial_val_ = best_val_ = validation_psnr();
      best_iteration_ = 0;
      emit({{"iteration", 0}, {"val_psnr", initial_val_}});
      result.best = snapshot();
    }
    double last_val = best_val_;
    while (iteration_ < cfg_.schedule.iterations) {
      Json rec = step();
      const bool log_now = iteration_ % cfg_.schedule.log_every == 0;
      if (iteration_ % cfg_.schedule.validate_every == 0 || iteration_ == cfg_.schedule.iterations) {
        last_val = validation_psnr();
        rec["val_psnr"] = last_val;
        if (last_val > best_val_) {
          best_val_ = last_val;
          best_iteration_ = iteration_;
          result.best = snapshot();
          if (opt_.write_files) save_checkpoint(result.best, (fs::path(cfg_.output_dir) / "best.ckpt").string());
        }
        emit(rec);
      } else if (log_now) {
        emit(rec);
      }
    }
    if (result.best.blobs.empty()) result.best = best_from_disk_or_current();
    result.last = snapshot();
    if (opt_.write_files) {
      save_checkpoint(result.last, (fs::path(cfg_.output_dir) / "last.ckpt").string());
      if (best_iteration_ == iteration_ || !fs::exists(fs::path(cfg_.output_dir) / "best.ckpt"))
        save_checkpoint(result.best, (fs::path(cfg_.output_dir) / "best.ckpt").string());
    }
    result.initial_val_psnr = initial_val_;
    result.best_val_psnr = best_val_;
    result.best_iteration = best_iteration_;
    result.final_val_psnr = last_val;
    result.iterations = iteration_;
    return result;
  }

  /// One D step then one G step (times the configured ratios); returns the
  /// log record for the iteration.
  Json step() {
    const PairedBatch<float> batch = sample_batch(iteration_);
    const auto nets = models_.networks();
    Json rec;
    rec["iteration"] = iteration_ + 1;

    Translations<float> fakes;
    {
      nn::FreezeGuard<float> d_frozen(models_.discriminator_side());
      fakes = translate(cfg_.mode, batch, nets);
    }
    for (int k = 0; k < cfg_.schedule.d_steps; ++k) {
      const auto before = guard_hash(models_.generator_side());
      nn::FreezeGuard<float> g_frozen(models_.generator_side());
      adam_d_.zero_grad();
      const auto d = discriminator_objective(cfg_.mode, batch, nets, &fakes);
      ad::Var<float> total = d.d_x ? ad::add(d.d_y, *d.d_x) : d.d_y;
      ad::backward(total);
      adam_d_.step();
      rec["d_y"] = d.d_y.item();
      if (d.d_x) rec["d_x"] = d.d_x->item();
      check_unchanged(before, models_.generator_side(), "discriminator step changed generator-side parameters");
    }
    for (int k = 0; k < cfg_.schedule.g_steps; ++k) {
      const auto before = guard_hash(models_.discriminator_side());
      nn::FreezeGuard<float> d_frozen(models_.discriminator_side());
      adam_g_.zero_grad();
      const auto obj = generator_objective(cfg_.mode, weights_, batch, nets, k == 0 ? &fakes : nullptr);
      ad::backward(obj.total);
      adam_g_.step();
      rec["g_total"] = obj.value();
      Json comps = Json::object();
      for (const auto& c : obj.components) comps[c.name] = c.weighted();
      rec["components"] = comps;
      check_unchanged(before, models_.discriminator_side(), "generator step changed discriminator parameters");
    }
    ++iteration_;
    return rec;
  }

  double validation_psnr() { return mean_psnr(models_.G(), models_.all(), data_.val); }

  PairedBatch<float> sample_batch(std::int64_t iteration) {
    const int n = cfg_.schedule.batch_size;
    std::uniform_int_distribution<std::size_t> pick(0, data_.train.size() - 1);
    std::vector<Image2D> xs, ys;
    for (int k = 0; k < n; ++k) {
      SlicePair pair = data_.train[pick(rng_)];
      auto srng = derive_rng(cfg_.seed, kSampleStream, static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(k));
      if (cfg_.data.augment) {
        const auto p = sample_augmentation(srng, cfg_.data.augmentation);
        pair.source = apply_affine(pair.source, p);
        pair.target = apply_affine(pair.target, p);
      }
      if (cfg_.mode.noise) pair = inject_misalignment(pair, srng, cfg_.data.noise, cfg_.data.noise_magnitude);
      xs.push_back(std::move(pair.source));
      ys.push_back(std::move(pair.target));
    }
    return {ad::constant(stack_images<float, float>(xs)), ad::constant(stack_images<float, float>(ys))};
  }

  ModelSet& models() { return models_; }
  const ExperimentConfig& config() const { return cfg_; }
  std::int64_t iteration() const { return iteration_; }
  const std::string& config_fingerprint() const { return fingerprint_; }

 private:
  static constexpr std::uint64_t kBatchStream = 0xba7c;
  static constexpr std::uint64_t kSampleStream = 0x5a4e;

  std::uint64_t guard_hash(const nn::ParameterList<float>& params) const {
    return opt_.check_alternation ? nn::parameter_hash(params) : 0;
  }

  void check_unchanged(std::uint64_t before, const nn::ParameterList<float>& params, const char* what) const {
    if (opt_.check_alternation && nn::parameter_hash(params) != before) throw AlternationViolation(what);
  }

  Checkpoint best_from_disk_or_current() const {
    const auto path = std::filesystem::path(cfg_.output_dir) / "best.ckpt";
    if (opt_.write_files && std::filesystem::exists(path)) return load_checkpoint(path.string());
    return snapshot();
  }

  ExperimentConfig cfg_;
  const PairDataset& data_;
  TrainOptions opt_;
  ModelSet models_;
  LossWeights weights_;
  Adam<float> adam_g_, adam_d_;
  std::mt19937_64 rng_;
  std::string fingerprint_;
  std::int64_t iteration_ = 0;
  double best_val_ = -1.0;
  std::int64_t best_iteration_ = 0;
  double initial_val_ = 0.0;
};

/// Rebuilds the networks stored in a checkpoint.
inline std::pair<ExperimentConfig, std::unique_ptr<ModelSet>> models_from_checkpoint(const Checkpoint& ck) {
  ExperimentConfig cfg = config_from_json(ck.config);
  if (fingerprint(cfg) != ck.fingerprint)
    throw std::runtime_error("checkpoint config does not reproduce its fingerprint " + ck.fingerprint);
  auto models = std::make_unique<ModelSet>(cfg);
  models->import_from(ck.blobs);
  return {std::move(cfg), std::move(models)};
}

inline EvaluationResult evaluate(const Checkpoint& ck, const std::vector<SlicePair>& split) {
  auto [cfg, models] = models_from_checkpoint(ck);
  return evaluate_models(*models, cfg.mode, split, ck.fingerprint);
}

inline void write_evaluation(const EvaluationResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_report(out, r.g);
  if (r.f) write_report(out, *r.f);
}

}  // namespace mrtrans
