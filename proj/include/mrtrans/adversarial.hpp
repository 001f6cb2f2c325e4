#pragma once

// LSGAN objectives, cycle and identity losses, and the composite generator and
// discriminator objectives for every training mode.

#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mrtrans/autodiff.hpp"
#include "mrtrans/kspace.hpp"
#include "mrtrans/nn.hpp"
#include "mrtrans/registration.hpp"

namespace mrtrans {

enum class Family { gan, cycle_gan };
enum class Registration { none, single, dual };

/// Which objective to train. String form: "gan", "gan+n+r+f_low",
/// "cycle+n+r2+f_hi", ... where n = misalignment noise, r = one registration
/// network, r2 = one per direction.
struct TrainingMode {
  Family family = Family::gan;
  Registration registration = Registration::none;
  FrequencyPreset frequency = FrequencyPreset::off;
  bool noise = false;

  void validate() const {
    if (registration == Registration::dual && family != Family::cycle_gan)
      throw std::invalid_argument("TrainingMode: dual registration requires the cycle family");
  }

  bool cycle() const { return family == Family::cycle_gan; }
  bool registers_y() const { return registration != Registration::none; }
  bool registers_x() const { return registration == Registration::dual; }
  bool uses_frequency() const { return frequency != FrequencyPreset::off; }

  bool operator==(const TrainingMode&) const = default;

  static TrainingMode parse(const std::string& text) {
    TrainingMode m;
    std::stringstream ss(text);
    std::string tok;
    bool first = true;
    while (std::getline(ss, tok, '+')) {
      if (first) {
        if (tok == "gan") m.family = Family::gan;
        else if (tok == "cycle" || tok == "cycle_gan") m.family = Family::cycle_gan;
        else throw std::invalid_argument("mode '" + text + "': family must be gan or cycle");
        first = false;
      } else if (tok == "n") {
        m.noise = true;
      } else if (tok == "r") {
        m.registration = Registration::single;
      } else if (tok == "r2") {
        m.registration = Registration::dual;
      } else {
        m.frequency = parse_frequency_preset(tok);
        if (m.frequency == FrequencyPreset::off) throw std::invalid_argument("mode '" + text + "': bad token " + tok);
      }
    }
    if (first) throw std::invalid_argument("empty mode string");
    m.validate();
    return m;
  }

  std::string str() const {
    std::string s = cycle() ? "cycle" : "gan";
    if (noise) s += "+n";
    if (registration == Registration::single) s += "+r";
    if (registration == Registration::dual) s += "+r2";
    if (uses_frequency()) s += "+" + to_string(frequency);
    return s;
  }
};

/// Every family x registration x frequency combination that validates.
inline std::vector<TrainingMode> all_training_modes(bool noise = true) {
  std::vector<TrainingMode> out;
  for (auto f : {Family::gan, Family::cycle_gan})
    for (auto r : {Registration::none, Registration::single, Registration::dual})
      for (auto q : {FrequencyPreset::off, FrequencyPreset::f_low, FrequencyPreset::f_hi, FrequencyPreset::f_all}) {
        if (r == Registration::dual && f != Family::cycle_gan) continue;
        out.push_back({f, r, q, noise});
      }
  return out;
}

enum class CycleForm {
  standard,  // |F(G(x)) - x| + |G(F(y)) - y|
  literal,   // |F(G(x)) - y| + |G(F(y)) - x|, as sometimes printed
};

struct LossWeights {
  double correction = 20.0;  // lambda1
  double smoothness = 10.0;  // lambda2
  double cycle = 10.0;       // lambda3
  double identity = 1.0;     // lambda4
  double frequency = 0.1;    // lambda5
  int radius = 21;
  CycleForm cycle_form = CycleForm::standard;

  void validate() const {
    for (double v : {correction, smoothness, cycle, identity, frequency})
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("LossWeights: weights must be finite and >= 0");
    if (radius < 0) throw std::invalid_argument("LossWeights: radius must be >= 0");
  }
};

/// Frequency weight used with the full-scale schedule: 1 for f_hi, 0.1 otherwise.
inline double default_frequency_lambda(FrequencyPreset p) { return p == FrequencyPreset::f_hi ? 1.0 : 0.1; }

template <typename T>
struct TranslationNetworks {
  nn::ImageNetwork<T>* G = nullptr;    // X -> Y
  nn::ImageNetwork<T>* F = nullptr;    // Y -> X
  nn::ImageNetwork<T>* D_X = nullptr;  // scores domain X
  nn::ImageNetwork<T>* D_Y = nullptr;  // scores domain Y
  nn::RegistrationNetwork<T>* R_X = nullptr;  // registers F(y) onto x
  nn::RegistrationNetwork<T>* R_Y = nullptr;  // registers G(x) onto y
};

/// Throws naming every network the mode needs but `nets` lacks.
template <typename T>
void require_networks(const TrainingMode& mode, const TranslationNetworks<T>& nets) {
  mode.validate();
  std::vector<std::string> missing;
  if (!nets.G) missing.push_back("G");
  if (!nets.D_Y) missing.push_back("D_Y");
  if (mode.cycle() && !nets.F) missing.push_back("F");
  if (mode.cycle() && !nets.D_X) missing.push_back("D_X");
  if (mode.registers_y() && !nets.R_Y) missing.push_back("R_Y");
  if (mode.registers_x() && !nets.R_X) missing.push_back("R_X");
  if (missing.empty()) return;
  std::string msg = "mode " + mode.str() + " is missing network(s):";
  for (const auto& m : missing) msg += " " + m;
  throw std::invalid_argument(msg);
}

/// A paired batch: x in domain X, y in domain Y, both (N,1,H,W).
template <typename T>
struct PairedBatch {
  ad::Var<T> x;
  ad::Var<T> y;
};

// ---------------------------------------------------------------------------
// Elementary losses

template <typename T>
ad::Var<T> lsgan_discriminator_loss(const ad::Var<T>& scores_real, const ad::Var<T>& scores_fake) {
  return ad::add(ad::mean_squared_to(scores_real, T(1)), ad::mean_squared_to(scores_fake, T(0)));
}

template <typename T>
ad::Var<T> lsgan_generator_loss(const ad::Var<T>& scores_fake) {
  return ad::mean_squared_to(scores_fake, T(1));
}

template <typename T>
ad::Var<T> cycle_loss(const ad::Var<T>& x, const ad::Var<T>& y, nn::ImageNetwork<T>& G, nn::ImageNetwork<T>& F,
                      CycleForm form = CycleForm::standard) {
  const auto fgx = F.forward(G.forward(x));
  const auto gfy = G.forward(F.forward(y));
  if (form == CycleForm::literal) return ad::add(ad::mean_abs_diff(fgx, y), ad::mean_abs_diff(gfy, x));
  return ad::add(ad::mean_abs_diff(fgx, x), ad::mean_abs_diff(gfy, y));
}

template <typename T>
ad::Var<T> identity_loss(const ad::Var<T>& x, const ad::Var<T>& y, nn::ImageNetwork<T>& G, nn::ImageNetwork<T>& F) {
  return ad::add(ad::mean_abs_diff(G.forward(y), y), ad::mean_abs_diff(F.forward(x), x));
}

// ---------------------------------------------------------------------------
// Composite objectives

template <typename T>
struct LossComponent {
  std::string name;
  ad::Var<T> raw;
  double weight;

  double weighted() const { return weight * static_cast<double>(raw.item()); }
};

template <typename T>
struct GeneratorObjective {
  ad::Var<T> total;
  std::vector<LossComponent<T>> components;

  double value() const { return static_cast<double>(total.item()); }

  double component_sum() const {
    double s = 0.0;
    for (const auto& c : components) s += c.weighted();
    return s;
  }

  const LossComponent<T>* find(const std::string& name) const {
    for (const auto& c : components)
      if (c.name == name) return &c;
    return nullptr;
  }
};

/// Raised when an objective evaluates to NaN or infinity.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Generator outputs reused between the discriminator and generator steps of
/// one iteration.
template <typename T>
struct Translations {
  ad::Var<T> g_x;  // G(x)
  ad::Var<T> f_y;  // F(y), cycle modes only
};

template <typename T>
Translations<T> translate(const TrainingMode& mode, const PairedBatch<T>& batch, const TranslationNetworks<T>& nets) {
  require_networks(mode, nets);
  Translations<T> t;
  t.g_x = nets.G->forward(batch.x);
  if (mode.cycle()) t.f_y = nets.F->forward(batch.y);
  return t;
}

namespace detail {

// One translation direction: adversarial term, optional registration terms
// and optional frequency term. `suffix` tags the component names.
template <typename T>
void add_direction(const TrainingMode& mode, const LossWeights& w, const ad::Var<T>& fake, const ad::Var<T>& real,
                   nn::ImageNetwork<T>& disc, nn::RegistrationNetwork<T>* reg, const std::string& suffix,
                   std::vector<LossComponent<T>>& out) {
  out.push_back({"adv_" + suffix, lsgan_generator_loss(disc.forward(fake)), 1.0});
  ad::Var<T> spectral_input = fake;
  if (reg) {
    const auto field = reg->forward(fake, real);
    const auto warped = ad::resample(fake, field);
    out.push_back({"corr_" + suffix, ad::mean_abs_diff(warped, real), w.correction});
    out.push_back({"smooth_" + suffix, ad::smoothness(field), w.smoothness});
    spectral_input = warped;
  }
  if (mode.uses_frequency()) {
    const auto& s = fake.shape();
    const auto mask = build_radial_mask(s[2], s[3], w.radius);
    out.push_back({"freq_" + suffix,
                   ad::frequency_loss(spectral_input, real, mask, FrequencyWeight::preset(mode.frequency)),
                   w.frequency});
  }
}

template <typename T>
void require_finite_objective(const std::vector<LossComponent<T>>& comps, double total, const char* what) {
  if (std::isfinite(total)) return;
  std::string msg = std::string(what) + " objective is not finite:";
  for (const auto& c : comps) msg += " " + c.name + "=" + std::to_string(static_cast<double>(c.raw.item()));
  throw NonFiniteLoss(msg);
}

}  // namespace detail

/// Generator-side objective of the mode. Direction G (x -> y) always
/// contributes; cycle modes add direction F (y -> x) plus cycle and identity
/// terms. With registration the frequency term compares the registered image.
template <typename T>
GeneratorObjective<T> generator_objective(const TrainingMode& mode, const LossWeights& weights,
                                          const PairedBatch<T>& batch, const TranslationNetworks<T>& nets,
                                          const Translations<T>* reuse = nullptr) {
  require_networks(mode, nets);
  weights.validate();
  const Translations<T> t = reuse ? *reuse : translate(mode, batch, nets);
  GeneratorObjective<T> obj;
  detail::add_direction(mode, weights, t.g_x, batch.y, *nets.D_Y, mode.registers_y() ? nets.R_Y : nullptr, "G",
                        obj.components);
  if (mode.cycle()) {
    detail::add_direction(mode, weights, t.f_y, batch.x, *nets.D_X, mode.registers_x() ? nets.R_X : nullptr, "F",
                          obj.components);
    const auto fgx = nets.F->forward(t.g_x);
    const auto gfy = nets.G->forward(t.f_y);
    const bool literal = weights.cycle_form == CycleForm::literal;
    obj.components.push_back({"cycle",
                              ad::add(ad::mean_abs_diff(fgx, literal ? batch.y : batch.x),
                                      ad::mean_abs_diff(gfy, literal ? batch.x : batch.y)),
                              weights.cycle});
    obj.components.push_back({"identity", identity_loss(batch.x, batch.y, *nets.G, *nets.F), weights.identity});
  }
  std::vector<std::pair<ad::Var<T>, T>> terms;
  for (const auto& c : obj.components) terms.emplace_back(c.raw, static_cast<T>(c.weight));
  obj.total = ad::weighted_sum(terms);
  detail::require_finite_objective(obj.components, obj.value(), "generator");
  return obj;
}

template <typename T>
struct DiscriminatorObjective {
  ad::Var<T> d_y;                 // always present
  std::optional<ad::Var<T>> d_x;  // cycle modes
};

/// LSGAN loss of each active discriminator. Fakes enter as constants, so no
/// gradient reaches the generators.
template <typename T>
DiscriminatorObjective<T> discriminator_objective(const TrainingMode& mode, const PairedBatch<T>& batch,
                                                  const TranslationNetworks<T>& nets,
                                                  const Translations<T>* reuse = nullptr) {
  require_networks(mode, nets);
  const Translations<T> t = reuse ? *reuse : translate(mode, batch, nets);
  DiscriminatorObjective<T> obj;
  obj.d_y = lsgan_discriminator_loss(nets.D_Y->forward(batch.y), nets.D_Y->forward(ad::detach(t.g_x)));
  if (mode.cycle())
    obj.d_x = lsgan_discriminator_loss(nets.D_X->forward(batch.x), nets.D_X->forward(ad::detach(t.f_y)));
  for (const auto* v : {&obj.d_y, obj.d_x ? &*obj.d_x : nullptr})
    if (v && !std::isfinite(static_cast<double>(v->item())))
      throw NonFiniteLoss("discriminator objective is not finite");
  return obj;
}

}  // namespace mrtrans
