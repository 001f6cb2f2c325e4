#pragma once

// Generator and discriminator architectures for the translation models.

#include <stdexcept>
#include <string>
#include <vector>

#include "mrtrans/nn.hpp"

namespace mrtrans {

struct GeneratorSpec {
  int residual_blocks = 9;
  int base_channels = 32;
  // Kernel size of the stem and head convolutions (odd).
  int outer_kernel = 7;
};

struct DiscriminatorSpec {
  int layers = 4;
  int base_channels = 64;
};

/// Residual encoder-decoder: stem convolution, two stride-2 downsamplings, residual
/// blocks, two stride-2 transposed convolutions, head convolution with
/// sigmoid output.
template <typename T>
class ResnetGenerator final : public nn::ImageNetwork<T> {
 public:
  ResnetGenerator(const GeneratorSpec& spec, std::mt19937_64& rng) : spec_(spec) {
    if (spec.residual_blocks < 0 || spec.base_channels < 1 || spec.outer_kernel < 1 || spec.outer_kernel % 2 == 0)
      throw std::invalid_argument("GeneratorSpec: invalid sizes");
    const int c = spec.base_channels;
    const int ok = spec.outer_kernel;
    stem_ = nn::Conv2d<T>(1, c, ok, 1, ok / 2, rng);
    down1_ = nn::Conv2d<T>(c, 2 * c, 3, 2, 1, rng);
    down2_ = nn::Conv2d<T>(2 * c, 4 * c, 3, 2, 1, rng);
    for (int b = 0; b < spec.residual_blocks; ++b) {
      res_a_.emplace_back(4 * c, 4 * c, 3, 1, 1, rng);
      res_b_.emplace_back(4 * c, 4 * c, 3, 1, 1, rng);
    }
    up1_ = nn::UpConv2d<T>(4 * c, 2 * c, rng);
    up2_ = nn::UpConv2d<T>(2 * c, c, rng);
    head_ = nn::Conv2d<T>(c, 1, ok, 1, ok / 2, rng);
  }

  ad::Var<T> forward(const ad::Var<T>& x) override {
    if (x.shape()[1] != 1) throw std::invalid_argument("ResnetGenerator: expects single-channel input");
    if (x.shape()[2] % 4 != 0 || x.shape()[3] % 4 != 0)
      throw std::invalid_argument("ResnetGenerator: image sides must be divisible by 4");
    auto h = ad::relu(ad::instance_norm(stem_(x)));
    h = ad::relu(ad::instance_norm(down1_(h)));
    h = ad::relu(ad::instance_norm(down2_(h)));
    for (std::size_t b = 0; b < res_a_.size(); ++b) {
      auto r = ad::relu(ad::instance_norm(res_a_[b](h)));
      r = ad::instance_norm(res_b_[b](r));
      h = ad::add(h, r);
    }
    h = ad::relu(ad::instance_norm(up1_(h)));
    h = ad::relu(ad::instance_norm(up2_(h)));
    return ad::sigmoid(head_(h));
  }

  nn::ParameterList<T> parameters() const override {
    nn::ParameterList<T> out;
    stem_.collect("stem", out);
    down1_.collect("down1", out);
    down2_.collect("down2", out);
    for (std::size_t b = 0; b < res_a_.size(); ++b) {
      res_a_[b].collect("res" + std::to_string(b) + ".a", out);
      res_b_[b].collect("res" + std::to_string(b) + ".b", out);
    }
    up1_.collect("up1", out);
    up2_.collect("up2", out);
    head_.collect("head", out);
    return out;
  }

  const GeneratorSpec& spec() const { return spec_; }

 private:
  GeneratorSpec spec_;
  nn::Conv2d<T> stem_, down1_, down2_, head_;
  nn::UpConv2d<T> up1_, up2_;
  std::vector<nn::Conv2d<T>> res_a_, res_b_;
};

/// Patch discriminator: stride-2 4x4 convolutions with leaky ReLU, then a 3x3
/// convolution to a raw (unbounded) score map.
template <typename T>
class PatchDiscriminator final : public nn::ImageNetwork<T> {
 public:
  PatchDiscriminator(const DiscriminatorSpec& spec, std::mt19937_64& rng) : spec_(spec) {
    if (spec.layers < 1 || spec.base_channels < 1) throw std::invalid_argument("DiscriminatorSpec: invalid sizes");
    int in = 1;
    for (int l = 0; l < spec.layers; ++l) {
      const int out = spec.base_channels << std::min(l, 3);
      layers_.emplace_back(in, out, 4, 2, 1, rng);
      in = out;
    }
    head_ = nn::Conv2d<T>(in, 1, 3, 1, 1, rng);
  }

  ad::Var<T> forward(const ad::Var<T>& x) override {
    auto h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      h = layers_[l](h);
      if (l > 0) h = ad::instance_norm(h);
      h = ad::leaky_relu(h, T(0.2));
    }
    return head_(h);
  }

  nn::ParameterList<T> parameters() const override {
    nn::ParameterList<T> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect("conv" + std::to_string(l), out);
    head_.collect("head", out);
    return out;
  }

 private:
  DiscriminatorSpec spec_;
  std::vector<nn::Conv2d<T>> layers_;
  nn::Conv2d<T> head_;
};

}  // namespace mrtrans
