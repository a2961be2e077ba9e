// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "dgamil/nn_ops.hpp"
#include "dgamil/param_store.hpp"

namespace dgamil {

// VGG-style plan: per stage, `blocks_per_stage` blocks of
// [3x3 conv, pad 1] -> BN -> ReLU, then 2x2/2 max pooling; afterwards
// `post_1x1_blocks` blocks of [1x1 conv] -> BN -> ReLU mix channels without
// changing resolution.
struct BackboneConfig {
  std::vector<int64_t> channels{8, 16, 32, 64};
  int blocks_per_stage = 2;
  int in_channels = 3;
  int input_h = 48;
  int input_w = 48;
  int post_1x1_blocks = 2;
};

struct ConvBnIds {
  int w = -1, b = -1, gamma = -1, beta = -1, rmean = -1, rvar = -1;
  int kernel = 3;
};

struct Backbone {
  BackboneConfig cfg;
  std::vector<ConvBnIds> blocks;  // stage blocks in order, then 1x1 blocks
  int64_t out_channels = 0;
  int64_t out_h = 0, out_w = 0;

  static Backbone build(ParamStore& store, const BackboneConfig& cfg, Rng& rng,
                        const std::string& prefix = "backbone") {
    if (cfg.channels.empty()) throw ConfigError("backbone: empty channel plan");
    for (int64_t c : cfg.channels)
      if (c <= 0) throw ConfigError("backbone: non-positive channel count");
    if (cfg.in_channels < 1) throw ConfigError("backbone: input channels must be >= 1");
    const int stages = static_cast<int>(cfg.channels.size());
    const int64_t div = int64_t{1} << stages;
    if (cfg.input_h % div != 0 || cfg.input_w % div != 0)
      throw ConfigError("backbone: input " + std::to_string(cfg.input_h) + "x" +
                        std::to_string(cfg.input_w) + " not divisible by 2^" +
                        std::to_string(stages) + " = " + std::to_string(div));

    Backbone net;
    net.cfg = cfg;
    int64_t cin = cfg.in_channels;
    auto add_block = [&](const std::string& name, int64_t cout, int kernel) {
      ConvBnIds blk;
      blk.kernel = kernel;
      const int64_t fan_in = cin * kernel * kernel;
      blk.w = store.add(name + ".conv.weight",
                        kaiming_normal({cout, cin, kernel, kernel}, fan_in, rng));
      blk.b = store.add(name + ".conv.bias", Tensor::zeros({cout}));
      blk.gamma = store.add(name + ".bn.gamma", Tensor::full({cout}, 1.0));
      blk.beta = store.add(name + ".bn.beta", Tensor::zeros({cout}));
      blk.rmean = store.add(name + ".bn.running_mean", Tensor::zeros({cout}), false);
      blk.rvar = store.add(name + ".bn.running_var", Tensor::full({cout}, 1.0), false);
      net.blocks.push_back(blk);
      cin = cout;
    };
    for (int s = 0; s < stages; ++s)
      for (int k = 0; k < cfg.blocks_per_stage; ++k)
        add_block(prefix + ".stage" + std::to_string(s) + ".block" + std::to_string(k),
                  cfg.channels[static_cast<size_t>(s)], 3);
    for (int k = 0; k < cfg.post_1x1_blocks; ++k)
      add_block(prefix + ".mix" + std::to_string(k), cfg.channels.back(), 1);

    net.out_channels = cfg.channels.back();
    net.out_h = cfg.input_h / div;
    net.out_w = cfg.input_w / div;
    return net;
  }

  // x: [N, in_channels, input_h, input_w] -> [N, out_channels, out_h, out_w].
  Var forward(Tape& t, ParamStore& store, const BoundParams& b, Var x, bool training) const {
    const std::vector<int64_t> expect{x->value.dim(0), cfg.in_channels, cfg.input_h, cfg.input_w};
    if (x->value.shape != expect) {
      Tensor e(expect);
      throw ShapeError("backbone: expected input " + e.shape_str() + ", got " +
                       x->value.shape_str());
    }
    const int stages = static_cast<int>(cfg.channels.size());
    Var h = x;
    size_t bi = 0;
    auto run_block = [&](Var in) {
      const ConvBnIds& blk = blocks[bi++];
      Var conv = conv2d(t, in, b[blk.w], b[blk.b], blk.kernel == 3 ? 1 : 0);
      Var bn = batchnorm2d(t, conv, b[blk.gamma], b[blk.beta], store.at(blk.rmean).value,
                           store.at(blk.rvar).value, training);
      return relu(t, bn);
    };
    for (int s = 0; s < stages; ++s) {
      for (int k = 0; k < cfg.blocks_per_stage; ++k) h = run_block(h);
      h = maxpool2x2(t, h);
    }
    for (int k = 0; k < cfg.post_1x1_blocks; ++k) h = run_block(h);
    return h;
  }
};

}  // namespace dgamil
