#pragma once

// Small plain CNNs used in place of the ResNet backbones.

#include "patchdrop/nn.hpp"
#include "patchdrop/patch_grid.hpp"

namespace patchdrop {

// LR image [C,h,w] -> 16 sigmoid probabilities.
template <typename T = float>
Network<T> make_policy_net(const Shape& lr_shape, Rng& rng, std::size_t width = 8) {
  Network<T> net(lr_shape);
  net.template add<Conv2d<T>>(lr_shape.at(0), width, 3, 1, 1)
      .template add<Relu<T>>()
      .template add<Flatten<T>>()
      .template add<Dense<T>>(width * lr_shape.at(1) * lr_shape.at(2), kNumPatches)
      .template add<Sigmoid<T>>();
  init_he(net, rng);
  return net;
}

// Zeroes the weights and bias of the last dense layer, so every output is
// sigmoid(0) = 0.5.
template <typename T>
void zero_last_dense(Network<T>& net) {
  for (std::size_t i = net.num_layers(); i-- > 0;) {
    if (net.layer(i).kind() == LayerKind::kDense) {
      for (auto& p : net.layer(i).params()) p.fill(T{});
      return;
    }
  }
}

// HR image [C,H,W] -> class distribution. Two stride-2 2x2 convolutions keep
// spatial layout before the dense head, so position is usable evidence.
template <typename T = float>
Network<T> make_hr_classifier(const Shape& hr_shape, std::size_t classes, Rng& rng,
                              std::size_t width = 8) {
  Network<T> net(hr_shape);
  net.template add<Conv2d<T>>(hr_shape.at(0), width, 2, 2, 0)
      .template add<Relu<T>>()
      .template add<Conv2d<T>>(width, 2 * width, 2, 2, 0)
      .template add<Relu<T>>()
      .template add<Flatten<T>>()
      .template add<Dense<T>>(2 * width * (hr_shape.at(1) / 4) * (hr_shape.at(2) / 4),
                              classes)
      .template add<Softmax<T>>();
  init_he(net, rng);
  return net;
}

// LR image [C,h,w] -> class distribution.
template <typename T = float>
Network<T> make_lr_classifier(const Shape& lr_shape, std::size_t classes, Rng& rng,
                              std::size_t width = 8) {
  Network<T> net(lr_shape);
  net.template add<Conv2d<T>>(lr_shape.at(0), width, 3, 1, 1)
      .template add<Relu<T>>()
      .template add<Flatten<T>>()
      .template add<Dense<T>>(width * lr_shape.at(1) * lr_shape.at(2), classes)
      .template add<Softmax<T>>();
  init_he(net, rng);
  return net;
}

// Per-patch BagNet head: patch [C,ph,pw] -> class logits (no softmax).
template <typename T = float>
Network<T> make_patch_net(const Shape& patch_shape, std::size_t classes, Rng& rng,
                          std::size_t width = 8) {
  Network<T> net(patch_shape);
  net.template add<Conv2d<T>>(patch_shape.at(0), width, 2, 2, 0)
      .template add<Relu<T>>()
      .template add<Conv2d<T>>(width, 2 * width, 2, 2, 0)
      .template add<Relu<T>>()
      .template add<Flatten<T>>()
      .template add<Dense<T>>(2 * width * (patch_shape.at(1) / 4) * (patch_shape.at(2) / 4),
                              classes);
  init_he(net, rng);
  return net;
}

}  // namespace patchdrop
