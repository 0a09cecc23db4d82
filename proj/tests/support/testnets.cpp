#include "support/testnets.hpp"

#include <cmath>

#include "featviz/rng.hpp"

namespace featviz::test {

Network make_cross_detector() {
  Network net;
  net.input = InputShape{1, 9, 9};

  ConvLayer conv;
  conv.kernel = Tensor(Shape4{1, 1, 3, 3}, std::vector<float>{
                                               -1.0f, 1.0f, -1.0f,  //
                                               1.0f, 1.0f, 1.0f,    //
                                               -1.0f, 1.0f, -1.0f,  //
                                           });
  conv.bias = {0.0f};
  net.layers.emplace_back(std::move(conv));
  net.layers.emplace_back(ReluLayer{});
  net.layers.emplace_back(GlobalAvgPoolLayer{});
  net.layers.emplace_back(FlattenLayer{});

  DenseLayer dense;
  dense.out_features = 2;
  dense.in_features = 1;
  dense.weights = {1.0f, -1.0f};
  dense.bias = {0.0f, 0.05f};
  net.layers.emplace_back(std::move(dense));
  net.layers.emplace_back(SoftmaxLayer{});

  net.labels = {"cross", "background"};
  return net;
}

Tensor make_cross_image() {
  Tensor image(Shape4{1, 1, 9, 9});
  for (index_t d = -1; d <= 1; ++d) {
    image(0, 0, 4 + d, 4) = 1.0f;
    image(0, 0, 4, 4 + d) = 1.0f;
  }
  return image;
}

namespace {

index_t pick(std::mt19937_64& eng, index_t lo, index_t hi) {  // inclusive
  return lo + static_cast<index_t>(eng() % static_cast<std::uint64_t>(hi - lo + 1));
}

std::vector<float> random_weights(std::mt19937_64& eng, index_t count, float scale) {
  std::vector<float> w(static_cast<std::size_t>(count));
  for (auto& v : w) v = uniform_float(eng, -scale, scale);
  return w;
}

}  // namespace

Network random_net(std::uint64_t seed, const RandomNetOptions& options) {
  std::mt19937_64 eng(mix64(seed));
  Network net;
  const index_t extents[] = {6, 8, 9, 12, 16};
  index_t h = extents[eng() % 5];
  index_t w = extents[eng() % 5];
  h = std::min(h, options.max_hw);
  w = std::min(w, options.max_hw);
  index_t c = pick(eng, 1, 3);
  net.input = InputShape{c, h, w};

  const index_t total = pick(eng, options.min_layers, options.max_layers);
  const bool dense_head = options.force_dense_head || total >= 3 || (eng() % 2 == 0);
  const index_t body = dense_head ? std::max<index_t>(0, total - 2) : total;

  bool last_was_activation = false;
  for (index_t i = 0; i < static_cast<index_t>(body); ++i) {
    // menu: 0 conv, 1 activation, 2 maxpool, 3 avgpool, 4 global avg pool
    index_t choice = pick(eng, 0, 4);
    const bool can_pool = h % 2 == 0 && w % 2 == 0 && h >= 4 && w >= 4;
    if (choice == 1 && last_was_activation) choice = 0;
    if ((choice == 2 || choice == 3) && !can_pool) choice = 0;
    if (choice == 2 && !options.allow_maxpool) choice = 3;
    if (choice == 4 && (h == 1 || i + 1 != static_cast<index_t>(body))) choice = 0;

    switch (choice) {
      case 0: {
        const index_t ko = pick(eng, 1, 4);
        const index_t k = (h >= 3 && w >= 3 && eng() % 2 == 0) ? 3 : 1;
        const index_t pad = (k == 3 && eng() % 2 == 0) ? 1 : 0;
        ConvLayer conv;
        const float scale = std::sqrt(3.0f / static_cast<float>(c * k * k));
        conv.kernel = Tensor(Shape4{ko, c, k, k}, random_weights(eng, ko * c * k * k, scale));
        conv.bias = options.bias_free ? std::vector<float>(static_cast<std::size_t>(ko), 0.0f)
                                      : random_weights(eng, ko, 0.1f);
        conv.pad = {pad, pad};
        net.layers.emplace_back(std::move(conv));
        c = ko;
        h = h + 2 * pad - k + 1;
        w = w + 2 * pad - k + 1;
        last_was_activation = false;
        break;
      }
      case 1: {
        if (options.allow_leaky && eng() % 3 == 0) {
          net.layers.emplace_back(LeakyReluLayer{0.1f});
        } else {
          net.layers.emplace_back(ReluLayer{});
        }
        last_was_activation = true;
        break;
      }
      case 2: {
        net.layers.emplace_back(MaxPoolLayer{{2, 2}, {2, 2}});
        h /= 2;
        w /= 2;
        last_was_activation = false;
        break;
      }
      case 3: {
        net.layers.emplace_back(AvgPoolLayer{{2, 2}, {2, 2}});
        h /= 2;
        w /= 2;
        last_was_activation = false;
        break;
      }
      case 4: {
        net.layers.emplace_back(GlobalAvgPoolLayer{});
        h = 1;
        w = 1;
        last_was_activation = false;
        break;
      }
    }
  }

  if (dense_head) {
    net.layers.emplace_back(FlattenLayer{});
    DenseLayer dense;
    dense.in_features = c * h * w;
    dense.out_features = pick(eng, 2, 4);
    const float scale = std::sqrt(3.0f / static_cast<float>(dense.in_features));
    dense.weights = random_weights(eng, dense.out_features * dense.in_features, scale);
    dense.bias = options.bias_free
                     ? std::vector<float>(static_cast<std::size_t>(dense.out_features), 0.0f)
                     : random_weights(eng, dense.out_features, 0.1f);
    net.layers.emplace_back(std::move(dense));
  }
  if (net.layers.empty()) {
    net.layers.emplace_back(ReluLayer{});
  }
  validate(net);
  return net;
}

Tensor random_input(std::uint64_t seed, const InputShape& shape, float low, float high) {
  Tensor t(Shape4{1, shape.c, shape.h, shape.w});
  std::mt19937_64 eng(mix64(seed ^ 0xf00dULL));
  for (index_t i = 0; i < t.size(); ++i) t[i] = uniform_float(eng, low, high);
  return t;
}

}  // namespace featviz::test
