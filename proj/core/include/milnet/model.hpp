#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "milnet/autodiff.hpp"
#include "milnet/image.hpp"
#include "milnet/ops.hpp"

namespace milnet {

struct ConvLayer {
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool operator==(const ConvLayer&) const = default;
};

struct PoolLayer {
  std::size_t window = 0;
  std::size_t stride = 0;
  bool operator==(const PoolLayer&) const = default;
};

struct ReluLayer {
  bool operator==(const ReluLayer&) const = default;
};

using Layer = std::variant<ConvLayer, PoolLayer, ReluLayer>;

/// Convolutional backbone over a single-channel square input.
struct BackboneSpec {
  std::size_t input_size = 0;
  std::vector<Layer> layers;

  /// "desk" (64 -> 32x4x4), "tiny" (32 -> 8x4x4) or "paper" (AlexNet conv stack, 224 -> 256x6x6).
  static BackboneSpec preset(const std::string& name);

  /// Compact layer list, e.g. "conv:8:3:1:1,relu,pool:2:2".
  std::string layers_text() const;
  static std::vector<Layer> parse_layers(const std::string& text);

  struct OutputShape {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
  };
  /// Throws if any layer would produce an empty spatial extent.
  OutputShape output_shape() const;

  bool operator==(const BackboneSpec&) const = default;
};

/// Named trainable tensors in a fixed order: per conv layer "convI.weight" and
/// "convI.bias", then "response.weight" (a) and "response.bias" (b).
struct ModelParams {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  std::size_t size() const { return names.size(); }
  std::size_t index_of(const std::string& name) const;
  const Tensor& get(const std::string& name) const { return values[index_of(name)]; }
  Tensor& get(const std::string& name) { return values[index_of(name)]; }

  bool operator==(const ModelParams&) const = default;
};

/// Glorot-uniform kernels and response weights, zero biases.
ModelParams init_params(const BackboneSpec& spec, std::uint64_t seed);

struct ResponseMap {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<double> values;  // row-major, length grid_h * grid_w
};

struct RankedResponses {
  std::vector<double> sorted;
  std::vector<std::size_t> perm;
};

/// Graph-level view of one forward pass over a batch.
struct ForwardPass {
  std::vector<Var> params;  // bound in ModelParams order
  Var features;             // [N, C, h_f, w_f]
  Var responses;            // [N, m]
  ops::SortResult ranked;   // rows of responses, nonincreasing
};

/// Packs images into an [N, 1, S, S] tensor, mapping intensities [0, 255] to [-1, 1].
Tensor images_to_tensor(const std::vector<const GrayImage*>& images, std::size_t size);

Var forward_backbone(const BackboneSpec& spec, std::span<const Var> params, Var images);

/// r = sigmoid(a . F[:, :, i, j] + b), flattened row-major to [N, m].
Var instance_responses(Var features, Var a, Var b);

ForwardPass forward(Graph& g, const BackboneSpec& spec, const ModelParams& params, const Tensor& images,
                    bool requires_grad);

/// Inference helpers outside of training.
std::vector<ResponseMap> response_maps(const BackboneSpec& spec, const ModelParams& params, const Tensor& images);
RankedResponses rank_responses(const ResponseMap& map);

}  // namespace milnet
