#include "milnet/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "milnet/rng.hpp"

namespace milnet {

BackboneSpec BackboneSpec::preset(const std::string& name) {
  if (name == "desk") {
    return {64, parse_layers("conv:8:3:1:1,relu,pool:2:2,conv:16:3:1:1,relu,pool:2:2,"
                             "conv:32:3:1:1,relu,pool:2:2,pool:2:2")};
  }
  if (name == "tiny") {
    return {32, parse_layers("conv:4:3:1:1,relu,pool:2:2,conv:8:3:1:1,relu,pool:2:2,pool:2:2")};
  }
  if (name == "paper") {
    // AlexNet convolutional stack on one input channel.
    return {224, parse_layers("conv:96:11:4:2,relu,pool:3:2,conv:256:5:1:2,relu,pool:3:2,"
                              "conv:384:3:1:1,relu,conv:384:3:1:1,relu,conv:256:3:1:1,relu,pool:3:2")};
  }
  throw std::invalid_argument("unknown backbone preset '" + name + "' (expected desk, tiny or paper)");
}

std::string BackboneSpec::layers_text() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) os << ',';
    std::visit(
        [&os](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvLayer>) {
            os << "conv:" << l.out_channels << ':' << l.kernel << ':' << l.stride << ':' << l.pad;
          } else if constexpr (std::is_same_v<T, PoolLayer>) {
            os << "pool:" << l.window << ':' << l.stride;
          } else {
            os << "relu";
          }
        },
        layers[i]);
  }
  return os.str();
}

namespace {
std::vector<std::size_t> split_numbers(const std::string& item, std::size_t expected) {
  std::vector<std::size_t> out;
  std::istringstream is(item);
  std::string tok;
  std::getline(is, tok, ':');  // layer kind
  while (std::getline(is, tok, ':')) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok.empty()) throw std::invalid_argument("bad number in layer '" + item + "'");
    out.push_back(v);
  }
  if (out.size() != expected) throw std::invalid_argument("layer '" + item + "' expects " + std::to_string(expected) + " fields");
  return out;
}
}  // namespace

std::vector<Layer> BackboneSpec::parse_layers(const std::string& text) {
  std::vector<Layer> layers;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.erase(item.begin());
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.pop_back();
    if (item == "relu") {
      layers.emplace_back(ReluLayer{});
    } else if (item.rfind("conv:", 0) == 0) {
      const auto v = split_numbers(item, 4);
      if (v[0] == 0 || v[1] == 0 || v[2] == 0) throw std::invalid_argument("conv layer '" + item + "' needs positive sizes");
      layers.emplace_back(ConvLayer{v[0], v[1], v[2], v[3]});
    } else if (item.rfind("pool:", 0) == 0) {
      const auto v = split_numbers(item, 2);
      if (v[0] == 0 || v[1] == 0) throw std::invalid_argument("pool layer '" + item + "' needs positive sizes");
      layers.emplace_back(PoolLayer{v[0], v[1]});
    } else {
      throw std::invalid_argument("unknown layer '" + item + "'");
    }
  }
  if (layers.empty()) throw std::invalid_argument("backbone has no layers");
  return layers;
}

BackboneSpec::OutputShape BackboneSpec::output_shape() const {
  if (input_size == 0) throw std::invalid_argument("backbone input size must be positive");
  OutputShape s{1, input_size, input_size};
  for (const auto& layer : layers) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      if (s.height + 2 * c->pad < c->kernel || s.width + 2 * c->pad < c->kernel) {
        throw std::invalid_argument("backbone: conv kernel " + std::to_string(c->kernel) + " exceeds " +
                                    std::to_string(s.height) + "x" + std::to_string(s.width) + " input");
      }
      s.height = (s.height + 2 * c->pad - c->kernel) / c->stride + 1;
      s.width = (s.width + 2 * c->pad - c->kernel) / c->stride + 1;
      s.channels = c->out_channels;
    } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      if (p->window > s.height || p->window > s.width) {
        throw std::invalid_argument("backbone: pool window " + std::to_string(p->window) + " exceeds " +
                                    std::to_string(s.height) + "x" + std::to_string(s.width) + " input");
      }
      s.height = (s.height - p->window) / p->stride + 1;
      s.width = (s.width - p->window) / p->stride + 1;
    }
  }
  return s;
}

std::size_t ModelParams::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw std::out_of_range("no parameter named '" + name + "'");
}

ModelParams init_params(const BackboneSpec& spec, std::uint64_t seed) {
  const auto out_shape = spec.output_shape();
  Rng rng = make_stream(seed, {tag(StreamPurpose::kInit)});
  ModelParams p;
  auto glorot = [&rng](Shape shape, double fan_in, double fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng);
    return t;
  };
  std::size_t channels = 1, conv_index = 0;
  for (const auto& layer : spec.layers) {
    const auto* c = std::get_if<ConvLayer>(&layer);
    if (!c) continue;
    const double area = double(c->kernel * c->kernel);
    p.names.push_back("conv" + std::to_string(conv_index) + ".weight");
    p.values.push_back(glorot(Shape{c->out_channels, channels, c->kernel, c->kernel}, channels * area,
                              c->out_channels * area));
    p.names.push_back("conv" + std::to_string(conv_index) + ".bias");
    p.values.emplace_back(Shape{c->out_channels}, 0.0);
    channels = c->out_channels;
    ++conv_index;
  }
  p.names.push_back("response.weight");
  p.values.push_back(glorot(Shape{out_shape.channels}, double(out_shape.channels), 1.0));
  p.names.push_back("response.bias");
  p.values.emplace_back(Shape{1}, 0.0);
  return p;
}

Tensor images_to_tensor(const std::vector<const GrayImage*>& images, std::size_t size) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  Tensor t(Shape{images.size(), 1, size, size});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const GrayImage& img = *images[n];
    if (img.width != size || img.height != size) {
      throw std::invalid_argument("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                  " does not match backbone input " + std::to_string(size) + "x" + std::to_string(size));
    }
    for (std::size_t i = 0; i < img.pixels.size(); ++i) t[n * size * size + i] = (img.pixels[i] - 127.5) / 127.5;
  }
  return t;
}

Var forward_backbone(const BackboneSpec& spec, std::span<const Var> params, Var images) {
  const Tensor& x = images.value();
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != spec.input_size || x.dim(3) != spec.input_size) {
    throw std::invalid_argument("backbone expects [N,1," + std::to_string(spec.input_size) + "," +
                                std::to_string(spec.input_size) + "] input, got " + shape_str(x.shape()));
  }
  Var h = images;
  std::size_t next = 0;
  for (const auto& layer : spec.layers) {
    if (const auto* c = std::get_if<ConvLayer>(&layer)) {
      if (next + 1 >= params.size()) throw std::invalid_argument("backbone: missing conv parameters");
      h = ops::conv2d(h, params[next], {c->stride, c->pad});
      h = ops::add_channel_bias(h, params[next + 1]);
      next += 2;
    } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      h = ops::maxpool2d(h, p->window, p->stride);
    } else {
      h = ops::relu(h);
    }
  }
  return h;
}

Var instance_responses(Var features, Var a, Var b) {
  Var logits = ops::affine_channel(features, a, b);
  const Shape& s = logits.shape();
  return ops::reshape(ops::sigmoid(logits), Shape{s[0], s[1] * s[2]});
}

ForwardPass forward(Graph& g, const BackboneSpec& spec, const ModelParams& params, const Tensor& images,
                    bool requires_grad) {
  ForwardPass pass{{}, {}, {}, {}};
  for (const auto& v : params.values) pass.params.push_back(g.leaf(v, requires_grad));
  Var x = g.leaf(images, false);
  const std::size_t n = pass.params.size();
  if (n < 2) throw std::invalid_argument("model has no response parameters");
  pass.features = forward_backbone(spec, std::span<const Var>(pass.params).first(n - 2), x);
  pass.responses = instance_responses(pass.features, pass.params[n - 2], pass.params[n - 1]);
  pass.ranked = ops::sort_descending(pass.responses);
  return pass;
}

std::vector<ResponseMap> response_maps(const BackboneSpec& spec, const ModelParams& params, const Tensor& images) {
  Graph g;
  const ForwardPass pass = forward(g, spec, params, images, false);
  const Tensor& f = pass.features.value();
  const std::size_t hf = f.dim(2), wf = f.dim(3), m = hf * wf;
  const Tensor& r = pass.responses.value();
  std::vector<ResponseMap> maps(f.dim(0));
  for (std::size_t n = 0; n < maps.size(); ++n) {
    maps[n].grid_h = hf;
    maps[n].grid_w = wf;
    maps[n].values.assign(r.raw() + n * m, r.raw() + (n + 1) * m);
  }
  return maps;
}

RankedResponses rank_responses(const ResponseMap& map) {
  Graph g;
  Var v = g.leaf(Tensor::vector(map.values));
  auto sorted = ops::sort_descending(v);
  const auto data = sorted.sorted.value().data();
  return {std::vector<double>(data.begin(), data.end()), std::move(sorted.perm)};
}

}  // namespace milnet
