#include "milnet/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "milnet/metrics.hpp"
#include "milnet/rng.hpp"

namespace milnet {

std::vector<Sample> prepare_samples(const Manifest& manifest, std::size_t input_size) {
  std::vector<Sample> out;
  out.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    PreparedImage p = prepare(read_image(rec.path), rec.mass, input_size);
    out.push_back(Sample{std::move(p.image), rec.label, p.mass});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

const std::vector<std::string>& TrainConfig::known_keys() {
  static const std::vector<std::string> keys{"head",  "k",         "k_grid",    "mu",         "lambda",
                                             "lr",    "beta1",     "beta2",     "eps",        "epochs",
                                             "batch", "seed",      "preset",    "weight_mode", "flip_prob",
                                             "shift_frac", "rotate_deg", "cutout_frac"};
  return keys;
}

const std::map<std::string, std::string>& TrainConfig::key_docs() {
  static const std::map<std::string, std::string> docs{
      {"head", "max_pool | label_assign | sparse (default max_pool)"},
      {"k", "label_assign only: top-k patches take the bag label (default 4)"},
      {"k_grid", "label_assign only: candidates for select-k, comma separated (default 4,8,12,16)"},
      {"mu", "sparse only: L1 weight on ranked responses (default 1e-5)"},
      {"lambda", "L2 weight on all parameters (default 1e-5; 5e-6 for sparse)"},
      {"lr", "Adam learning rate (default 0.001)"},
      {"beta1", "Adam first-moment decay (default 0.9)"},
      {"beta2", "Adam second-moment decay (default 0.999)"},
      {"eps", "Adam epsilon (default 1e-8)"},
      {"epochs", "training epochs (default 50)"},
      {"batch", "minibatch size (default 8; 16 for the paper preset)"},
      {"seed", "root seed for init, shuffling, augmentation and folds (default 1)"},
      {"preset", "backbone: desk | tiny | paper (default desk)"},
      {"weight_mode", "bag class weights: balanced | literal (default balanced)"},
      {"flip_prob", "horizontal flip probability (default 0.5)"},
      {"shift_frac", "max shift as a fraction of image size (default 0.1)"},
      {"rotate_deg", "max rotation in degrees (default 45)"},
      {"cutout_frac", "zeroed square side as a fraction of image size (default 50/224)"},
  };
  return docs;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  if (epochs == 0) throw std::invalid_argument("epochs must be at least 1");
  if (batch_size == 0) throw std::invalid_argument("batch must be at least 1");
  augment.validate();
  const auto shape = BackboneSpec::preset(preset).output_shape();
  const std::size_t m = shape.height * shape.width;
  if (mil.m != 0 && mil.m != m) throw std::invalid_argument("configured m does not match the backbone");
  MilConfig check = mil;
  check.m = m;
  check.validate();
  if (mil.head == HeadKind::kLabelAssign) {
    if (k_grid.empty()) throw std::invalid_argument("k_grid is empty");
    for (auto k : k_grid) {
      if (k == 0 || k > m) {
        throw std::invalid_argument("k_grid entry " + std::to_string(k) + " is outside [1, m = " + std::to_string(m) + "]");
      }
    }
  }
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  kv.require_known(known_keys());
  TrainConfig c;
  if (kv.has("head")) c.mil.head = parse_head(kv.get("head"));
  const bool label_assign = c.mil.head == HeadKind::kLabelAssign;
  const bool sparse = c.mil.head == HeadKind::kSparse;
  for (const char* key : {"k", "k_grid"}) {
    if (kv.has(key) && !label_assign) {
      throw std::invalid_argument(std::string("key '") + key + "' applies only to head = label_assign");
    }
  }
  if (kv.has("mu") && !sparse) throw std::invalid_argument("key 'mu' applies only to head = sparse");

  c.mil.lambda = sparse ? 5e-6 : 1e-5;
  c.mil.mu = sparse ? 1e-5 : 0.0;
  if (kv.has("k")) c.mil.k = kv.get_uint("k");
  if (kv.has("k_grid")) {
    c.k_grid.clear();
    for (auto k : kv.get_uint_list("k_grid")) c.k_grid.push_back(k);
  }
  if (kv.has("mu")) c.mil.mu = kv.get_double("mu");
  if (kv.has("lambda")) c.mil.lambda = kv.get_double("lambda");
  if (kv.has("weight_mode")) c.mil.weight_mode = parse_weight_mode(kv.get("weight_mode"));
  if (kv.has("lr")) c.learning_rate = kv.get_double("lr");
  if (kv.has("beta1")) c.beta1 = kv.get_double("beta1");
  if (kv.has("beta2")) c.beta2 = kv.get_double("beta2");
  if (kv.has("eps")) c.eps = kv.get_double("eps");
  if (kv.has("epochs")) c.epochs = kv.get_uint("epochs");
  if (kv.has("seed")) c.seed = kv.get_uint("seed");
  if (kv.has("preset")) c.preset = kv.get("preset");
  c.batch_size = c.preset == "paper" ? 16 : 8;
  if (kv.has("batch")) c.batch_size = kv.get_uint("batch");
  if (kv.has("flip_prob")) c.augment.flip_prob = kv.get_double("flip_prob");
  if (kv.has("shift_frac")) c.augment.shift_frac = kv.get_double("shift_frac");
  if (kv.has("rotate_deg")) c.augment.rotate_deg_max = kv.get_double("rotate_deg");
  if (kv.has("cutout_frac")) c.augment.cutout_frac = kv.get_double("cutout_frac");

  const auto shape = BackboneSpec::preset(c.preset).output_shape();
  c.mil.m = shape.height * shape.width;
  c.validate();
  return c;
}

namespace {
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "head = " << to_string(mil.head) << '\n';
  if (mil.head == HeadKind::kLabelAssign) {
    os << "k = " << mil.k << '\n' << "k_grid = ";
    for (std::size_t i = 0; i < k_grid.size(); ++i) os << (i ? "," : "") << k_grid[i];
    os << '\n';
  }
  if (mil.head == HeadKind::kSparse) os << "mu = " << fmt_double(mil.mu) << '\n';
  os << "lambda = " << fmt_double(mil.lambda) << '\n'
     << "weight_mode = " << to_string(mil.weight_mode) << '\n'
     << "lr = " << fmt_double(learning_rate) << '\n'
     << "beta1 = " << fmt_double(beta1) << '\n'
     << "beta2 = " << fmt_double(beta2) << '\n'
     << "eps = " << fmt_double(eps) << '\n'
     << "epochs = " << epochs << '\n'
     << "batch = " << batch_size << '\n'
     << "seed = " << seed << '\n'
     << "preset = " << preset << '\n'
     << "flip_prob = " << fmt_double(augment.flip_prob) << '\n'
     << "shift_frac = " << fmt_double(augment.shift_frac) << '\n'
     << "rotate_deg = " << fmt_double(augment.rotate_deg_max) << '\n'
     << "cutout_frac = " << fmt_double(augment.cutout_frac) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Optimizer

AdamState zero_moments(const ModelParams& params) {
  AdamState s;
  for (const auto& t : params.values) {
    s.m.emplace_back(t.shape(), 0.0);
    s.v.emplace_back(t.shape(), 0.0);
  }
  return s;
}

void adam_step(TrainState& state, const GradMap& grads, double lr, double beta1, double beta2, double eps) {
  ModelParams& p = state.params;
  AdamState& a = state.adam;
  if (a.m.size() != p.size() || a.v.size() != p.size()) throw std::logic_error("optimizer moments do not match parameters");
  std::vector<const Tensor*> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto it = grads.find(p.names[i]);
    if (it == grads.end()) throw std::invalid_argument("missing gradient for parameter '" + p.names[i] + "'");
    if (it->second.shape() != p.values[i].shape()) {
      throw std::invalid_argument("gradient for '" + p.names[i] + "' has shape " + shape_str(it->second.shape()) +
                                  ", parameter has " + shape_str(p.values[i].shape()));
    }
    g[i] = &it->second;
  }
  ++a.step;
  const double c1 = 1.0 - std::pow(beta1, double(a.step));
  const double c2 = 1.0 - std::pow(beta2, double(a.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    Tensor& w = p.values[i];
    Tensor& m = a.m[i];
    Tensor& v = a.v[i];
    const Tensor& gi = *g[i];
    for (std::size_t j = 0; j < w.numel(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * gi[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * gi[j] * gi[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr char kMagic[4] = {'M', 'I', 'L', 'N'};

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  out.push_back('\0');  // dtype: f64 little endian
  for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= T(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string Checkpoint::serialize() const {
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kVersion);
  std::string blob = config.to_text();
  blob += "backbone_input = " + std::to_string(backbone.input_size) + "\n";
  blob += "backbone_layers = " + backbone.layers_text() + "\n";
  put_le<std::uint64_t>(out, blob.size());
  out += blob;
  const auto& p = state.params;
  for (std::size_t i = 0; i < p.size(); ++i) put_tensor(out, p.names[i], p.values[i]);
  for (std::size_t i = 0; i < state.adam.m.size(); ++i) put_tensor(out, "adam.m." + p.names[i], state.adam.m[i]);
  for (std::size_t i = 0; i < state.adam.v.size(); ++i) put_tensor(out, "adam.v." + p.names[i], state.adam.v[i]);
  put_tensor(out, "adam.step", Tensor::scalar(double(state.adam.step)));
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(4) != std::string(kMagic, 4)) throw std::runtime_error("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const std::string blob = r.take(r.get<std::uint64_t>());

  std::string config_text, backbone_text;
  {
    std::istringstream is(blob);
    std::string line;
    while (std::getline(is, line)) (line.rfind("backbone_", 0) == 0 ? backbone_text : config_text) += line + "\n";
  }
  const KeyValues bkv = KeyValues::parse(backbone_text);
  Checkpoint ck;
  ck.config = TrainConfig::from_key_values(KeyValues::parse(config_text));
  ck.backbone.input_size = bkv.get_uint("backbone_input");
  ck.backbone.layers = BackboneSpec::parse_layers(bkv.get("backbone_layers"));

  std::map<std::string, Tensor> tensors;
  std::vector<std::string> order;
  while (!r.done()) {
    std::string name = r.take(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (r.get<std::uint8_t>() != 0) throw std::runtime_error("tensor '" + name + "': unsupported dtype");
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(r.get<std::uint64_t>());
    if (tensors.count(name)) throw std::runtime_error("duplicate tensor '" + name + "'");
    order.push_back(name);
    tensors.emplace(name, Tensor(std::move(shape), std::move(data)));
  }
  for (const auto& name : order) {
    if (name.rfind("adam.", 0) == 0) continue;
    ck.state.params.names.push_back(name);
    ck.state.params.values.push_back(tensors.at(name));
  }
  const ModelParams expected = init_params(ck.backbone, 0);
  if (expected.names != ck.state.params.names) throw std::runtime_error("checkpoint parameters do not match its backbone");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected.values[i].shape() != ck.state.params.values[i].shape()) {
      throw std::runtime_error("parameter '" + expected.names[i] + "' has the wrong shape");
    }
  }
  for (const auto& name : ck.state.params.names) {
    auto m = tensors.find("adam.m." + name), v = tensors.find("adam.v." + name);
    if (m == tensors.end() || v == tensors.end()) throw std::runtime_error("missing optimizer moments for '" + name + "'");
    ck.state.adam.m.push_back(m->second);
    ck.state.adam.v.push_back(v->second);
  }
  auto step = tensors.find("adam.step");
  if (step == tensors.end()) throw std::runtime_error("missing adam.step");
  ck.state.adam.step = static_cast<std::uint64_t>(step->second.item());
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return deserialize(bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string metrics_csv(const std::vector<EpochMetrics>& log) {
  std::ostringstream os;
  os << "epoch,train_loss,val_auc,val_acc\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_auc, e.val_acc);
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Training loop

std::vector<double> predict_scores(const BackboneSpec& spec, const ModelParams& params,
                                   const std::vector<const Sample*>& samples, std::size_t chunk) {
  std::vector<double> scores;
  scores.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    std::vector<const GrayImage*> imgs;
    for (std::size_t i = start; i < end; ++i) imgs.push_back(&samples[i]->image);
    Graph g;
    const ForwardPass pass = forward(g, spec, params, images_to_tensor(imgs, spec.input_size), false);
    const Tensor& ranked = pass.ranked.sorted.value();
    const std::size_t m = ranked.dim(1);
    for (std::size_t n = 0; n < imgs.size(); ++n) scores.push_back(infer_bag(ranked.data().subspan(n * m, m)));
  }
  return scores;
}

double loss_and_grads(const BackboneSpec& spec, const ModelParams& params, const std::vector<const Sample*>& batch,
                      const std::vector<const GrayImage*>& images, const MilConfig& mil, const BagWeights& weights,
                      GradMap& grads) {
  std::vector<int> labels;
  for (const auto* s : batch) labels.push_back(s->label);
  Graph g;
  const ForwardPass pass = forward(g, spec, params, images_to_tensor(images, spec.input_size), true);
  Var loss = mil_loss(pass.ranked.sorted, labels, mil, weights, pass.params);
  const double value = loss.value().item();
  if (!std::isfinite(value)) return value;
  g.backward(loss);
  grads.clear();
  for (std::size_t i = 0; i < params.size(); ++i) grads.emplace(params.names[i], pass.params[i].grad());
  return value;
}

namespace {

std::vector<int> labels_of(const std::vector<const Sample*>& set) {
  std::vector<int> out;
  for (const auto* s : set) out.push_back(s->label);
  return out;
}

}  // namespace

TrainResult train(const std::vector<const Sample*>& train_set, const std::vector<const Sample*>& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const BackboneSpec spec = BackboneSpec::preset(config.preset);
  const auto out_shape = spec.output_shape();
  MilConfig mil = config.mil;
  mil.m = out_shape.height * out_shape.width;

  const auto train_labels = labels_of(train_set);
  const auto n_pos = static_cast<std::size_t>(std::count(train_labels.begin(), train_labels.end(), 1));
  if (n_pos == 0 || n_pos == train_set.size()) {
    throw std::invalid_argument("training set needs both classes (" + std::to_string(n_pos) + " positive of " +
                                std::to_string(train_set.size()) + ")");
  }
  const BagWeights weights = bag_weights(n_pos, train_set.size(), mil.head == HeadKind::kLabelAssign ? mil.k : 1,
                                         mil.m, mil.weight_mode);
  const auto val_labels = labels_of(val_set);

  TrainState state{init_params(spec, config.seed), {}};
  state.adam = zero_moments(state.params);

  TrainResult result;
  result.best.config = config;
  result.best.backbone = spec;
  double best_auc = -1.0;
  std::size_t global_step = 0;

  std::vector<std::size_t> order(train_set.size());
  std::vector<GrayImage> augmented(train_set.size());
  GradMap grads;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = make_stream(config.seed, {tag(StreamPurpose::kShuffle), epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t i = 0; i < train_set.size(); ++i) {
      Rng aug_rng = make_stream(config.seed, {tag(StreamPurpose::kAugment), epoch, i});
      augmented[i] = augment(train_set[i]->image, config.augment, aug_rng);
    }

    double epoch_loss = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const Sample*> batch;
      std::vector<const GrayImage*> images;
      for (std::size_t j = start; j < end; ++j) {
        batch.push_back(train_set[order[j]]);
        images.push_back(&augmented[order[j]]);
      }
      ++global_step;
      const double loss = loss_and_grads(spec, state.params, batch, images, mil, weights, grads);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(global_step));
      }
      adam_step(state, grads, config.learning_rate, config.beta1, config.beta2, config.eps);
      epoch_loss += loss;
      ++steps;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = epoch_loss / double(steps);
    em.val_auc = std::numeric_limits<double>::quiet_NaN();
    em.val_acc = std::numeric_limits<double>::quiet_NaN();
    bool improved = val_set.empty();
    if (!val_set.empty()) {
      const auto scores = predict_scores(spec, state.params, val_set);
      em.val_acc = accuracy(scores, val_labels);
      const auto val_pos = std::count(val_labels.begin(), val_labels.end(), 1);
      const bool both = val_pos > 0 && val_pos < std::ptrdiff_t(val_labels.size());
      em.val_auc = both ? auc(scores, val_labels) : std::numeric_limits<double>::quiet_NaN();
      const double key = both ? em.val_auc : em.val_acc;
      improved = key > best_auc;
      if (improved) best_auc = key;
    }
    if (improved) {
      result.best.state = state;
      result.best_epoch = epoch;
    }
    result.log.push_back(em);
    result.last_step_loss = epoch_loss / double(steps);
    if (on_epoch) on_epoch(em);
  }
  return result;
}

SelectKResult select_k(const std::vector<const Sample*>& train_set, const std::vector<const Sample*>& val_set,
                       const TrainConfig& config, const EpochCallback& on_epoch) {
  if (config.mil.head != HeadKind::kLabelAssign) throw std::invalid_argument("select-k applies only to head = label_assign");
  config.validate();
  if (val_set.empty()) throw std::invalid_argument("select-k needs a validation set");
  SelectKResult best;
  double best_auc = -1.0;
  auto grid = config.k_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  for (auto k : grid) {
    TrainConfig c = config;
    c.mil.k = k;
    TrainResult r = train(train_set, val_set, c, on_epoch);
    const double score = r.log.at(r.best_epoch - 1).val_auc;
    best.val_auc_by_k.emplace_back(k, score);
    if (score > best_auc || best.k == 0) {
      best_auc = score;
      best.k = k;
      best.result = std::move(r);
    }
  }
  return best;
}

}  // namespace milnet
