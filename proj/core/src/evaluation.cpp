#include "milnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "milnet/rng.hpp"

namespace milnet {

FoldPlan::Run FoldPlan::run(std::size_t test_fold) const {
  if (test_fold >= n_folds) throw std::out_of_range("fold " + std::to_string(test_fold) + " out of range");
  Run r;
  r.test_fold = test_fold;
  r.val_fold = (test_fold + 1) % n_folds;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == r.test_fold) {
      r.test.push_back(i);
    } else if (fold_of[i] == r.val_fold) {
      r.val.push_back(i);
    } else {
      r.train.push_back(i);
    }
  }
  return r;
}

FoldPlan make_folds(std::span<const int> labels, std::size_t n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw std::invalid_argument("need at least 2 folds");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("labels must be 0 or 1");
    (labels[i] == 1 ? pos : neg).push_back(i);
  }
  if (pos.size() < n_folds || neg.size() < n_folds) {
    throw std::invalid_argument("each class needs at least " + std::to_string(n_folds) + " samples (have " +
                                std::to_string(pos.size()) + " positive, " + std::to_string(neg.size()) + " negative)");
  }
  Rng pos_rng = make_stream(seed, {tag(StreamPurpose::kFolds), 1});
  Rng neg_rng = make_stream(seed, {tag(StreamPurpose::kFolds), 0});
  std::shuffle(pos.begin(), pos.end(), pos_rng);
  std::shuffle(neg.begin(), neg.end(), neg_rng);
  FoldPlan plan;
  plan.n_folds = n_folds;
  plan.fold_of.assign(labels.size(), 0);
  std::size_t next = 0;
  for (auto i : pos) plan.fold_of[i] = next++ % n_folds;
  for (auto i : neg) plan.fold_of[i] = next++ % n_folds;
  return plan;
}

BagMode parse_bag_mode(const std::string& text) {
  if (text == "average") return BagMode::kAverage;
  if (text == "vote") return BagMode::kVote;
  throw std::invalid_argument("unknown bagging mode '" + text + "' (expected average or vote)");
}

std::vector<double> bagging(const std::vector<std::vector<double>>& model_scores, BagMode mode) {
  if (model_scores.empty()) throw std::invalid_argument("bagging needs at least one model");
  const std::size_t n = model_scores.front().size();
  for (const auto& s : model_scores) {
    if (s.size() != n) throw std::invalid_argument("bagging: score lists differ in length");
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (const auto& s : model_scores) acc += mode == BagMode::kAverage ? s[i] : (s[i] >= 0.5 ? 1.0 : 0.0);
    out[i] = acc / double(model_scores.size());
  }
  return out;
}

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_std of empty list");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / double(values.size() - 1))};
}

CvSummary cross_validate(const std::vector<Sample>& samples, const TrainConfig& config, const CvOptions& options) {
  config.validate();
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  const FoldPlan plan = make_folds(labels, options.n_folds, config.seed);
  const BackboneSpec spec = BackboneSpec::preset(config.preset);

  CvSummary summary;
  summary.folds.resize(options.n_folds);
  auto pick = [&samples](const std::vector<std::size_t>& idx) {
    std::vector<const Sample*> out;
    for (auto i : idx) out.push_back(&samples[i]);
    return out;
  };
  auto run_fold = [&](std::size_t t) {
    const auto run = plan.run(t);
    const auto train_set = pick(run.train), val_set = pick(run.val), test_set = pick(run.test);
    EpochCallback cb;
    if (options.on_epoch) cb = [&options, t](const EpochMetrics& m) { options.on_epoch(t, m); };
    FoldResult fr;
    fr.fold = t;
    if (options.select_k && config.mil.head == HeadKind::kLabelAssign) {
      SelectKResult sk = select_k(train_set, val_set, config, cb);
      fr.k = sk.k;
      fr.training = std::move(sk.result);
    } else {
      fr.k = config.mil.head == HeadKind::kLabelAssign ? config.mil.k : 0;
      fr.training = train(train_set, val_set, config, cb);
    }
    fr.test_indices = run.test;
    fr.test_scores = predict_scores(spec, fr.training.best.state.params, test_set);
    std::vector<int> test_labels;
    for (const auto* s : test_set) test_labels.push_back(s->label);
    fr.accuracy = accuracy(fr.test_scores, test_labels);
    fr.auc = auc(fr.test_scores, test_labels);
    summary.folds[t] = std::move(fr);
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, options.n_folds));
  if (workers == 1) {
    for (std::size_t t = 0; t < options.n_folds; ++t) run_fold(t);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t t = w; t < options.n_folds; t += workers) run_fold(t);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<double> accs, aucs;
  for (const auto& f : summary.folds) {
    accs.push_back(f.accuracy);
    aucs.push_back(f.auc);
  }
  std::tie(summary.mean_accuracy, summary.std_accuracy) = mean_std(accs);
  std::tie(summary.mean_auc, summary.std_auc) = mean_std(aucs);
  return summary;
}

std::string cv_summary_csv(const CvSummary& summary) {
  std::ostringstream os;
  os << "fold,accuracy,auc\n";
  char buf[96];
  for (const auto& f : summary.folds) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", f.fold, f.accuracy, f.auc);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.17g,%.17g\n", summary.mean_accuracy, summary.mean_auc);
  os << buf;
  std::snprintf(buf, sizeof(buf), "std,%.17g,%.17g\n", summary.std_accuracy, summary.std_auc);
  os << buf;
  return os.str();
}

Histogram histogram(const std::string& quantity, std::span<const double> values, std::size_t bins) {
  Histogram h;
  h.quantity = quantity;
  if (values.empty()) return h;
  if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, hi = *mx;
  if (lo == hi) bins = 1;
  const double width = (hi - lo) / double(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    h.lo.push_back(lo + width * double(b));
    h.hi.push_back(b + 1 == bins ? hi : lo + width * double(b + 1));
  }
  h.count.assign(bins, 0);
  for (double v : values) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - lo) / width) : 0;
    h.count[std::min(b, bins - 1)]++;
  }
  return h;
}

DatasetStats dataset_stats(const Manifest& manifest, std::size_t bins) {
  DatasetStats st;
  std::vector<double> iw, ih, mw, mh;
  double frac = 0.0;
  for (const auto& r : manifest.records) {
    std::size_t w = 0, h = 0;
    read_image_size(r.path, w, h);
    iw.push_back(double(w));
    ih.push_back(double(h));
    if (r.mass) {
      mw.push_back(double(r.mass->w));
      mh.push_back(double(r.mass->h));
      frac += double(r.mass->w * r.mass->h) / double(w * h);
    }
  }
  st.images = iw.size();
  st.masses = mw.size();
  st.histograms = {histogram("image_width", iw, bins), histogram("image_height", ih, bins),
                   histogram("mass_width", mw, bins), histogram("mass_height", mh, bins)};
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  };
  st.mean_image_width = mean(iw);
  st.mean_image_height = mean(ih);
  st.mean_mass_width = mean(mw);
  st.mean_mass_height = mean(mh);
  st.mass_area_fraction = mw.empty() ? 0.0 : frac / double(mw.size());
  return st;
}

std::string histograms_csv(const DatasetStats& stats) {
  std::ostringstream os;
  os << "quantity,bin_lo,bin_hi,count\n";
  char buf[128];
  for (const auto& h : stats.histograms) {
    for (std::size_t b = 0; b < h.count.size(); ++b) {
      std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%zu\n", h.quantity.c_str(), h.lo[b], h.hi[b], h.count[b]);
      os << buf;
    }
  }
  return os.str();
}

std::string stats_summary_csv(const DatasetStats& stats) {
  std::ostringstream os;
  os << "statistic,value\n";
  char buf[96];
  auto row = [&](const char* name, double v) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g\n", name, v);
    os << buf;
  };
  row("images", double(stats.images));
  row("masses", double(stats.masses));
  row("mean_image_width", stats.mean_image_width);
  row("mean_image_height", stats.mean_image_height);
  row("mean_mass_width", stats.mean_mass_width);
  row("mean_mass_height", stats.mean_mass_height);
  row("mass_area_fraction", stats.mass_area_fraction);
  return os.str();
}

GrayImage upsample_nearest(const ResponseMap& map, std::size_t width, std::size_t height) {
  GrayImage out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t gy = y * map.grid_h / height;
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t gx = x * map.grid_w / width;
      out.at(x, y) = map.values[gy * map.grid_w + gx];
    }
  }
  return out;
}

Box cell_rect(const ResponseMap& map, std::size_t index, std::size_t width, std::size_t height) {
  const std::size_t gy = index / map.grid_w, gx = index % map.grid_w;
  // Pixels p with floor(p * grid / size) == g are [ceil(g * size / grid), ceil((g + 1) * size / grid)).
  auto first = [](std::size_t g, std::size_t size, std::size_t grid) { return (g * size + grid - 1) / grid; };
  const std::size_t x0 = first(gx, width, map.grid_w), x1 = first(gx + 1, width, map.grid_w);
  const std::size_t y0 = first(gy, height, map.grid_h), y1 = first(gy + 1, height, map.grid_h);
  return {x0, y0, x1 - x0, y1 - y0};
}

bool argmax_hits(const ResponseMap& map, const Box& mass, std::size_t width, std::size_t height) {
  const auto best = static_cast<std::size_t>(
      std::distance(map.values.begin(), std::max_element(map.values.begin(), map.values.end())));
  return cell_rect(map, best, width, height).intersects(mass);
}

ResponseExport export_response_map(const Checkpoint& ckpt, const GrayImage& prepared) {
  const Tensor input = images_to_tensor({&prepared}, ckpt.backbone.input_size);
  ResponseExport ex;
  ex.map = response_maps(ckpt.backbone, ckpt.state.params, input).front();
  ex.grid = GrayImage(ex.map.grid_w, ex.map.grid_h);
  for (std::size_t i = 0; i < ex.map.values.size(); ++i) ex.grid.pixels[i] = 255.0 * ex.map.values[i];
  ex.overlay = upsample_nearest(ex.map, prepared.width, prepared.height);
  for (auto& v : ex.overlay.pixels) v *= 255.0;
  return ex;
}

void write_response_export(const ResponseExport& ex, const GrayImage& prepared, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "responses.csv");
  if (!csv) throw std::runtime_error("cannot write " + (dir / "responses.csv").string());
  char buf[40];
  for (std::size_t y = 0; y < ex.map.grid_h; ++y) {
    for (std::size_t x = 0; x < ex.map.grid_w; ++x) {
      std::snprintf(buf, sizeof(buf), "%.17g", ex.map.values[y * ex.map.grid_w + x]);
      csv << (x ? "," : "") << buf;
    }
    csv << '\n';
  }
  write_pgm(dir / "responses.pgm", ex.grid);
  write_pgm(dir / "overlay.pgm", ex.overlay);
  write_pgm(dir / "input.pgm", prepared);
}

}  // namespace milnet
