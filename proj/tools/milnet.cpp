// milnet: command-line front end for the MIL pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "milnet/data_io.hpp"
#include "milnet/evaluation.hpp"
#include "milnet/gradcheck.hpp"
#include "milnet/key_values.hpp"
#include "milnet/metrics.hpp"
#include "milnet/training.hpp"

namespace fs = std::filesystem;
using namespace milnet;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

TrainConfig load_config(const std::string& path) {
  try {
    if (path.empty()) return TrainConfig::from_key_values(KeyValues::parse(""));
    return TrainConfig::from_key_values(KeyValues::load(path));
  } catch (const std::exception& e) {
    throw ConfigError(path.empty() ? std::string(e.what()) : path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string scores_csv(const Manifest& manifest, const std::vector<double>& scores) {
  std::ostringstream os;
  os << "path,label,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    os << manifest.records[i].path.string() << ',' << manifest.records[i].label << ',' << fmt(scores[i]) << '\n';
  }
  return os.str();
}

std::string summary_csv(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::ostringstream os;
  os << "statistic,value\n";
  os << "n," << scores.size() << '\n';
  os << "accuracy," << fmt(accuracy(scores, labels)) << '\n';
  bool both = false;
  for (int y : labels) both |= y != labels.front();
  os << "auc," << (both ? fmt(auc(scores, labels)) : std::string("nan")) << '\n';
  return os.str();
}

std::vector<int> labels_of(const std::vector<Sample>& samples) {
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  return labels;
}

std::vector<const Sample*> pointers(const std::vector<Sample>& samples, const std::vector<std::size_t>& idx) {
  std::vector<const Sample*> out;
  for (auto i : idx) out.push_back(&samples[i]);
  return out;
}

void log_epoch(const std::string& prefix, const EpochMetrics& m) {
  std::fprintf(stderr, "%sepoch %zu loss %.6f val_auc %.4f val_acc %.4f\n", prefix.c_str(), m.epoch, m.train_loss,
               m.val_auc, m.val_acc);
}

std::string config_help() {
  std::ostringstream os;
  os << "Config file: one `key = value` per line, `#` comments. Keys:\n";
  const auto& docs = TrainConfig::key_docs();
  for (const auto& key : TrainConfig::known_keys()) os << "  " << key << ": " << docs.at(key) << '\n';
  os << "Synthetic spec keys (synth --spec): image_size, n_pos, n_neg, mass_fraction, lift, noise, texture,\n"
        "  background, seed\n";
  return os.str();
}

std::vector<double> model_scores(const Checkpoint& ckpt, const std::vector<Sample>& samples) {
  std::vector<const Sample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return predict_scores(ckpt.backbone, ckpt.state.params, ptrs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep multi-instance learning for whole-image classification"};
  app.footer(config_help());
  app.require_subcommand(1);

  std::string spec_path, config_path, data_path, out_path, ckpt_path, image_path, mode = "average", module = "all";
  std::vector<std::string> ckpt_paths;
  bool select_k_flag = false;
  std::size_t workers = 1, draws = 20;
  std::uint64_t gc_seed = 1;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic planted-mass dataset");
  synth->add_option("--spec", spec_path, "synthetic spec file (defaults when omitted)")->check(CLI::ExistingFile);
  synth->add_option("--out", out_path, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train one model on a manifest");
  train_cmd->add_option("--config", config_path, "config file (defaults when omitted)")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", data_path, "manifest CSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", out_path, "checkpoint path")->required();
  train_cmd->add_flag("--select-k", select_k_flag,
                      "label_assign: pick k from k_grid on a held-out stratified fifth of the data");

  auto* cv = app.add_subcommand("cv", "Five-fold cross-validation");
  cv->add_option("--config", config_path, "config file (defaults when omitted)")->check(CLI::ExistingFile);
  cv->add_option("--data", data_path, "manifest CSV")->required()->check(CLI::ExistingFile);
  cv->add_option("--out", out_path, "output directory")->required();
  cv->add_option("--workers", workers, "folds trained in parallel")->check(CLI::PositiveNumber);
  cv->add_flag("--select-k", select_k_flag, "label_assign: pick k from k_grid on each validation fold");

  auto* eval = app.add_subcommand("eval", "Score a manifest with a checkpoint");
  eval->add_option("--ckpt", ckpt_path, "checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_path, "manifest CSV")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out_path, "output directory")->required();

  auto* bag = app.add_subcommand("bag", "Combine several checkpoints");
  bag->add_option("--ckpts", ckpt_paths, "checkpoints")->required()->check(CLI::ExistingFile);
  bag->add_option("--mode", mode, "average | vote")->check(CLI::IsMember({"average", "vote"}));
  bag->add_option("--data", data_path, "manifest CSV")->required()->check(CLI::ExistingFile);
  bag->add_option("--out", out_path, "output directory (scores CSV to stdout when omitted)");

  auto* viz = app.add_subcommand("viz", "Export the response map of one image");
  viz->add_option("--ckpt", ckpt_path, "checkpoint")->required()->check(CLI::ExistingFile);
  viz->add_option("--image", image_path, "PGM or raw image")->required()->check(CLI::ExistingFile);
  viz->add_option("--out", out_path, "output directory")->required();

  auto* stats = app.add_subcommand("stats", "Image and mass size statistics");
  stats->add_option("--data", data_path, "manifest CSV")->required()->check(CLI::ExistingFile);
  stats->add_option("--out", out_path, "output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  gc->add_option("--module", module, "all | heads | backbone")->check(CLI::IsMember({"all", "heads", "backbone"}));
  gc->add_option("--draws", draws, "random draws for the head suite")->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_seed, "seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      SynthSpec spec;
      if (!spec_path.empty()) {
        std::ifstream in(spec_path);
        std::stringstream ss;
        ss << in.rdbuf();
        try {
          spec = parse_synth_spec(ss.str());
        } catch (const std::exception& e) {
          throw ConfigError(spec_path + ": " + e.what());
        }
      }
      const Manifest m = generate_synthetic(spec, out_path);
      std::fprintf(stderr, "wrote %zu images (%zu positive) to %s\n", m.records.size(), m.positives(),
                   out_path.c_str());
    } else if (*train_cmd) {
      const TrainConfig config = load_config(config_path);
      if (select_k_flag && config.mil.head != HeadKind::kLabelAssign) {
        throw ConfigError("--select-k requires head = label_assign");
      }
      const Manifest manifest = load_manifest(data_path);
      const auto samples = prepare_samples(manifest, BackboneSpec::preset(config.preset).input_size);
      std::vector<std::size_t> all(samples.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      auto on_epoch = [](const EpochMetrics& m) { log_epoch("", m); };
      TrainResult result;
      if (select_k_flag) {
        const auto labels = labels_of(samples);
        const FoldPlan plan = make_folds(labels, 5, config.seed);
        std::vector<std::size_t> tr, va;
        for (auto i : all) (plan.fold_of[i] == 0 ? va : tr).push_back(i);
        SelectKResult sel = select_k(pointers(samples, tr), pointers(samples, va), config, on_epoch);
        for (const auto& [k, a] : sel.val_auc_by_k) std::fprintf(stderr, "k %zu val_auc %.4f\n", k, a);
        std::fprintf(stderr, "selected k = %zu\n", sel.k);
        result = std::move(sel.result);
      } else {
        result = train(pointers(samples, all), {}, config, on_epoch);
      }
      result.best.save(out_path);
      write_text(out_path + ".metrics.csv", metrics_csv(result.log));
    } else if (*cv) {
      const TrainConfig config = load_config(config_path);
      if (select_k_flag && config.mil.head != HeadKind::kLabelAssign) {
        throw ConfigError("--select-k requires head = label_assign");
      }
      const Manifest manifest = load_manifest(data_path);
      const auto samples = prepare_samples(manifest, BackboneSpec::preset(config.preset).input_size);
      CvOptions opts;
      opts.workers = workers;
      opts.select_k = select_k_flag;
      opts.on_epoch = [](std::size_t fold, const EpochMetrics& m) { log_epoch("fold " + std::to_string(fold) + " ", m); };
      const CvSummary summary = cross_validate(samples, config, opts);
      const fs::path dir(out_path);
      fs::create_directories(dir);
      write_text(dir / "config.txt", config.to_text());
      for (const auto& f : summary.folds) {
        const std::string stem = "fold" + std::to_string(f.fold);
        f.training.best.save(dir / (stem + ".ckpt"));
        write_text(dir / (stem + "_epochs.csv"), metrics_csv(f.training.log));
        std::ostringstream sc;
        sc << "path,label,score\n";
        std::vector<int> labels;
        for (std::size_t j = 0; j < f.test_indices.size(); ++j) {
          const auto& rec = manifest.records[f.test_indices[j]];
          sc << rec.path.string() << ',' << rec.label << ',' << fmt(f.test_scores[j]) << '\n';
          labels.push_back(rec.label);
        }
        write_text(dir / (stem + "_scores.csv"), sc.str());
        write_text(dir / (stem + "_roc.csv"), roc_csv(roc_curve(f.test_scores, labels)));
      }
      write_text(dir / "cv_metrics.csv", cv_summary_csv(summary));
      std::fprintf(stderr, "accuracy %.4f +- %.4f  auc %.4f +- %.4f\n", summary.mean_accuracy, summary.std_accuracy,
                   summary.mean_auc, summary.std_auc);
    } else if (*eval) {
      const Checkpoint ckpt = Checkpoint::load(ckpt_path);
      const Manifest manifest = load_manifest(data_path);
      const auto samples = prepare_samples(manifest, ckpt.backbone.input_size);
      const auto scores = model_scores(ckpt, samples);
      const auto labels = labels_of(samples);
      const fs::path dir(out_path);
      write_text(dir / "scores.csv", scores_csv(manifest, scores));
      bool both = false;
      for (int y : labels) both |= y != labels.front();
      if (both) write_text(dir / "roc.csv", roc_csv(roc_curve(scores, labels)));
      write_text(dir / "summary.csv", summary_csv(scores, labels));
    } else if (*bag) {
      const Manifest manifest = load_manifest(data_path);
      std::vector<std::vector<double>> all_scores;
      std::vector<int> labels;
      for (const auto& path : ckpt_paths) {
        const Checkpoint ckpt = Checkpoint::load(path);
        const auto samples = prepare_samples(manifest, ckpt.backbone.input_size);
        all_scores.push_back(model_scores(ckpt, samples));
        labels = labels_of(samples);
      }
      const auto scores = bagging(all_scores, parse_bag_mode(mode));
      if (out_path.empty()) {
        std::cout << scores_csv(manifest, scores);
      } else {
        const fs::path dir(out_path);
        write_text(dir / "scores.csv", scores_csv(manifest, scores));
        write_text(dir / "summary.csv", summary_csv(scores, labels));
      }
    } else if (*viz) {
      const Checkpoint ckpt = Checkpoint::load(ckpt_path);
      const GrayImage raw = read_image(image_path);
      const PreparedImage prepared = prepare(raw, std::nullopt, ckpt.backbone.input_size);
      const ResponseExport ex = export_response_map(ckpt, prepared.image);
      write_response_export(ex, prepared.image, out_path);
    } else if (*stats) {
      const Manifest manifest = load_manifest(data_path);
      const DatasetStats st = dataset_stats(manifest);
      const fs::path dir(out_path);
      write_text(dir / "histograms.csv", histograms_csv(st));
      write_text(dir / "summary.csv", stats_summary_csv(st));
    } else if (*gc) {
      std::vector<GradCheckReport> reports;
      if (module == "all" || module == "backbone") {
        auto r = run_op_gradchecks(gc_seed);
        reports.insert(reports.end(), r.begin(), r.end());
      }
      if (module == "all" || module == "heads") {
        auto r = run_head_gradchecks(gc_seed, draws);
        reports.insert(reports.end(), r.begin(), r.end());
      }
      bool ok = true;
      std::printf("name,checked,skipped,redraws,max_rel_error,tolerance,passed\n");
      for (const auto& r : reports) {
        std::printf("%s,%zu,%zu,%zu,%.3e,%.0e,%d\n", r.name.c_str(), r.checked, r.skipped, r.redraws, r.max_error,
                    r.tolerance, r.passed ? 1 : 0);
        ok &= r.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
