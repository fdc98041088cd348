#pragma once

// Command-line front end: synth, train, eval, predict, report.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rsca/checkpoint.hpp"
#include "rsca/data.hpp"
#include "rsca/report.hpp"
#include "rsca/run_config.hpp"
#include "rsca/training.hpp"

namespace rsca {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitCheckpoint = 3 };

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CliOptions {
  std::string corpus;
  std::string config;
  std::string checkpoint;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::string> scale;
  std::string subset = "all";
  std::size_t synth_n = 8;
  std::size_t synth_size = 64;
  std::string metrics;
  std::vector<std::string> images;
};

namespace cli_detail {

inline RunSettings settings(const CliOptions& o) {
  RunSettings s;
  if (!o.config.empty()) load_settings(s, o.config);
  if (o.seed) s.seed = *o.seed;
  if (o.epochs) s.epochs = *o.epochs;
  if (o.scale) s.scale = Fraction::parse(*o.scale);
  return s;
}

inline Corpus load(const CliOptions& o, const ModelConfig& mc, std::ostream& err) {
  if (o.corpus.empty()) throw ValidationError("--corpus is required");
  Corpus c = load_corpus(o.corpus, mc.input());
  for (const auto& w : c.report.warnings) err << "warning: " << w << "\n";
  for (const auto& e : c.report.errors) err << "error: " << e << "\n";
  if (c.samples.empty()) throw DataError("corpus " + o.corpus + " has no usable samples");
  return c;
}

inline std::vector<Sample> pick(const std::vector<Sample>& all, const std::vector<std::size_t>& idx) {
  std::vector<Sample> out;
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

inline Split split_of(const std::vector<Sample>& samples, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  return split(ids, SplitSpec{seed});
}

inline Model<float> load_model(const CliOptions& o, const RunSettings& s) {
  if (o.checkpoint.empty()) throw ValidationError("--checkpoint is required");
  return load_checkpoint<float>(o.checkpoint, s.model_config(), s.seed);
}

inline int cmd_synth(const CliOptions& o, std::ostream& out) {
  if (o.synth_n == 0) throw ValidationError("--n must be >= 1");
  if (o.synth_size < 8) throw ValidationError("--size must be >= 8");
  const RunSettings s = settings(o);
  try {
    write_synthetic_corpus(o.out, o.synth_n, o.synth_size, s.seed);
  } catch (const std::filesystem::filesystem_error& e) {
    throw DataError(e.what());
  } catch (const ImageError& e) {
    throw DataError(e.what());
  }
  out << "wrote " << o.synth_n << " synthetic pairs (" << o.synth_size << "x" << o.synth_size << ") to " << o.out
      << "\n";
  return kExitOk;
}

inline int cmd_train(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const RunSettings s = settings(o);
  const ModelConfig mc = s.model_config();
  mc.validate();
  const Corpus corpus = load(o, mc, err);
  const Split sp = split_of(corpus.samples, s.seed);
  const auto train_set = pick(corpus.samples, sp.train);
  const auto val_set = pick(corpus.samples, sp.val);
  if (train_set.empty()) throw DataError("split left no training samples");

  Model<float> model = Model<float>::build(mc, s.seed);
  OptimizerConfig oc;
  oc.kind = s.optimizer;
  oc.lr = s.lr;
  Optimizer<float> opt(oc);
  std::filesystem::create_directories(o.out);
  const std::filesystem::path dir(o.out);

  out << "train " << train_set.size() << " / val " << val_set.size() << " / test " << sp.test.size()
      << " images at " << mc.input() << "x" << mc.input() << ", " << model.parameters().size() << " tensors\n";
  TrainResult r = train<float>(model, opt, train_set, val_set, TrainOptions{s.epochs, s.batch, s.seed, s.augment},
                               [&](const EpochRecord& e) {
                                 char line[160];
                                 std::snprintf(line, sizeof line,
                                               "epoch %3zu  train_loss %.5f  val_loss %.5f  val_dice %.4f\n",
                                               e.epoch, e.train_loss, e.val_loss, e.val_dice);
                                 out << line << std::flush;
                               });
  write_text((dir / "loss_log.csv").string(), loss_log_csv(r.log));
  save_checkpoint(model, (dir / "final.ckpt").string());
  if (!r.log.empty()) {
    const std::vector<char> best = encode_checkpoint(r.best);
    write_text((dir / "best.ckpt").string(), std::string(best.begin(), best.end()));
  } else {
    save_checkpoint(model, (dir / "best.ckpt").string());
  }
  std::string split_text = "subset,id\n";
  for (auto [name, idx] : {std::pair{"train", &sp.train}, {"val", &sp.val}, {"test", &sp.test}}) {
    for (auto i : *idx) split_text += std::string(name) + "," + corpus.samples[i].id + "\n";
  }
  write_text((dir / "split.csv").string(), split_text);
  out << "best epoch " << r.best_epoch << "; wrote best.ckpt, final.ckpt, loss_log.csv, split.csv to " << o.out
      << "\n";
  return kExitOk;
}

inline int cmd_eval(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const RunSettings s = settings(o);
  const ModelConfig mc = s.model_config();
  mc.validate();
  const Model<float> model = load_model(o, s);
  const Corpus corpus = load(o, mc, err);
  std::vector<Sample> chosen;
  if (o.subset == "all") {
    chosen = corpus.samples;
  } else {
    const Split sp = split_of(corpus.samples, s.seed);
    const auto& idx = o.subset == "train" ? sp.train : o.subset == "val" ? sp.val : sp.test;
    chosen = pick(corpus.samples, idx);
  }
  if (chosen.empty()) throw DataError("subset '" + o.subset + "' is empty");
  const Evaluation ev = evaluate(model, chosen);
  const MetricsReport rep = aggregate(ev.images);
  std::filesystem::create_directories(o.out);
  const std::filesystem::path dir(o.out);
  write_text((dir / "metrics.csv").string(), region_csv(rep));
  write_text((dir / "aggregate.csv").string(), aggregate_csv(rep));
  write_text((dir / "confusion.csv").string(), confusion_csv(rep.counts));
  write_text((dir / "metrics.json").string(), to_json(rep).dump(2) + "\n");
  out << "evaluated " << chosen.size() << " images (" << o.subset << ")\n\n" << format_tables(rep);
  return kExitOk;
}

inline int cmd_predict(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const RunSettings s = settings(o);
  const ModelConfig mc = s.model_config();
  mc.validate();
  const Model<float> model = load_model(o, s);
  if (o.images.empty()) throw ValidationError("predict needs at least one image path");
  std::filesystem::create_directories(o.out);
  const std::filesystem::path dir(o.out);
  std::size_t failed = 0;
  for (const auto& path : o.images) {
    try {
      const Image img = read_png(path, false);
      Tensor<float> input = resize_bilinear(image_to_tensor(img, mc.input_channels), mc.input(), mc.input());
      Mask pred;
      {
        NoGradGuard no_grad;
        pred = binarize(model.forward(input));
      }
      pred = resize_nearest(pred, img.height, img.width);
      const std::string stem = std::filesystem::path(path).stem().string();
      write_png((dir / (stem + "_mask.png")).string(), mask_to_image(pred));
      write_png((dir / (stem + "_overlay.png")).string(), overlay(img, pred));
      out << path << ": " << pred.count() << " lesion pixels\n";
    } catch (const ImageError& e) {
      err << "error: " << e.what() << "\n";
      ++failed;
    }
  }
  if (failed == o.images.size()) throw DataError("no image could be processed");
  return failed > 0 ? kExitData : kExitOk;
}

inline int cmd_report(const CliOptions& o, std::ostream& out) {
  if (o.metrics.empty()) throw ValidationError("--metrics is required");
  std::ifstream in(o.metrics);
  if (!in) throw DataError("cannot read " + o.metrics);
  MetricsReport rep;
  try {
    rep = report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(o.metrics + ": " + e.what());
  }
  out << format_tables(rep);
  return kExitOk;
}

}  // namespace cli_detail

/// Parses argv and runs one command; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Residual-SwinCA-Net breast lesion segmentation"};
  app.require_subcommand(1);
  CliOptions o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "key=value settings file");
    c->add_option("--seed", o.seed, "overrides the config seed");
    c->add_option("--scale", o.scale, "model scale, e.g. 1/4");
  };
  auto* synth = app.add_subcommand("synth", "write a synthetic corpus");
  synth->add_option("--out", o.out, "corpus root")->required();
  synth->add_option("--n", o.synth_n, "number of pairs");
  synth->add_option("--size", o.synth_size, "image side in pixels");
  common(synth);

  auto* train_cmd = app.add_subcommand("train", "train from a corpus");
  train_cmd->add_option("--corpus", o.corpus, "corpus root")->required();
  train_cmd->add_option("--out", o.out, "output directory");
  train_cmd->add_option("--epochs", o.epochs, "overrides the config epochs");
  common(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a corpus");
  eval_cmd->add_option("--corpus", o.corpus, "corpus root")->required();
  eval_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--out", o.out, "report directory");
  eval_cmd->add_option("--subset", o.subset, "all, train, val or test")
      ->check(CLI::IsMember({"all", "train", "val", "test"}));
  common(eval_cmd);

  auto* predict_cmd = app.add_subcommand("predict", "write masks and overlays for images");
  predict_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  predict_cmd->add_option("--out", o.out, "output directory");
  predict_cmd->add_option("images", o.images, "PNG files")->required();
  common(predict_cmd);

  auto* report_cmd = app.add_subcommand("report", "print tables from a metrics.json");
  report_cmd->add_option("--metrics", o.metrics, "metrics.json written by eval")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cli_detail::cmd_synth(o, out);
    if (*train_cmd) return cli_detail::cmd_train(o, out, err);
    if (*eval_cmd) return cli_detail::cmd_eval(o, out, err);
    if (*predict_cmd) return cli_detail::cmd_predict(o, out, err);
    if (*report_cmd) return cli_detail::cmd_report(o, out);
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == CheckpointErrc::io ? kExitData : kExitCheckpoint;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ImageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {  // ValidationError, DimensionError
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::runtime_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace rsca
