/**
 * Copyright 2026 The DSG Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "dsg/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>

#include "dsg/binary_io.hpp"
#include "dsg/datagen.hpp"
#include "dsg/dataset.hpp"
#include "dsg/diagnostics.hpp"
#include "dsg/model_io.hpp"
#include "dsg/network.hpp"
#include "dsg/quantize.hpp"
#include "dsg/trainer.hpp"

namespace dsg::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Collects everything a RunManifest records and writes it at the end.
class Manifest {
 public:
  Manifest(std::string command, const CLI::App& sub) : command_(std::move(command)) {
    for (const CLI::Option* opt : sub.get_options()) {
      const std::string name = opt->get_single_name();
      if (name == "help" || name == "config") continue;
      std::string value;
      if (opt->count() > 0) {
        const auto& res = opt->results();
        for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
      } else {
        value = opt->get_default_str();
      }
      config_[name] = value;
    }
    start_ = std::chrono::steady_clock::now();
  }

  void result(const std::string& key, double value) { results_[key] = value; }
  void result(const std::string& key, const std::string& value) { results_[key] = value; }

  void artifact(const std::string& name, const fs::path& path) {
    artifacts_[name] = {{"path", path.string()}, {"digest", file_digest(path)}};
  }

  void write(const fs::path& dir, std::uint64_t seed) {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ostringstream cfg;
    for (const auto& [k, v] : config_.items()) cfg << k << '=' << v.get<std::string>() << '\n';
    write_file_atomic(dir / "run.cfg", cfg.str());
    json doc;
    doc["command"] = command_;
    doc["config"] = config_;
    doc["seed"] = seed;
    doc["artifacts"] = artifacts_;
    doc["timings"] = {{"wall_seconds", seconds}};
    doc["results"] = results_;
    write_file_atomic(dir / "manifest.json", doc.dump(2) + "\n");
    for (const auto& [k, v] : results_.items()) {
      std::cout << k << '=' << (v.is_number() ? format_real(v.get<double>()) : v.is_null() ? "nan" : v.get<std::string>())
                << '\n';
    }
  }

 private:
  std::string command_;
  json config_ = json::object(), results_ = json::object(), artifacts_ = json::object();
  std::chrono::steady_clock::time_point start_;
};

std::optional<int> bit_width(int bits) {
  if (bits == 32) return std::nullopt;
  return bits;
}

Dataset load_labeled(const std::string& dir, const char* what) {
  Dataset d = load_dataset(dir);
  if (!d.labeled()) throw_invalid(std::string(what) + " at '" + dir + "' has no labels");
  return d;
}

struct QuantRun {
  QuantizedNetwork qnet;
  double accuracy;
};

QuantRun quantize_and_evaluate(const Network& net, const Tensor* calib, int wbits, int abits, const Calibrator& c,
                               const Dataset& eval, int threads) {
  QuantizedNetwork q = quantize_weights(net, bit_width(wbits));
  const auto act = bit_width(abits);
  if (act && !calib) throw_invalid("activation quantization needs --calib-data");
  q = calibrate_activations(std::move(q), calib ? *calib : Tensor(), c, act);
  const double acc = eval_quantized(q, eval, threads);
  return {std::move(q), acc};
}

struct Options {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;
  std::string config;
};

void add_common(CLI::App* sub, Options& o, bool needs_out = true) {
  sub->add_option("--seed", o.seed, "Random seed");
  sub->add_option("--threads", o.threads, "Worker threads for evaluation (1 = deterministic)")
      ->envname("DSG_THREADS")
      ->check(CLI::PositiveNumber);
  auto* out = sub->add_option("--out", o.out, "Output directory");
  if (needs_out) out->required();
  sub->add_option("--config", o.config, "Flat key=value config file; flags take precedence");
}

// Splices config-file keys in as flags, skipping any flag given explicitly.
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty()) return args;
  std::vector<std::string> merged = args;
  for (const auto& [key, value] : read_config(config)) {
    if (key == "config") throw_invalid("config file may not name another config file");
    const std::string flag = "--" + key;
    bool explicit_flag = false;
    for (const auto& a : args) explicit_flag = explicit_flag || a == flag || a.rfind(flag + "=", 0) == 0;
    if (!explicit_flag) merged.push_back(flag + "=" + value);
  }
  return merged;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw_invalid("cannot open config file '" + path.string() + "'");
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw_invalid(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty()) throw_invalid(path.string() + ":" + std::to_string(lineno) + ": empty key");
    entries.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return entries;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Data-free calibration data generation and quantization toolkit", "dsg"};
  app.require_subcommand(1);
  app.allow_extras(false);
  Options o;

  // make-dataset
  auto* mk = app.add_subcommand("make-dataset", "Render a synthetic 10-class 28x28 digits dataset");
  Index mk_count = 1000;
  std::string mk_format = "idx";
  mk->add_option("--count", mk_count, "Number of images")->check(CLI::PositiveNumber);
  mk->add_option("--format", mk_format, "idx or raw")->check(CLI::IsMember({"idx", "raw"}));
  bool mk_standardize = false;
  mk->add_flag("--standardize", mk_standardize, "Shift and scale pixels to zero mean, unit std (raw only)");
  add_common(mk, o);

  // train
  auto* tr = app.add_subcommand("train", "Train a reference model");
  std::string tr_arch = "cnn5bn", tr_data, tr_test;
  Index tr_classes = 10;
  TrainConfig tc;
  tr->add_option("--arch", tr_arch, "Architecture")->check(CLI::IsMember(reference_architectures()));
  tr->add_option("--data", tr_data, "Training dataset directory")->required();
  tr->add_option("--test-data", tr_test, "Held-out dataset directory");
  tr->add_option("--classes", tr_classes, "Number of classes")->check(CLI::PositiveNumber);
  tr->add_option("--epochs", tc.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  tr->add_option("--lr", tc.learning_rate, "Initial SGD learning rate");
  tr->add_option("--momentum", tc.momentum, "SGD momentum");
  tr->add_option("--batch-size", tc.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
  add_common(tr, o);

  // generate
  auto* gen = app.add_subcommand("generate", "Synthesize a calibration batch from BN statistics");
  std::string gen_model, gen_mode = "dsg";
  GenConfig gc;
  gen->add_option("--model", gen_model, "Model directory")->required();
  gen->add_option("--mode", gen_mode, "vanilla, sda, lse or dsg")->check(CLI::IsMember({"vanilla", "sda", "lse", "dsg"}));
  auto* gen_eps = gen->add_option("--epsilon", gc.epsilon, "Slack percentile in [0,1]")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--iters", gc.iterations, "Optimization steps")->check(CLI::NonNegativeNumber);
  gen->add_option("--lr", gc.learning_rate, "Adam learning rate");
  gen->add_option("--batch", gc.batch_size, "Batch size (0 = number of BN layers)")->check(CLI::NonNegativeNumber);
  gen->add_option("--probe", gc.probe_count, "Gaussian probe samples for the slack margins")
      ->check(CLI::PositiveNumber);
  add_common(gen, o);

  // calibrate-eval
  auto* ce = app.add_subcommand("calibrate-eval", "Quantize, calibrate and evaluate a model");
  std::string ce_model, ce_calib, ce_eval, ce_quant = "vanilla";
  int ce_wbits = 8, ce_abits = 8;
  double ce_p = 0.9999;
  ce->add_option("--model", ce_model, "Model directory")->required();
  ce->add_option("--calib-data", ce_calib, "Calibration data directory");
  ce->add_option("--eval-data", ce_eval, "Labeled evaluation data directory")->required();
  ce->add_option("--wbits", ce_wbits, "Weight bits (2-8, 32 = full precision)");
  ce->add_option("--abits", ce_abits, "Activation bits (2-8, 32 = full precision)");
  ce->add_option("--quant", ce_quant, "vanilla, percentile, ema or mse")
      ->check(CLI::IsMember({"vanilla", "percentile", "ema", "mse"}));
  ce->add_option("--p", ce_p, "Percentile calibrator coverage")->check(CLI::Range(0.0, 1.0));
  add_common(ce, o);

  // diagnose
  auto* dg = app.add_subcommand("diagnose", "Dispersion statistics of a batch at every BN input");
  std::string dg_model, dg_data, dg_baseline;
  std::size_t dg_layer = 0;
  Index dg_channel = 0;
  dg->add_option("--model", dg_model, "Model directory")->required();
  dg->add_option("--data", dg_data, "Data directory")->required();
  dg->add_option("--baseline-data", dg_baseline, "Second batch; writes per-layer median ratios data/baseline");
  dg->add_option("--layer", dg_layer, "BN layer for the histogram export");
  dg->add_option("--channel", dg_channel, "Channel for the histogram export")->check(CLI::NonNegativeNumber);
  add_common(dg, o);

  // sweep-epsilon
  auto* sw = app.add_subcommand("sweep-epsilon", "Accuracy over epsilon = 0, 0.1, ..., 1");
  std::string sw_model, sw_eval, sw_mode = "sda", sw_quant = "vanilla";
  std::vector<std::uint64_t> sw_seeds{0, 1, 2, 3, 4};
  int sw_wbits = 4, sw_abits = 4;
  GenConfig sc;
  sw->add_option("--model", sw_model, "Model directory")->required();
  sw->add_option("--eval-data", sw_eval, "Labeled evaluation data directory")->required();
  sw->add_option("--seeds", sw_seeds, "Generation seeds")->delimiter(',');
  sw->add_option("--mode", sw_mode, "sda or dsg")->check(CLI::IsMember({"sda", "dsg"}));
  sw->add_option("--wbits", sw_wbits, "Weight bits");
  sw->add_option("--abits", sw_abits, "Activation bits");
  sw->add_option("--quant", sw_quant, "Activation calibrator")
      ->check(CLI::IsMember({"vanilla", "percentile", "ema", "mse"}));
  sw->add_option("--iters", sc.iterations, "Optimization steps")->check(CLI::NonNegativeNumber);
  sw->add_option("--lr", sc.learning_rate, "Adam learning rate");
  sw->add_option("--batch", sc.batch_size, "Batch size (0 = number of BN layers)")->check(CLI::NonNegativeNumber);
  sw->add_option("--probe", sc.probe_count, "Gaussian probe samples")->check(CLI::PositiveNumber);
  add_common(sw, o);

  for (auto* sub : app.get_subcommands({})) {
    for (auto* opt : sub->get_options()) opt->capture_default_str();
  }

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    const fs::path out = o.out;
    fs::create_directories(out);
    Manifest m(name, *sub);

    if (name == "make-dataset") {
      Dataset d = make_synthetic_digits(mk_count, o.seed);
      if (mk_standardize) {
        if (mk_format == "idx") throw_invalid("--standardize needs --format raw");
        standardize(d, kDigitsMean, kDigitsStd);
      }
      if (mk_format == "idx") {
        save_idx(d, out / "images.idx", out / "labels.idx");
        m.artifact("images", out / "images.idx");
        m.artifact("labels", out / "labels.idx");
      } else {
        save_raw(d, out);
        m.artifact("data", out / "data.bin");
        m.artifact("labels", out / "labels.bin");
      }
      m.result("count", double(d.size()));
    } else if (name == "train") {
      const Dataset train = load_labeled(tr_data, "training data");
      std::optional<Dataset> test;
      if (!tr_test.empty()) test = load_labeled(tr_test, "test data");
      const Shape input{train.images.dim(1), train.images.dim(2), train.images.dim(3)};
      tc.seed = o.seed;
      Network net = build_reference_cnn(tr_arch, input, tr_classes, o.seed);
      TrainResult r = train_reference(std::move(net), train, test ? &*test : nullptr, tc);
      save_model(r.net, out);
      m.artifact("model", out / "model.json");
      m.artifact("weights", out / "weights.bin");
      m.result("train_accuracy", r.train_accuracy);
      if (test) m.result("test_accuracy", evaluate_accuracy(r.net, *test, o.threads));
      if (!r.epoch_loss.empty()) m.result("final_loss", r.epoch_loss.back());
    } else if (name == "generate") {
      const Network net = load_model(gen_model);
      gc.mode = parse_gen_mode(gen_mode);
      gc.seed = o.seed;
      if (gen_eps->count() > 0 && (gc.mode == GenMode::kVanilla || gc.mode == GenMode::kLse)) {
        std::cerr << "warning: --epsilon is ignored for mode " << gen_mode << '\n';
      }
      const GenResult r = generate(net, gc);
      save_generation(r, out);
      m.artifact("data", out / "data.bin");
      m.artifact("meta", out / "data.meta");
      m.artifact("log", out / "gen.log");
      m.result("batch", double(r.batch.dim(0)));
      if (!r.history.empty()) {
        m.result("initial_loss", r.history.front().total);
        m.result("final_loss", r.history.back().total);
      }
    } else if (name == "calibrate-eval") {
      const Network net = load_model(ce_model);
      const Dataset eval = load_labeled(ce_eval, "evaluation data");
      std::optional<Dataset> calib;
      if (!ce_calib.empty()) calib = load_dataset(ce_calib);
      Calibrator c = Calibrator::parse(ce_quant);
      c.percentile = ce_p;
      const QuantRun q = quantize_and_evaluate(net, calib ? &calib->images : nullptr, ce_wbits, ce_abits, c, eval,
                                               o.threads);
      write_file_atomic(out / "calibration.csv", calibration_report(q.qnet));
      m.artifact("calibration", out / "calibration.csv");
      m.result("accuracy", q.accuracy);
      m.result("fp32_accuracy", evaluate_accuracy(net, eval, o.threads));
    } else if (name == "diagnose") {
      const Network net = load_model(dg_model);
      const Dataset data = load_dataset(dg_data);
      const BnStats bn = extract_bn_stats(net);
      const DispersionReport rep = dispersion(feature_stats(net, data.images, true), bn);
      write_file_atomic(out / "dispersion.csv", dispersion_csv(rep));
      m.artifact("dispersion", out / "dispersion.csv");
      export_bn_histogram(net, data.images, dg_layer, dg_channel, out / "histogram.csv");
      m.artifact("histogram", out / "histogram.csv");
      m.artifact("histogram_bn", out / "histogram.csv.bn.csv");
      for (std::size_t i = 0; i < rep.layers(); ++i) {
        const auto& md = rep.mean_dispersion[i];
        m.result("median_mean_dispersion.bn" + std::to_string(i),
                 median(std::vector<double>(md.data(), md.data() + md.size())));
      }
      if (!dg_baseline.empty()) {
        const Dataset base = load_dataset(dg_baseline);
        const DispersionReport ref = dispersion(feature_stats(net, base.images, true), bn);
        write_file_atomic(out / "ratios.csv", ratios_csv(compare_dispersion(rep, ref)));
        m.artifact("ratios", out / "ratios.csv");
      }
    } else if (name == "sweep-epsilon") {
      const Network net = load_model(sw_model);
      const Dataset eval = load_labeled(sw_eval, "evaluation data");
      const Calibrator c = Calibrator::parse(sw_quant);
      std::ostringstream rows, medians;
      rows << "epsilon,accuracy,seed\n";
      medians << "epsilon,accuracy\n";
      for (int k = 0; k <= 10; ++k) {
        const double eps = double(k) / 10.0;
        std::vector<double> accs;
        for (std::uint64_t seed : sw_seeds) {
          GenConfig g = sc;
          g.mode = parse_gen_mode(sw_mode);
          g.epsilon = eps;
          g.seed = seed;
          const GenResult r = generate(net, g);
          const double acc = quantize_and_evaluate(net, &r.batch, sw_wbits, sw_abits, c, eval, o.threads).accuracy;
          accs.push_back(acc);
          rows << format_real(eps) << ',' << format_real(acc) << ',' << seed << '\n';
        }
        const double med = median(accs);
        medians << format_real(eps) << ',' << format_real(med) << '\n';
        m.result("median_accuracy.eps" + format_real(eps), med);
      }
      write_file_atomic(out / "sweep.csv", rows.str());
      write_file_atomic(out / "sweep_median.csv", medians.str());
      m.artifact("sweep", out / "sweep.csv");
      m.artifact("sweep_median", out / "sweep_median.csv");
    }
    m.write(out, o.seed);
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::kInvalidArgument:
        return kExitUsage;
      case ErrorKind::kFormat:
        return kExitFormat;
      case ErrorKind::kNumerical:
        return kExitNumerical;
    }
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace dsg::cli
