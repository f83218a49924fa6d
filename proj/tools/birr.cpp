// birr command-line tool: synth, split, train, evaluate, classify, serve, labels.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <csignal>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "birr/classifier.hpp"
#include "birr/data.hpp"
#include "birr/errors.hpp"
#include "birr/eval.hpp"
#include "birr/io.hpp"
#include "birr/service.hpp"
#include "birr/trainer.hpp"
#include "birr/weights_io.hpp"

namespace {

using namespace birr;

LabelTable labels_or_default(const std::string& path) {
  return path.empty() ? LabelTable::defaults() : load_labels(path);
}

std::string model_or_env(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("BIRR_MODEL_PATH"); env && *env) return env;
  throw UsageError("no model given: pass --model or set BIRR_MODEL_PATH");
}

struct SynthArgs {
  std::string out;
  std::size_t per_class = 60;
  int size = 64;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  const auto manifest = synth_generate(a.out, {a.per_class, a.size, a.seed});
  std::cout << "wrote " << manifest.size() << " images to " << a.out << "\n";
  return 0;
}

struct SplitArgs {
  std::string root;
  std::string out;
  std::string labels;
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t seed = 0;
};

int run_split(const SplitArgs& a) {
  const auto manifest = scan_dataset(a.root, labels_or_default(a.labels));
  for (const auto& r : manifest.rejected) std::cerr << "skipped undecodable " << r << "\n";
  const auto split = split_dataset(manifest, {a.train, a.val, a.test}, a.seed);
  save_split(split, a.out);
  std::cout << "train " << split[Split::kTrain].size() << "  val " << split[Split::kVal].size()
            << "  test " << split[Split::kTest].size() << "\n";
  return 0;
}

struct TrainArgs {
  std::string split;
  std::string out;
  std::string config;
  std::string history;
  std::string checkpoint_dir;
  int epochs = 0;
  double lr = 1e-5;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  std::uint64_t init_seed = 0;
  bool freeze_backbone = false;
  bool unfreeze_all = false;
  bool no_augment = false;
  double width = 1.0;
  int resolution = 224;
  std::string head_pooling = "avg";
  double dropout = 0.2;
  std::size_t workers = 0;
  bool quiet = false;
};

// Config file first, then any flag given on the command line.
int run_train(const TrainArgs& a, const CLI::App& cmd) {
  TrainConfig tc;
  ModelConfig mc;
  if (!a.config.empty()) {
    const auto j = nlohmann::json::parse(read_text(a.config));
    tc = TrainConfig::from_json(j.at("train"));
    if (j.contains("model")) mc = config_from_json(j["model"]);
  }
  auto given = [&](const char* name) { return cmd.count(name) > 0; };
  if (given("--epochs")) tc.epochs = a.epochs;
  if (given("--lr")) tc.learning_rate = a.lr;
  if (given("--batch")) tc.batch_size = a.batch;
  if (given("--seed")) tc.seed = a.seed;
  if (given("--workers")) tc.workers = a.workers;
  if (a.freeze_backbone) tc.freeze_policy = FreezePolicy::kFreezeBackbone;
  if (a.unfreeze_all) tc.freeze_policy = FreezePolicy::kUnfreezeAll;
  if (a.no_augment) tc.augment.enabled = false;
  if (!a.checkpoint_dir.empty()) tc.checkpoint_dir = a.checkpoint_dir;
  if (given("--width")) mc.width_multiplier = a.width;
  if (given("--resolution")) mc.input_resolution = a.resolution;
  if (given("--head-pooling")) mc.head_pooling = parse_head_pooling(a.head_pooling);
  if (given("--dropout")) mc.dropout_rate = a.dropout;
  tc.validate();
  mc.validate();

  const auto split = load_split(a.split);
  Rng init(a.init_seed);
  Model model = build_model(mc, init);
  const auto history = fit(model, split, tc, [&](const EpochRecord& r) {
    if (a.quiet) return;
    std::fprintf(stderr, "epoch %3d  loss %.4f  acc %.3f  val_loss %.4f  val_acc %.3f  (%.1fs)\n",
                 r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, r.seconds);
  });
  save_weights(model, a.out);
  if (!a.history.empty()) write_text(a.history, history.to_csv());
  std::cout << "saved " << a.out << " (" << history.epochs.size() << " epochs, "
            << history.wall_seconds << " s)\n";
  return 0;
}

struct EvaluateArgs {
  std::string model;
  std::string split;
  std::string subset = "test";
  std::string labels;
  std::string json;
  std::size_t workers = 0;
};

int run_evaluate(const EvaluateArgs& a) {
  const Model model = load_model(model_or_env(a.model));
  const LabelTable labels = labels_or_default(a.labels);
  const auto split = load_split(a.split);
  const auto report = evaluate(model, split.root, split[parse_split(a.subset)], a.workers);
  for (const auto& f : report.failures) std::cerr << "failed " << f.path << ": " << f.error << "\n";
  std::cout << render_confusion(report.matrix, labels);
  std::printf("accuracy %.4f (%zu images, subset %s)\n", report.metrics.accuracy, report.evaluated,
              a.subset.c_str());
  if (!a.json.empty()) write_text(a.json, report_to_json(report, labels).dump(2) + "\n");
  return 0;
}

struct ClassifyArgs {
  std::string image;
  std::string model;
  std::string labels;
  bool timing = false;
};

int run_classify(const ClassifyArgs& a) {
  const auto classifier = Classifier::load(model_or_env(a.model), a.labels);
  const Bytes bytes = read_file(a.image);
  const auto start = std::chrono::steady_clock::now();
  PredictionResponse r = classifier.classify(bytes);
  if (a.timing) {
    r.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }
  std::cout << r.to_json().dump(2) << "\n";
  return 0;
}

struct ServeArgs {
  std::string model;
  std::string labels;
  std::string host = "127.0.0.1";
  int port = 8080;
};

Service* g_service = nullptr;

int run_serve(const ServeArgs& a) {
  const auto classifier = Classifier::load(model_or_env(a.model), a.labels);
  Service service(classifier, {a.host, a.port});
  const int port = service.bind();
  g_service = &service;
  std::signal(SIGINT, [](int) { if (g_service) g_service->stop(); });
  std::signal(SIGTERM, [](int) { if (g_service) g_service->stop(); });
  std::cerr << "serving model " << classifier.model_id() << " on http://" << a.host << ":" << port
            << "\n";
  service.serve();
  g_service = nullptr;
  return 0;
}

int run_labels(const std::string& path) {
  std::cout << labels_or_default(path).to_json().dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ethiopian birr banknote classifier"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate the seeded synthetic corpus");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--per-class", synth.per_class, "Images per class");
  c_synth->add_option("--size", synth.size, "Image side in pixels");
  c_synth->add_option("--seed", synth.seed);

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "Scan a dataset tree and write a stratified split");
  c_split->add_option("--root", split.root, "Dataset root with one directory per class")->required();
  c_split->add_option("--out", split.out, "Split file to write")->required();
  c_split->add_option("--labels", split.labels, "Label table JSON");
  c_split->add_option("--train", split.train);
  c_split->add_option("--val", split.val);
  c_split->add_option("--test", split.test);
  c_split->add_option("--seed", split.seed);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model on the train/val parts of a split");
  c_train->add_option("--split", train.split, "Split file")->required();
  c_train->add_option("--out", train.out, "Weight file to write")->required();
  c_train->add_option("--config", train.config, "JSON with \"train\" and optional \"model\" objects");
  c_train->add_option("--epochs", train.epochs);
  c_train->add_option("--lr", train.lr, "Learning rate");
  c_train->add_option("--batch", train.batch, "Batch size");
  c_train->add_option("--seed", train.seed, "Shuffle, augmentation and dropout seed");
  c_train->add_option("--init-seed", train.init_seed, "Weight initialization seed");
  auto* freeze = c_train->add_flag("--freeze-backbone", train.freeze_backbone, "Train the head only");
  c_train->add_flag("--unfreeze-all", train.unfreeze_all, "Train every layer")->excludes(freeze);
  c_train->add_flag("--no-augment", train.no_augment);
  c_train->add_option("--width", train.width, "Width multiplier (alpha)");
  c_train->add_option("--resolution", train.resolution, "Input side in pixels");
  c_train->add_option("--head-pooling", train.head_pooling, "avg, max or avg_concat_max");
  c_train->add_option("--dropout", train.dropout);
  c_train->add_option("--history", train.history, "Write per-epoch CSV");
  c_train->add_option("--checkpoint-dir", train.checkpoint_dir);
  c_train->add_option("--workers", train.workers, "Loader threads (0 = all cores)");
  c_train->add_flag("--quiet", train.quiet, "No per-epoch progress");

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Confusion matrix and metrics on one split part");
  c_eval->add_option("--model", ev.model, "Weight file (default $BIRR_MODEL_PATH)");
  c_eval->add_option("--split", ev.split, "Split file")->required();
  c_eval->add_option("--subset", ev.subset)->check(CLI::IsMember({"train", "val", "test"}));
  c_eval->add_option("--labels", ev.labels);
  c_eval->add_option("--json", ev.json, "Write the report as JSON");
  c_eval->add_option("--workers", ev.workers);

  ClassifyArgs cl;
  auto* c_classify = app.add_subcommand("classify", "Classify one PNG or PPM image");
  c_classify->add_option("image", cl.image)->required();
  c_classify->add_option("--model", cl.model, "Weight file (default $BIRR_MODEL_PATH)");
  c_classify->add_option("--labels", cl.labels);
  c_classify->add_flag("--timing", cl.timing, "Add latency_ms");

  ServeArgs sv;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP classification service");
  c_serve->add_option("--model", sv.model, "Weight file (default $BIRR_MODEL_PATH)");
  c_serve->add_option("--labels", sv.labels);
  c_serve->add_option("--host", sv.host);
  c_serve->add_option("--port", sv.port, "0 picks a free port");

  std::string labels_path;
  auto* c_labels = app.add_subcommand("labels", "Print the label table");
  c_labels->add_option("--labels", labels_path);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_split) return run_split(split);
    if (*c_train) return run_train(train, *c_train);
    if (*c_eval) return run_evaluate(ev);
    if (*c_classify) return run_classify(cl);
    if (*c_serve) return run_serve(sv);
    if (*c_labels) return run_labels(labels_path);
  } catch (const DecodeError& e) {
    std::cerr << "error: cannot decode image: " << e.what() << "\n";
    return 3;
  } catch (const UnsupportedFormatError& e) {
    std::cerr << "error: cannot decode image: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
