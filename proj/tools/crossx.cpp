// crossx: train, evaluate, ablate, verify and export activation maps.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crossx/ablation.hpp"
#include "crossx/cam.hpp"
#include "crossx/checkpoint.hpp"
#include "crossx/config.hpp"
#include "crossx/fault.hpp"
#include "crossx/train.hpp"
#include "crossx/verify.hpp"

namespace {

using namespace crossx;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitVerification = 3;

struct RunArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string checkpoint;
  std::string images;
  std::string split = "test";
  bool weighted = false;
};

CrossXConfig effective_config(const RunArgs& args) {
  CrossXConfig config = resolve_config(args.config);
  for (const auto& o : args.overrides) apply_override(config, o);
  config.validate();
  return config;
}

std::size_t worker_threads() {
  const char* env = std::getenv("CROSSX_THREADS");
  if (!env || !*env) return 1;
  try {
    const long v = std::stol(env);
    return v > 0 ? static_cast<std::size_t>(v) : 1;
  } catch (const std::exception&) {
    throw ConfigError(std::string("CROSSX_THREADS must be a positive integer, got '") + env + "'");
  }
}

void echo_config(const std::filesystem::path& out, const CrossXConfig& config) {
  std::filesystem::create_directories(out);
  std::ofstream(out / "effective-config.txt") << config.to_text();
}

CrossXModel<float> load_model(const CrossXConfig& config, const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw FormatError("checkpoint not found: " + path);
  }
  CrossXModel<float> model(ModelSpec::from_config(config), config.seed);
  load_checkpoint(read_checkpoint(path), model, config.model_digest());
  return model;
}

int cmd_train(const RunArgs& args) {
  const CrossXConfig config = effective_config(args);
  TrainOptions options;
  options.outdir = args.out;
  options.log = &std::cerr;
  const TrainResult result = train(config, options);
  std::cout << "trained " << result.state.history.size() << " epochs; best val acc " << std::setprecision(4)
            << result.best_val_acc << " at epoch " << result.best_epoch << "; outputs in " << args.out << '\n';
  return kExitOk;
}

int cmd_eval(const RunArgs& args) {
  const CrossXConfig config = effective_config(args);
  CrossXModel<float> model = load_model(config, args.checkpoint);
  ImageSet set;
  if (!args.images.empty()) {
    set = read_image_set(args.images);
  } else {
    SynthDataset data = synth_dataset(config.data, config.data_seed);
    if (args.split == "train") set = std::move(data.train);
    else if (args.split == "val") set = std::move(data.val);
    else if (args.split == "test") set = std::move(data.test);
    else throw ConfigError("--split must be train, val or test");
  }
  const EvalResult r = evaluate(model, set);
  auto opt = [](const std::optional<double>& v) {
    std::ostringstream os;
    os << std::setprecision(9);
    if (v) os << *v;
    return os.str();
  };
  std::ostringstream line;
  line << std::setprecision(9) << args.split << ',' << r.count << ',' << r.accuracy << ',' << r.acc_top << ','
       << opt(r.acc_mid) << ',' << opt(r.acc_merged) << ',' << opt(r.kl_top_mid) << ',' << opt(r.kl_top_merged);
  const std::string header = "split,count,accuracy,acc_top,acc_mid,acc_merged,kl_top_mid,kl_top_merged";
  std::cout << header << '\n' << line.str() << '\n';
  if (!args.out.empty()) {
    echo_config(args.out, config);
    std::ofstream(std::filesystem::path(args.out) / "eval.csv") << header << '\n' << line.str() << '\n';
  }
  return kExitOk;
}

int cmd_ablate(const RunArgs& args) {
  const CrossXConfig config = effective_config(args);
  echo_config(args.out, config);
  AblationOptions options;
  options.outdir = args.out;
  options.threads = worker_threads();
  options.log = &std::cerr;
  const auto rows = run_ablation(config, options);
  std::cout << "wrote " << rows.size() << " rows to " << (std::filesystem::path(args.out) / "ablation.csv").string()
            << '\n';
  return kExitOk;
}

int cmd_verify(const std::string& title, const SuiteReport& report, const std::string& out,
               const std::string& filename) {
  print_report(std::cout, title, report);
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream os(std::filesystem::path(out) / filename);
    print_report(os, title, report);
  }
  if (!report.passed()) {
    std::cerr << "verification failed:";
    for (const auto& name : report.failures()) std::cerr << ' ' << name;
    std::cerr << '\n';
    return kExitVerification;
  }
  return kExitOk;
}

int cmd_export_cam(const RunArgs& args) {
  const CrossXConfig config = effective_config(args);
  CrossXModel<float> model = load_model(config, args.checkpoint);
  const ImageSet images = read_image_set(args.images);
  if (images.height != config.data.image_size || images.width != config.data.image_size) {
    throw ConfigError("images are " + std::to_string(images.height) + "x" + std::to_string(images.width) +
                      " but the configuration expects " + std::to_string(config.data.image_size));
  }
  CamOptions options;
  options.classifier_weighted = args.weighted;
  const auto written = export_cams(model, images, args.out, options);
  std::cout << "wrote " << written.size() << " files for " << images.size() << " images to " << args.out << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-X learning at desk scale: training, ablation, verification and activation maps"};
  app.require_subcommand(1);
  RunArgs args;
  std::string fault;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", args.config, "config file or preset name")->required();
    sub->add_option("--set", args.overrides, "override, key=value (repeatable)");
  };
  auto* train = app.add_subcommand("train", "train one model");
  add_config(train);
  train->add_option("--out", args.out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_config(eval);
  eval->add_option("--checkpoint", args.checkpoint, "checkpoint file")->required();
  eval->add_option("--split", args.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--images", args.images, "images.bin to evaluate instead of a synthetic split");
  eval->add_option("--out", args.out, "output directory");

  auto* ablate = app.add_subcommand("ablate", "run the toggle ladder x pooling x seeds");
  add_config(ablate);
  ablate->add_option("--out", args.out, "output directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--out", args.out, "directory for the report");
  auto* oracle = app.add_subcommand("oracle", "brute-force equivalence suite");
  oracle->add_option("--out", args.out, "directory for the report");
  for (auto* sub : {gradcheck, oracle}) {
    sub->add_option("--inject-fault", fault)->group("");
  }

  auto* cam = app.add_subcommand("export-cam", "write activation heatmaps and overlays");
  add_config(cam);
  cam->add_option("--checkpoint", args.checkpoint, "checkpoint file")->required();
  cam->add_option("--images", args.images, "images.bin")->required();
  cam->add_option("--out", args.out, "output directory")->required();
  cam->add_flag("--classifier-weighted", args.weighted, "weight channels by the predicted class's classifier row");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (!fault.empty()) fault::inject(fault);
    if (*train) return cmd_train(args);
    if (*eval) return cmd_eval(args);
    if (*ablate) return cmd_ablate(args);
    if (*gradcheck) return cmd_verify("gradient checks", run_gradcheck_suite(), args.out, "gradcheck.txt");
    if (*oracle) return cmd_verify("oracle checks", run_oracle_suite(), args.out, "oracle.txt");
    if (*cam) return cmd_export_cam(args);
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
