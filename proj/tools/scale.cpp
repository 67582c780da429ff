// scale: train, evaluate and verify learned augmentation distributions.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "scale/run.hpp"

namespace {

struct Flags {
  std::string config;
  std::string preset;
  std::string out;
  std::string resume;
  std::string predictions;
  long long seed = -1;
  long long workers = -1;
};

scale::RunConfig resolve(const Flags& f, scale::Command cmd) {
  scale::RunConfig c = scale::load_config(f.preset, f.config);
  // A train config is also a valid eval config; the subcommand decides.
  c.command = cmd;
  if (f.seed >= 0) c.seed = static_cast<std::uint64_t>(f.seed);
  if (f.workers >= 1) c.workers = static_cast<std::size_t>(f.workers);
  if (const char* env = std::getenv("SCALE_OUT_DIR"); env && *env) c.out_dir = env;
  if (!f.out.empty()) c.out_dir = f.out;
  if (const char* env = std::getenv("SCALE_DATA_DIR"); env && *env) c.data.dir = env;
  scale::validate(c);
  return c;
}

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON run config");
  app->add_option("--preset", f.preset, "named preset")
      ->check(CLI::IsMember(scale::preset_names()));
  app->add_option("--seed", f.seed, "override the seed");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--workers", f.workers, "worker threads");
}

int run_train(const Flags& f) {
  const auto c = resolve(f, scale::Command::train);
  std::cerr << "training " << c.arch.describe() << " on " << scale::to_string(c.data.kind) << " -> "
            << c.out_dir << "\n";
  const auto res = c.precision == scale::Precision::float32
                       ? scale::run_train<float>(c, &std::cerr, f.resume)
                       : scale::run_train<double>(c, &std::cerr, f.resume);
  std::cout << res.report.dump(2) << "\n";
  return 0;
}

int run_eval(const Flags& f) {
  if (!f.predictions.empty()) {
    std::size_t bins = scale::kDefaultBins;
    std::string out = f.out;
    if (!f.config.empty() || !f.preset.empty()) {
      const auto c = resolve(f, scale::Command::eval);
      bins = c.eval.bins;
      out = c.out_dir;
    }
    const auto r = scale::eval_predictions_csv(f.predictions, bins);
    if (!out.empty()) {
      std::filesystem::create_directories(out);
      scale::write_text(std::filesystem::path(out) / "report.json", r.dump(2) + "\n");
    }
    std::cout << r.dump(2) << "\n";
    return 0;
  }
  auto c = resolve(f, scale::Command::eval);
  const auto r = c.precision == scale::Precision::float32 ? scale::run_eval<float>(c)
                                                          : scale::run_eval<double>(c);
  std::cout << r.dump(2) << "\n";
  return 0;
}

int run_verify(const Flags& f) {
  const auto c = resolve(f, scale::Command::verify);
  const auto groups = scale::run_verify(c, &std::cout);
  bool ok = true;
  for (const auto& g : groups) ok = ok && g.pass();
  std::cout << (ok ? "all checks pass" : "SOME CHECKS FAILED") << " (details in " << c.out_dir
            << "/verify.txt)\n";
  return ok ? 0 : 1;
}

int run_demo(const Flags& f) {
  const auto c = resolve(f, scale::Command::demo_zero_gap);
  const auto r = scale::run_demo(c, &std::cout);
  std::cout << (r.pass ? "demo criteria met" : "demo criteria NOT met") << "\n";
  return r.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scale: learned augmentation distributions with a PAC-Bayes regularizer"};
  app.require_subcommand(1);
  Flags f;
  auto* train = app.add_subcommand("train", "train a model and its augmentation distribution");
  add_common(train, f);
  train->add_option("--resume", f.resume, "continue from a checkpoint");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (accuracy, TTA, ECE)");
  add_common(eval, f);
  eval->add_option("--predictions", f.predictions,
                   "CSV with header confidence,correct; report ECE of these predictions");
  auto* verify = app.add_subcommand("verify", "run the oracle checks");
  add_common(verify, f);
  auto* demo = app.add_subcommand("demo-zero-gap", "2D zero-gap demonstration");
  add_common(demo, f);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return run_train(f);
    if (*eval) return run_eval(f);
    if (*verify) return run_verify(f);
    if (*demo) return run_demo(f);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
