// Command-line front end: train, evaluate, matrix, figure, dataset inspect.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "mrtrans/experiment.hpp"
#include "mrtrans/runtime.hpp"

namespace fs = std::filesystem;
using namespace mrtrans;

namespace {

ExperimentConfig resolve_config(const std::string& path, const std::string& preset) {
  std::optional<std::string> override_preset;
  if (!preset.empty()) override_preset = preset;
  if (path.empty()) return preset_config(preset.empty() ? "toy" : preset);
  return load_config(path, override_preset);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

void print_summary(const MetricsReport& r) {
  std::printf("%s  n=%zu  PSNR %s +- %.2f  SSIM %s +- %.3f  MS-SSIM %s +- %.3f\n", r.generator.c_str(), r.count(),
              format_metric("psnr", r.psnr.mean).c_str(), r.psnr.std, format_metric("ssim", r.ssim.mean).c_str(),
              r.ssim.std, format_metric("ms_ssim", r.ms_ssim.mean).c_str(), r.ms_ssim.std);
}

int cmd_train(const std::string& config, const std::string& preset, std::optional<std::uint64_t> seed,
              const std::string& output_dir, bool resume) {
  ExperimentConfig c = resolve_config(config, preset);
  if (seed) c.seed = *seed;
  if (!output_dir.empty()) c.output_dir = output_dir;
  validate(c);
  const PairDataset data = load_dataset(c);
  std::printf("mode %s  seed %llu  train %zu  val %zu  fingerprint %s\n", c.mode.str().c_str(),
              static_cast<unsigned long long>(c.seed), data.train.size(), data.val.size(), fingerprint(c).c_str());
  TrainOptions opt;
  opt.on_record = [](const Json& rec) {
    if (rec.contains("val_psnr"))
      std::printf("iter %lld  val PSNR %.3f\n", rec["iteration"].get<long long>(), rec["val_psnr"].get<double>());
    std::fflush(stdout);
  };
  Trainer trainer(c, data, opt);
  const auto last = fs::path(c.output_dir) / "last.ckpt";
  if (resume && fs::exists(last)) {
    trainer.restore(load_checkpoint(last.string()));
    std::printf("resumed at iteration %lld\n", static_cast<long long>(trainer.iteration()));
  }
  const TrainResult r = trainer.train();
  std::printf("best val PSNR %.3f at iteration %lld (initial %.3f, final %.3f)\n", r.best_val_psnr,
              static_cast<long long>(r.best_iteration), r.initial_val_psnr, r.final_val_psnr);
  std::printf("checkpoints in %s\n", c.output_dir.c_str());
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& split, const std::string& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const ExperimentConfig c = config_from_json(ck.config);
  const PairDataset data = load_dataset(c);
  const EvaluationResult r = evaluate(ck, data.split(parse_split(split)));
  print_summary(r.g);
  if (r.f) print_summary(*r.f);
  if (!out.empty()) {
    write_evaluation(r, out);
    std::printf("records written to %s\n", out.c_str());
  }
  return 0;
}

int cmd_matrix(const std::string& config, const std::string& preset, const std::string& modes_text,
               const std::string& seeds_text, const std::string& output_dir) {
  ExperimentConfig c = resolve_config(config, preset);
  if (!output_dir.empty()) c.output_dir = output_dir;
  std::vector<TrainingMode> modes;
  for (const auto& m : split_list(modes_text)) modes.push_back(TrainingMode::parse(m));
  if (modes.empty()) throw std::invalid_argument("--modes: no modes given");
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(seeds_text)) seeds.push_back(std::stoull(s));
  if (seeds.empty()) seeds.push_back(c.seed);
  MatrixOptions opt;
  opt.progress = [](const std::string& msg) {
    std::printf("%s\n", msg.c_str());
    std::fflush(stdout);
  };
  const MatrixResult r = run_experiment_matrix(c, modes, seeds, opt);
  fs::create_directories(c.output_dir);
  std::ofstream tsv(fs::path(c.output_dir) / "matrix.tsv");
  write_matrix_tsv(tsv, r);
  std::ostringstream grid;
  write_matrix_grid(grid, r);
  std::ofstream(fs::path(c.output_dir) / "matrix.txt") << grid.str();
  std::cout << grid.str();
  for (const auto& cell : r.cells)
    if (!cell.ok) std::fprintf(stderr, "failed: %s seed %llu: %s\n", cell.mode.str().c_str(),
                               static_cast<unsigned long long>(cell.seed), cell.error.c_str());
  return 0;
}

int cmd_figure(const std::vector<std::string>& checkpoints, const std::string& out, const std::string& split,
               int samples) {
  std::vector<Checkpoint> cks;
  for (const auto& p : checkpoints) cks.push_back(load_checkpoint(p));
  const PairDataset data = load_dataset(config_from_json(cks.front().config));
  const auto& pool = data.split(parse_split(split));
  std::vector<SlicePair> picked(pool.begin(), pool.begin() + std::min<std::ptrdiff_t>(samples, std::ssize(pool)));
  emit_residual_figure(cks, picked, out);
  std::printf("figure written to %s\n", out.c_str());
  return 0;
}

int cmd_inspect(const std::string& root, const std::string& source, const std::string& target, std::uint64_t seed) {
  DataConfig d;
  d.synthetic = false;
  d.root = root;
  d.source_modality = source;
  d.target_modality = target;
  const DatasetInspection r = inspect_dataset(d, seed);
  std::printf("patients found: %zu\n", r.patients_found);
  std::printf("%-6s %9s %9s\n", "split", "patients", "slices");
  std::printf("%-6s %9zu %9zu\n", "train", r.train.patients, r.train.slices);
  std::printf("%-6s %9zu %9zu\n", "val", r.val.patients, r.val.slices);
  std::printf("%-6s %9zu %9zu\n", "test", r.test.patients, r.test.slices);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Translation GANs with registration and frequency-domain losses"};
  app.require_subcommand(1);

  std::string config, preset, output_dir;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  auto* train = app.add_subcommand("train", "train one configuration");
  train->add_option("--config", config, "JSON config file");
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--preset", preset, "toy or full")->check(CLI::IsMember({"toy", "full"}));
  train->add_option("--output-dir", output_dir, "override output_dir");
  train->add_flag("--resume", resume, "continue from last.ckpt in the output directory");

  std::string checkpoint, split = "test", records;
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on a split");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--split", split, "train, val or test");
  eval->add_option("--out", records, "write per-slice records here");

  std::string modes, seeds;
  auto* matrix = app.add_subcommand("matrix", "train and evaluate a set of modes");
  matrix->add_option("--config", config, "JSON config file");
  matrix->add_option("--preset", preset, "toy or full")->check(CLI::IsMember({"toy", "full"}));
  matrix->add_option("--modes", modes, "comma-separated modes, e.g. gan,gan+n,gan+n+r")->required();
  matrix->add_option("--seeds", seeds, "comma-separated seeds (default: config seed)");
  matrix->add_option("--output-dir", output_dir, "override output_dir");

  std::vector<std::string> figure_checkpoints;
  std::string figure_out;
  int samples = 4;
  auto* figure = app.add_subcommand("figure", "prediction and residual grid (PPM)");
  figure->add_option("--checkpoint", figure_checkpoints, "checkpoint file; repeat for more models")->required();
  figure->add_option("--out", figure_out, "output .ppm path")->required();
  figure->add_option("--split", split, "split to draw samples from");
  figure->add_option("--samples", samples, "number of sample rows")->check(CLI::PositiveNumber);

  std::string root, source = "t1", target = "t2";
  std::uint64_t split_seed = 0;
  auto* dataset = app.add_subcommand("dataset", "dataset utilities");
  dataset->require_subcommand(1);
  auto* inspect = dataset->add_subcommand("inspect", "count patients and slices per split");
  inspect->add_option("--root", root, "directory with <id>_<modality>.nii[.gz] files")->required();
  inspect->add_option("--source", source, "source modality suffix");
  inspect->add_option("--target", target, "target modality suffix");
  inspect->add_option("--seed", split_seed, "patient split seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config, preset, seed, output_dir, resume);
    if (*eval) return cmd_evaluate(checkpoint, split, records);
    if (*matrix) return cmd_matrix(config, preset, modes, seeds, output_dir);
    if (*figure) return cmd_figure(figure_checkpoints, figure_out, split, samples);
    if (*inspect) return cmd_inspect(root, source, target, split_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
