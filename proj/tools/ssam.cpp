// Command-line front end: data generation, both training stages,
// evaluation, gradient checks and ablations.
#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>

#include "ssam/experiments.hpp"
#include "ssam/train.hpp"

using namespace ssam;
using namespace ssam::pipeline;
namespace fs = std::filesystem;

namespace {

struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::size_t> epochs, batch, seed;
  std::optional<double> lr, lambda_sparse;
  std::optional<std::string> insertion, experts;
  std::optional<std::size_t> eval_every;
  bool full = false;

  void add(CLI::App* cmd, bool stage_flags) {
    cmd->add_option("--config", config_file, "key = value config file");
    cmd->add_option("--set", sets, "override KEY=VALUE (repeatable)");
    cmd->add_option("--seed", seed, "init and batch-order seed");
    if (stage_flags) {
      cmd->add_option("--epochs", epochs, "epochs for this stage");
      cmd->add_option("--batch", batch, "batch size for this stage");
      cmd->add_option("--lr", lr, "peak learning rate for this stage");
      cmd->add_option("--eval-every", eval_every, "validate every N epochs (0: last epoch only)");
      cmd->add_flag("--full-schedule", full, "100 x 32 and 400 x 16 epochs/batch");
    }
    cmd->add_option("--insertion", insertion, "none|first_half|last_half|all|last_2 or a layer list");
    cmd->add_option("--experts", experts, "comma list of pimdo,spd,hplsm,tgds");
    cmd->add_option("--lambda-sparse", lambda_sparse, "weight of the routing balance loss");
  }

  TrainConfig build(int stage) const {
    TrainConfig cfg;
    if (!config_file.empty()) cfg = load_config(config_file, cfg);
    if (full) cfg.full_schedule();
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    StageConfig& s = stage == 1 ? cfg.stage1 : cfg.stage2;
    if (epochs) s.epochs = *epochs;
    if (batch) s.batch = *batch;
    if (lr) s.lr = *lr;
    if (seed) cfg.seed = *seed;
    if (eval_every) cfg.eval_every = *eval_every;
    if (insertion) cfg.insertion = *insertion;
    if (experts) cfg.experts = parse_experts(*experts);
    if (lambda_sparse) cfg.weights.lambda_sparse = *lambda_sparse;
    cfg.validate();
    return cfg;
  }
};

void print_row(const std::string& stage, const EpochRow& r) {
  std::cout << stage << " epoch " << r.epoch << " loss " << r.total;
  if (r.val) std::cout << " val_mIoU " << r.val->mIoU << " val_Pd " << r.val->Pd;
  std::cout << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

void append_metrics(const fs::path& path, const std::string& row) {
  const bool fresh = !fs::exists(path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  if (fresh) out << metrics::csv_header() << '\n';
  out << row << '\n';
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("no seeds given");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage semi-supervised small-target segmentation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate synthetic scenes");
  std::string gen_out;
  std::size_t gen_count = 400;
  std::uint64_t gen_seed = 0;
  std::size_t gen_size = 64;
  gen->add_option("--out", gen_out, "dataset directory")->required();
  gen->add_option("--count", gen_count, "number of scenes");
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--size", gen_size, "scene side in pixels");

  // split
  auto* split = app.add_subcommand("split", "write a labeled/unlabeled/val manifest");
  std::string split_data, split_out;
  double split_fraction = 0.1, split_val = 0.2;
  std::uint64_t split_seed = 0;
  split->add_option("--data", split_data, "dataset directory")->required();
  split->add_option("--label-fraction", split_fraction, "share of training scenes that keep labels");
  split->add_option("--val-fraction", split_val, "share held out for validation");
  split->add_option("--split-seed", split_seed, "shuffle seed");
  split->add_option("--out", split_out, "manifest path (default DATA/manifest.tsv)");

  // train-teacher
  auto* teach = app.add_subcommand("train-teacher", "stage one: adapter + decoder on the labeled subset");
  std::string teach_manifest, teach_out;
  ConfigFlags teach_flags;
  teach->add_option("--manifest", teach_manifest, "manifest")->required();
  teach->add_option("--out", teach_out, "output directory")->required();
  teach_flags.add(teach, true);

  // gen-pseudo
  auto* pseudo = app.add_subcommand("gen-pseudo", "teacher inference over labeled and unlabeled scenes");
  std::string pseudo_ckpt, pseudo_manifest, pseudo_dir, pseudo_out;
  double pseudo_threshold = 0.5;
  pseudo->add_option("--teacher", pseudo_ckpt, "teacher checkpoint")->required();
  pseudo->add_option("--manifest", pseudo_manifest, "manifest")->required();
  pseudo->add_option("--out-dir", pseudo_dir, "mask directory (default <manifest dir>/pseudo)");
  pseudo->add_option("--out-manifest", pseudo_out, "pseudo manifest (default <manifest dir>/pseudo_manifest.tsv)");
  pseudo->add_option("--threshold", pseudo_threshold, "probability threshold");

  // train-student
  auto* student = app.add_subcommand("train-student", "stage two: student from scratch");
  std::string student_manifest, student_val, student_out, student_mode = "pseudo";
  ConfigFlags student_flags;
  student->add_option("--manifest", student_manifest, "pseudo manifest, or a GT manifest with --mode gt")->required();
  student->add_option("--val-manifest", student_val, "manifest providing validation entries");
  student->add_option("--out", student_out, "output directory")->required();
  student->add_option("--mode", student_mode, "pseudo | gt")->check(CLI::IsMember({"pseudo", "gt"}));
  student_flags.add(student, true);

  // eval
  auto* eval = app.add_subcommand("eval", "metrics of a checkpoint on one split");
  std::string eval_ckpt, eval_manifest, eval_split = "val", eval_run = "run", eval_csv;
  double eval_threshold = 0.5;
  std::optional<double> eval_baseline;
  eval->add_option("--checkpoint", eval_ckpt, "teacher or student checkpoint")->required();
  eval->add_option("--manifest", eval_manifest, "manifest")->required();
  eval->add_option("--split", eval_split, "val | labeled | unlabeled");
  eval->add_option("--run-id", eval_run, "run identifier for the CSV row");
  eval->add_option("--csv", eval_csv, "append the row to this CSV");
  eval->add_option("--threshold", eval_threshold, "probability threshold");
  eval->add_option("--baseline-miou", eval_baseline, "fully supervised mIoU for the recovery rate");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::string grad_scope = "all";
  std::size_t grad_seeds = 5;
  bool grad_corrupt = false;
  grad->add_option("--scope", grad_scope, "primitives | experts | losses | router | all");
  grad->add_option("--seeds", grad_seeds, "number of seeds");
  grad->add_flag("--corrupt-dice", grad_corrupt, "negative control: skew the dice gradient");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "stage-one ablations");
  std::string ablate_axis, ablate_manifest, ablate_out, ablate_seeds = "0";
  std::vector<std::string> ablate_settings;
  ConfigFlags ablate_flags;
  ablate->add_option("--axis", ablate_axis, "insertion | experts | lambda_sparse")->required();
  ablate->add_option("--manifest", ablate_manifest, "manifest with val entries")->required();
  ablate->add_option("--out", ablate_out, "CSV path")->required();
  ablate->add_option("--setting", ablate_settings, "setting (repeatable; default: whole axis)");
  ablate->add_option("--seeds", ablate_seeds, "comma list of seeds");
  ablate_flags.add(ablate, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      data::SceneParams base;
      base.size = gen_size;
      const auto samples = data::generate_dataset(gen_count, gen_seed, base);
      for (const auto& s : samples) data::save_sample(s, gen_out);
      std::cout << "wrote " << samples.size() << " scenes to " << gen_out << std::endl;
    } else if (*split) {
      std::vector<std::string> ids;
      const fs::path images = fs::path(split_data) / "images";
      if (!fs::is_directory(images)) throw IoError("no images directory under " + split_data);
      for (const auto& f : fs::directory_iterator(images))
        if (f.path().extension() == ".pgm") ids.push_back(f.path().stem().string());
      std::sort(ids.begin(), ids.end());
      auto m = data::make_splits(ids, split_fraction, split_seed, split_val);
      const fs::path out = split_out.empty() ? fs::path(split_data) / "manifest.tsv" : fs::path(split_out);
      m.root = split_data;
      m = data::rebase_manifest(m, out.has_parent_path() ? out.parent_path() : fs::path("."));
      data::write_manifest(m, out);
      std::cout << "labeled " << m.count(data::Provenance::Labeled) << " unlabeled "
                << m.count(data::Provenance::Unlabeled) << " val " << m.count(data::Provenance::Val) << " -> "
                << out.string() << std::endl;
    } else if (*teach) {
      const auto cfg = teach_flags.build(1);
      const auto m = data::read_manifest(teach_manifest);
      auto run = train_teacher(cfg, m, print_row);
      const fs::path out = teach_out;
      save_checkpoint(run.checkpoint, out / "teacher.ckpt");
      if (run.best) save_checkpoint(*run.best, out / "teacher_best.ckpt");
      run.log.write(out / "teacher_log.csv");
      write_text(out / "teacher_config.txt", cfg.text());
      std::cout << "encoder checksum " << run.encoder_checksum_before << " -> " << run.encoder_checksum_after
                << std::endl;
      if (run.val) std::cout << "val mIoU " << run.val->mIoU << std::endl;
    } else if (*pseudo) {
      const auto m = data::read_manifest(pseudo_manifest);
      const auto teacher = load_teacher(load_checkpoint(pseudo_ckpt));
      const fs::path dir = pseudo_dir.empty() ? m.root / "pseudo" : fs::path(pseudo_dir);
      auto pm = generate_pseudo_labels(teacher, m, dir, pseudo_threshold);
      const fs::path out = pseudo_out.empty() ? m.root / "pseudo_manifest.tsv" : fs::path(pseudo_out);
      pm = data::rebase_manifest(pm, out.has_parent_path() ? out.parent_path() : fs::path("."));
      data::write_manifest(pm, out);
      std::cout << "wrote " << pm.entries.size() << " pseudo masks, manifest " << out.string() << std::endl;
    } else if (*student) {
      const auto cfg = student_flags.build(2);
      const auto m = data::read_manifest(student_manifest);
      std::optional<data::Manifest> val;
      if (!student_val.empty()) val = data::read_manifest(student_val);
      auto run = train_student(cfg, m, student_mode == "pseudo" ? StudentSource::Pseudo : StudentSource::GroundTruth,
                               val ? &*val : nullptr, print_row);
      const fs::path out = student_out;
      save_checkpoint(run.checkpoint, out / "student.ckpt");
      if (run.best) save_checkpoint(*run.best, out / "student_best.ckpt");
      run.log.write(out / "student_log.csv");
      write_text(out / "student_config.txt", cfg.text());
      if (run.val) std::cout << "val mIoU " << run.val->mIoU << std::endl;
    } else if (*eval) {
      const auto m = data::read_manifest(eval_manifest);
      auto report = evaluate_model(load_checkpoint(eval_ckpt), m, data::parse_provenance(eval_split), eval_threshold);
      if (eval_baseline) report.recovery_rate = metrics::recovery_rate(report.mIoU, *eval_baseline);
      const auto row = metrics::csv_row(eval_run, eval_split, report);
      std::cout << metrics::csv_header() << '\n' << row << std::endl;
      if (!eval_csv.empty()) append_metrics(eval_csv, row);
    } else if (*grad) {
      GradcheckOptions opts;
      opts.seeds.clear();
      for (std::size_t s = 1; s <= grad_seeds; ++s) opts.seeds.push_back(s);
      opts.corrupt_dice = grad_corrupt;
      const auto lines = run_gradcheck(parse_scope(grad_scope), opts);
      std::cout << format_gradcheck(lines);
      const bool ok = std::all_of(lines.begin(), lines.end(), [](const auto& l) { return l.pass; });
      return ok ? 0 : 2;
    } else if (*ablate) {
      const auto cfg = ablate_flags.build(1);
      const auto axis = parse_axis(ablate_axis);
      const auto settings = ablate_settings.empty() ? default_settings(axis) : ablate_settings;
      const auto m = data::read_manifest(ablate_manifest);
      const auto rows = run_ablation(axis, settings, parse_seeds(ablate_seeds), cfg, m);
      std::string csv = ablation_header() + "\n";
      for (const auto& r : rows) {
        csv += ablation_row(r) + "\n";
        std::cout << ablation_row(r) << std::endl;
      }
      write_text(ablate_out, csv);
    }
  } catch (const ssam::Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
