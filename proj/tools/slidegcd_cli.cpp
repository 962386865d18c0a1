#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "slidegcd/slidegcd.hpp"

using namespace slidegcd;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

void emit(const nlohmann::json& j) { std::cout << j.dump() << "\n"; }

std::vector<Arm> arms_of(const std::string& s) {
  if (s == "mil") return {Arm::MilOnly};
  if (s == "slidegcd") return {Arm::SlideGcd};
  return {Arm::MilOnly, Arm::SlideGcd};
}

TrainConfig config_for(const std::string& path, const DatasetManifest& manifest) {
  nlohmann::json j = path.empty() ? nlohmann::json::object() : read_json_file(path);
  // Input width and class count always come from the data.
  j["d_p"] = manifest.feature_dim;
  j["classes"] = manifest.classes;
  return config_from_json(j);
}

Prediction predict_one(const Checkpoint& ck, const SlideBag& bag) {
  if (ck.arm == Arm::SlideGcd) return infer_slide(ck.model, bag);
  Matrix p = predict_mil(ck.model, std::span<const SlideBag>(&bag, 1));
  auto row = p.row(0);
  return {static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()), {row.begin(), row.end()}};
}

// Node set of a single-query inference: the query, then the newest slots.
Hypergraph inference_graph(const Model& m, const SlideBag& bag) {
  Tape t;
  Value q = embed_slide(t, bind_frozen(t, m.backbone), bag.instances);
  const std::size_t from_buffer = std::min(m.buffer.size(), m.cfg.buffer_capacity - 1);
  Matrix nodes = from_buffer > 0 ? concat_rows({q, t.constant(m.buffer.embeddings(0, from_buffer))}).data() : q.data();
  return build_slide_graph(m, nodes, 1);
}

int cmd_gen_data(const std::string& spec_path, const std::string& out) {
  SyntheticSpec spec = synthetic_spec_from_json(read_json_file(spec_path));
  DatasetManifest m = generate_synthetic_dataset(spec, out);
  emit({{"out", out}, {"slides", m.entries.size()}, {"classes", m.classes}, {"feature_dim", m.feature_dim}});
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path, const std::string& out,
              const std::string& arm_opt, bool skip_cv) {
  Dataset data = load_dataset(data_dir);
  TrainConfig cfg = config_for(config_path, data.manifest);
  const std::vector<Arm> arms = arms_of(arm_opt);

  std::string current_arm;
  std::string current_fold;
  TrainHooks hooks;
  hooks.log = [&](const StepRecord& r) {
    nlohmann::json j = to_json(r);
    j["arm"] = current_arm;
    j["fold"] = current_fold;
    emit(j);
  };
  if (!skip_cv) {
    // One arm at a time so that log lines carry the arm name.
    CvReport report;
    for (Arm arm : arms) {
      current_arm = arm_name(arm);
      const Arm one[] = {arm};
      std::size_t fold = 0;
      TrainHooks fold_hooks = hooks;
      fold_hooks.log = [&](const StepRecord& r) {
        if (r.phase == "warmup" && r.epoch == 0 && r.step == 0) current_fold = std::to_string(fold++);
        hooks.log(r);
      };
      CvReport part = run_cv(data.bags, cfg, one, fold_hooks);
      report.folds = part.folds;
      report.arms.push_back(part.arms.front());
    }
    emit({{"report", to_json(report)}});
  }

  const Arm final_arm = arms.back();
  current_arm = arm_name(final_arm);
  current_fold = "all";
  Model m = train_model(cfg, data.bags, final_arm, hooks);
  save_checkpoint(out, m, final_arm);
  emit({{"checkpoint", out}, {"arm", arm_name(final_arm)}, {"config", to_json(cfg)}});
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  Dataset data = load_dataset(data_dir);
  if (data.manifest.feature_dim != ck.model.cfg.d_p || data.manifest.classes != ck.model.cfg.classes) {
    throw Error(ErrorCode::DimensionMismatch, "dataset does not match checkpoint");
  }
  Matrix probs = predict(ck.model, ck.arm, data.bags);
  std::vector<int> labels;
  for (const auto& b : data.bags) labels.push_back(b.label);
  emit({{"arm", arm_name(ck.arm)}, {"slides", data.bags.size()}, {"metrics", to_json(evaluate_metrics(probs, labels))}});
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& bag_path, const std::string& graph_out) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  SlideBag bag{bag_path, read_bag(bag_path), 0};
  validate_bag(bag, ck.model.cfg.d_p, static_cast<int>(ck.model.cfg.classes));
  Prediction p = predict_one(ck, bag);
  emit({{"class", p.predicted}, {"probs", p.probs}});
  if (!graph_out.empty()) {
    if (ck.arm != Arm::SlideGcd) throw Error(ErrorCode::InvalidValue, "graph dump needs a slidegcd checkpoint");
    std::ofstream out(graph_out, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + graph_out);
    out << inference_graph(ck.model, bag).to_json().dump() << "\n";
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  PipelineCheckSetup setup;
  setup.seed = seed;
  GradCheckReport r = pipeline_grad_check(setup);
  std::printf("%-18s %8s %14s\n", "parameter", "coords", "max_rel_err");
  for (const auto& e : r.per_parameter) std::printf("%-18s %8zu %14.3e\n", e.name.c_str(), e.coordinates, e.max_rel_error);
  std::printf("%s max_rel_err=%.3e tol=%.1e\n", r.passed ? "PASS" : "FAIL", r.max_rel_error, r.tolerance);
  return r.passed ? 0 : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SlideGCD training and evaluation on MIL bag datasets", "slidegcd"};
  app.require_subcommand(1);

  std::string spec_path, out_dir;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  gen->add_option("--spec", spec_path, "Synthetic spec JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();

  std::string data_dir, config_path, ckpt_out, arm = "both";
  bool skip_cv = false;
  auto* train = app.add_subcommand("train", "Cross-validate and train a final model");
  train->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--config", config_path, "Config JSON (missing keys take defaults)")->check(CLI::ExistingFile);
  train->add_option("--out", ckpt_out, "Checkpoint path")->required();
  train->add_option("--arm", arm, "mil, slidegcd or both")->check(CLI::IsMember({"mil", "slidegcd", "both"}));
  train->add_flag("--skip-cv", skip_cv, "Only train the final model");

  std::string ckpt_in, eval_data;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt_in, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);

  std::string infer_ckpt, bag_path, graph_out;
  auto* infer = app.add_subcommand("infer", "Classify one bag file");
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--bag", bag_path, "SGCD bag file")->required()->check(CLI::ExistingFile);
  infer->add_option("--graph-out", graph_out, "Write the query's hypergraph as JSON");

  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full training loss");
  gc->add_option("--seed", gc_seed, "Instance seed");

  if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    std::cerr << "unknown subcommand '" << argv[1] << "'\n" << app.help();
    return kUsageError;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsageError;
  }

  try {
    if (*gen) return cmd_gen_data(spec_path, out_dir);
    if (*train) return cmd_train(data_dir, config_path, ckpt_out, arm, skip_cv);
    if (*eval) return cmd_eval(ckpt_in, eval_data);
    if (*infer) return cmd_infer(infer_ckpt, bag_path, graph_out);
    if (*gc) return cmd_gradcheck(gc_seed);
  } catch (const InvalidValueError& e) {
    std::cerr << "error: " << e.what() << " (key " << e.key() << ")\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
