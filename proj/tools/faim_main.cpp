// faim: synthetic-video object detection with instance-mask temporal
// aggregation. Subcommands: generate | pretrain | finetune | eval | ablate |
// bench | verify.
//
// Usage: faim <command> [config-file] [--key=value ...]
// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "faim/config.hpp"
#include "faim/experiment.hpp"
#include "faim/eval.hpp"
#include "faim/fvt.hpp"
#include "faim/train.hpp"
#include "faim/verify.hpp"

namespace fs = std::filesystem;
using namespace faim;

namespace {

std::string run_dir(const RunConfig& cfg, const std::string& command) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s-%08llx-s%llu", command.c_str(),
                static_cast<unsigned long long>(cfg.hash() & 0xFFFFFFFFull),
                static_cast<unsigned long long>(cfg.seed));
  return (fs::path(cfg.out_dir) / buf).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
  if (!os) throw std::runtime_error("failed to write " + path);
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

// Transplants every tensor with a matching name and shape.
void load_init_from(Pipeline& pipe, const std::string& dir) {
  Checkpoint ck = load_checkpoint(dir);
  for (const std::string& name : ck.params.names()) {
    if (!pipe.params.has(name)) continue;
    Tensor& dst = pipe.params.get(name);
    const Tensor& src = ck.params.get(name);
    if (dst.shape() != src.shape()) continue;
    std::copy(src.data(), src.data() + src.numel(), dst.data());
  }
}

int cmd_generate(const RunConfig& cfg) {
  Dataset ds = generate_dataset(cfg.generate_spec());
  write_dataset(cfg.dataset_dir, ds);
  std::cout << "wrote " << ds.clips.size() << " clips to " << cfg.dataset_dir << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
  Dataset ds = load_dataset(cfg.dataset_dir);
  Pipeline pipe = build_pipeline(cfg.model_config(), cfg.seed);
  const std::string dir = run_dir(cfg, "pretrain");
  fs::create_directories(dir);
  write_text((fs::path(dir) / "config.txt").string(), cfg.canonical());
  FitResult fr = fit(pipe, ds, TrainPhase::Pretrain, cfg.train_config(0), cfg.runtime_config(),
                     dir);
  std::cout << "pretrained " << cfg.total_iters << " iters, artifacts in " << dir << "\n";
  (void)fr;
  return 0;
}

int cmd_finetune(const RunConfig& cfg) {
  Dataset ds = load_dataset(cfg.dataset_dir);
  Pipeline pipe = build_pipeline(cfg.model_config(), cfg.seed);
  if (!cfg.init_from.empty()) {
    load_init_from(pipe, cfg.init_from);
    init_video_branch_from_head(pipe.params);
  }
  const std::string dir = run_dir(cfg, "finetune");
  fs::create_directories(dir);
  write_text((fs::path(dir) / "config.txt").string(), cfg.canonical());
  fit(pipe, ds, TrainPhase::Finetune, cfg.train_config(0), cfg.runtime_config(), dir);
  std::cout << "finetuned " << cfg.total_iters << " iters, artifacts in " << dir << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  Dataset ds = load_dataset(cfg.dataset_dir);
  Pipeline pipe = build_pipeline(cfg.model_config(), cfg.seed);
  if (!cfg.init_from.empty()) load_init_from(pipe, cfg.init_from);
  EvalReport report = evaluate_dataset(pipe, ds, cfg.runtime_config(), cfg.split, true,
                                       cfg.threads);
  const std::string dir = run_dir(cfg, "eval");
  fs::create_directories(dir);
  write_text((fs::path(dir) / "report.json").string(), eval_report_json(report) + "\n");
  std::cout << eval_report_json(report) << "\n";
  std::cout << "report written to " << dir << "/report.json\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  Dataset ds = load_dataset(cfg.dataset_dir);
  const std::string dir = run_dir(cfg, "ablate");
  fs::create_directories(dir);
  write_text((fs::path(dir) / "config.txt").string(), cfg.canonical());

  if (cfg.ablate_axis == "aggregation") {
    DeskAblationResult result = run_desk_ablation(cfg, ds, cfg.pretrain_iters, cfg.finetune_iters,
                                                  cfg.seed_list(), &std::cerr);
    std::string table = "mode";
    for (const SeedOutcome& s : result.seeds) table += ",seed" + std::to_string(s.seed);
    table += "\n";
    for (const std::string& mode : {"none", "box", "mask"}) {
      table += mode;
      for (const SeedOutcome& s : result.seeds) {
        char buf[24];
        std::snprintf(buf, sizeof(buf), ",%.4f", s.map50.at(mode));
        table += buf;
      }
      table += "\n";
    }
    std::string variance = "seed,ratio_box,ratio_mask\n";
    for (const SeedOutcome& s : result.seeds) {
      char buf[80];
      std::snprintf(buf, sizeof(buf), "%llu,%.6g,%.6g\n",
                    static_cast<unsigned long long>(s.seed), s.var_ratio_box, s.var_ratio_mask);
      variance += buf;
    }
    write_text((fs::path(dir) / "ablation.csv").string(), table);
    write_text((fs::path(dir) / "variance.csv").string(), variance);
    std::cout << table;
    std::cout << "ordering mask>=box>=none holds in " << result.order_holds << "/"
              << result.seeds.size() << " seeds; mean mask-none gain "
              << result.mean_gain_points << " mAP50 points\n";
    std::cout << "variance ratio mask<box holds in " << result.variance_holds << "/"
              << result.seeds.size() << " seeds\n";
    return 0;
  }

  auto rows = run_axis_ablation(cfg, ds, cfg.ablate_axis, cfg.pretrain_iters, cfg.finetune_iters,
                                &std::cerr);
  std::string table = "value,map50\n";
  for (const auto& [label, map50] : rows) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s,%.4f\n", label.c_str(), map50);
    table += buf;
  }
  write_text((fs::path(dir) / "ablation.csv").string(), table);
  std::cout << table;
  return 0;
}

int cmd_bench(const RunConfig& cfg) {
  std::vector<BenchRow> rows = run_benchmark(cfg.bench_stage, parse_int_list(cfg.bench_sizes),
                                             cfg.bench_repeats, cfg.bench_warmup);
  const std::string dir = run_dir(cfg, "bench");
  fs::create_directories(dir);
  const std::string csv = benchmark_csv(rows);
  write_text((fs::path(dir) / "bench.csv").string(), csv);
  std::cout << csv;
  return 0;
}

int cmd_verify() {
  std::vector<CheckResult> results = run_all_checks();
  bool all = true;
  for (const CheckResult& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name
              << (r.detail.empty() ? "" : " - " + r.detail) << "\n";
    all = all && r.pass;
  }
  std::cout << (all ? "verification passed\n" : "verification FAILED\n");
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: faim <generate|pretrain|finetune|eval|ablate|bench|verify> "
                 "[config-file] [--key=value ...]\n";
    return 2;
  }
  const std::string command = argv[1];
  std::string config_path;
  std::vector<std::string> overrides;
  for (int i = 2; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--", 0) == 0) {
      overrides.push_back(arg);
    } else if (config_path.empty()) {
      config_path = arg;
    } else {
      std::cerr << "error: unexpected positional argument '" << arg << "'\n";
      return 2;
    }
  }

  try {
    RunConfig cfg = parse_config(config_path, overrides);
    if (command == "generate") return cmd_generate(cfg);
    if (command == "pretrain") return cmd_pretrain(cfg);
    if (command == "finetune") return cmd_finetune(cfg);
    if (command == "eval") return cmd_eval(cfg);
    if (command == "ablate") return cmd_ablate(cfg);
    if (command == "bench") return cmd_bench(cfg);
    if (command == "verify") return cmd_verify();
    std::cerr << "error: unknown command '" << command << "'\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
