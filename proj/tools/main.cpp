#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cogcalib/harness.hpp"

namespace fs = std::filesystem;
using namespace cogcalib;

namespace {

void note_written(const std::string& path) { std::cout << "wrote " << path << "\n"; }

int cmd_datagen(const std::string& config_path, const std::string& out_dir,
                std::uint64_t seed_flag, bool seed_given,
                const std::string& model_path) {
  const ExperimentConfig config = ExperimentConfig::from_file(config_path);
  const std::uint64_t seed = seed_given ? seed_flag : config.seeds.front();

  SyntheticTaskSpec task = config.task;
  task.seed = mix_seed(seed, "data");

  fs::create_directories(out_dir);
  const auto out = [&](const std::string& name) {
    return (fs::path(out_dir) / name).string();
  };

  write_dataset_csv(make_pretrain_pool(task), out("pretrain.csv"));
  note_written(out("pretrain.csv"));
  write_dataset_csv(make_ood_set(task, task.ood_shift_level), out("ood.csv"));
  note_written(out("ood.csv"));

  if (!model_path.empty()) {
    const ModelParams pretrained = read_model_json(model_path);
    const SeedContext ctx = prepare_seed_with_model(config, seed, pretrained);
    write_dataset_csv(ctx.known_train_pool, out("known_pool.csv"));
    note_written(out("known_pool.csv"));
    write_dataset_csv(ctx.unknown_train_pool, out("unknown_pool.csv"));
    note_written(out("unknown_pool.csv"));
    write_dataset_csv(ctx.train_set, out("train.csv"));
    note_written(out("train.csv"));
    write_dataset_csv(ctx.val_set, out("val.csv"));
    note_written(out("val.csv"));
    write_dataset_csv(ctx.test_set, out("test.csv"));
    note_written(out("test.csv"));
    write_dataset_csv(ctx.cal.samples, out("cal.csv"));
    note_written(out("cal.csv"));
  }
  return 0;
}

int cmd_pretrain(const std::string& config_path, const std::string& out_path,
                 std::uint64_t seed_flag, bool seed_given) {
  const ExperimentConfig config = ExperimentConfig::from_file(config_path);
  const std::uint64_t seed = seed_given ? seed_flag : config.seeds.front();
  const ModelParams model = pretrain_surrogate(config, seed);
  write_model_json(model, out_path);
  note_written(out_path);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& method_name, std::uint64_t seed_flag,
              bool seed_given) {
  ExperimentConfig config = ExperimentConfig::from_file(config_path);
  if (!out_dir.empty()) config.out_dir = out_dir;
  if (!method_name.empty()) {
    const auto m = method_from_string(method_name);
    if (!m) throw ConfigError("unknown method '" + method_name + "'");
    config.methods = {*m};
  }
  if (seed_given) config.seeds = {seed_flag};

  run_experiment(config);
  note_written((fs::path(config.out_dir) / "report.csv").string());
  note_written((fs::path(config.out_dir) / "summary.csv").string());
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path,
                 int k_classes, double temperature, int bins,
                 const std::string& out_path) {
  const ModelParams model = read_model_json(model_path);
  const Dataset data = read_dataset_csv(data_path, k_classes);

  std::vector<PredictionRecord> records(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data.samples[i];
    const ProbVector p =
        apply_temperature(forward(model, s.features, Mode::Eval), temperature);
    const int pred = argmax_lowest(p);
    records[i].confidence = p[pred];
    records[i].correct = pred == s.label;
  }
  const MetricsReport rep = evaluate_records(records, bins);

  char buf[64];
  std::ofstream out(out_path);
  if (!out) throw InvalidInputError("cannot open for writing: " + out_path);
  out << "metric,value\n";
  const auto put = [&](const char* name, double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    out << name << ',' << buf << "\n";
  };
  put("accuracy", rep.accuracy);
  put("ece", rep.ece);
  put("auroc", rep.auroc.value_or(0.5));
  out << "n_records," << rep.n_records << "\n";
  for (const BinStats& b : rep.bins) {
    std::snprintf(buf, sizeof buf, "bin%d_count,%zu", b.bin, b.count);
    out << buf << "\n";
    put(("bin" + std::to_string(b.bin) + "_accuracy").c_str(), b.mean_accuracy);
    put(("bin" + std::to_string(b.bin) + "_confidence").c_str(), b.mean_confidence);
  }
  note_written(out_path);

  std::printf("accuracy %.4f  ece %.4f  auroc %.4f  (n=%zu)\n", rep.accuracy,
              rep.ece, rep.auroc.value_or(0.5), rep.n_records);
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir,
              const std::string& kind, int r, const std::string& fractions_csv) {
  ExperimentConfig config = ExperimentConfig::from_file(config_path);
  if (!out_dir.empty()) config.out_dir = out_dir;

  if (kind == "bias") {
    run_bias_sweep(config, r);
    note_written((fs::path(config.out_dir) / "bias_report.csv").string());
  } else if (kind == "deletion") {
    std::vector<double> fractions;
    std::stringstream ss(fractions_csv);
    std::string item;
    while (std::getline(ss, item, ',')) fractions.push_back(std::stod(item));
    run_deletion_sweep(config, fractions);
    note_written((fs::path(config.out_dir) / "deletion_report.csv").string());
  } else {
    throw ConfigError("unknown sweep kind '" + kind + "' (use bias or deletion)");
  }
  return 0;
}

int cmd_report(const std::string& dir) {
  assemble_report(dir);
  note_written((fs::path(dir) / "report.csv").string());
  note_written((fs::path(dir) / "summary.csv").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cogcalib: knowledge-gated calibration experiments on surrogate classifiers"};
  app.require_subcommand(1);

  std::string config_path, out_dir, model_path, data_path, method_name;
  std::string kind = "bias", fractions = "0,0.25,0.5,0.75", report_dir;
  std::uint64_t seed = 0;
  int r = 5, k_classes = -1, bins = 10;
  double temperature = 1.0;

  auto* datagen = app.add_subcommand("datagen", "generate task datasets as CSV");
  datagen->add_option("--config", config_path, "config file")->required();
  datagen->add_option("--out", out_dir, "output directory")->default_val("data");
  auto* dg_seed = datagen->add_option("--seed", seed, "experiment seed");
  datagen->add_option("--model", model_path,
                      "pretrained model json; also emits tagged pools and splits");

  auto* pretrain = app.add_subcommand("pretrain", "train the surrogate on the pretraining pool");
  pretrain->add_option("--config", config_path, "config file")->required();
  pretrain->add_option("--out", out_dir, "output model json")->default_val("model.json");
  auto* pt_seed = pretrain->add_option("--seed", seed, "experiment seed");

  auto* train_cmd = app.add_subcommand("train", "run the method x seed experiment matrix");
  train_cmd->add_option("--config", config_path, "config file")->required();
  train_cmd->add_option("--out", out_dir, "output directory");
  train_cmd->add_option("--method", method_name, "restrict to one method");
  auto* tr_seed = train_cmd->add_option("--seed", seed, "restrict to one seed");

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a model on a dataset CSV");
  evaluate->add_option("--model", model_path, "model json")->required();
  evaluate->add_option("--data", data_path, "dataset csv")->required();
  evaluate->add_option("--k", k_classes, "class count override");
  evaluate->add_option("--temperature", temperature, "softmax temperature");
  evaluate->add_option("--bins", bins, "reliability bins");
  evaluate->add_option("--out", out_dir, "output metrics csv")->default_val("metrics.csv");

  auto* sweep = app.add_subcommand("sweep", "knowledge-bias or deletion sweeps");
  sweep->add_option("--config", config_path, "config file")->required();
  sweep->add_option("--kind", kind, "bias | deletion");
  sweep->add_option("--r", r, "number of mixture steps (bias)");
  sweep->add_option("--fractions", fractions, "comma list of deletion fractions");
  sweep->add_option("--out", out_dir, "output directory");

  auto* report = app.add_subcommand("report", "assemble report.csv/summary.csv from runs");
  report->add_option("--dir", report_dir, "experiment output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (datagen->parsed())
      return cmd_datagen(config_path, out_dir, seed, !dg_seed->empty(), model_path);
    if (pretrain->parsed())
      return cmd_pretrain(config_path, out_dir, seed, !pt_seed->empty());
    if (train_cmd->parsed())
      return cmd_train(config_path, out_dir, method_name, seed, !tr_seed->empty());
    if (evaluate->parsed())
      return cmd_evaluate(model_path, data_path, k_classes, temperature, bins, out_dir);
    if (sweep->parsed()) return cmd_sweep(config_path, out_dir, kind, r, fractions);
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
