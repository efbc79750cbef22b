// dbfed: generate data, train federated models, score prediction logs and
// compare runs.
//
// Exit status: 0 success, 1 configuration error, 2 data/parse error,
// 3 runtime/numeric error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dbfed/data.hpp"
#include "dbfed/error.hpp"
#include "dbfed/experiment.hpp"
#include "dbfed/metrics.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::string predictions;
  std::size_t num_classes = 0;
  std::size_t num_groups = 0;
  std::vector<std::string> results;
};

int cmd_generate_data(const Options& opt) {
  auto cfg = dbfed::load_config(opt.config);
  if (!cfg.has_synthetic)
    throw dbfed::ConfigError("generate-data: config has no synthetic.* section");
  if (opt.seed) cfg.synthetic.seed = *opt.seed;
  const std::string path = opt.out.empty() ? cfg.data_path : opt.out;
  if (path.empty()) throw dbfed::ConfigError("generate-data: no output path (--out or data.path)");
  const auto ds = dbfed::generate_synthetic(cfg.synthetic);
  dbfed::save_csv(path, ds);
  std::cout << dbfed::dataset_summary(ds) << "wrote " << path << "\n";
  return 0;
}

int cmd_train(const Options& opt) {
  auto cfg = dbfed::load_config(opt.config);
  if (opt.seed) cfg.federation.master_seed = *opt.seed;
  if (opt.mode) cfg.modes = {dbfed::parse_mode(*opt.mode)};
  if (!opt.out.empty()) cfg.output_path = opt.out;
  dbfed::validate(cfg);

  std::ofstream out(cfg.output_path, std::ios::binary | std::ios::trunc);
  if (!out) throw dbfed::Error(dbfed::ErrorKind::Runtime, "cannot write '" + cfg.output_path + "'");
  const auto finals = dbfed::run_experiment(cfg, out);
  std::vector<dbfed::MetricRow> rows;
  for (const auto& [mode, report] : finals)
    rows.push_back(dbfed::row_from_report_json(std::string(dbfed::mode_name(mode)),
                                               dbfed::report_to_json(report)));
  std::cout << dbfed::render_table(dbfed::compare_rows(rows)) << "wrote " << cfg.output_path
            << "\n";
  return 0;
}

int cmd_metrics(const Options& opt) {
  const auto records =
      dbfed::load_predictions_csv(opt.predictions, opt.num_classes, opt.num_groups);
  const auto report = dbfed::full_report(records, opt.num_classes, opt.num_groups);
  const auto text = dbfed::report_to_json(report).dump(2);
  std::cout << text << "\n";
  if (!opt.out.empty()) {
    std::ofstream out(opt.out, std::ios::binary | std::ios::trunc);
    if (!out) throw dbfed::Error(dbfed::ErrorKind::Runtime, "cannot write '" + opt.out + "'");
    out << text << "\n";
  }
  return 0;
}

int cmd_compare(const Options& opt) {
  const auto table = dbfed::compare_results(opt.results);
  std::cout << dbfed::render_table(table);
  if (!opt.out.empty()) {
    std::ofstream out(opt.out, std::ios::binary | std::ios::trunc);
    if (!out) throw dbfed::Error(dbfed::ErrorKind::Runtime, "cannot write '" + opt.out + "'");
    out << dbfed::render_csv(table);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated training with group-conditioned output heads"};
  app.require_subcommand(1);
  Options opt;

  auto* gen = app.add_subcommand("generate-data", "Write a synthetic biased dataset as CSV");
  gen->add_option("--config", opt.config, "Config file")->required();
  gen->add_option("--out", opt.out, "Output CSV (default: data.path)");
  gen->add_option("--seed", opt.seed, "Override synthetic.seed");

  auto* train = app.add_subcommand("train", "Run fedavg / local / dbfed training");
  train->add_option("--config", opt.config, "Config file")->required();
  train->add_option("--out", opt.out, "Results JSON-lines file (default: output.path)");
  train->add_option("--seed", opt.seed, "Override federation.master_seed");
  train->add_option("--mode", opt.mode, "Train a single mode")
      ->check(CLI::IsMember({"fedavg", "local", "dbfed"}));

  auto* metrics = app.add_subcommand("metrics", "Score a prediction log");
  metrics->add_option("predictions", opt.predictions, "CSV with predicted,actual,group")
      ->required();
  metrics->add_option("--num-classes,-N", opt.num_classes, "Number of target classes")
      ->required()
      ->check(CLI::PositiveNumber);
  metrics->add_option("--num-groups,-D", opt.num_groups, "Number of sensitive groups")
      ->required()
      ->check(CLI::PositiveNumber);
  metrics->add_option("--out", opt.out, "Also write the report JSON here");

  auto* compare = app.add_subcommand("compare", "Tabulate final metrics of results files");
  compare->add_option("results", opt.results, "Results JSON-lines files")->required();
  compare->add_option("--out", opt.out, "Also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const char* stage = app.get_subcommands().front()->get_name().c_str();
  try {
    if (gen->parsed()) return cmd_generate_data(opt);
    if (train->parsed()) return cmd_train(opt);
    if (metrics->parsed()) return cmd_metrics(opt);
    return cmd_compare(opt);
  } catch (const dbfed::Error& e) {
    std::cerr << "dbfed " << stage << ": " << e.what() << "\n";
    return e.exit_status();
  } catch (const std::exception& e) {
    std::cerr << "dbfed " << stage << ": " << e.what() << "\n";
    return 3;
  }
}
