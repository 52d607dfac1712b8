#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "mbs/config.hpp"
#include "mbs/errors.hpp"
#include "mbs/experiment.hpp"
#include "mbs/format.hpp"

namespace {

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNoFit = 3;

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      throw mbs::ConfigError("bad mini-batch size '" + item + "'");
    }
    if (pos != item.size() || v == 0) throw mbs::ConfigError("bad mini-batch size '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw mbs::ConfigError("empty mini-batch size list");
  return out;
}

void print_run(const mbs::RunResult& r) {
  std::printf("run directory: %s\n", r.dir.string().c_str());
  std::printf("micro-batch size: %zu\n", r.memory.micro_batch_size);
  std::printf("mbs %s: %.4f +- %.4f\n", r.metric_name.c_str(), r.mbs.mean_best_metric, r.mbs.std_best_metric);
  if (r.baseline.failed)
    std::printf("baseline: Failed\n");
  else if (r.baseline.skipped)
    std::printf("baseline: skipped\n");
  else
    std::printf("baseline %s: %.4f +- %.4f\n", r.metric_name.c_str(), r.baseline.mean_best_metric,
                r.baseline.std_best_metric);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Micro-batch streaming trainer"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_root;
  bool overwrite = false;
  auto run_options = [&] {
    mbs::RunOptions o;
    if (!output_root.empty()) o.output_root = output_root;
    o.overwrite = overwrite;
    return o;
  };

  auto* train = app.add_subcommand("train", "Train one experiment config");
  train->add_option("config", config_path, "Config file")->required();
  train->add_option("--output-root", output_root, "Root for relative output directories");
  train->add_flag("--overwrite", overwrite, "Replace an existing run directory");

  std::vector<std::string> dirs;
  auto* compare = app.add_subcommand("compare", "Compare finished runs");
  compare->add_option("dirs", dirs, "Run directories")->required();
  std::string compare_csv;
  compare->add_option("--csv", compare_csv, "Also write the table as CSV here");

  std::string sizes_text;
  auto* sweep = app.add_subcommand("sweep", "Train one config at several mini-batch sizes");
  sweep->add_option("config", config_path, "Config file")->required();
  sweep->add_option("--mini-batch", sizes_text, "Comma-separated mini-batch sizes")->required();
  sweep->add_option("--output-root", output_root, "Root for relative output directories");
  sweep->add_flag("--overwrite", overwrite, "Replace existing run directories");

  auto* sim_mem = app.add_subcommand("simulate-memory", "Print the memory fit table");
  sim_mem->add_option("config", config_path, "Config file")->required();
  sim_mem->add_option("--mini-batch", sizes_text, "Comma-separated mini-batch sizes (default: the config's)");

  auto* sim_stream = app.add_subcommand("simulate-stream", "Print the simulated stream schedule");
  sim_stream->add_option("config", config_path, "Config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (train->parsed()) {
      print_run(mbs::run_experiment(mbs::load_config(config_path), run_options()));
    } else if (compare->parsed()) {
      std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
      const mbs::CompareTable table = mbs::compare_report(paths);
      std::cout << table.text();
      if (!compare_csv.empty()) {
        std::ofstream out(compare_csv);
        out << table.csv();
      }
    } else if (sweep->parsed()) {
      const auto results = mbs::sweep(mbs::load_config(config_path), parse_sizes(sizes_text), run_options());
      for (const auto& r : results) print_run(r);
    } else if (sim_mem->parsed()) {
      const mbs::ExperimentConfig config = mbs::load_config(config_path);
      mbs::validate_config(config);
      const auto sizes = sizes_text.empty() ? std::vector<std::size_t>{config.mini_batch_size} : parse_sizes(sizes_text);
      const auto rows = mbs::memory_fit_table(config, sizes);
      std::cout << mbs::format_memory_fit_table(rows);
      for (const auto& r : rows)
        if (!r.micro_batch_size) return kExitNoFit;
    } else if (sim_stream->parsed()) {
      const mbs::StreamReport report = mbs::simulate_config_stream(mbs::load_config(config_path));
      std::cout << mbs::schedule_csv(report.schedule) << report.summary_json() << '\n';
    }
  } catch (const mbs::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const mbs::ModelDoesNotFitError& e) {
    std::fprintf(stderr, "does not fit: %s\n", e.what());
    return kExitNoFit;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitError;
  }
  return 0;
}
