// seqx: train the classifier, build the explanation catalog, run simulated
// sessions, serve the participant API and summarize session logs.

#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "seqx/analysis.hpp"
#include "seqx/experiment.hpp"
#include "seqx/service.hpp"
#include "seqx/simulation.hpp"

namespace fs = std::filesystem;
using namespace seqx;

namespace {

struct Common {
  std::string data_dir = "data/mnist35";
  std::uint64_t seed = 17;
  std::uint64_t task_seed = 29;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--data-dir", c.data_dir, "directory with IDX image/label files")->capture_default_str();
  cmd->add_option("--seed", c.seed, "split seed")->capture_default_str();
  cmd->add_option("--task-seed", c.task_seed, "simulatability task seed")->capture_default_str();
}

ExperimentConfig experiment_config(const Common& c) {
  ExperimentConfig cfg;
  cfg.split.seed = c.seed;
  cfg.task_seed = c.task_seed;
  return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Experiment load_experiment(const Common& c, const std::string& model, const std::string& catalog) {
  const auto corpus = load_corpus(c.data_dir);
  std::optional<ExplanationCatalog> cat;
  if (!catalog.empty()) cat = catalog_from_json(read_json_file(catalog));
  return assemble_experiment(corpus, load_checkpoint(model), experiment_config(c), cat);
}

httplib::Server* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequential explanation sessions"};
  app.require_subcommand(1);

  Common common;
  TrainConfig train_cfg;
  std::string out, model, catalog, log_dir, logs, simulee_path, service_path;
  int port = 8080;
  std::size_t sessions = 200;
  std::vector<std::string> arms{"random_prototype", "mm_prototype"};

  auto* cmd_train = app.add_subcommand("train", "train the black-box classifier");
  add_common(cmd_train, common);
  cmd_train->add_option("--epochs", train_cfg.epochs)->capture_default_str();
  cmd_train->add_option("--train-seed", train_cfg.seed, "weight init / shuffle seed")->capture_default_str();
  cmd_train->add_option("--out", out, "checkpoint path")->required();

  auto* cmd_cat = app.add_subcommand("catalog", "build the 8-explanation catalog");
  add_common(cmd_cat, common);
  cmd_cat->add_option("--model", model)->required()->check(CLI::ExistingFile);
  cmd_cat->add_option("--out", out, "catalog JSON path")->required();

  auto* cmd_sim = app.add_subcommand("simulate", "run simulated sessions");
  add_common(cmd_sim, common);
  cmd_sim->add_option("--model", model)->required()->check(CLI::ExistingFile);
  cmd_sim->add_option("--catalog", catalog)->check(CLI::ExistingFile);
  cmd_sim->add_option("--sessions", sessions, "sessions per arm")->capture_default_str();
  cmd_sim->add_option("--arms", arms)->capture_default_str();
  cmd_sim->add_option("--simulee", simulee_path, "simulee config JSON")->check(CLI::ExistingFile);
  cmd_sim->add_option("--log-dir", log_dir)->required();

  auto* cmd_serve = app.add_subcommand("serve", "serve the participant API");
  add_common(cmd_serve, common);
  cmd_serve->add_option("--port", port)->capture_default_str();
  cmd_serve->add_option("--model", model)->required()->check(CLI::ExistingFile);
  cmd_serve->add_option("--catalog", catalog)->check(CLI::ExistingFile);
  cmd_serve->add_option("--log-dir", log_dir)->required();
  cmd_serve->add_option("--config", service_path, "service config JSON (class names, item wording, CORS origin)")
      ->check(CLI::ExistingFile);

  auto* cmd_analyze = app.add_subcommand("analyze", "summarize session logs");
  cmd_analyze->add_option("--logs", logs, "directory of *.jsonl session logs")->required()->check(CLI::ExistingDirectory);
  cmd_analyze->add_option("--out", out, "CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_train) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto corpus = load_corpus(common.data_dir);
      const auto data = split_experiment(select_binary(corpus.raw, corpus.class_a, corpus.class_b),
                                         experiment_config(common).split);
      std::printf("corpus %s: train %zu, test %zu\n", corpus.name.c_str(), data.train.size(), data.test.size());
      const auto result = train(data.train, train_cfg, [](std::size_t epoch, double loss) {
        std::printf("epoch %3zu  loss %.5f\n", epoch, loss);
        std::fflush(stdout);
      });
      save_checkpoint(result.params, out);
      std::printf("test accuracy %.4f  (%.1fs)\n", accuracy(result.params, data.test), seconds_since(t0));
    } else if (*cmd_cat) {
      const auto e = load_experiment(common, model, "");
      write_text_file(out, catalog_to_json(e.catalog).dump(1) + "\n");
      for (const auto& x : e.catalog.explanations) {
        std::printf("%d %s:", x.id, x.key().c_str());
        for (auto id : x.instance_ids) std::printf(" %u", id);
        std::printf("\n");
      }
    } else if (*cmd_sim) {
      const auto e = load_experiment(common, model, catalog);
      const auto simulee = simulee_path.empty() ? SimuleeConfig{} : load_simulee_config(simulee_path);
      std::vector<PolicyKind> kinds;
      for (const auto& a : arms) kinds.push_back(policy_from_string(a));
      fs::create_directories(log_dir);
      const auto path = fs::path(log_dir) / "simulated.jsonl";
      const auto records = run_arms(kinds, sessions, common.seed, e, simulee);
      write_log(records, path);
      std::printf("%zu sessions -> %s\n", records.size(), path.c_str());
      std::cout << summary_to_csv(summarize(records));
    } else if (*cmd_serve) {
      const auto e = load_experiment(common, model, catalog);
      ServiceConfig cfg;
      cfg.seed = common.seed;
      if (!service_path.empty()) cfg = service_config_from_json(read_json_file(service_path), cfg);
      fs::create_directories(log_dir);
      Service service(e, cfg, fs::path(log_dir) / "sessions.jsonl");
      httplib::Server server;
      service.mount(server);
      g_server = &server;
      std::signal(SIGINT, [](int) { g_server->stop(); });
      std::signal(SIGTERM, [](int) { g_server->stop(); });
      std::printf("serving %zu restored sessions on port %d\n", service.store().size(), port);
      std::fflush(stdout);
      if (!server.listen("0.0.0.0", port)) {
        std::fprintf(stderr, "cannot listen on port %d\n", port);
        return 1;
      }
    } else if (*cmd_analyze) {
      const auto records = load_directory(logs);
      std::vector<SessionRecord> done;
      for (const auto& r : records) {
        if (r.phase.kind == PhaseKind::Complete) done.push_back(r);
      }
      if (done.size() != records.size()) {
        std::fprintf(stderr, "skipping %zu incomplete sessions\n", records.size() - done.size());
      }
      const auto summary = done.empty() ? TrajectorySummary{} : summarize(done);
      export_csv(summary, out);
      std::cout << summary_to_csv(summary);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
