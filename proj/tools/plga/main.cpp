// plga command-line entry point.
//
// Exit codes: 0 ok, 1 other failure, 2 config/data, 3 needs a human answer,
// 4 language-model backend.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "plga/experiment.hpp"
#include "plga/serialize.hpp"
#include "plga/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code(plga::ErrorCode c) {
  using plga::ErrorCode;
  switch (c) {
    case ErrorCode::config:
    case ErrorCode::data:
    case ErrorCode::generation:
    case ErrorCode::demo_unavailable:
    case ErrorCode::no_delta:
    case ErrorCode::validation:
    case ErrorCode::not_found: return 2;
    case ErrorCode::needs_human: return 3;
    case ErrorCode::parse:
    case ErrorCode::transport:
    case ErrorCode::replay_miss:
    case ErrorCode::scripted_miss: return 4;
    default: return 1;
  }
}

// File config; every key is optional and flags win.
struct CliConfig {
  std::string backend;  // "scripted:PATH" | "replay:PATH" | "live:PATH" | ""
  std::optional<plga::LmBackendConfig> backend_object;
  std::string catalog;
  std::string out_dir = ".";
  std::string abstraction_cache;
  std::optional<json> train;
  std::vector<std::uint64_t> seeds;
};

CliConfig load_cli_config(const std::string& path) {
  CliConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw plga::Error(plga::ErrorCode::config, "cannot open config file: " + path);
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw plga::Error(plga::ErrorCode::config, "config file is not valid JSON: " + path);
  plga::detail::reject_unknown(j, {"backend", "catalog", "out_dir", "abstraction_cache", "train", "seeds"}, "config");
  if (j.contains("backend")) {
    if (j["backend"].is_string()) c.backend = j["backend"].get<std::string>();
    else c.backend_object = plga::lm_config_from_json(j["backend"]);
  }
  c.catalog = j.value("catalog", c.catalog);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.abstraction_cache = j.value("abstraction_cache", c.abstraction_cache);
  if (j.contains("train")) c.train = j["train"];
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  return c;
}

std::optional<plga::LmBackendConfig> parse_backend(const std::string& flag) {
  const auto colon = flag.find(':');
  if (colon == std::string::npos) throw plga::Error(plga::ErrorCode::config, "backend must be MODE:PATH, got " + flag);
  const auto mode = plga::backend_mode_from_string(flag.substr(0, colon));
  const auto path = flag.substr(colon + 1);
  if (path.empty()) throw plga::Error(plga::ErrorCode::config, "backend path is empty");
  plga::LmBackendConfig c;
  c.mode = mode;
  if (mode == plga::BackendMode::scripted) c.rules_path = path;
  else if (mode == plga::BackendMode::replay) c.cassette_path = path;
  else {
    std::ifstream in(path);
    if (!in) throw plga::Error(plga::ErrorCode::config, "cannot open live backend config: " + path);
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw plga::Error(plga::ErrorCode::config, "live backend config is not valid JSON: " + path);
    c = plga::lm_config_from_json(j);
    c.mode = plga::BackendMode::live;
  }
  return c;
}

// Shared state built from flags and the config file.
struct Context {
  CliConfig file;
  std::string config_path;
  std::string backend_flag;
  std::string catalog_flag;
  std::string out_dir_flag;
  std::optional<plga::Catalog> catalog_storage;
  std::shared_ptr<plga::AbstractionEngine> engine;

  void load() { file = load_cli_config(config_path); }

  const plga::Catalog& catalog() {
    const auto& path = catalog_flag.empty() ? file.catalog : catalog_flag;
    if (path.empty()) return plga::default_catalog();
    if (!catalog_storage) catalog_storage = plga::load_catalog(path);
    return *catalog_storage;
  }

  std::string out_dir() const { return out_dir_flag.empty() ? file.out_dir : out_dir_flag; }

  plga::TrainConfig train() const {
    return file.train ? plga::train_config_from_json(*file.train) : plga::TrainConfig{};
  }

  // Null when no backend is configured.
  plga::AbstractionEngine* backend() {
    if (engine) return engine.get();
    std::optional<plga::LmBackendConfig> cfg;
    if (!backend_flag.empty()) cfg = parse_backend(backend_flag);
    else if (file.backend_object) cfg = file.backend_object;
    else if (!file.backend.empty()) cfg = parse_backend(file.backend);
    if (!cfg) return nullptr;
    engine = std::make_shared<plga::AbstractionEngine>(std::make_shared<plga::LmGateway>(*cfg), catalog(),
                                                       file.abstraction_cache);
    return engine.get();
  }

  plga::AbstractionEngine& require_backend(const std::string& why) {
    auto* e = backend();
    if (!e) throw plga::Error(plga::ErrorCode::config, why + " needs --backend");
    return *e;
  }
};

void write_file(const fs::path& path, const std::string& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw plga::Error(plga::ErrorCode::config, "cannot write " + path.string());
  out << body;
}

// The first answer stands for every later question in the same process.
class RememberingPort : public plga::HumanQueryPort {
 public:
  explicit RememberingPort(std::unique_ptr<plga::HumanQueryPort> inner) : inner_(std::move(inner)) {}
  std::string ask(const plga::PreferenceDistribution& d, const std::string& ctx) override {
    if (!answer_) answer_ = inner_->ask(d, ctx);
    return *answer_;
  }

 private:
  std::unique_ptr<plga::HumanQueryPort> inner_;
  std::optional<std::string> answer_;
};

std::vector<std::string> expand_spec_paths(const std::vector<std::string>& in) {
  std::vector<std::string> out;
  for (const auto& p : in) {
    if (fs::is_directory(p)) {
      std::vector<std::string> files;
      for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".json") files.push_back(e.path().string());
      std::sort(files.begin(), files.end());
      out.insert(out.end(), files.begin(), files.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

std::sig_atomic_t volatile g_signal = 0;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-conditioned language-guided abstraction pipeline", "plga"};
  app.require_subcommand(1);
  app.fallthrough();
  Context ctx;
  app.add_option("--config", ctx.config_path, "JSON config file; flags override its keys")->check(CLI::ExistingFile);
  app.add_option("--backend", ctx.backend_flag, "Language-model backend: scripted:RULES | replay:CASSETTE | live:CONFIG");
  app.add_option("--catalog", ctx.catalog_flag, "Catalog JSON (default: built-in catalog)");
  app.add_option("--out-dir", ctx.out_dir_flag, "Directory for output files");

  // demos
  auto* demos = app.add_subcommand("demos", "Generate a demonstration dataset (JSON lines)");
  std::string demos_spec, demos_out;
  std::uint64_t demos_seed = 0;
  demos->add_option("--spec", demos_spec, "Experiment spec JSON")->required();
  demos->add_option("--seed", demos_seed, "Dataset seed");
  demos->add_option("--out", demos_out, "Output file ('-' for stdout; default OUT_DIR/SPEC_seedN.jsonl)");

  // run
  auto* run = app.add_subcommand("run", "Train and evaluate one or all methods on a spec");
  std::string run_spec, run_dataset, run_method = "all", run_answer_file, run_dump;
  std::vector<std::uint64_t> run_seeds;
  bool run_non_interactive = false;
  run->add_option("--spec", run_spec, "Experiment spec JSON")->required();
  run->add_option("--dataset", run_dataset, "Use this dataset instead of generating one per seed");
  run->add_option("--method", run_method, "gcbc | lga | plga_passive | plga_active | all")
      ->check(CLI::IsMember({"gcbc", "lga", "plga_passive", "plga_active", "all"}));
  run->add_option("--seed", run_seeds, "Seed(s) overriding the spec's list");
  run->add_option("--answer-file", run_answer_file, "Answer active queries with the first line of this file");
  run->add_flag("--non-interactive", run_non_interactive, "Never prompt; active queries exit with code 3");
  run->add_option("--dump-transcripts", run_dump, "Write per-run LM transcripts (JSON lines) into this directory");

  // probe
  auto* probe = app.add_subcommand("probe", "Tabulate preference entropy per spec");
  std::vector<std::string> probe_specs;
  std::string probe_format = "table", probe_out;
  probe->add_option("--specs", probe_specs, "Spec files or directories")->required();
  probe->add_option("--format", probe_format, "table | csv")->check(CLI::IsMember({"table", "csv"}));
  probe->add_option("--out", probe_out, "Also write CSV here");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the elicitation HTTP service");
  int serve_port = 8080;
  std::string serve_host = "127.0.0.1", serve_specs = "fixtures/specs", serve_store, serve_ui;
  serve->add_option("--port", serve_port, "TCP port");
  serve->add_option("--host", serve_host, "Bind address");
  serve->add_option("--specs-dir", serve_specs, "Directory of spec JSON files");
  serve->add_option("--store", serve_store, "Session journal (JSON lines; empty keeps sessions in memory)");
  serve->add_option("--ui-dir", serve_ui, "Static assets served under /ui");

  // abstract
  auto* abstract = app.add_subcommand("abstract", "Run one abstraction query and print its transcript");
  std::string abs_spec, abs_scene, abs_utterance, abs_preference;
  std::uint64_t abs_seed = 0;
  std::size_t abs_index = 0;
  abstract->add_option("--spec", abs_spec, "Spec whose demo scene and utterance to use");
  abstract->add_option("--seed", abs_seed, "Dataset seed (with --spec)");
  abstract->add_option("--index", abs_index, "Demo index (with --spec)");
  abstract->add_option("--scene", abs_scene, "Scene JSON file instead of a spec demo");
  abstract->add_option("--utterance", abs_utterance, "Utterance (required with --scene)");
  abstract->add_option("--preference", abs_preference, "Preference text; omit for the language-only abstraction");

  // masks-dump
  auto* masks = app.add_subcommand("masks-dump", "Render the abstraction mask of every demo scene");
  std::string masks_spec, masks_preference, masks_format = "ascii";
  std::uint64_t masks_seed = 0;
  masks->add_option("--spec", masks_spec, "Experiment spec JSON")->required();
  masks->add_option("--seed", masks_seed, "Dataset seed");
  masks->add_option("--preference", masks_preference, "Preference text; omit for the language-only abstraction");
  masks->add_option("--format", masks_format, "ascii | ppm")->check(CLI::IsMember({"ascii", "ppm"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    ctx.load();
    const auto& cat = ctx.catalog();

    if (*demos) {
      auto spec = plga::load_spec(demos_spec, cat);
      auto data = plga::generate_dataset(spec, demos_seed, cat);
      const auto body = plga::dataset_to_jsonl(data, cat);
      if (demos_out == "-") {
        std::cout << body;
      } else {
        fs::path out = demos_out.empty()
                           ? fs::path(ctx.out_dir()) / (spec.id + "_seed" + std::to_string(demos_seed) + ".jsonl")
                           : fs::path(demos_out);
        write_file(out, body);
        std::cerr << "wrote " << data.demos.size() << " demonstrations to " << out.string() << "\n";
      }
      return 0;
    }

    if (*run) {
      auto spec = plga::load_spec(run_spec, cat);
      if (!run_seeds.empty()) spec.seeds = run_seeds;
      else if (!ctx.file.seeds.empty()) spec.seeds = ctx.file.seeds;
      std::vector<plga::Method> methods =
          run_method == "all" ? plga::all_methods() : std::vector<plga::Method>{plga::method_from_string(run_method)};
      plga::AbstractionEngine* engine = nullptr;
      for (auto m : methods)
        if (m != plga::Method::gcbc) engine = &ctx.require_backend(std::string("method ") + plga::to_string(m));

      std::unique_ptr<plga::HumanQueryPort> human;
      if (!run_answer_file.empty())
        human = std::make_unique<RememberingPort>(std::make_unique<plga::AnswerFilePort>(run_answer_file));
      else if (!run_non_interactive)
        human = std::make_unique<RememberingPort>(std::make_unique<plga::TerminalPort>(std::cin, std::cerr));

      plga::RunOptions opt;
      opt.train = ctx.train();
      std::vector<json> log;
      plga::EvalReport report{spec.id, {}, {}};
      std::vector<plga::DemoDataset> datasets;
      if (!run_dataset.empty()) {
        std::ifstream in(run_dataset);
        if (!in) throw plga::Error(plga::ErrorCode::config, "cannot open dataset: " + run_dataset);
        datasets.push_back(plga::dataset_from_jsonl(in, cat));
      } else {
        for (auto s : spec.seeds) datasets.push_back(plga::generate_dataset(spec, s, cat));
      }
      for (const auto& data : datasets)
        for (auto m : methods) {
          std::vector<json> run_log;
          report.runs.push_back(plga::run_and_evaluate(spec, data, m, m == plga::Method::gcbc ? nullptr : engine,
                                                       m == plga::Method::plga_active ? human.get() : nullptr, opt,
                                                       &run_log));
          if (!run_dump.empty()) {
            std::string body;
            for (const auto& l : run_log) body += l.dump() + "\n";
            write_file(fs::path(run_dump) /
                           (spec.id + "_seed" + std::to_string(data.seed) + "_" + plga::to_string(m) + ".jsonl"),
                       body);
          }
          log.insert(log.end(), run_log.begin(), run_log.end());
        }
      plga::finalize_summary(report);
      if (engine) engine->save_cache();

      const fs::path dir(ctx.out_dir());
      write_file(dir / (spec.id + "_report.json"), plga::to_json(report).dump(2) + "\n");
      std::string log_body;
      for (const auto& l : log) log_body += l.dump() + "\n";
      write_file(dir / (spec.id + "_runs.jsonl"), log_body);
      if (run_method == "all") write_file(dir / (spec.id + "_summary.csv"), plga::summary_csv({report}));
      std::cout << plga::summary_csv({report});
      for (const auto& r : report.runs)
        if (r.resolution)
          std::cout << "seed " << r.seed << " " << plga::to_string(r.method) << " theta_hat: " << r.resolution->theta_hat
                    << "\n";
      return 0;
    }

    if (*probe) {
      std::vector<plga::ExperimentSpec> specs;
      for (const auto& p : expand_spec_paths(probe_specs)) specs.push_back(plga::load_spec(p, cat));
      auto rows = plga::entropy_probe(specs, ctx.require_backend("probe"));
      std::cout << (probe_format == "csv" ? plga::probe_csv(rows) : plga::probe_table(rows));
      if (!probe_out.empty()) write_file(probe_out, plga::probe_csv(rows));
      return 0;
    }

    if (*serve) {
      if (serve_port < 1 || serve_port > 65535)
        throw plga::Error(plga::ErrorCode::config, "port out of range: " + std::to_string(serve_port));
      plga::ServiceConfig sc;
      sc.specs_dir = serve_specs;
      sc.store_path = serve_store;
      sc.ui_dir = serve_ui;
      sc.train = ctx.train();
      // Signals are taken by a dedicated thread so the handler does no work.
      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);
      auto engine = ctx.backend() ? ctx.engine : nullptr;
      plga::Service svc(sc, engine, cat);
      if (!svc.bind(serve_host, serve_port))
        throw plga::Error(plga::ErrorCode::config, "cannot bind " + serve_host + ":" + std::to_string(serve_port));
      std::thread waiter([&] {
        int sig = 0;
        sigwait(&set, &sig);
        g_signal = sig;
        svc.stop();
      });
      std::cerr << "listening on " << serve_host << ":" << serve_port << "\n";
      svc.listen_after_bind();
      if (!g_signal) pthread_kill(waiter.native_handle(), SIGTERM);
      waiter.join();
      svc.wait_idle();
      if (engine) engine->save_cache();
      std::cerr << "shut down\n";
      return 0;
    }

    if (*abstract) {
      auto& engine = ctx.require_backend("abstract");
      plga::Scene scene;
      std::string utterance = abs_utterance;
      if (!abs_scene.empty()) {
        std::ifstream in(abs_scene);
        if (!in) throw plga::Error(plga::ErrorCode::config, "cannot open scene: " + abs_scene);
        auto j = json::parse(in, nullptr, false);
        if (j.is_discarded()) throw plga::Error(plga::ErrorCode::data, "scene file is not valid JSON: " + abs_scene);
        scene = plga::scene_from_json(j, cat);
        if (utterance.empty()) throw plga::Error(plga::ErrorCode::config, "--scene needs --utterance");
      } else if (!abs_spec.empty()) {
        auto spec = plga::load_spec(abs_spec, cat);
        auto data = plga::generate_dataset(spec, abs_seed, cat);
        if (abs_index >= data.demos.size())
          throw plga::Error(plga::ErrorCode::config, "demo index out of range: " + std::to_string(abs_index));
        scene = data.demos[abs_index].trajectory.initial;
        if (utterance.empty()) utterance = spec.task.utterance;
      } else {
        throw plga::Error(plga::ErrorCode::config, "abstract needs --spec or --scene");
      }
      auto r = abs_preference.empty() ? plga::lga_abstract(scene, utterance, engine)
                                      : plga::plga_abstract(scene, utterance, abs_preference, engine);
      auto out = plga::transcript_json(r);
      out["scene"] = plga::scene_grid_json(scene, cat, &r.state);
      std::cout << out.dump(2) << "\n";
      engine.save_cache();
      return 0;
    }

    if (*masks) {
      auto& engine = ctx.require_backend("masks-dump");
      auto spec = plga::load_spec(masks_spec, cat);
      auto data = plga::generate_dataset(spec, masks_seed, cat);
      for (std::size_t i = 0; i < data.demos.size(); ++i) {
        const auto& scene = data.demos[i].trajectory.initial;
        auto r = masks_preference.empty() ? plga::lga_abstract(scene, spec.task.utterance, engine)
                                          : plga::plga_abstract(scene, spec.task.utterance, masks_preference, engine);
        if (masks_format == "ppm") {
          write_file(fs::path(ctx.out_dir()) / (spec.id + "_seed" + std::to_string(masks_seed) + "_demo" +
                                                std::to_string(i) + ".ppm"),
                     plga::render_mask_ppm(r.state));
        } else {
          std::cout << "# demo " << i << (data.demos[i].feature_present ? " present" : " absent") << "\n"
                    << plga::render_mask_ascii(r.state);
        }
      }
      engine.save_cache();
      return 0;
    }
  } catch (const plga::Error& e) {
    std::cerr << "error [" << plga::to_string(e.code()) << "]: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const json::exception& e) {
    std::cerr << "error [data]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
