#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "voltrack/commands.hpp"

namespace fs = std::filesystem;
using voltrack::KeyValueConfig;

namespace {

/// Options shared by every subcommand.
struct Shared {
  std::string config_path;
  std::string seed;  // raw text; overrides the config's seed key when set
  std::string out;
  int threads = 1;
  std::string dump_attention;
  std::string init_config;  // write the command's default config and exit
};

void add_shared(CLI::App* cmd, Shared& shared) {
  cmd->add_option("--config", shared.config_path, "key = value config file");
  cmd->add_option("--seed", shared.seed, "override the config's root seed");
  cmd->add_option("--out", shared.out, "output path");
  cmd->add_option("--threads", shared.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--dump-attention", shared.dump_attention,
                  "write the first frame's combined attention to this binary sidecar");
  cmd->add_option("--init-config", shared.init_config,
                  "write a fully commented default config to this path and exit");
}

/// Merges file config + --seed override against the command's schema.
KeyValueConfig merged_config(const std::string& command, const Shared& shared) {
  KeyValueConfig overrides;
  if (!shared.config_path.empty())
    overrides = KeyValueConfig::parse_file(shared.config_path);
  KeyValueConfig cfg = KeyValueConfig::for_command(command, overrides);
  if (!shared.seed.empty()) {
    if (!cfg.values().count("seed"))
      throw voltrack::ConfigInvalid("--seed does not apply to '" + command + "'");
    cfg.set("seed", shared.seed);
  }
  return cfg;
}

fs::path require_out(const Shared& shared, const std::string& command) {
  if (shared.out.empty())
    throw voltrack::ConfigInvalid("missing required config field '--out' for '" + command + "'");
  return fs::path(shared.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voltrack: multi-camera 3D point tracking"};
  app.require_subcommand(1);

  Shared shared;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic multi-camera scene");
  add_shared(sim, shared);

  auto* train = app.add_subcommand("train", "train a tracker on scene files");
  add_shared(train, shared);
  std::vector<std::string> train_scenes;
  train->add_option("scenes", train_scenes, "scene JSON files");

  auto* track = app.add_subcommand("track", "track a scene with a trained checkpoint");
  add_shared(track, shared);
  std::string track_checkpoint, track_scene;
  track->add_option("checkpoint", track_checkpoint, "trained checkpoint");
  track->add_option("scene", track_scene, "scene JSON file");

  auto* eval = app.add_subcommand("eval", "score a trajectory file against a scene");
  add_shared(eval, shared);
  std::string eval_pred, eval_scene;
  eval->add_option("trajectories", eval_pred, "trajectory JSON file");
  eval->add_option("scene", eval_scene, "scene JSON file");

  auto* ablate = app.add_subcommand("ablate", "run one ablation suite");
  add_shared(ablate, shared);
  std::string ablate_suite;
  ablate->add_option("suite", ablate_suite, "cameras | grid | attention | losses");

  auto* bench = app.add_subcommand("bench", "cost model table and aggregation timings");
  add_shared(bench, shared);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // bad flags are config errors
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();

  try {
    if (!shared.init_config.empty()) {
      voltrack::write_default_config(name, shared.init_config);
      std::cout << "default " << name << " config written to " << shared.init_config << "\n";
      return 0;
    }
    const KeyValueConfig cfg = merged_config(name, shared);

    if (name == "simulate") {
      voltrack::cmd_simulate(cfg, require_out(shared, name), std::cout);
    } else if (name == "train") {
      if (train_scenes.empty())
        throw voltrack::ConfigInvalid("train needs at least one scene file argument");
      std::vector<fs::path> paths(train_scenes.begin(), train_scenes.end());
      voltrack::cmd_train(cfg, paths, require_out(shared, name), shared.threads, std::cout);
    } else if (name == "track") {
      if (track_checkpoint.empty() || track_scene.empty())
        throw voltrack::ConfigInvalid("track needs <checkpoint> and <scene> arguments");
      std::optional<fs::path> dump;
      if (!shared.dump_attention.empty()) dump = fs::path(shared.dump_attention);
      voltrack::cmd_track(track_checkpoint, track_scene, cfg, require_out(shared, name),
                          shared.threads, dump, std::cout);
    } else if (name == "eval") {
      if (eval_pred.empty() || eval_scene.empty())
        throw voltrack::ConfigInvalid("eval needs <trajectories> and <scene> arguments");
      voltrack::cmd_eval(eval_pred, eval_scene, cfg, require_out(shared, name), std::cout);
    } else if (name == "ablate") {
      if (ablate_suite.empty())
        throw voltrack::ConfigInvalid("ablate needs a suite argument");
      voltrack::cmd_ablate(ablate_suite, cfg, require_out(shared, name), shared.threads,
                           std::cout);
    } else if (name == "bench") {
      voltrack::cmd_bench(cfg, require_out(shared, name), shared.threads, std::cout);
    }
  } catch (const voltrack::ConfigInvalid& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const voltrack::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
