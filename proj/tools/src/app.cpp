#include "disents_cli/app.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "disents/error.hpp"
#include "disents_cli/run_config.hpp"

namespace disents::cli {

namespace {

using json = nlohmann::json;

// Flags shared by every subcommand. Unset flags leave the config file alone.
struct Overrides {
  std::string config;
  std::optional<std::string> data, labels, out, checkpoint, backbone, synth_preset;
  std::optional<std::uint64_t> seed, k_experts, topk, lookback, horizon, epochs, batch_size;
  std::optional<std::uint64_t> synth_length, synth_channels_per_group;
  std::optional<double> lambda, alpha, lr, synth_noise;
  std::vector<double> synth_periods;

  void add_common(CLI::App* app) {
    app->add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "random seed");
    app->add_option("--k-experts", k_experts, "number of backbones");
    app->add_option("--lambda", lambda, "similarity constraint weight");
    app->add_option("--alpha", alpha, "EMA decay of the signature registry");
    app->add_option("--topk", topk, "rows per expert regression (0 = 2 * lookback)");
    app->add_option("--lookback", lookback, "input window length");
    app->add_option("--horizon", horizon, "forecast length");
    app->add_option("--backbone", backbone, "linear | decomp-linear | mlp");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--batch-size", batch_size, "windows per batch");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--out", out, "output directory");
  }
  void add_data(CLI::App* app) {
    app->add_option("--data", data, "CSV dataset");
    app->add_option("--labels", labels, "channel group labels CSV");
  }
  void add_checkpoint(CLI::App* app) {
    app->add_option("--checkpoint", checkpoint, "checkpoint directory (default <out>/checkpoint)");
  }
  void add_synth(CLI::App* app) {
    app->add_option("--preset", synth_preset, "default | four-group");
    app->add_option("--length", synth_length, "time steps");
    app->add_option("--channels-per-group", synth_channels_per_group, "channels in each group");
    app->add_option("--noise", synth_noise, "observation noise standard deviation");
    app->add_option("--periods", synth_periods, "period of each group");
  }

  json patch() const {
    json p = json::object();
    auto put = [&](const char* key, const auto& v) {
      if (v) p[key] = *v;
    };
    put("data", data);
    put("labels", labels);
    put("out", out);
    put("checkpoint", checkpoint);
    put("backbone", backbone);
    put("synth_preset", synth_preset);
    put("seed", seed);
    put("k_experts", k_experts);
    put("topk", topk);
    put("lookback", lookback);
    put("horizon", horizon);
    put("epochs", epochs);
    put("batch_size", batch_size);
    put("synth_length", synth_length);
    put("synth_channels_per_group", synth_channels_per_group);
    put("lambda", lambda);
    put("alpha", alpha);
    put("lr", lr);
    put("synth_noise", synth_noise);
    if (!synth_periods.empty()) p["synth_periods"] = synth_periods;
    return p;
  }

  RunConfig resolve_all() const {
    json s = default_settings();
    if (!config.empty()) merge_settings(s, read_settings_file(config), config);
    merge_settings(s, patch(), "command line");
    return resolve(s);
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"disents: multivariate forecasting with disentangled channel evolution"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "disents 0.1.0");

  Overrides o;
  std::string inspect_target;

  CLI::App* synth = app.add_subcommand("synth", "generate a grouped synthetic dataset");
  o.add_common(synth);
  o.add_synth(synth);
  CLI::App* train = app.add_subcommand("train", "train a model and write metrics and a checkpoint");
  o.add_common(train);
  o.add_data(train);
  o.add_checkpoint(train);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a saved checkpoint on the test split");
  o.add_common(eval);
  o.add_data(eval);
  o.add_checkpoint(eval);
  CLI::App* inspect = app.add_subcommand("inspect", "dump signatures or routing of a checkpoint");
  inspect->add_option("target", inspect_target, "lwa | routing")
      ->required()
      ->check(CLI::IsMember({"lwa", "routing"}));
  o.add_common(inspect);
  o.add_data(inspect);
  o.add_checkpoint(inspect);
  CLI::App* baseline = app.add_subcommand("baseline", "train the single-backbone baseline");
  o.add_common(baseline);
  o.add_data(baseline);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const RunConfig c = o.resolve_all();
    if (synth->parsed()) return cmd_synth(c, out);
    if (train->parsed()) return cmd_train(c, out);
    if (eval->parsed()) return cmd_eval(c, out);
    if (inspect->parsed()) return cmd_inspect(c, inspect_target, out);
    return cmd_baseline(c, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace disents::cli
