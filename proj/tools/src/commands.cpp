#include "commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "disents/checkpoint.hpp"
#include "disents/error.hpp"

namespace disents::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path checkpoint_dir(const RunConfig& c) {
  return c.checkpoint.empty() ? fs::path(c.out) / "checkpoint" : fs::path(c.checkpoint);
}

fs::path sidecar_for(const fs::path& data) {
  fs::path p = data;
  p.replace_extension();
  return p.string() + ".labels.csv";
}

fs::path labels_path(const RunConfig& c) {
  if (!c.labels.empty()) return c.labels;
  return sidecar_for(c.data);
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

json metrics_json(const Metrics& m, double runtime_s) {
  return {{"mse", m.mse},
          {"mae", m.mae},
          {"per_channel_mse", m.per_channel_mse},
          {"runtime_s", runtime_s},
          {"windows", m.windows}};
}

struct Loaded {
  SeriesDataset dataset;
  DataSplits splits;
};

Loaded load(const RunConfig& c) {
  Loaded l;
  l.dataset = load_csv(c.data);
  l.splits = make_splits(l.dataset, c.window);
  return l;
}

void print_metrics(std::ostream& out, const char* label, const Metrics& m) {
  out << label << ": mse=" << std::setprecision(6) << m.mse << " mae=" << m.mae << " windows=" << m.windows
      << '\n';
}

}  // namespace

void preflight(const RunConfig& c, bool needs_data, bool needs_checkpoint) {
  if (needs_data) {
    if (c.data.empty()) throw ConfigError("no dataset given (set 'data' or pass --data)");
    if (!fs::is_regular_file(c.data)) throw ConfigError("dataset '" + c.data + "' does not exist");
    if (!c.labels.empty() && !fs::is_regular_file(c.labels)) {
      throw ConfigError("labels file '" + c.labels + "' does not exist");
    }
  }
  if (needs_checkpoint && !fs::is_regular_file(checkpoint_dir(c) / "manifest.json")) {
    throw ConfigError("no checkpoint at '" + checkpoint_dir(c).string() + "'");
  }
}

int cmd_synth(const RunConfig& c, std::ostream& out) {
  const SeriesDataset ds = synth_generate(c.synth);
  fs::create_directories(c.out);
  const fs::path data = fs::path(c.out) / "synth.csv";
  write_csv(ds, data);
  write_labels(ds, sidecar_for(data));
  out << "wrote " << data.string() << " (T=" << ds.length() << ", C=" << ds.channels()
      << ", groups=" << c.synth.groups.size() << ")\n";
  return 0;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  preflight(c, true, false);
  const auto t0 = Clock::now();
  const Loaded l = load(c);
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "config.json", to_settings(c));

  DisenTSModel model(c.model);
  std::ofstream log(fs::path(c.out) / "train_log.jsonl");
  if (!log) throw Error("cannot write training log in '" + c.out + "'");
  const FitResult fit_result = fit(model, l.splits, c.train, [&](const EpochRecord& r) {
    log << json{{"epoch", r.epoch},
                {"train_lfc", r.train_lfc},
                {"train_lsc", r.train_lsc},
                {"val_mse", r.val_mse},
                {"epsilon", r.epsilon},
                {"elapsed_s", r.elapsed_s}}
               .dump()
        << '\n'
        << std::flush;
    out << "epoch " << r.epoch << " train_lfc=" << std::setprecision(6) << r.train_lfc
        << " train_lsc=" << r.train_lsc << " val_mse=" << r.val_mse << '\n';
  });
  const Metrics m = evaluate(model, l.splits.test, c.train.batch_size, c.train.eval_threads);
  save_checkpoint(model, checkpoint_dir(c));
  write_json(fs::path(c.out) / "metrics.json", metrics_json(m, seconds_since(t0)));
  out << "best epoch " << fit_result.best_epoch << " of " << fit_result.history.size() << '\n';
  print_metrics(out, "test", m);
  return 0;
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
  preflight(c, true, true);
  const auto t0 = Clock::now();
  DisenTSModel model(c.model);
  load_checkpoint(model, checkpoint_dir(c));
  const Loaded l = load(c);
  const Metrics m = evaluate(model, l.splits.test, c.train.batch_size, c.train.eval_threads);
  write_json(fs::path(c.out) / "eval_metrics.json", metrics_json(m, seconds_since(t0)));
  print_metrics(out, "test", m);
  return 0;
}

int cmd_baseline(const RunConfig& c, std::ostream& out) {
  preflight(c, true, false);
  const auto t0 = Clock::now();
  const Loaded l = load(c);
  const BaselineResult r = unified_baseline(l.splits, c.model.backbone, c.train, c.seed);
  write_json(fs::path(c.out) / "baseline_metrics.json", metrics_json(r.metrics, seconds_since(t0)));
  print_metrics(out, "baseline test", r.metrics);
  return 0;
}

namespace {

void write_matrix_csv(const fs::path& path, const Tensor& m) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  f << std::setprecision(17);
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = 0; j < m.dim(1); ++j) f << (j ? "," : "") << m.at(i, j);
    f << '\n';
  }
}

int inspect_lwa(const RunConfig& c, const DisenTSModel& model, const DataSplits& splits, std::ostream& out) {
  const fs::path dir = fs::path(c.out) / "lwa";
  fs::create_directories(dir);
  const std::size_t count = std::min(c.train.batch_size, splits.test.size());
  const Batch first = splits.test.batch_range(0, count);
  const ForwardResult fwd = model.forward(first.x, false);
  const std::size_t rows = count * splits.test.channels();
  const std::size_t L = c.model.backbone.lookback, H = c.model.backbone.horizon;
  const Tensor x_rows = fwd.norm.x.reshaped({rows, L});
  const std::vector<ForecasterSignature> fresh = batch_signatures(model, fwd);

  json experts = json::array();
  for (std::size_t m = 0; m < model.experts(); ++m) {
    const std::string file = "gamma_" + std::to_string(m) + ".csv";
    write_matrix_csv(dir / file, model.registry().gamma(m));
    const Tensor outputs = fwd.expert_outputs[m].value().reshaped({rows, H});
    const double eps_gamma = approximation_error(outputs, x_rows, model.registry().gamma(m));
    const double eps_batch = approximation_error(outputs, x_rows, fresh[m].weights.value());
    experts.push_back({{"expert", m},
                       {"file", file},
                       {"epsilon", eps_gamma},
                       {"epsilon_batch_fit", eps_batch},
                       {"ema_updates", model.registry().updates(m)}});
    out << "expert " << m << ": epsilon=" << std::setprecision(6) << eps_gamma
        << " updates=" << model.registry().updates(m) << '\n';
  }
  const double cosine = mean_pairwise_cosine(model.registry().gamma());
  write_json(dir / "lwa.json", {{"lookback", L},
                                {"horizon", H},
                                {"batch_windows", count},
                                {"mean_pairwise_cosine", cosine},
                                {"experts", experts}});
  out << "mean pairwise cosine " << cosine << '\n';
  return 0;
}

int inspect_routing(const RunConfig& c, const DisenTSModel& model, const Loaded& l, std::ostream& out) {
  const fs::path dir = fs::path(c.out) / "routing";
  fs::create_directories(dir);
  const Tensor beta = mean_routing(model, l.splits.test, c.train.batch_size);
  {
    std::ofstream f(dir / "routing.csv");
    if (!f) throw Error("cannot write routing dump in '" + dir.string() + "'");
    f << "channel";
    for (std::size_t k = 0; k < beta.dim(1); ++k) f << ",expert_" << k;
    f << '\n' << std::setprecision(17);
    for (std::size_t ch = 0; ch < beta.dim(0); ++ch) {
      f << l.dataset.channel_names[ch];
      for (std::size_t k = 0; k < beta.dim(1); ++k) f << ',' << beta.at(ch, k);
      f << '\n';
    }
  }
  json report{{"channels", beta.dim(0)}, {"experts", beta.dim(1)}};
  const fs::path labels = labels_path(c);
  if (fs::is_regular_file(labels)) {
    const std::vector<int> groups = read_labels(labels, l.dataset.channel_names);
    const double purity = routing_purity(beta, groups);
    report["purity"] = purity;
    out << "routing purity " << std::setprecision(4) << purity << '\n';
  } else {
    report["purity"] = nullptr;
    report["note"] = "no labels file at '" + labels.string() + "'; purity omitted";
    out << "note: no labels file at '" << labels.string() << "'; purity omitted\n";
  }
  write_json(dir / "routing.json", report);
  return 0;
}

}  // namespace

int cmd_inspect(const RunConfig& c, const std::string& what, std::ostream& out) {
  if (what != "lwa" && what != "routing") throw ConfigError("inspect target must be lwa or routing");
  preflight(c, true, true);
  DisenTSModel model(c.model);
  load_checkpoint(model, checkpoint_dir(c));
  const Loaded l = load(c);
  if (what == "lwa") {
    if (c.model.unified) throw ConfigError("a unified model has no signatures to inspect");
    return inspect_lwa(c, model, l.splits, out);
  }
  return inspect_routing(c, model, l, out);
}

}  // namespace disents::cli
