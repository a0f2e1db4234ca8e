#include "disents/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "disents/error.hpp"
#include "disents/random.hpp"

namespace disents {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

bool parse_double(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  const char* first = cell.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size() && std::isfinite(out);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

SeriesDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path.string() + "' is empty", 1, 0);
  const std::vector<std::string> header = split_csv_line(line);

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    rows.push_back(split_csv_line(line));
  }
  if (rows.size() < 2) {
    throw ParseError("'" + path.string() + "' has fewer than 2 data rows", rows.size() + 1, 0);
  }

  double probe = 0.0;
  const bool has_timestamp = lower(header[0]) == "date" || !parse_double(rows[0][0], probe);
  const std::size_t first_col = has_timestamp ? 1 : 0;
  if (header.size() <= first_col) throw ParseError("no data columns in header", 1, 0);

  const std::size_t T = rows.size();
  const std::size_t C = header.size() - first_col;
  SeriesDataset ds;
  ds.channel_names.assign(header.begin() + static_cast<std::ptrdiff_t>(first_col), header.end());
  ds.values = Tensor({T, C});
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t file_row = t + 2;  // 1-based, header is row 1
    if (rows[t].size() != header.size()) {
      throw ParseError("row " + std::to_string(file_row) + " has " + std::to_string(rows[t].size()) +
                           " cells, header has " + std::to_string(header.size()),
                       file_row, 0);
    }
    for (std::size_t c = 0; c < C; ++c) {
      double v = 0.0;
      const std::string& cell = rows[t][c + first_col];
      if (!parse_double(cell, v)) {
        const std::size_t file_col = c + first_col + 1;
        throw ParseError("non-numeric cell '" + cell + "' at row " + std::to_string(file_row) +
                             ", column " + std::to_string(file_col),
                         file_row, file_col);
      }
      ds.values.at(t, c) = v;
    }
  }
  return ds;
}

void write_csv(const SeriesDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (std::size_t c = 0; c < ds.channel_names.size(); ++c) {
    if (c) out << ',';
    out << ds.channel_names[c];
  }
  out << '\n' << std::setprecision(17);
  for (std::size_t t = 0; t < ds.length(); ++t) {
    for (std::size_t c = 0; c < ds.channels(); ++c) {
      if (c) out << ',';
      out << ds.values.at(t, c);
    }
    out << '\n';
  }
}

void write_labels(const SeriesDataset& ds, const std::filesystem::path& path) {
  if (ds.group_labels.size() != ds.channels()) throw ContractError("dataset carries no group labels");
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "channel_name,group\n";
  for (std::size_t c = 0; c < ds.channels(); ++c) {
    out << ds.channel_names[c] << ',' << ds.group_labels[c] << '\n';
  }
}

std::vector<int> read_labels(const std::filesystem::path& path,
                             const std::vector<std::string>& channel_names) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open labels file '" + path.string() + "'");
  std::string line;
  std::getline(in, line);  // header
  std::unordered_map<std::string, int> by_name;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    double g = 0.0;
    if (cells.size() != 2 || !parse_double(cells[1], g)) {
      throw ParseError("malformed labels row " + std::to_string(row), row, 0);
    }
    by_name[cells[0]] = static_cast<int>(g);
  }
  std::vector<int> labels;
  labels.reserve(channel_names.size());
  for (const auto& name : channel_names) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("labels file has no entry for channel '" + name + "'");
    labels.push_back(it->second);
  }
  return labels;
}

void WindowSpec::validate() const {
  if (lookback < 1 || horizon < 1) throw ConfigError("lookback and horizon must be >= 1");
  if (stride < 1) throw ConfigError("stride must be >= 1");
  for (double f : {train_fraction, val_fraction, test_fraction}) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("split fractions must lie in (0, 1)");
  }
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
}

WindowSet::WindowSet(std::shared_ptr<const Tensor> series, std::size_t lookback, std::size_t horizon,
                     std::size_t stride)
    : series_(std::move(series)), lookback_(lookback), horizon_(horizon), stride_(stride) {
  if (stride_ < 1) throw ConfigError("stride must be >= 1");
  const std::size_t T = series_->dim(0);
  if (T < lookback_ + horizon_) {
    throw ConfigError("split of length " + std::to_string(T) + " is shorter than lookback + horizon = " +
                      std::to_string(lookback_ + horizon_));
  }
  count_ = (T - lookback_ - horizon_) / stride_ + 1;
}

Batch WindowSet::window(std::size_t i) const {
  const std::size_t idx[] = {i};
  Batch b = batch(idx);
  const std::size_t C = channels();
  b.x = b.x.reshaped({C, lookback_});
  b.y = b.y.reshaped({C, horizon_});
  return b;
}

Batch WindowSet::batch(std::span<const std::size_t> indices) const {
  const std::size_t B = indices.size(), C = channels();
  Batch b{Tensor({B, C, lookback_}), Tensor({B, C, horizon_})};
  const Tensor& s = *series_;
  for (std::size_t n = 0; n < B; ++n) {
    if (indices[n] >= count_) throw ContractError("window index out of range");
    const std::size_t t0 = start(indices[n]);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < lookback_; ++t) b.x.at(n, c, t) = s.at(t0 + t, c);
      for (std::size_t t = 0; t < horizon_; ++t) b.y.at(n, c, t) = s.at(t0 + lookback_ + t, c);
    }
  }
  return b;
}

Batch WindowSet::batch_range(std::size_t first, std::size_t count) const {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = first + i;
  return batch(idx);
}

WindowSet sliding_windows(const Tensor& split, std::size_t lookback, std::size_t horizon,
                          std::size_t stride) {
  if (split.rank() != 2) throw ShapeError("sliding_windows: split must be [T, C]");
  return WindowSet(std::make_shared<const Tensor>(split), lookback, horizon, stride);
}

StandardizedSplits split_standardize(const SeriesDataset& ds, const WindowSpec& spec) {
  spec.validate();
  const std::size_t T = ds.length(), C = ds.channels();
  if (T <= spec.lookback + spec.horizon) {
    throw ConfigError("series length " + std::to_string(T) + " must exceed lookback + horizon");
  }
  const auto n_train = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(T)));
  const auto n_test = static_cast<std::size_t>(std::floor(spec.test_fraction * static_cast<double>(T)));
  const std::size_t n_val = T - n_train - n_test;
  const std::size_t need = spec.lookback + spec.horizon;
  if (n_train < need || n_val < spec.horizon || n_test < spec.horizon) {
    throw ConfigError("split sizes train=" + std::to_string(n_train) + " val=" + std::to_string(n_val) +
                      " test=" + std::to_string(n_test) + " cannot hold a window of " +
                      std::to_string(need) + " steps");
  }

  StandardizedSplits out;
  out.mean.assign(C, 0.0);
  out.stdev.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double m = 0.0;
    for (std::size_t t = 0; t < n_train; ++t) m += ds.values.at(t, c);
    m /= static_cast<double>(n_train);
    double v = 0.0;
    for (std::size_t t = 0; t < n_train; ++t) v += (ds.values.at(t, c) - m) * (ds.values.at(t, c) - m);
    out.mean[c] = m;
    out.stdev[c] = std::max(std::sqrt(v / static_cast<double>(n_train)), 1e-8);
  }

  auto segment = [&](std::size_t begin, std::size_t end) {
    Tensor seg({end - begin, C});
    for (std::size_t t = begin; t < end; ++t)
      for (std::size_t c = 0; c < C; ++c)
        seg.at(t - begin, c) = (ds.values.at(t, c) - out.mean[c]) / out.stdev[c];
    return seg;
  };
  out.train = segment(0, n_train);
  out.val = segment(n_train - spec.lookback, n_train + n_val);
  out.test = segment(n_train + n_val - spec.lookback, T);
  return out;
}

DataSplits make_splits(const SeriesDataset& ds, const WindowSpec& spec) {
  StandardizedSplits s = split_standardize(ds, spec);
  DataSplits d;
  d.train = sliding_windows(s.train, spec.lookback, spec.horizon, spec.stride);
  d.val = sliding_windows(s.val, spec.lookback, spec.horizon, spec.stride);
  d.test = sliding_windows(s.test, spec.lookback, spec.horizon, spec.stride);
  d.mean = std::move(s.mean);
  d.stdev = std::move(s.stdev);
  return d;
}

void SynthConfig::validate() const {
  if (groups.empty()) throw ConfigError("synthetic config needs at least one group");
  if (channels_per_group < 1) throw ConfigError("channels per group must be >= 1");
  if (length < 2) throw ConfigError("synthetic length must be >= 2");
  if (!(noise >= 0.0)) throw ConfigError("noise level must be >= 0");
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const GroupSpec& s = groups[g];
    if (!(s.period > 0.0)) throw ConfigError("group " + std::to_string(g) + ": period must be > 0");
    if (s.sign != 1 && s.sign != -1) throw ConfigError("group " + std::to_string(g) + ": sign must be +1 or -1");
    if (!(s.phase_jitter >= 0.0)) throw ConfigError("group " + std::to_string(g) + ": phase jitter must be >= 0");
  }
}

SynthConfig default_synth_config() {
  SynthConfig cfg;
  cfg.groups = {GroupSpec{24.0, 1.0, 0.0005, std::numbers::pi, 1},
                GroupSpec{36.0, 1.0, -0.0005, std::numbers::pi, -1}};
  cfg.length = 4000;
  cfg.channels_per_group = 4;
  cfg.noise = 0.1;
  return cfg;
}

SynthConfig four_group_synth_config() {
  SynthConfig cfg = default_synth_config();
  cfg.groups = {GroupSpec{24.0, 1.0, 0.0005, std::numbers::pi, 1},
                GroupSpec{36.0, 1.0, -0.0005, std::numbers::pi, -1},
                GroupSpec{16.0, 1.0, 0.0005, std::numbers::pi, 1},
                GroupSpec{48.0, 1.0, -0.0005, std::numbers::pi, -1}};
  return cfg;
}

SeriesDataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<ChannelSlot> layout;
  for (std::size_t g = 0; g < cfg.groups.size(); ++g)
    for (std::size_t m = 0; m < cfg.channels_per_group; ++m) layout.push_back({g, m});
  return synth_generate(cfg, layout);
}

SeriesDataset synth_generate(const SynthConfig& cfg, std::span<const ChannelSlot> layout) {
  cfg.validate();
  const std::size_t T = cfg.length, C = layout.size();
  SeriesDataset ds;
  ds.values = Tensor({T, C});
  const Rng root(cfg.seed);
  for (std::size_t c = 0; c < C; ++c) {
    const ChannelSlot slot = layout[c];
    if (slot.group >= cfg.groups.size()) throw ConfigError("channel layout references unknown group");
    const GroupSpec& g = cfg.groups[slot.group];
    Rng rng = root.derive((static_cast<std::uint64_t>(slot.group) << 32) | slot.member);
    const double phase = g.phase_jitter > 0.0 ? rng.uniform(-g.phase_jitter, g.phase_jitter) : 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double tt = static_cast<double>(t);
      const double clean = g.amplitude * std::sin(2.0 * std::numbers::pi * tt / g.period + phase) + g.slope * tt;
      ds.values.at(t, c) = g.sign * clean + (cfg.noise > 0.0 ? rng.normal(0.0, cfg.noise) : 0.0);
    }
    ds.channel_names.push_back("g" + std::to_string(slot.group) + "_c" + std::to_string(slot.member));
    ds.group_labels.push_back(static_cast<int>(slot.group));
  }
  return ds;
}

double routing_purity(const Tensor& beta_mean, std::span<const int> group_labels) {
  if (beta_mean.rank() != 2 || beta_mean.dim(0) == 0 || beta_mean.dim(1) == 0) {
    throw ContractError("routing_purity: beta_mean must be a non-empty [C, K] matrix");
  }
  const std::size_t C = beta_mean.dim(0), K = beta_mean.dim(1);
  if (group_labels.size() != C) {
    throw ContractError("routing_purity: " + std::to_string(group_labels.size()) + " labels for " +
                        std::to_string(C) + " channels");
  }
  std::vector<std::size_t> choice(C);
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (beta_mean.at(c, k) > beta_mean.at(c, best)) best = k;
    choice[c] = best;
  }
  std::map<int, std::vector<std::size_t>> votes;
  for (std::size_t c = 0; c < C; ++c) {
    auto& v = votes[group_labels[c]];
    v.resize(K, 0);
    ++v[choice[c]];
  }
  std::map<int, std::size_t> majority;
  for (const auto& [g, v] : votes) {
    majority[g] = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  }
  std::size_t hits = 0;
  for (std::size_t c = 0; c < C; ++c) hits += choice[c] == majority[group_labels[c]];
  return static_cast<double>(hits) / static_cast<double>(C);
}

}  // namespace disents
