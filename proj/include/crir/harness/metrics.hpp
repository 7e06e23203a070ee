#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace crir::harness {

struct EpisodeMetrics {
  std::string run_id;
  std::uint64_t seed = 0;
  std::size_t episode = 0;
  double cumulative_reward = 0.0;
  double ctr = 0.0;
  std::size_t episode_length = 0;
  // Mean of the norms logged during the episode, when gradient logging is on.
  std::optional<double> grad_norm_rl;
  std::optional<double> grad_norm_prcl;
};

struct GradNormRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  std::size_t update_step = 0;
  std::string source;  // "rl" or "prcl"
  double norm = 0.0;
};

// Fraction of strictly positive rewards; throws on an empty list.
double compute_ctr(std::span<const double> rewards);

struct AggregateCurve {
  std::string label;
  std::vector<double> mean;
  std::vector<double> half_width;  // 1.96 * population stddev / sqrt(seeds)
};

// Per-episode mean and 95% half-width across seeds. Needs at least two
// streams of equal length. smoothing_window > 1 first replaces each stream by
// its trailing moving average.
AggregateCurve aggregate_ci(const std::vector<std::vector<double>>& runs, std::size_t smoothing_window = 0,
                            std::string label = {});

// 1.96 * population stddev / sqrt(n) of a sample.
double ci_half_width(std::span<const double> values);

// RFC 4180 field quoting.
std::string csv_field(const std::string& s);
// Decimal with 10 significant digits.
std::string csv_number(double v);
std::vector<std::string> parse_csv_line(const std::string& line);

// Grad-norm columns are written when any row carries them.
void emit_csv(const std::vector<EpisodeMetrics>& rows, const std::filesystem::path& path);
std::vector<EpisodeMetrics> read_csv(const std::filesystem::path& path);
void emit_grad_csv(const std::vector<GradNormRecord>& rows, const std::filesystem::path& path);
// label, metric, episode, mean, half_width
void emit_aggregate_csv(const std::vector<AggregateCurve>& curves, const std::string& metric,
                        const std::filesystem::path& path);

struct SvgOptions {
  std::string title;
  std::string x_label = "episode";
  std::string y_label;
  int width = 800;
  int height = 480;
};

// Line chart: one polyline per curve over a shaded CI band, axes with ticks,
// legend. Throws on an empty curve set.
void emit_svg(const std::vector<AggregateCurve>& curves, const std::filesystem::path& path,
              const SvgOptions& options = {});
std::string render_svg(const std::vector<AggregateCurve>& curves, const SvgOptions& options = {});

}  // namespace crir::harness
