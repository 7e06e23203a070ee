#include "crir/harness/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace crir::harness {

double compute_ctr(std::span<const double> rewards) {
  if (rewards.empty()) throw std::invalid_argument("compute_ctr: empty reward list");
  const auto positive = std::count_if(rewards.begin(), rewards.end(), [](double r) { return r > 0.0; });
  return static_cast<double>(positive) / static_cast<double>(rewards.size());
}

double ci_half_width(std::span<const double> values) {
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return 1.96 * std::sqrt(ss / n) / std::sqrt(n);
}

AggregateCurve aggregate_ci(const std::vector<std::vector<double>>& runs, std::size_t smoothing_window,
                            std::string label) {
  if (runs.size() < 2) throw std::invalid_argument("aggregate_ci: need at least two seeds");
  const std::size_t len = runs.front().size();
  for (const auto& r : runs) {
    if (r.size() != len) throw std::invalid_argument("aggregate_ci: runs differ in length");
  }
  std::vector<std::vector<double>> streams = runs;
  if (smoothing_window > 1) {
    for (std::size_t k = 0; k < runs.size(); ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        acc += runs[k][i];
        if (i >= smoothing_window) acc -= runs[k][i - smoothing_window];
        streams[k][i] = acc / static_cast<double>(std::min(i + 1, smoothing_window));
      }
    }
  }
  AggregateCurve c;
  c.label = std::move(label);
  c.mean.resize(len);
  c.half_width.resize(len);
  std::vector<double> column(streams.size());
  for (std::size_t i = 0; i < len; ++i) {
    double m = 0.0;
    for (std::size_t k = 0; k < streams.size(); ++k) {
      column[k] = streams[k][i];
      m += column[k];
    }
    c.mean[i] = m / static_cast<double>(streams.size());
    c.half_width[i] = ci_half_width(column);
  }
  return c;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  if (quoted) throw std::invalid_argument("csv: unterminated quote");
  out.push_back(std::move(cur));
  return out;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string optional_number(const std::optional<double>& v) { return v ? csv_number(*v) : std::string(); }

}  // namespace

void emit_csv(const std::vector<EpisodeMetrics>& rows, const std::filesystem::path& path) {
  const bool grads = std::any_of(rows.begin(), rows.end(), [](const EpisodeMetrics& m) {
    return m.grad_norm_rl.has_value() || m.grad_norm_prcl.has_value();
  });
  auto out = open_out(path);
  out << "run_id,seed,episode,cumulative_reward,ctr,episode_length";
  if (grads) out << ",grad_norm_rl,grad_norm_prcl";
  out << "\r\n";
  for (const auto& m : rows) {
    out << csv_field(m.run_id) << ',' << m.seed << ',' << m.episode << ',' << csv_number(m.cumulative_reward) << ','
        << csv_number(m.ctr) << ',' << m.episode_length;
    if (grads) out << ',' << optional_number(m.grad_norm_rl) << ',' << optional_number(m.grad_norm_prcl);
    out << "\r\n";
  }
  finish(out, path);
}

std::vector<EpisodeMetrics> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: missing header in " + path.string());
  const auto header = parse_csv_line(line);
  if (header.size() != 6 && header.size() != 8) throw std::runtime_error("csv: unexpected header");
  std::vector<EpisodeMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = parse_csv_line(line);
    if (f.size() != header.size()) throw std::runtime_error("csv: row width differs from header");
    EpisodeMetrics m;
    m.run_id = f[0];
    m.seed = std::stoull(f[1]);
    m.episode = std::stoull(f[2]);
    m.cumulative_reward = std::stod(f[3]);
    m.ctr = std::stod(f[4]);
    m.episode_length = std::stoull(f[5]);
    if (header.size() == 8) {
      if (!f[6].empty()) m.grad_norm_rl = std::stod(f[6]);
      if (!f[7].empty()) m.grad_norm_prcl = std::stod(f[7]);
    }
    rows.push_back(std::move(m));
  }
  return rows;
}

void emit_grad_csv(const std::vector<GradNormRecord>& rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "run_id,seed,update_step,source,grad_norm\r\n";
  for (const auto& r : rows) {
    out << csv_field(r.run_id) << ',' << r.seed << ',' << r.update_step << ',' << csv_field(r.source) << ','
        << csv_number(r.norm) << "\r\n";
  }
  finish(out, path);
}

void emit_aggregate_csv(const std::vector<AggregateCurve>& curves, const std::string& metric,
                        const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "label,metric,episode,mean,half_width\r\n";
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.mean.size(); ++i) {
      out << csv_field(c.label) << ',' << csv_field(metric) << ',' << i << ',' << csv_number(c.mean[i]) << ','
          << csv_number(c.half_width[i]) << "\r\n";
    }
  }
  finish(out, path);
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

}  // namespace

std::string render_svg(const std::vector<AggregateCurve>& curves, const SvgOptions& o) {
  if (curves.empty()) throw std::invalid_argument("emit_svg: no curves");
  std::size_t len = 0;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& c : curves) {
    if (c.mean.size() != c.half_width.size()) throw std::invalid_argument("emit_svg: band width mismatch");
    len = std::max(len, c.mean.size());
    for (std::size_t i = 0; i < c.mean.size(); ++i) {
      lo = std::min(lo, c.mean[i] - c.half_width[i]);
      hi = std::max(hi, c.mean[i] + c.half_width[i]);
    }
  }
  if (len == 0) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double ml = 70, mr = 170, mt = 40, mb = 50;
  const double pw = o.width - ml - mr, ph = o.height - mt - mb;
  const double xmax = len > 1 ? static_cast<double>(len - 1) : 1.0;
  auto px = [&](double i) { return ml + pw * i / xmax; };
  auto py = [&](double v) { return mt + ph * (1.0 - (v - lo) / (hi - lo)); };

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << o.width << "\" height=\"" << o.height
    << "\" viewBox=\"0 0 " << o.width << ' ' << o.height << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!o.title.empty()) {
    s << "<text x=\"" << num(ml + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << xml_escape(o.title) << "</text>\n";
  }
  // axes
  s << "<g stroke=\"black\" stroke-width=\"1\">\n";
  s << "<line x1=\"" << num(ml) << "\" y1=\"" << num(mt + ph) << "\" x2=\"" << num(ml + pw) << "\" y2=\"" << num(mt + ph)
    << "\"/>\n";
  s << "<line x1=\"" << num(ml) << "\" y1=\"" << num(mt) << "\" x2=\"" << num(ml) << "\" y2=\"" << num(mt + ph)
    << "\"/>\n";
  s << "</g>\n<g font-size=\"11\">\n";
  for (int t = 0; t <= 5; ++t) {
    const double xv = xmax * t / 5.0, yv = lo + (hi - lo) * t / 5.0;
    s << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << num(mt + ph) << "\" x2=\"" << num(px(xv)) << "\" y2=\""
      << num(mt + ph + 5) << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(mt + ph + 18) << "\" text-anchor=\"middle\">"
      << tick_label(std::round(xv)) << "</text>\n";
    s << "<line x1=\"" << num(ml - 5) << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << num(ml) << "\" y2=\""
      << num(py(yv)) << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << num(ml - 8) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << tick_label(yv)
      << "</text>\n";
  }
  s << "<text x=\"" << num(ml + pw / 2) << "\" y=\"" << num(o.height - 10.0) << "\" text-anchor=\"middle\">"
    << xml_escape(o.x_label) << "</text>\n";
  s << "<text transform=\"translate(16," << num(mt + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
    << xml_escape(o.y_label) << "</text>\n</g>\n";

  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& c = curves[k];
    const char* color = kPalette[k % std::size(kPalette)];
    if (c.mean.empty()) continue;
    s << "<polygon class=\"ci-band\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < c.mean.size(); ++i) {
      s << num(px(static_cast<double>(i))) << ',' << num(py(c.mean[i] + c.half_width[i])) << ' ';
    }
    for (std::size_t i = c.mean.size(); i-- > 0;) {
      s << num(px(static_cast<double>(i))) << ',' << num(py(c.mean[i] - c.half_width[i])) << ' ';
    }
    s << "\"/>\n";
    s << "<polyline class=\"mean-line\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < c.mean.size(); ++i) {
      s << num(px(static_cast<double>(i))) << ',' << num(py(c.mean[i])) << ' ';
    }
    s << "\"/>\n";
  }

  s << "<g class=\"legend\" font-size=\"12\">\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const double y = mt + 10 + 20.0 * static_cast<double>(k);
    const char* color = kPalette[k % std::size(kPalette)];
    s << "<rect x=\"" << num(ml + pw + 15) << "\" y=\"" << num(y - 9) << "\" width=\"14\" height=\"10\" fill=\"" << color
      << "\"/>\n";
    s << "<text x=\"" << num(ml + pw + 35) << "\" y=\"" << num(y) << "\">" << xml_escape(curves[k].label)
      << "</text>\n";
  }
  s << "</g>\n</svg>\n";
  return s.str();
}

void emit_svg(const std::vector<AggregateCurve>& curves, const std::filesystem::path& path,
              const SvgOptions& options) {
  const std::string text = render_svg(curves, options);
  auto out = open_out(path);
  out << text;
  finish(out, path);
}

}  // namespace crir::harness
