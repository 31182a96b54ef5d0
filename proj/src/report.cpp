#include "mgproto/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mgproto {

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string short_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// Minimal SVG canvas: fixed 640x360 frame, data mapped into a padded box.
class Svg {
 public:
  Svg(std::string title, double x0, double x1, double y0, double y1)
      : x0_(x0), x1_(x1 > x0 ? x1 : x0 + 1.0), y0_(y0), y1_(y1 > y0 ? y1 : y0 + 1.0) {
    body_ << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
    body_ << "<rect x=\"60\" y=\"40\" width=\"560\" height=\"280\" fill=\"none\" stroke=\"#444\"/>\n";
    body_ << "<text x=\"60\" y=\"340\" font-size=\"11\">" << short_number(x0_) << "</text>\n";
    body_ << "<text x=\"620\" y=\"340\" text-anchor=\"end\" font-size=\"11\">" << short_number(x1_) << "</text>\n";
    body_ << "<text x=\"55\" y=\"320\" text-anchor=\"end\" font-size=\"11\">" << short_number(y0_) << "</text>\n";
    body_ << "<text x=\"55\" y=\"48\" text-anchor=\"end\" font-size=\"11\">" << short_number(y1_) << "</text>\n";
  }

  double px(double x) const { return 60.0 + 560.0 * (x - x0_) / (x1_ - x0_); }
  double py(double y) const { return 320.0 - 280.0 * (y - y0_) / (y1_ - y0_); }

  void rect(double xa, double xb, double ya, double yb, const char* fill, double opacity = 1.0) {
    body_ << "<rect x=\"" << short_number(px(xa)) << "\" y=\"" << short_number(py(yb)) << "\" width=\""
          << short_number(px(xb) - px(xa)) << "\" height=\"" << short_number(py(ya) - py(yb)) << "\" fill=\"" << fill
          << "\" fill-opacity=\"" << opacity << "\"/>\n";
  }

  void polyline(const std::vector<double>& xs, const std::vector<double>& ys, const char* stroke) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" points=\"";
    for (std::size_t k = 0; k < xs.size(); ++k) {
      body_ << (k ? " " : "") << short_number(px(xs[k])) << "," << short_number(py(ys[k]));
    }
    body_ << "\"/>\n";
  }

  void legend(int row, const char* color, const std::string& label) {
    const int y = 56 + 16 * row;
    body_ << "<rect x=\"500\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
    body_ << "<text x=\"515\" y=\"" << y << "\" font-size=\"11\">" << label << "</text>\n";
  }

  void save(const std::filesystem::path& path) const {
    auto out = open_for_write(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\" viewBox=\"0 0 640 360\">\n"
        << body_.str() << "</svg>\n";
    finish(out, path);
  }

 private:
  double x0_, x1_, y0_, y1_;
  std::ostringstream body_;
};

void histogram_svg(const std::filesystem::path& path, const Histogram& h) {
  std::size_t peak = 1;
  for (std::size_t b = 0; b < h.id_counts.size(); ++b) peak = std::max({peak, h.id_counts[b], h.ood_counts[b]});
  Svg svg("score histogram", h.edges.front(), h.edges.back(), 0.0, static_cast<double>(peak));
  for (std::size_t b = 0; b < h.id_counts.size(); ++b) {
    svg.rect(h.edges[b], h.edges[b + 1], 0.0, static_cast<double>(h.id_counts[b]), "#1f77b4", 0.6);
    svg.rect(h.edges[b], h.edges[b + 1], 0.0, static_cast<double>(h.ood_counts[b]), "#d62728", 0.6);
  }
  svg.legend(0, "#1f77b4", "ID");
  svg.legend(1, "#d62728", "OoD");
  svg.save(path);
}

void priors_svg(const std::filesystem::path& path, const ModelHead& head) {
  const std::size_t n_protos = head.num_prototypes();
  const std::size_t slots = head.num_classes() * (n_protos + 1);
  double peak = 0.0;
  for (const auto& mix : head.classes) peak = std::max(peak, *std::max_element(mix.priors.begin(), mix.priors.end()));
  Svg svg("prototype priors by class", 0.0, static_cast<double>(slots), 0.0, peak > 0.0 ? peak : 1.0);
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
  for (std::size_t c = 0; c < head.num_classes(); ++c) {
    const char* color = palette[c % 6];
    for (std::size_t m = 0; m < n_protos; ++m) {
      const double x = static_cast<double>(c * (n_protos + 1) + m);
      svg.rect(x + 0.1, x + 0.9, 0.0, head.classes[c].priors[m], color);
    }
    if (c < 6) svg.legend(static_cast<int>(c), color, "class " + std::to_string(c));
  }
  svg.save(path);
}

void losses_svg(const std::filesystem::path& path, const std::vector<StepRecord>& history) {
  std::vector<double> xs, ce, mining, aux, total;
  double peak = 0.0;
  for (const auto& r : history) {
    xs.push_back(static_cast<double>(r.step));
    ce.push_back(r.loss.ce);
    mining.push_back(r.loss.mining);
    aux.push_back(r.loss.aux);
    total.push_back(r.loss.total);
    peak = std::max({peak, r.loss.ce, r.loss.mining, r.loss.aux, r.loss.total});
  }
  Svg svg("training losses", xs.front(), xs.back(), 0.0, peak);
  svg.polyline(xs, total, "#000000");
  svg.polyline(xs, ce, "#1f77b4");
  svg.polyline(xs, mining, "#ff7f0e");
  svg.polyline(xs, aux, "#2ca02c");
  svg.legend(0, "#000000", "total");
  svg.legend(1, "#1f77b4", "ce");
  svg.legend(2, "#ff7f0e", "mining");
  svg.legend(3, "#2ca02c", "aux");
  svg.save(path);
}

}  // namespace

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  auto out = open_for_write(path);
  out << "metric_name,split,value\n";
  for (const auto& r : rows) out << r.name << ',' << r.split << ',' << format_number(r.value) << '\n';
  finish(out, path);
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& h) {
  auto out = open_for_write(path);
  out << "bin_left,bin_right,id_count,ood_count\n";
  for (std::size_t b = 0; b < h.id_counts.size(); ++b) {
    out << format_number(h.edges[b]) << ',' << format_number(h.edges[b + 1]) << ',' << h.id_counts[b] << ','
        << h.ood_counts[b] << '\n';
  }
  finish(out, path);
}

void write_priors_csv(const std::filesystem::path& path, const ModelHead& head) {
  auto out = open_for_write(path);
  out << "class_id,prototype,prior\n";
  for (const auto& mix : head.classes) {
    for (std::size_t m = 0; m < mix.num_prototypes; ++m) {
      out << mix.class_id << ',' << m << ',' << format_number(mix.priors[m]) << '\n';
    }
  }
  finish(out, path);
}

void write_losses_csv(const std::filesystem::path& path, const std::vector<StepRecord>& history) {
  auto out = open_for_write(path);
  out << "step,epoch,ce,mining,aux,total\n";
  for (const auto& r : history) {
    out << r.step << ',' << r.epoch << ',' << format_number(r.loss.ce) << ',' << format_number(r.loss.mining) << ','
        << format_number(r.loss.aux) << ',' << format_number(r.loss.total) << '\n';
  }
  finish(out, path);
}

std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir, const ReportInputs& in) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw std::runtime_error("cannot create output directory " + dir.string());
  }
  std::vector<std::filesystem::path> written;
  written.push_back(dir / "metrics.csv");
  write_metrics_csv(written.back(), in.metrics);
  if (in.scores && (!in.scores->id_scores.empty() || !in.scores->ood_scores.empty())) {
    const auto h = score_histogram(*in.scores, in.histogram_bins);
    written.push_back(dir / "histogram.csv");
    write_histogram_csv(written.back(), h);
    written.push_back(dir / "histogram.svg");
    histogram_svg(written.back(), h);
  }
  if (in.head) {
    written.push_back(dir / "priors.csv");
    write_priors_csv(written.back(), *in.head);
    written.push_back(dir / "priors.svg");
    priors_svg(written.back(), *in.head);
  }
  if (!in.history.empty()) {
    written.push_back(dir / "losses.csv");
    write_losses_csv(written.back(), in.history);
    written.push_back(dir / "losses.svg");
    losses_svg(written.back(), in.history);
  }
  return written;
}

}  // namespace mgproto
