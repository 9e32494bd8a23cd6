#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "edtrack/pipeline/metrics.hpp"

namespace edtrack {

namespace detail {

inline std::ofstream open_for_write(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  return out;
}

inline void finish_write(std::ofstream& out, const std::filesystem::path& p) {
  out.flush();
  if (!out) throw IoError("failed writing '" + p.string() + "'");
}

inline std::string fixed6(double v) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

/// frame,mean_px,std_px,validity_fraction; blank cells for frames without
/// valid landmarks.
inline void write_frame_csv(const TrackingMetrics& m, std::ostream& out) {
  out << "frame,mean_px,std_px,validity_fraction\n";
  for (const auto& f : m.frames) {
    const auto s = f.stats();
    out << f.frame << ',' << (s.count ? detail::fixed6(s.mean) : "") << ','
        << (s.count ? detail::fixed6(s.stddev) : "") << ',' << detail::fixed6(f.validity_fraction()) << '\n';
  }
}

inline void write_landmark_csv(const TrackingMetrics& m, std::ostream& out) {
  out << "landmark_id,frame,u_annot,v_annot,u_proj,v_proj,error_px\n";
  for (const auto& f : m.frames)
    for (const auto& l : f.landmarks) {
      out << l.landmark << ',' << f.frame << ',' << detail::fixed6(l.annotated.x()) << ','
          << detail::fixed6(l.annotated.y()) << ',';
      if (l.projected)
        out << detail::fixed6(l.projected->x()) << ',' << detail::fixed6(l.projected->y()) << ','
            << detail::fixed6(l.error_px);
      else
        out << ",,";
      out << '\n';
    }
}

inline nlohmann::json summary_json(const TrackingMetrics& m) {
  const auto p = m.pooled();
  nlohmann::json j;
  j["mode"] = m.mode;
  j["frames"] = m.frames.size();
  j["failed_frames"] = m.failed_frames();
  j["valid_errors"] = p.count;
  if (p.count > 0) {
    j["mean_px"] = p.mean;
    j["std_px"] = p.stddev;
    j["summary"] = format_mean_std(p.mean, p.stddev);
  } else {
    j["summary"] = nullptr;
  }
  if (const auto fm = m.final_mean()) j["final_mean_px"] = *fm;
  return j;
}

/// Mean error against frame number as a standalone SVG polyline.
inline void write_error_svg(const TrackingMetrics& m, std::ostream& out) {
  const double w = 640, h = 360, pad = 48;
  int fmin = m.frames.front().frame, fmax = fmin;
  double ymax = 0;
  for (const auto& f : m.frames) {
    fmin = std::min(fmin, f.frame);
    fmax = std::max(fmax, f.frame);
    const auto s = f.stats();
    if (s.count) ymax = std::max(ymax, s.mean);
  }
  if (ymax <= 0) ymax = 1;
  const double xspan = std::max(1, fmax - fmin);
  auto x = [&](int f) { return pad + (w - 2 * pad) * (f - fmin) / xspan; };
  auto y = [&](double e) { return h - pad - (h - 2 * pad) * e / ymax; };
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\" viewBox=\"0 0 640 360\">\n";
  out << "<rect width=\"640\" height=\"360\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<path d=\"M%.1f %.1f H%.1f M%.1f %.1f V%.1f\" stroke=\"black\" fill=\"none\"/>\n", pad, h - pad,
                w - pad, pad, h - pad, pad);
  out << buf;
  out << "<polyline fill=\"none\" stroke=\"#c03020\" stroke-width=\"2\" points=\"";
  for (const auto& f : m.frames) {
    const auto s = f.stats();
    if (!s.count) continue;
    std::snprintf(buf, sizeof buf, "%.2f,%.2f ", x(f.frame), y(s.mean));
    out << buf;
  }
  out << "\"/>\n";
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.0f\" y=\"%.0f\" font-size=\"12\">frame %d .. %d</text>\n"
                "<text x=\"4\" y=\"%.0f\" font-size=\"12\">%.2f px</text>\n"
                "<text x=\"%.0f\" y=\"20\" font-size=\"14\">mean reprojection error</text>\n",
                w / 2 - 40, h - 12, fmin, fmax, pad - 4, ymax, w / 2 - 80);
  out << buf;
  out << "</svg>\n";
}

/// Writes frames.csv, landmarks.csv, summary.json and error_plot.svg into dir.
inline void emit_report(const TrackingMetrics& m, const std::filesystem::path& dir) {
  if (m.empty()) throw InvalidParameterError("cannot report empty metrics");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  const auto frames = dir / "frames.csv", marks = dir / "landmarks.csv", summary = dir / "summary.json",
             svg = dir / "error_plot.svg";
  auto out = detail::open_for_write(frames);
  write_frame_csv(m, out);
  detail::finish_write(out, frames);
  out = detail::open_for_write(marks);
  write_landmark_csv(m, out);
  detail::finish_write(out, marks);
  out = detail::open_for_write(summary);
  out << summary_json(m).dump(1) << '\n';
  detail::finish_write(out, summary);
  out = detail::open_for_write(svg);
  write_error_svg(m, out);
  detail::finish_write(out, svg);
}

inline void save_metrics(const TrackingMetrics& m, const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << to_json(m).dump(1) << '\n';
  detail::finish_write(out, path);
}

}  // namespace edtrack
