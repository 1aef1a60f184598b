#include "dfop/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dfop/config.hpp"
#include "dfop/errors.hpp"
#include "dfop/parallel.hpp"

namespace dfop {

ScoreTimeline score_video(const CanWeights& weights, const FrameSequence& seq, int threads) {
  const auto pairs = sequence_to_inputs(seq, weights.config.input_side);
  ScoreTimeline timeline;
  timeline.video_id = seq.video_id;
  timeline.frame_indices.resize(pairs.size());
  timeline.scores.resize(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    timeline.frame_indices[i] = pairs[i].frame_index;
    timeline.scores[i] = forward(pairs[i].motion, pairs[i].appearance, weights);
  });
  return timeline;
}

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("scores and labels differ in length");
  }
  if (scores.empty()) throw std::invalid_argument("no samples");
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("labels must be 0 or 1");
  }
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc needs both classes");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // 1-based ranks, tied groups share their average rank.
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) positive_rank_sum += rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

double accuracy_at_threshold(std::span<const double> scores, std::span<const int> labels,
                             double threshold) {
  check_inputs(scores, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if ((scores[i] >= threshold) == (labels[i] == 1)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

double aggregate_video(const ScoreTimeline& timeline, std::size_t window_frames) {
  if (window_frames == 0) throw std::invalid_argument("window must be >= 1 frame");
  const auto& s = timeline.scores;
  if (s.empty()) throw std::invalid_argument("empty timeline '" + timeline.video_id + "'");
  std::vector<double> means;
  for (std::size_t begin = 0; begin < s.size(); begin += window_frames) {
    const std::size_t end = std::min(s.size(), begin + window_frames);
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) sum += s[i];
    means.push_back(sum / static_cast<double>(end - begin));
  }
  std::sort(means.begin(), means.end());
  const std::size_t m = means.size();
  return m % 2 ? means[m / 2] : 0.5 * (means[m / 2 - 1] + means[m / 2]);
}

Evaluation evaluate_split(const CanWeights& weights, std::span<const FrameSequence> eval_set,
                          double threshold, std::size_t window, const std::string& split_description,
                          int threads) {
  if (eval_set.empty()) throw std::invalid_argument("evaluation set is empty");
  Evaluation ev;
  std::vector<double> video_scores;
  for (const auto& clip : eval_set) {
    if (clip.label == Label::unlabeled) {
      throw FormatError("clip '" + clip.video_id + "' has no real/fake label");
    }
    const int label = clip.label == Label::real ? 1 : 0;
    ScoreTimeline tl = score_video(weights, clip, threads);
    for (double s : tl.scores) {
      ev.frame_scores.push_back(s);
      ev.frame_labels.push_back(label);
    }
    (label ? ev.report.n_real_frames : ev.report.n_fake_frames) += tl.scores.size();
    video_scores.push_back(aggregate_video(tl, window));
    ev.video_labels.push_back(label);
    ev.timelines.push_back(std::move(tl));
  }
  ev.report.auc = auc(ev.frame_scores, ev.frame_labels);
  ev.report.accuracy = accuracy_at_threshold(ev.frame_scores, ev.frame_labels, threshold);
  ev.report.threshold = threshold;
  ev.report.split = split_description;
  ev.report.window = window;
  ev.report.n_videos = eval_set.size();
  ev.report.video_auc = auc(video_scores, ev.video_labels);
  return ev;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto n_neg = static_cast<double>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc needs both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> roc{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      (labels[order[i]] == 1 ? tp : fp) += 1.0;
      ++i;
    }
    roc.push_back({thr, tp / n_pos, fp / n_neg});
  }
  return roc;
}

double trapezoid_area(const std::vector<RocPoint>& roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
  }
  return area;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text)) throw FormatError("cannot write " + path.string());
}

std::filesystem::path svg_path(std::filesystem::path p) { return p.replace_extension(".svg"); }

struct RefLine {
  double x1, y1, x2, y2;
  const char* style;
};

// Minimal line chart: polyline over data coordinates in [x0,x1] x [0,1].
std::string svg_chart(const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<std::pair<double, double>>& pts,
                      double x0, double x1, const std::vector<RefLine>& refs) {
  constexpr double width = 640, height = 400, margin = 50;
  auto px = [&](double x) { return margin + (x - x0) / (x1 - x0) * (width - 2 * margin); };
  auto py = [&](double y) { return height - margin - y * (height - 2 * margin); };
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n"
     << "<text x=\"" << width / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">"
     << x_label << "</text>\n"
     << "<text x=\"15\" y=\"" << height / 2 << "\" transform=\"rotate(-90 15 " << height / 2
     << ")\" text-anchor=\"middle\">" << y_label << "</text>\n"
     << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << width - 2 * margin
     << "\" height=\"" << height - 2 * margin << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (const auto& r : refs) {
    os << "<line x1=\"" << px(r.x1) << "\" y1=\"" << py(r.y1) << "\" x2=\"" << px(r.x2)
       << "\" y2=\"" << py(r.y2) << "\" " << r.style << "/>\n";
  }
  os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
  for (const auto& [x, y] : pts) os << px(x) << ',' << py(y) << ' ';
  os << "\"/>\n</svg>\n";
  return os.str();
}

}  // namespace

void export_timeline(const ScoreTimeline& timeline, const std::filesystem::path& path,
                     double threshold) {
  std::ostringstream csv;
  csv << "frame_index,score\n";
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < timeline.scores.size(); ++i) {
    csv << timeline.frame_indices[i] << ',' << format_double(timeline.scores[i]) << '\n';
    pts.emplace_back(static_cast<double>(timeline.frame_indices[i]), timeline.scores[i]);
  }
  write_text(path, csv.str());

  const double x0 = pts.empty() ? 0.0 : pts.front().first;
  const double x1 = pts.size() < 2 ? x0 + 1.0 : pts.back().first;
  const double y = std::clamp(threshold, 0.0, 1.0);
  write_text(svg_path(path),
             svg_chart("score timeline: " + timeline.video_id, "frame", "score", pts, x0, x1,
                       {{x0, y, x1, y, "stroke=\"firebrick\" stroke-dasharray=\"6 4\""}}));
}

void export_roc(std::span<const double> scores, std::span<const int> labels,
                const std::filesystem::path& path) {
  const auto roc = roc_curve(scores, labels);
  std::ostringstream csv;
  csv << "threshold,tpr,fpr\n";
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : roc) {
    csv << (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) << ','
        << format_double(p.tpr) << ',' << format_double(p.fpr) << '\n';
    pts.emplace_back(p.fpr, p.tpr);
  }
  write_text(path, csv.str());
  write_text(svg_path(path),
             svg_chart("ROC", "false positive rate", "true positive rate", pts, 0.0, 1.0,
                       {{0.0, 0.0, 1.0, 1.0, "stroke=\"gray\" stroke-dasharray=\"4 4\""}}));
}

ScoreTimeline read_timeline(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "frame_index,score") {
    throw FormatError(path.string() + ": expected header 'frame_index,score'");
  }
  ScoreTimeline tl;
  tl.video_id = path.stem().string();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(path.string() + ": malformed row");
    try {
      tl.frame_indices.push_back(std::stoul(line.substr(0, comma)));
      tl.scores.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
  }
  return tl;
}

void write_report(const EvalReport& r, const std::filesystem::path& path) {
  KeyValueConfig kv;
  kv.set("auc", format_double(r.auc));
  kv.set("accuracy", format_double(r.accuracy));
  kv.set("threshold", format_double(r.threshold));
  kv.set("n_real_frames", std::to_string(r.n_real_frames));
  kv.set("n_fake_frames", std::to_string(r.n_fake_frames));
  kv.set("split", r.split);
  kv.set("video_auc", format_double(r.video_auc));
  kv.set("window", std::to_string(r.window));
  kv.set("n_videos", std::to_string(r.n_videos));
  kv.save(path);
}

}  // namespace dfop
