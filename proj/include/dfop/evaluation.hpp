#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dfop/can_model.hpp"
#include "dfop/preprocessing.hpp"

namespace dfop {

/// Per-frame detector scores of one video.
struct ScoreTimeline {
  std::string video_id;
  std::vector<std::size_t> frame_indices;
  std::vector<double> scores;
};

struct EvalReport {
  double auc = 0.0;
  double accuracy = 0.0;
  double threshold = 0.5;
  std::size_t n_real_frames = 0;
  std::size_t n_fake_frames = 0;
  std::string split;
  // Video level: one aggregate_video score per clip.
  double video_auc = 0.0;
  std::size_t window = 15;
  std::size_t n_videos = 0;
};

ScoreTimeline score_video(const CanWeights& weights, const FrameSequence& seq, int threads = 1);

// Mann-Whitney rank statistic; label 1 is the positive (real) class, ties
// count one half. Throws std::invalid_argument unless both classes occur.
double auc(std::span<const double> scores, std::span<const int> labels);

// Fraction of samples with (score >= threshold) == (label == 1).
double accuracy_at_threshold(std::span<const double> scores, std::span<const int> labels,
                             double threshold);

// Median over non-overlapping windows (trailing partial window included) of
// the window mean score.
double aggregate_video(const ScoreTimeline& timeline, std::size_t window_frames);

struct Evaluation {
  EvalReport report;
  std::vector<ScoreTimeline> timelines;
  std::vector<int> video_labels;
  std::vector<double> frame_scores;
  std::vector<int> frame_labels;
};

// Scores every clip (which must be labeled real or fake) and pools frames.
Evaluation evaluate_split(const CanWeights& weights, std::span<const FrameSequence> eval_set,
                          double threshold, std::size_t window, const std::string& split_description,
                          int threads = 1);

struct RocPoint {
  double threshold;  // +inf for the (0,0) endpoint
  double tpr;
  double fpr;
};

// One point per distinct score (descending), starting at (0,0).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
double trapezoid_area(const std::vector<RocPoint>& roc);

// CSV `frame_index,score` at `path` plus an SVG rendering next to it.
void export_timeline(const ScoreTimeline& timeline, const std::filesystem::path& path,
                     double threshold = 0.5);
// CSV `threshold,tpr,fpr` at `path` plus an SVG rendering next to it.
void export_roc(std::span<const double> scores, std::span<const int> labels,
                const std::filesystem::path& path);
ScoreTimeline read_timeline(const std::filesystem::path& path);

void write_report(const EvalReport& report, const std::filesystem::path& path);

}  // namespace dfop
