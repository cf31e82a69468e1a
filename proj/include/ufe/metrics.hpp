#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ufe/dataset.hpp"
#include "ufe/tensor.hpp"

namespace ufe::metrics {

inline constexpr double kDefaultBetaSq = 0.3;

struct Counts {
  std::int64_t tp = 0, fp = 0, fn = 0;
  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

// Inputs are binary maps; values > 0.5 count as foreground.
Counts count(const Tensor& pred, const Tensor& gt);

// |pred & gt| / |pred | gt|; 1 when both are empty.
double iou(const Tensor& pred, const Tensor& gt);
double iou(const Counts& c);

// (1 + b2) P R / (b2 P + R); 0 when the denominator is 0.
double fscore(const Tensor& pred, const Tensor& gt, double beta_sq = kDefaultBetaSq);
double fscore(const Counts& c, double beta_sq = kDefaultBetaSq);

Tensor binarize(const Tensor& prob, double threshold);

struct ClipReport {
  std::string clip_id;
  int frames = 0;
  double miou = 0;
  double fscore = 0;
  Counts counts;
};

struct EvalReport {
  std::string split;
  double miou = 0;    // mean of per-frame IoU
  double fscore = 0;  // from globally accumulated counts
  int frames = 0;
  Counts counts;
  std::vector<ClipReport> per_clip;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

struct EvalOptions {
  double threshold = 0.5;
  double beta_sq = kDefaultBetaSq;
};

// Probability map [H,W] for frame `frame` of clip index `clip`.
using Predictor = std::function<Tensor(int clip, int frame)>;

EvalReport evaluate(const data::Dataset& dataset, data::Split split, const Predictor& predictor,
                    const EvalOptions& options = {});

}  // namespace ufe::metrics
