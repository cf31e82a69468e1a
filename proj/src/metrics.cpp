#include "ufe/metrics.hpp"

#include <sstream>
#include <stdexcept>

namespace ufe::metrics {

Counts count(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("metrics: prediction " + shape_str(pred.shape()) + " does not match target " +
                     shape_str(gt.shape()));
  }
  Counts c;
  const auto& p = pred.values();
  const auto& g = gt.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] > 0.5f, b = g[i] > 0.5f;
    c.tp += a && b;
    c.fp += a && !b;
    c.fn += !a && b;
  }
  return c;
}

double iou(const Counts& c) {
  const std::int64_t uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : static_cast<double>(c.tp) / uni;
}

double iou(const Tensor& pred, const Tensor& gt) { return iou(count(pred, gt)); }

double fscore(const Counts& c, double beta_sq) {
  const double precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
  const double recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
  const double denom = beta_sq * precision + recall;
  return denom > 0 ? (1 + beta_sq) * precision * recall / denom : 0.0;
}

double fscore(const Tensor& pred, const Tensor& gt, double beta_sq) {
  return fscore(count(pred, gt), beta_sq);
}

Tensor binarize(const Tensor& prob, double threshold) {
  std::vector<float> v(prob.values());
  for (float& x : v) x = x >= threshold ? 1.0f : 0.0f;
  return Tensor::from(prob.shape(), std::move(v));
}

EvalReport evaluate(const data::Dataset& dataset, data::Split split, const Predictor& predictor,
                    const EvalOptions& options) {
  const auto clips = dataset.clip_indices(split);
  if (clips.empty()) throw std::invalid_argument("split '" + data::to_string(split) + "' is empty");
  EvalReport report;
  report.split = data::to_string(split);
  double iou_sum = 0;
  for (int ci : clips) {
    const auto& clip = dataset.clips[ci];
    ClipReport cr;
    cr.clip_id = clip.id;
    double clip_iou = 0;
    for (std::size_t t = 0; t < clip.masks.size(); ++t) {
      if (!clip.masks[t]) {
        throw std::invalid_argument("clip " + clip.id + " has no ground truth for frame " +
                                    std::to_string(t) + "; split '" + report.split +
                                    "' cannot be evaluated");
      }
      const Tensor pred = binarize(predictor(ci, static_cast<int>(t)), options.threshold);
      const Counts c = count(pred, *clip.masks[t]);
      const double v = iou(c);
      clip_iou += v;
      iou_sum += v;
      cr.counts += c;
      ++cr.frames;
    }
    cr.miou = clip_iou / cr.frames;
    cr.fscore = fscore(cr.counts, options.beta_sq);
    report.counts += cr.counts;
    report.frames += cr.frames;
    report.per_clip.push_back(std::move(cr));
  }
  report.miou = iou_sum / report.frames;
  report.fscore = fscore(report.counts, options.beta_sq);
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& c : per_clip) {
    clips.push_back({{"clip", c.clip_id},
                     {"frames", c.frames},
                     {"miou", c.miou},
                     {"fscore", c.fscore},
                     {"tp", c.counts.tp},
                     {"fp", c.counts.fp},
                     {"fn", c.counts.fn}});
  }
  return {{"split", split},   {"miou", miou},         {"fscore", fscore},
          {"frames", frames}, {"tp", counts.tp},      {"fp", counts.fp},
          {"fn", counts.fn},  {"per_clip", clips}};
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "clip,frames,miou,fscore,tp,fp,fn\n";
  for (const auto& c : per_clip) {
    out << c.clip_id << ',' << c.frames << ',' << c.miou << ',' << c.fscore << ',' << c.counts.tp
        << ',' << c.counts.fp << ',' << c.counts.fn << '\n';
  }
  return out.str();
}

}  // namespace ufe::metrics
