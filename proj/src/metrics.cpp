#include "fxf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "fxf/error.hpp"
#include "fxf/losses.hpp"

namespace fxf {

double mean_f1(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target, std::size_t classes) {
  if (pred.size() != target.size()) throw ShapeError("mean_f1 size mismatch");
  std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= classes || target[i] >= classes) throw DomainError("class id out of range in mean_f1");
    if (pred[i] == target[i]) {
      ++tp[pred[i]];
    } else {
      ++fp[pred[i]];
      ++fn[target[i]];
    }
  }
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    ++used;
  }
  return used == 0 ? 100.0 : 100.0 * sum / static_cast<double>(used);
}

double pixel_accuracy(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& target) {
  if (pred.size() != target.size() || pred.empty()) throw ShapeError("pixel_accuracy size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == target[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

double landmark_nme(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != 2 * kNumLandmarks || target.size() != 2 * kNumLandmarks) {
    throw ShapeError("landmark_nme expects 68 (x, y) pairs");
  }
  const double iod = std::hypot(target[2 * 36] - target[2 * 45], target[2 * 36 + 1] - target[2 * 45 + 1]);
  if (!(iod > 0.0)) throw DomainError("inter-ocular distance is zero");
  double err = 0.0;
  for (std::size_t k = 0; k < kNumLandmarks; ++k)
    err += std::hypot(pred[2 * k] - target[2 * k], pred[2 * k + 1] - target[2 * k + 1]);
  return err / static_cast<double>(kNumLandmarks) / iod;
}

double pose_mae_degrees(const std::array<double, 9>& pred, const std::array<double, 9>& target) {
  const auto a = rotation_to_euler(pred);
  const auto b = rotation_to_euler(target);
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) sum += std::abs(a[i] - b[i]);
  return sum / 3.0 * 180.0 / std::numbers::pi;
}

double verification_accuracy(const std::vector<std::vector<double>>& embeddings,
                             const std::vector<std::size_t>& identities) {
  const std::size_t n = embeddings.size();
  if (n < 2 || identities.size() != n) throw DomainError("verification needs at least two labelled embeddings");
  std::vector<std::pair<double, bool>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = embeddings[i];
      const auto& b = embeddings[j];
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
      }
      pairs.emplace_back(dot / std::sqrt(na * nb), identities[i] == identities[j]);
    }
  std::sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  const std::size_t negatives = static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return !p.second; }));
  // threshold above every score: all pairs called different
  std::size_t correct = negatives, best = negatives;
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    for (; j < pairs.size() && pairs[j].first == pairs[i].first; ++j) {
      if (pairs[j].second) {
        ++correct;
      } else {
        --correct;
      }
    }
    best = std::max(best, correct);
    i = j;
  }
  return 100.0 * static_cast<double>(best) / static_cast<double>(pairs.size());
}

double recall_at_precision(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels,
                           double precision) {
  if (scores.size() != labels.size()) throw ShapeError("recall_at_precision size mismatch");
  const std::size_t positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) throw DomainError("recall is undefined without positive labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t tp = 0, taken = 0;
  double best = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) {
      tp += labels[order[j]] == 1;
      ++taken;
    }
    if (static_cast<double>(tp) >= precision * static_cast<double>(taken)) {
      best = std::max(best, static_cast<double>(tp) / static_cast<double>(positives));
    }
    i = j;
  }
  return 100.0 * best;
}

std::optional<double> TaskMetrics::get(const std::string& name) const {
  for (const auto& [k, v] : values)
    if (k == name) return v;
  return std::nullopt;
}

double metric(const std::vector<TaskMetrics>& report, Task task, const std::string& name) {
  for (const auto& m : report) {
    if (m.task != task) continue;
    if (auto v = m.get(name)) return *v;
  }
  throw std::out_of_range("no metric " + name + " for task " + std::string(task_name(task)));
}

namespace {

std::size_t argmax(const auto* p, std::size_t n, std::size_t stride = 1) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < n; ++k)
    if (p[k * stride] > p[best * stride]) best = k;
  return best;
}

double percent(std::size_t hit, std::size_t total) {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

template <typename T>
std::vector<TaskMetrics> evaluate(const FaceXFormer<T>& model, const DatasetMap& datasets, std::size_t batch) {
  if (batch == 0) throw ConfigError("evaluation batch must be positive");
  const HeadConfig& h = model.config().heads;
  NoGradGuard no_grad;
  std::vector<TaskMetrics> report;
  for (const auto& [task, data] : datasets) {
    std::vector<std::uint8_t> seg_pred, seg_true;
    double nme = 0.0, pose = 0.0, age_abs = 0.0;
    std::size_t hit = 0, total = 0, bin_hit = 0;
    std::vector<std::vector<double>> embeds;
    std::vector<std::size_t> ids;
    std::vector<double> vis_scores;
    std::vector<std::uint8_t> vis_labels;
    for (std::size_t start = 0; start < data.size(); start += batch) {
      TaskBatch b;
      for (std::size_t i = start; i < std::min(data.size(), start + batch); ++i) b.samples.push_back(&data[i]);
      const TaskPredictions<T> p = model.forward(b.images<T>(), b.selection());
      const std::size_t n = b.size();
      for (std::size_t i = 0; i < n; ++i) {
        const SampleLabels& lab = b.samples[i]->labels;
        switch (task) {
          case Task::parsing: {
            const std::size_t c = h.seg_classes, hw = lab.parsing.size();
            const T* base = p.parsing->data().data() + i * c * hw;
            for (std::size_t px = 0; px < hw; ++px) seg_pred.push_back(static_cast<std::uint8_t>(argmax(base + px, c, hw)));
            seg_true.insert(seg_true.end(), lab.parsing.begin(), lab.parsing.end());
            break;
          }
          case Task::landmarks: {
            auto d = p.landmarks->data().subspan(i * 2 * kNumLandmarks, 2 * kNumLandmarks);
            nme += landmark_nme(std::vector<double>(d.begin(), d.end()), lab.landmarks);
            break;
          }
          case Task::headpose: {
            std::array<double, 9> r{};
            for (std::size_t k = 0; k < 9; ++k) r[k] = p.headpose->data()[i * 9 + k];
            pose += pose_mae_degrees(r, lab.rotation);
            break;
          }
          case Task::attributes:
            for (std::size_t k = 0; k < h.attributes; ++k) {
              hit += (p.attributes->data()[i * h.attributes + k] > T(0)) == (lab.attributes[k] == 1);
              ++total;
            }
            break;
          case Task::age:
            age_abs += std::abs(static_cast<double>(p.age_expected->data()[i]) - lab.age);
            bin_hit += argmax(p.age->data().data() + i * h.age_bins, h.age_bins) == age_bin(lab.age, h.age_bins, h.max_age);
            ++total;
            break;
          case Task::gender:
            hit += argmax(p.gender->data().data() + i * 2, 2) == lab.gender;
            ++total;
            break;
          case Task::race:
            hit += argmax(p.race->data().data() + i * h.races, h.races) == lab.race;
            ++total;
            break;
          case Task::expression:
            hit += argmax(p.expression->data().data() + i * h.expressions, h.expressions) == lab.expression;
            ++total;
            break;
          case Task::recognition: {
            auto d = p.embedding->data().subspan(i * h.embed_dim, h.embed_dim);
            embeds.emplace_back(d.begin(), d.end());
            ids.push_back(lab.identity);
            break;
          }
          case Task::visibility:
            for (std::size_t k = 0; k < h.visibility; ++k) {
              const double s = static_cast<double>(p.visibility->data()[i * h.visibility + k]);
              vis_scores.push_back(s);
              vis_labels.push_back(lab.occluded[k]);
              hit += (s > 0.0) == (lab.occluded[k] == 1);
              ++total;
            }
            break;
        }
      }
    }
    const double count = static_cast<double>(data.size());
    TaskMetrics m{task, {}};
    switch (task) {
      case Task::parsing:
        m.values = {{"f1", mean_f1(seg_pred, seg_true, h.seg_classes)}, {"pixel_acc", pixel_accuracy(seg_pred, seg_true)}};
        break;
      case Task::landmarks: m.values = {{"nme", nme / count}}; break;
      case Task::headpose: m.values = {{"mae_deg", pose / count}}; break;
      case Task::age: m.values = {{"mae_years", age_abs / count}, {"bin_acc", percent(bin_hit, total)}}; break;
      case Task::recognition: {
        // closed-set identity: nearest class weight by cosine
        const auto w = l2_normalize(model.class_weights());
        std::size_t id_hit = 0;
        for (std::size_t i = 0; i < embeds.size(); ++i) {
          std::vector<double> cos(h.num_identities, 0.0);
          for (std::size_t c = 0; c < h.num_identities; ++c)
            for (std::size_t k = 0; k < h.embed_dim; ++k) cos[c] += embeds[i][k] * w.data()[c * h.embed_dim + k];
          id_hit += argmax(cos.data(), cos.size()) == ids[i];
        }
        m.values.emplace_back("verification_acc", embeds.size() >= 2 ? verification_accuracy(embeds, ids) : 100.0);
        m.values.emplace_back("identity_acc", percent(id_hit, embeds.size()));
        break;
      }
      case Task::visibility:
        m.values = {{"recall_at_p80", recall_at_precision(vis_scores, vis_labels, 0.8)}, {"acc", percent(hit, total)}};
        break;
      default: m.values = {{"acc", percent(hit, total)}}; break;
    }
    report.push_back(std::move(m));
  }
  return report;
}

template std::vector<TaskMetrics> evaluate<float>(const FaceXFormer<float>&, const DatasetMap&, std::size_t);
template std::vector<TaskMetrics> evaluate<double>(const FaceXFormer<double>&, const DatasetMap&, std::size_t);

}  // namespace fxf
