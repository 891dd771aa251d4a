#include "sttm/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "sttm/errors.hpp"

namespace sttm::evaluation {

Metrics compute_metrics(std::span<const double> predictions, std::span<const double> labels,
                        double anomaly_threshold) {
  if (predictions.empty()) throw ContractError("metrics over an empty split");
  if (predictions.size() != labels.size()) throw DimensionError("metrics: prediction and label counts differ");
  Metrics m;
  m.n_samples = labels.size();
  double abs_sum = 0.0, sq_sum = 0.0, anomaly_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double err = predictions[i] - labels[i];
    abs_sum += std::abs(err);
    sq_sum += err * err;
    if (labels[i] >= anomaly_threshold) {
      anomaly_sum += std::abs(err);
      ++m.n_anomaly;
    }
  }
  const auto n = static_cast<double>(m.n_samples);
  m.mae = abs_sum / n;
  m.mse = sq_sum / n;
  if (m.n_anomaly > 0) m.amae = anomaly_sum / static_cast<double>(m.n_anomaly);
  return m;
}

std::vector<double> predict_records(model::SttmModel& model, const features::Dataset& dataset,
                                    std::span<const std::size_t> records, std::size_t chunk) {
  std::vector<double> out;
  out.reserve(records.size());
  features::SampleBatch batch;
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    const auto part = records.subspan(start, std::min(chunk, records.size() - start));
    dataset.gather(part, model.config().m, model.config().n, batch);
    const auto y = model.predict(batch);
    out.insert(out.end(), y.begin(), y.end());
  }
  return out;
}

std::vector<double> labels_of(const features::Dataset& dataset, std::span<const std::size_t> records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (std::size_t r : records) out.push_back(dataset.records().at(r).label);
  return out;
}

}  // namespace sttm::evaluation
