#include "sttm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>

#include "sttm/adam.hpp"
#include "sttm/errors.hpp"
#include "sttm/hash.hpp"

namespace sttm::training {

namespace nx = numerics;

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train.learning_rate: must be finite and non-negative");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size: must be at least 1");
  if (epochs < 1) throw ConfigError("train.epochs: must be at least 1");
  if (micro_batch < 1) throw ConfigError("train.micro_batch: must be at least 1");
  if (!(clip_norm >= 0.0)) throw ConfigError("train.clip_norm: must be non-negative");
}

std::uint64_t TrainConfig::hash() const {
  Fnv1a h;
  h.update(std::string_view("train"));
  h.update(learning_rate);
  h.update(static_cast<std::uint64_t>(batch_size));
  h.update(static_cast<std::int64_t>(epochs));
  h.update(seed);
  h.update(static_cast<std::uint64_t>(shuffle));
  h.update(static_cast<std::uint64_t>(validation_every));
  h.update(static_cast<std::uint64_t>(select_best));
  h.update(clip_norm);
  h.update(static_cast<std::uint64_t>(max_steps));
  h.update(anomaly_threshold);
  return h.digest();
}

Tensor mae_loss(const Tensor& predictions, const Tensor& labels) {
  if (predictions.size() == 0) throw ContractError("mae_loss: empty batch");
  if (predictions.shape() != labels.shape()) {
    throw DimensionError("mae_loss: predictions " + nx::to_string(predictions.shape()) + " vs labels " +
                         nx::to_string(labels.shape()));
  }
  return nx::mean(nx::abs(nx::sub(predictions, labels)));
}

std::string format_log_record(const LogRecord& r) {
  auto num = [](std::optional<double> v) {
    if (!v) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", *v);
    return std::string(buf);
  };
  std::string line = std::to_string(r.step) + "," + num(r.train_mae);
  if (r.validation) {
    line += "," + num(r.validation->mae) + "," + num(r.validation->mse) + "," + num(r.validation->amae);
  } else {
    line += ",,,";
  }
  return line;
}

namespace {

evaluation::Metrics validate_model(model::SttmModel& model, const features::Dataset& dataset,
                                   const std::vector<std::size_t>& records, double threshold) {
  const auto predictions = evaluation::predict_records(model, dataset, records);
  return evaluation::compute_metrics(predictions, evaluation::labels_of(dataset, records), threshold);
}

std::vector<std::vector<double>> snapshot(const model::SttmModel& model) {
  std::vector<std::vector<double>> out;
  for (const auto& t : model.parameters()) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

void restore(model::SttmModel& model, const std::vector<std::vector<double>>& values) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(values[i].begin(), values[i].end(), params[i].mutable_data().begin());
}

std::uint64_t batch_hash(std::span<const std::size_t> records) {
  Fnv1a h;
  for (std::size_t r : records) h.update(static_cast<std::uint64_t>(r));
  return h.digest();
}

}  // namespace

TrainResult train(model::SttmModel& model, const features::Dataset& dataset, const TrainConfig& config,
                  std::ostream* log) {
  config.validate();
  std::vector<std::size_t> order = dataset.split_indices(features::Split::kTrain);
  const auto validation = dataset.split_indices(features::Split::kValidation);
  if (order.empty()) throw ConfigError("training split is empty");
  if (validation.empty()) throw ConfigError("validation split is empty");

  std::mt19937_64 shuffle_rng(config.seed);
  model.reseed_dropout(config.seed);
  auto params = model.parameters();
  numerics::Adam optimizer(params, {.learning_rate = config.learning_rate});

  TrainResult result;
  auto emit = [&](LogRecord record) {
    if (log != nullptr) {
      *log << format_log_record(record) << '\n';
      if (record.validation) log->flush();
    }
    result.log.push_back(std::move(record));
  };
  auto run_validation = [&](std::size_t step, std::optional<double> train_mae) {
    LogRecord r{step, train_mae, validate_model(model, dataset, validation, config.anomaly_threshold)};
    const double mae = r.validation->mae;
    emit(std::move(r));
    return mae;
  };

  std::vector<std::vector<double>> best = snapshot(model);
  result.best_validation_mae = run_validation(0, std::nullopt);
  result.best_step = 0;
  auto consider = [&](double mae, std::size_t step) {
    if (mae < result.best_validation_mae) {
      result.best_validation_mae = mae;
      result.best_step = step;
      if (config.select_best) best = snapshot(model);
    }
  };

  features::SampleBatch chunk;
  std::size_t step = 0;
  bool last_validated = true;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      if (config.max_steps != 0 && step >= config.max_steps) break;
      const auto batch = std::span<const std::size_t>(order).subspan(start, std::min(config.batch_size, order.size() - start));
      const double inv = 1.0 / static_cast<double>(batch.size());
      double loss_value = 0.0;
      for (std::size_t mb = 0; mb < batch.size(); mb += config.micro_batch) {
        const auto part = batch.subspan(mb, std::min(config.micro_batch, batch.size() - mb));
        dataset.gather(part, model.config().m, model.config().n, chunk);
        const Tensor y_hat = model.forward(chunk, true);
        const Tensor labels = Tensor::from({chunk.size}, chunk.labels);
        const Tensor loss = nx::scale(nx::sum(nx::abs(nx::sub(y_hat, labels))), inv);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          throw NumericError("non-finite training loss at step " + std::to_string(step + 1) + ", batch " +
                             to_hex(batch_hash(batch)));
        }
        loss_value += value;
        nx::backward(loss);
      }
      if (config.clip_norm > 0.0) numerics::clip_grad_norm(params, config.clip_norm);
      optimizer.step();
      ++step;
      const bool final_step = (config.max_steps != 0 && step == config.max_steps) ||
                              (epoch + 1 == config.epochs && start + config.batch_size >= order.size());
      last_validated = final_step || (config.validation_every != 0 && step % config.validation_every == 0);
      if (last_validated) {
        consider(run_validation(step, loss_value), step);
      } else {
        emit({step, loss_value, std::nullopt});
      }
    }
  }
  if (!last_validated) consider(run_validation(step, std::nullopt), step);
  if (config.select_best) restore(model, best);
  result.steps = step;
  return result;
}

}  // namespace sttm::training
