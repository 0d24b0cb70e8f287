#include "bdsl/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "bdsl/layers.hpp"

namespace bdsl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  if (!(lr0 > 0)) throw ConfigError("lr0 must be positive");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 for batch normalisation");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (plateau.patience < 1) throw ConfigError("plateau patience must be >= 1");
  if (!(plateau.factor > 0 && plateau.factor < 1)) throw ConfigError("plateau factor must lie in (0,1)");
  if (!(plateau.min_lr >= 0) || plateau.min_lr > lr0) throw ConfigError("min_lr must lie in [0, lr0]");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1))
    throw ConfigError("Adam betas must lie in [0,1)");
  if (!(adam.epsilon > 0)) throw ConfigError("Adam epsilon must be positive");
  if (!(improvement_tolerance >= 0)) throw ConfigError("improvement_tolerance must be >= 0");
}

std::string TrainConfig::to_json() const {
  json j;
  j["lr0"] = lr0;
  j["adam"] = {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"epsilon", adam.epsilon}};
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["plateau"] = {{"patience", plateau.patience},
                  {"factor", plateau.factor},
                  {"min_lr", plateau.min_lr},
                  {"monitor", "val_loss"}};
  j["early_stop_patience"] = early_stop_patience;
  j["improvement_tolerance"] = improvement_tolerance;
  j["seed"] = seed;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    static const std::set<std::string> known = {"lr0",        "adam", "batch_size",
                                                "max_epochs", "plateau", "early_stop_patience",
                                                "improvement_tolerance", "seed"};
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw ConfigError("unknown train config key '" + k + "'");
    c.lr0 = j.value("lr0", c.lr0);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.improvement_tolerance = j.value("improvement_tolerance", c.improvement_tolerance);
    c.seed = j.value("seed", c.seed);
    if (j.contains("adam")) {
      const auto& a = j["adam"];
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
    }
    if (j.contains("plateau")) {
      const auto& p = j["plateau"];
      if (p.contains("monitor") && p["monitor"] != "val_loss")
        throw ConfigError("plateau monitor must be val_loss");
      c.plateau.patience = p.value("patience", c.plateau.patience);
      c.plateau.factor = p.value("factor", c.plateau.factor);
      c.plateau.min_lr = p.value("min_lr", c.plateau.min_lr);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid train config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Optimiser and schedules

template <typename T>
void adam_step(std::span<BasicParameter<T>* const> params, AdamState<T>& state,
               const AdamConfig& config, double lr) {
  for (const auto* p : params) {
    if (p->grad.shape() != p->value.shape())
      throw OptimizerError("gradient for '" + p->name + "' has shape " +
                           shape_to_string(p->grad.shape()) + ", parameter is " +
                           shape_to_string(p->value.shape()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
  for (auto* p : params) {
    auto [it, fresh] = state.moments.try_emplace(p->name);
    auto& [m, v] = it->second;
    if (fresh) {
      m = BasicTensor<T>::zeros(p->value.shape());
      v = BasicTensor<T>::zeros(p->value.shape());
    } else if (m.shape() != p->value.shape()) {
      throw OptimizerError("Adam moments for '" + p->name + "' do not match the parameter");
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const T g = p->grad[i];
      m[i] = b1 * m[i] + (T{1} - b1) * g;
      v[i] = b2 * v[i] + (T{1} - b2) * g * g;
      const double m_hat = static_cast<double>(m[i]) / correction1;
      const double v_hat = static_cast<double>(v[i]) / correction2;
      p->value[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + config.epsilon));
    }
  }
}

template void adam_step(std::span<BasicParameter<float>* const>, AdamState<float>&,
                        const AdamConfig&, double);
template void adam_step(std::span<BasicParameter<double>* const>, AdamState<double>&,
                        const AdamConfig&, double);

TrainState TrainState::initial(const TrainConfig& config) {
  TrainState s;
  s.lr = config.lr0;
  return s;
}

bool plateau_update(TrainState& state, double val_loss, const TrainConfig& config) {
  if (val_loss < state.best_val_loss - config.improvement_tolerance) {
    state.best_val_loss = val_loss;
    state.plateau_wait = 0;
    state.epochs_since_best = 0;
    return true;
  }
  ++state.epochs_since_best;
  if (++state.plateau_wait >= config.plateau.patience) {
    state.lr = std::max(state.lr * config.plateau.factor, config.plateau.min_lr);
    state.plateau_wait = 0;
  }
  return false;
}

StopDecision early_stop_check(const TrainState& state, const TrainConfig& config) {
  return state.epochs_since_best >= config.early_stop_patience ? StopDecision::stop
                                                               : StopDecision::proceed;
}

std::vector<std::span<const std::size_t>> make_batches(std::span<const std::size_t> order,
                                                       std::size_t batch_size) {
  std::vector<std::span<const std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size)
    out.push_back(order.subspan(start, std::min(batch_size, order.size() - start)));
  if (out.size() >= 2 && out.back().size() == 1) {
    const std::size_t merged = out[out.size() - 2].size() + 1;
    const std::size_t start = order.size() - merged;
    out.pop_back();
    out.back() = order.subspan(start, merged);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::size_t count_correct(const Tensor& probs, std::span<const int> labels) {
  const std::size_t k = probs.dim(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const float* row = probs.data() + r * k;
    const auto pred = static_cast<int>(std::max_element(row, row + k) - row);
    correct += pred == labels[r];
  }
  return correct;
}

void check_inputs(const Network& net, const LoadedDataset& data, const char* what) {
  if (data.size() == 0) throw PreconditionError(std::string(what) + " set is empty");
  for (int l : data.labels)
    if (l < 0 || static_cast<std::size_t>(l) >= net.config().num_classes)
      throw LabelError(std::string(what) + " set has a label outside the model's classes");
}

}  // namespace

LossAccuracy measure(Network& net, const LoadedDataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw PreconditionError("cannot measure an empty dataset");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const bool with_kp = net.topology() == Topology::concatenated;
  double loss_sum = 0;
  std::size_t correct = 0;
  Tensor images, keypoints;
  std::vector<int> labels;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto rows = std::span<const std::size_t>(order).subspan(
        start, std::min(batch_size, order.size() - start));
    data.gather(rows, images, keypoints, labels);
    Tape tape(false);
    Var logits = net.forward_logits(tape, images, with_kp ? &keypoints : nullptr, nn::Mode::infer);
    auto xent = nn::softmax_xent(tape, logits, labels);
    loss_sum += static_cast<double>(tape.value(xent.loss).item()) * static_cast<double>(rows.size());
    correct += count_correct(xent.probs, labels);
  }
  const auto n = static_cast<double>(data.size());
  return {loss_sum / n, static_cast<double>(correct) / n};
}

Tensor predict_all(Network& net, const LoadedDataset& data, std::size_t batch_size) {
  const std::size_t k = net.config().num_classes;
  Tensor out({data.size(), k});
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const bool with_kp = net.topology() == Topology::concatenated;
  Tensor images, keypoints;
  std::vector<int> labels;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto rows = std::span<const std::size_t>(order).subspan(
        start, std::min(batch_size, order.size() - start));
    data.gather(rows, images, keypoints, labels);
    const Tensor probs = net.forward(images, with_kp ? &keypoints : nullptr, nn::Mode::infer);
    std::copy(probs.data(), probs.data() + probs.size(), out.data() + start * k);
  }
  return out;
}

FitResult fit(Network& net, const LoadedDataset& train, const LoadedDataset& val,
              const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  check_inputs(net, train, "training");
  check_inputs(net, val, "validation");
  if (train.size() < 2) throw PreconditionError("training set needs at least 2 items");

  const bool with_kp = net.topology() == Topology::concatenated;
  TrainState state = TrainState::initial(config);
  FitResult result;
  result.best_state = net.state();
  auto params = net.parameters();

  Tensor images, keypoints;
  std::vector<int> labels;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto order = epoch_order(train.size(), config.seed, epoch);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (const auto rows : make_batches(order, config.batch_size)) {
      train.gather(rows, images, keypoints, labels);
      Tape tape;
      Var logits = net.forward_logits(tape, images, with_kp ? &keypoints : nullptr, nn::Mode::train);
      auto xent = nn::softmax_xent(tape, logits, labels);
      const double loss = tape.value(xent.loss).item();
      if (!std::isfinite(loss))
        throw DivergenceError(static_cast<int>(epoch),
                              "non-finite training loss in epoch " + std::to_string(epoch));
      for (auto* p : params) p->zero_grad();
      tape.backward(xent.loss);
      adam_step<float>(params, state.adam, config.adam, state.lr);
      loss_sum += loss * static_cast<double>(rows.size());
      correct += count_correct(xent.probs, labels);
    }

    const LossAccuracy v = measure(net, val);
    if (!std::isfinite(v.loss))
      throw DivergenceError(static_cast<int>(epoch),
                            "non-finite validation loss in epoch " + std::to_string(epoch));
    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(train.size());
    row.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
    row.val_loss = v.loss;
    row.val_acc = v.accuracy;
    row.lr = state.lr;  // rate used during this epoch
    state.history.push_back(row);
    if (on_epoch) on_epoch(row);

    if (plateau_update(state, v.loss, config)) {
      state.best_epoch = epoch;
      result.best_state = net.state();
    }
    if (early_stop_check(state, config) == StopDecision::stop) {
      result.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  net.load_state(result.best_state);
  result.history = std::move(state.history);
  result.best_epoch = state.best_epoch;
  return result;
}

FitResult fit(Network& net, const DatasetManifest& train, const DatasetManifest& val,
              const TrainConfig& config, const EpochCallback& on_epoch) {
  if (train.size() == 0 || val.size() == 0)
    throw PreconditionError("training and validation manifests must be non-empty");
  std::set<std::filesystem::path> seen;
  for (const auto& it : train.items) seen.insert(it.image);
  for (const auto& it : val.items)
    if (seen.count(it.image)) throw PreconditionError("training and validation manifests overlap");
  const bool need_kp = net.topology() == Topology::concatenated;
  const auto& c = net.config();
  const auto t = load_dataset(train, need_kp, c.input_height, c.input_width);
  const auto v = load_dataset(val, need_kp, c.input_height, c.input_width);
  return fit(net, t, v, config, on_epoch);
}

std::string history_csv(std::span<const HistoryRow> rows) {
  std::ostringstream os;
  os << "epoch,train_loss,train_acc,val_loss,val_acc,lr\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.train_loss,
                  r.train_acc, r.val_loss, r.val_acc, r.lr);
    os << buf;
  }
  return os.str();
}

void write_history_csv(std::span<const HistoryRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << history_csv(rows);
}

}  // namespace bdsl
