#include "lanhar/sensor_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "lanhar/error.hpp"
#include "lanhar/losses.hpp"
#include "lanhar/nn/checkpoint.hpp"
#include "lanhar/nn/optim.hpp"
#include "lanhar/util.hpp"

namespace lanhar::sensor {

using nlohmann::json;
using nlohmann::ordered_json;
using nn::Tape;
using nn::Var;

void Normalizer::fit(const std::vector<IMUWindow>& windows) {
  if (windows.empty()) raise(ErrorCode::Argument, "cannot fit normalizer on zero windows");
  std::array<double, kNumChannels> sum{};
  std::array<double, kNumChannels> sumsq{};
  long count = 0;
  for (const auto& w : windows) {
    for (Eigen::Index r = 0; r < w.data.rows(); ++r) {
      for (int c = 0; c < kNumChannels; ++c) {
        const double v = w.data(r, c);
        sum[static_cast<size_t>(c)] += v;
        sumsq[static_cast<size_t>(c)] += v * v;
      }
    }
    count += w.data.rows();
  }
  for (int c = 0; c < kNumChannels; ++c) {
    const auto ci = static_cast<size_t>(c);
    mean_[ci] = sum[ci] / static_cast<double>(count);
    const double var = std::max(0.0, sumsq[ci] / static_cast<double>(count) - mean_[ci] * mean_[ci]);
    scale_[ci] = std::max(std::sqrt(var), 1e-8);
  }
  fitted_ = true;
}

nn::Matrix Normalizer::apply(const IMUWindow& window) const {
  if (!fitted_) raise(ErrorCode::State, "normalizer used before fitting");
  nn::Matrix out(window.data.rows(), kNumChannels);
  for (Eigen::Index r = 0; r < window.data.rows(); ++r) {
    for (int c = 0; c < kNumChannels; ++c) {
      const auto ci = static_cast<size_t>(c);
      out(r, c) = (window.data(r, c) - mean_[ci]) / scale_[ci];
    }
  }
  return out;
}

ordered_json Normalizer::to_json() const {
  if (!fitted_) raise(ErrorCode::State, "normalizer not fitted");
  ordered_json doc;
  for (int c = 0; c < kNumChannels; ++c) {
    doc["mean_" + std::string(kChannelNames[c])] = mean_[static_cast<size_t>(c)];
    doc["scale_" + std::string(kChannelNames[c])] = scale_[static_cast<size_t>(c)];
  }
  return doc;
}

Normalizer Normalizer::from_json(const json& doc) {
  Normalizer n;
  for (int c = 0; c < kNumChannels; ++c) {
    n.mean_[static_cast<size_t>(c)] = doc.at("mean_" + std::string(kChannelNames[c])).get<double>();
    n.scale_[static_cast<size_t>(c)] =
        doc.at("scale_" + std::string(kChannelNames[c])).get<double>();
  }
  n.fitted_ = true;
  return n;
}

SensorEncoder::SensorEncoder(SensorEncoderConfig cfg) : cfg_(cfg) {
  if (cfg_.d_model < cfg_.n_heads || cfg_.n_layers < 1 || cfg_.window_len < 1) {
    raise(ErrorCode::Argument, "invalid sensor encoder configuration");
  }
  Rng rng(derive_seed(cfg_.seed, "sensor_encoder_init"));
  proj_ = nn::Linear("sensor_encoder.proj", kNumChannels, cfg_.d_model, rng);
  input_ln_ = nn::LayerNorm("sensor_encoder.input_ln", cfg_.d_model);
  positions_ = nn::sinusoidal_positions(cfg_.window_len, cfg_.d_model);
  layers_.reserve(static_cast<size_t>(cfg_.n_layers));
  for (int i = 0; i < cfg_.n_layers; ++i) {
    layers_.emplace_back("sensor_encoder.layer" + std::to_string(i), cfg_.d_model, cfg_.n_heads,
                         rng);
  }
}

Var SensorEncoder::encode_on_tape(Tape& t, const nn::Matrix& x_norm) {
  if (x_norm.rows() != cfg_.window_len || x_norm.cols() != kNumChannels) {
    raise(ErrorCode::Argument,
          "sensor input must be " + std::to_string(cfg_.window_len) + " x 6, got " +
              std::to_string(x_norm.rows()) + " x " + std::to_string(x_norm.cols()));
  }
  Var x = input_ln_.forward(t, proj_.forward(t, t.input(x_norm)));
  x = nn::add(x, t.input(positions_));
  for (auto& layer : layers_) x = layer.forward(t, x, /*causal=*/false);
  return nn::mean_rows(x);
}

EmbeddingVector SensorEncoder::forward(const nn::Matrix& x_norm) const {
  Tape t;
  Var pooled = const_cast<SensorEncoder*>(this)->encode_on_tape(t, x_norm);
  return t.value(pooled).row(0).transpose();
}

std::vector<nn::Parameter*> SensorEncoder::parameters() {
  std::vector<nn::Parameter*> out;
  proj_.collect(out);
  input_ln_.collect(out);
  for (auto& layer : layers_) layer.collect(out);
  return out;
}

std::vector<const nn::Parameter*> SensorEncoder::parameters() const {
  auto mut = const_cast<SensorEncoder*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

long SensorEncoder::parameter_count() const {
  long total = 0;
  for (const nn::Parameter* p : parameters()) total += static_cast<long>(p->size());
  return total;
}

void save_sensor_checkpoint(const std::filesystem::path& path, const SensorEncoder& encoder,
                            const Normalizer& normalizer, double rate_hz,
                            const ordered_json& extra) {
  write_checkpoint(path, encoder.parameters(), {{"model", "sensor_encoder"}});
  const auto& c = encoder.config();
  ordered_json sidecar;
  sidecar["model"] = "sensor_encoder";
  sidecar["config"] = {{"d_model", c.d_model},
                       {"n_layers", c.n_layers},
                       {"n_heads", c.n_heads},
                       {"window_len", c.window_len},
                       {"seed", c.seed}};
  sidecar["rate_hz"] = rate_hz;
  sidecar["normalizer"] = normalizer.to_json();
  for (const auto& [k, v] : extra.items()) sidecar[k] = v;
  nn::write_sidecar(path, sidecar);
}

SensorModel load_sensor_checkpoint(const std::filesystem::path& path) {
  const json side = nn::read_sidecar(path);
  if (side.value("model", "") != "sensor_encoder") {
    raise(ErrorCode::Validation, "not a sensor encoder checkpoint: " + path.string());
  }
  const auto& c = side.at("config");
  SensorEncoderConfig cfg{c.at("d_model"), c.at("n_layers"), c.at("n_heads"), c.at("window_len"),
                          c.at("seed")};
  SensorModel out;
  out.encoder = std::make_unique<SensorEncoder>(cfg);
  nn::load_parameters(nn::read_checkpoint(path), out.encoder->parameters());
  out.normalizer = Normalizer::from_json(side.at("normalizer"));
  out.rate_hz = side.at("rate_hz").get<double>();
  out.sidecar = side;
  return out;
}

namespace {

double retrieval_accuracy(SensorEncoder& encoder, const Normalizer& normalizer,
                          const std::vector<IMUWindow>& windows,
                          const std::vector<EmbeddingVector>& targets,
                          const std::vector<size_t>& idx) {
  if (idx.empty()) return 0.0;
  std::vector<EmbeddingVector> embs;
  embs.reserve(idx.size());
  for (size_t i : idx) embs.push_back(encoder.forward(normalizer.apply(windows[i])));
  int hits = 0;
  for (size_t a = 0; a < idx.size(); ++a) {
    double best = -2.0;
    size_t best_b = 0;
    for (size_t b = 0; b < idx.size(); ++b) {
      const double s = losses::cosine_similarity(embs[a], targets[idx[b]]);
      if (s > best) {
        best = s;
        best_b = b;
      }
    }
    if (best_b == a) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

}  // namespace

SensorTrainResult train_sensor_encoder(SensorEncoder& encoder,
                                       const std::vector<IMUWindow>& windows,
                                       const std::vector<EmbeddingVector>& z_targets,
                                       const Normalizer& normalizer, const SensorTrainConfig& cfg,
                                       const std::filesystem::path& checkpoint_path,
                                       const std::filesystem::path& metrics_path,
                                       const std::string& text_checkpoint_id) {
  if (windows.empty()) raise(ErrorCode::Argument, "no training windows");
  if (windows.size() != z_targets.size()) {
    raise(ErrorCode::Argument, "every window needs a frozen target embedding");
  }
  if (cfg.tau <= 0.0) raise(ErrorCode::Argument, "tau must be positive");
  if (cfg.batch_size < 2) raise(ErrorCode::Argument, "batch_size must be >= 2");
  if (cfg.epochs < 0) raise(ErrorCode::Argument, "epochs must be >= 0");
  if (!normalizer.fitted()) raise(ErrorCode::State, "normalizer must be fitted before training");

  std::vector<size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, "sensor_val_split"));
  split_rng.shuffle(order);
  size_t val_n =
      static_cast<size_t>(std::llround(cfg.val_fraction * static_cast<double>(windows.size())));
  val_n = std::min(val_n, windows.size() - 1);
  std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<long>(val_n));
  std::vector<size_t> train_idx(order.begin() + static_cast<long>(val_n), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  const std::vector<size_t>& eval_idx = val_idx.empty() ? train_idx : val_idx;

  auto params = encoder.parameters();
  nn::AdamW optimizer(params, {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  ensure_directory(metrics_path.parent_path());
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) raise(ErrorCode::Io, "cannot open metrics log: " + metrics_path.string());

  SensorTrainResult result;
  result.best_val_retrieval = -1.0;
  std::vector<nn::Matrix> last_finite;
  last_finite.reserve(params.size());
  for (const nn::Parameter* p : params) last_finite.push_back(p->value);

  const double rate_hz = windows.front().rate_hz;

  const auto abort_diverged = [&](const std::string& why) {
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = last_finite[i];
    save_sensor_checkpoint(checkpoint_path, encoder, normalizer, rate_hz,
                           {{"status", "aborted"},
                            {"reason", why},
                            {"text_checkpoint_id", text_checkpoint_id}});
    raise(ErrorCode::Numeric, "training diverged (" + why + "); last finite state checkpointed");
  };

  const auto save_best = [&](int epoch, double retrieval) {
    result.best_epoch = epoch;
    result.best_val_retrieval = retrieval;
    save_sensor_checkpoint(checkpoint_path, encoder, normalizer, rate_hz,
                           {{"status", "ok"},
                            {"epoch", epoch},
                            {"val_retrieval", retrieval},
                            {"tau", cfg.tau},
                            {"seed", cfg.seed},
                            {"text_checkpoint_id", text_checkpoint_id}});
  };

  if (cfg.epochs == 0) {
    save_best(0, retrieval_accuracy(encoder, normalizer, windows, z_targets, eval_idx));
    return result;
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng epoch_rng(derive_seed(cfg.seed, "sensor_epoch_" + std::to_string(epoch)));
    std::vector<size_t> sched = train_idx;
    epoch_rng.shuffle(sched);

    double sum_loss = 0.0;
    int batches = 0;
    for (size_t at = 0; at < sched.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t take = std::min(static_cast<size_t>(cfg.batch_size), sched.size() - at);
      if (take < 2) continue;
      Tape t;
      std::vector<Var> e_rows;
      nn::Matrix z(static_cast<Eigen::Index>(take), encoder.config().d_model);
      for (size_t b = 0; b < take; ++b) {
        const size_t i = sched[at + b];
        e_rows.push_back(encoder.encode_on_tape(t, normalizer.apply(windows[i])));
        z.row(static_cast<Eigen::Index>(b)) = z_targets[i].transpose();
      }
      Var e = nn::concat_rows(e_rows);
      Var loss = losses::loss_sensor(t, e, z, cfg.tau);
      const double loss_val = t.value(loss)(0, 0);
      if (!std::isfinite(loss_val)) abort_diverged("non-finite batch loss");
      t.backward(loss);
      nn::clip_grad_norm(params, cfg.clip_norm);
      try {
        optimizer.step();
      } catch (const Error& e2) {
        if (e2.code() == ErrorCode::Numeric) abort_diverged(e2.what());
        throw;
      }
      bool finite = true;
      for (const nn::Parameter* p : params) finite = finite && p->value.allFinite();
      if (!finite) abort_diverged("non-finite parameter after update");
      optimizer.zero_grad();
      for (size_t i = 0; i < params.size(); ++i) last_finite[i] = params[i]->value;

      sum_loss += loss_val;
      ++batches;
    }
    if (batches == 0) raise(ErrorCode::Argument, "training set too small for one batch");

    SensorEpochRecord rec;
    rec.epoch = epoch;
    rec.l_sensor = sum_loss / batches;
    rec.val_retrieval = retrieval_accuracy(encoder, normalizer, windows, z_targets, eval_idx);
    result.history.push_back(rec);

    ordered_json line{
        {"epoch", rec.epoch}, {"l_sensor", rec.l_sensor}, {"val_retrieval", rec.val_retrieval}};
    metrics << line.dump() << "\n";
    metrics.flush();

    if (rec.val_retrieval > result.best_val_retrieval) save_best(epoch, rec.val_retrieval);
  }
  return result;
}

}  // namespace lanhar::sensor
