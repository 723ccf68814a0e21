#include "lanhar/align_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "lanhar/error.hpp"
#include "lanhar/losses.hpp"
#include "lanhar/nn/checkpoint.hpp"
#include "lanhar/nn/optim.hpp"
#include "lanhar/util.hpp"

namespace lanhar::train {

using nlohmann::json;
using nlohmann::ordered_json;
using nn::Tape;
using nn::Var;

void validate(const TrainConfig& cfg) {
  if (cfg.tau <= 0.0) raise(ErrorCode::Argument, "tau must be positive");
  if (cfg.alpha < 0.0 || cfg.beta < 0.0) raise(ErrorCode::Argument, "alpha/beta must be >= 0");
  if (cfg.batch_size < 2) raise(ErrorCode::Argument, "batch_size must be >= 2");
  if (cfg.epochs < 0) raise(ErrorCode::Argument, "epochs must be >= 0");
  if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0) {
    raise(ErrorCode::Argument, "val_fraction must be in [0, 1)");
  }
  if (cfg.triple_cap < 1) raise(ErrorCode::Argument, "triple_cap must be >= 1");
}

namespace {

ordered_json encoder_config_json(const text::TextEncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"max_len", c.max_len},   {"seed", c.seed}};
}

ordered_json decoder_config_json(const text::TextDecoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"max_len", c.max_len},   {"seed", c.seed}};
}

// Pre-tokenized training example.
struct Tokenized {
  std::vector<int> sensor_ids;
  std::vector<int> label_ids;
  int category = 0;
  int label_index = 0;  // dense id of the canonical label within this run
};

struct BatchLosses {
  Var total;
  double align = 0.0, ca1 = 0.0, ca2 = 0.0, ca3 = 0.0, re = 0.0, text = 0.0;
};

BatchLosses build_batch_graph(Tape& t, text::TextEncoder& encoder, text::TextDecoder& decoder,
                              const std::vector<Tokenized>& items,
                              const std::vector<size_t>& batch_idx, const TrainConfig& cfg,
                              Rng& rng) {
  std::vector<Var> h_rows, z_rows;
  std::vector<int> cats, labels;
  h_rows.reserve(batch_idx.size());
  z_rows.reserve(batch_idx.size());
  for (size_t idx : batch_idx) {
    const Tokenized& it = items[idx];
    h_rows.push_back(encoder.encode_on_tape(t, it.label_ids));
    z_rows.push_back(encoder.encode_on_tape(t, it.sensor_ids));
    cats.push_back(it.category);
    labels.push_back(it.label_index);
  }
  Var h = nn::concat_rows(h_rows);
  Var z = nn::concat_rows(z_rows);

  Var align = losses::loss_align(t, h, z, cfg.tau);
  auto ca1 = losses::loss_pairwise_category(t, h, cats, cfg.triple_cap, rng);
  auto ca2 = losses::loss_pairwise_category(t, z, cats, cfg.triple_cap, rng);
  auto ca3 = losses::loss_label_variants(t, h, labels, cfg.triple_cap, rng);

  std::vector<Var> recon;
  recon.reserve(2 * batch_idx.size());
  for (size_t b = 0; b < batch_idx.size(); ++b) {
    const Tokenized& it = items[batch_idx[b]];
    recon.push_back(decoder.reconstruction_loss_on_tape(t, z_rows[b], it.sensor_ids));
    recon.push_back(decoder.reconstruction_loss_on_tape(t, h_rows[b], it.label_ids));
  }
  Var re = nn::mean_all(nn::concat_rows(recon));

  Var ca_sum = nn::add(nn::add(ca1.loss, ca2.loss), ca3.loss);
  Var total = nn::add(align, nn::add(nn::scale(ca_sum, cfg.alpha), nn::scale(re, cfg.beta)));

  BatchLosses out{total};
  out.align = t.value(align)(0, 0);
  out.ca1 = t.value(ca1.loss)(0, 0);
  out.ca2 = t.value(ca2.loss)(0, 0);
  out.ca3 = t.value(ca3.loss)(0, 0);
  out.re = t.value(re)(0, 0);
  out.text = losses::loss_text_total(out.align, out.ca1, out.ca2, out.ca3, out.re, cfg.alpha,
                                     cfg.beta);
  return out;
}

double eval_alignment(text::TextEncoder& encoder, const std::vector<Tokenized>& items,
                      const std::vector<size_t>& idx, double tau) {
  if (idx.empty()) return 0.0;
  Tape t;
  std::vector<Var> h_rows, z_rows;
  for (size_t i : idx) {
    h_rows.push_back(encoder.encode_on_tape(t, items[i].label_ids));
    z_rows.push_back(encoder.encode_on_tape(t, items[i].sensor_ids));
  }
  Var align = losses::loss_align(t, nn::concat_rows(h_rows), nn::concat_rows(z_rows), tau);
  return t.value(align)(0, 0);
}

std::vector<nn::Matrix> snapshot_values(const std::vector<nn::Parameter*>& params) {
  std::vector<nn::Matrix> out;
  out.reserve(params.size());
  for (const nn::Parameter* p : params) out.push_back(p->value);
  return out;
}

void restore_values(const std::vector<nn::Parameter*>& params,
                    const std::vector<nn::Matrix>& snap) {
  for (size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

bool params_finite(const std::vector<nn::Parameter*>& params) {
  for (const nn::Parameter* p : params) {
    if (!p->value.allFinite()) return false;
  }
  return true;
}

}  // namespace

void save_text_checkpoint(const std::filesystem::path& path, const text::TextEncoder& encoder,
                          const text::TextDecoder& decoder, const ordered_json& extra) {
  std::vector<const nn::Parameter*> params = encoder.parameters();
  for (const nn::Parameter* p : decoder.parameters()) params.push_back(p);
  write_checkpoint(path, params, {{"model", "text_alignment"}});
  ordered_json sidecar;
  sidecar["model"] = "text_alignment";
  sidecar["encoder"] = encoder_config_json(encoder.config());
  sidecar["decoder"] = decoder_config_json(decoder.config());
  for (const auto& [k, v] : extra.items()) sidecar[k] = v;
  nn::write_sidecar(path, sidecar);
}

TextModels load_text_checkpoint(const std::filesystem::path& path) {
  const json side = nn::read_sidecar(path);
  if (side.value("model", "") != "text_alignment") {
    raise(ErrorCode::Validation, "not a text alignment checkpoint: " + path.string());
  }
  const auto ec = side.at("encoder");
  const auto dc = side.at("decoder");
  text::TextEncoderConfig enc_cfg{ec.at("vocab_size"), ec.at("d_model"), ec.at("n_layers"),
                                  ec.at("n_heads"),    ec.at("max_len"), ec.at("seed")};
  text::TextDecoderConfig dec_cfg{dc.at("vocab_size"), dc.at("d_model"), dc.at("n_layers"),
                                  dc.at("n_heads"),    dc.at("max_len"), dc.at("seed")};
  TextModels out;
  out.encoder = std::make_unique<text::TextEncoder>(enc_cfg);
  out.decoder = std::make_unique<text::TextDecoder>(dec_cfg);
  std::vector<nn::Parameter*> params = out.encoder->parameters();
  for (nn::Parameter* p : out.decoder->parameters()) params.push_back(p);
  nn::load_parameters(nn::read_checkpoint(path), params);
  out.sidecar = side;
  return out;
}

TextTrainResult train_text_encoder(text::TextEncoder& encoder, text::TextDecoder& decoder,
                                   const std::vector<TrainPair>& pairs, const TrainConfig& cfg,
                                   const CategoryTable& categories,
                                   const std::filesystem::path& checkpoint_path,
                                   const std::filesystem::path& metrics_path) {
  validate(cfg);
  if (pairs.empty()) raise(ErrorCode::Argument, "no training pairs");
  if (encoder.config().d_model != decoder.config().d_model) {
    raise(ErrorCode::Argument, "encoder/decoder width mismatch");
  }

  // Tokenize once up front; dense label ids follow first-seen order.
  std::vector<Tokenized> items;
  items.reserve(pairs.size());
  std::map<std::string, int> label_ids;
  for (const TrainPair& p : pairs) {
    Tokenized tk;
    tk.sensor_ids = encoder.tokenize_checked(p.sensor_text);
    tk.label_ids = encoder.tokenize_checked(p.label_text);
    tk.category = categories.category_of(p.label);
    tk.label_index = label_ids.emplace(p.label, static_cast<int>(label_ids.size())).first->second;
    items.push_back(std::move(tk));
  }

  // Deterministic validation holdout.
  std::vector<size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, "text_val_split"));
  split_rng.shuffle(order);
  size_t val_n = static_cast<size_t>(
      std::llround(cfg.val_fraction * static_cast<double>(items.size())));
  val_n = std::min(val_n, items.size() - 1);
  std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<long>(val_n));
  std::vector<size_t> train_idx(order.begin() + static_cast<long>(val_n), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  const std::vector<size_t>& eval_idx = val_idx.empty() ? train_idx : val_idx;

  std::vector<nn::Parameter*> params = encoder.parameters();
  for (nn::Parameter* p : decoder.parameters()) params.push_back(p);
  nn::AdamW optimizer(params, {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  ensure_directory(metrics_path.parent_path());
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) raise(ErrorCode::Io, "cannot open metrics log: " + metrics_path.string());

  TextTrainResult result;
  result.best_val_align = std::numeric_limits<double>::infinity();
  std::vector<nn::Matrix> last_finite = snapshot_values(params);

  const auto abort_diverged = [&](const std::string& why) {
    restore_values(params, last_finite);
    save_text_checkpoint(checkpoint_path, encoder, decoder,
                         {{"status", "aborted"}, {"reason", why}});
    raise(ErrorCode::Numeric, "training diverged (" + why + "); last finite state checkpointed");
  };

  const auto save_best = [&](int epoch, double val_align) {
    result.best_epoch = epoch;
    result.best_val_align = val_align;
    save_text_checkpoint(checkpoint_path, encoder, decoder,
                         {{"status", "ok"},
                          {"epoch", epoch},
                          {"val_align", val_align},
                          {"tau", cfg.tau},
                          {"alpha", cfg.alpha},
                          {"beta", cfg.beta},
                          {"seed", cfg.seed}});
  };

  if (cfg.epochs == 0) {
    save_best(0, eval_alignment(encoder, items, eval_idx, cfg.tau));
    return result;
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng epoch_rng(derive_seed(cfg.seed, "text_epoch_" + std::to_string(epoch)));
    std::vector<size_t> sched = train_idx;
    epoch_rng.shuffle(sched);

    double sum_text = 0, sum_align = 0, sum_ca1 = 0, sum_ca2 = 0, sum_ca3 = 0, sum_re = 0;
    int batches = 0;
    for (size_t at = 0; at < sched.size(); at += static_cast<size_t>(cfg.batch_size)) {
      const size_t take = std::min(static_cast<size_t>(cfg.batch_size), sched.size() - at);
      if (take < 2) continue;  // a single leftover pair cannot form a contrastive batch
      std::vector<size_t> batch(sched.begin() + static_cast<long>(at),
                                sched.begin() + static_cast<long>(at + take));
      Tape t;
      BatchLosses bl = build_batch_graph(t, encoder, decoder, items, batch, cfg, epoch_rng);
      if (!std::isfinite(bl.text)) abort_diverged("non-finite batch loss");
      t.backward(bl.total);
      nn::clip_grad_norm(params, cfg.clip_norm);
      try {
        optimizer.step();
      } catch (const Error& e) {
        if (e.code() == ErrorCode::Numeric) abort_diverged(e.what());
        throw;
      }
      if (!params_finite(params)) abort_diverged("non-finite parameter after update");
      optimizer.zero_grad();
      last_finite = snapshot_values(params);

      sum_text += bl.text;
      sum_align += bl.align;
      sum_ca1 += bl.ca1;
      sum_ca2 += bl.ca2;
      sum_ca3 += bl.ca3;
      sum_re += bl.re;
      ++batches;
    }
    if (batches == 0) raise(ErrorCode::Argument, "training set too small for one batch");

    EpochRecord rec;
    rec.epoch = epoch;
    rec.l_text = sum_text / batches;
    rec.l_align = sum_align / batches;
    rec.l_ca1 = sum_ca1 / batches;
    rec.l_ca2 = sum_ca2 / batches;
    rec.l_ca3 = sum_ca3 / batches;
    rec.l_re = sum_re / batches;
    rec.val_align = eval_alignment(encoder, items, eval_idx, cfg.tau);
    result.history.push_back(rec);

    ordered_json line{{"epoch", rec.epoch},   {"l_text", rec.l_text}, {"l_align", rec.l_align},
                      {"l_ca1", rec.l_ca1},   {"l_ca2", rec.l_ca2},   {"l_ca3", rec.l_ca3},
                      {"l_re", rec.l_re},     {"val_align", rec.val_align}};
    metrics << line.dump() << "\n";
    metrics.flush();

    if (rec.val_align < result.best_val_align) save_best(epoch, rec.val_align);
  }
  return result;
}

}  // namespace lanhar::train
