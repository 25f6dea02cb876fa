#include "crossalign/train.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace crossalign::train {
namespace {

using Json = nlohmann::ordered_json;

// Runs body(i) for i in [0, n), in parallel when asked. The first exception
// in index order is rethrown after the loop.
template <typename F>
void for_each_index(std::size_t n, bool parallel, F&& body) {
  if (!parallel) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Example make_example(const data::UtteranceRecord& r, const dsp::AudioBuffer& audio,
                     const data::EmbeddingTable& table) {
  Example ex;
  ex.id = r.id;
  ex.features = dsp::standardize(dsp::extract_features_serial(audio).values);
  ex.tokens = r.tokens;
  ex.embeddings = table.embed(r.tokens);
  ex.spans = r.spans;
  ex.label = r.label;
  ex.session = r.session;
  ex.trigger = r.trigger;
  if (!ex.spans.empty() && ex.spans.back().end_frame > ex.frames()) {
    throw ValidationError("utterance '" + r.id + "': span ends at frame " + std::to_string(ex.spans.back().end_frame) +
                          " but the audio has " + std::to_string(ex.frames()) + " frames");
  }
  return ex;
}

Json report_to_json(const EvalReport& r) {
  Json j;
  j["wa"] = r.wa;
  j["ua"] = r.ua;
  j["n"] = r.n;
  j["confusion"] = r.confusion;
  return j;
}

}  // namespace

EvalReport report_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
  EvalReport r;
  const std::size_t C = confusion.size();
  std::size_t correct = 0, present = 0;
  double recall_sum = 0.0;
  for (std::size_t t = 0; t < C; ++t) {
    if (confusion[t].size() != C) throw ShapeError("confusion matrix must be square");
    const std::size_t row = std::accumulate(confusion[t].begin(), confusion[t].end(), std::size_t{0});
    r.n += row;
    correct += confusion[t][t];
    if (row > 0) {
      recall_sum += static_cast<double>(confusion[t][t]) / static_cast<double>(row);
      ++present;
    }
  }
  r.wa = r.n ? static_cast<double>(correct) / static_cast<double>(r.n) : 0.0;
  r.ua = present ? recall_sum / static_cast<double>(present) : 0.0;
  r.confusion = std::move(confusion);
  return r;
}

EvalReport compute_report(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                          std::size_t classes) {
  if (truth.size() != predicted.size()) throw ValidationError("truth and prediction counts differ");
  std::vector<std::vector<std::size_t>> confusion(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) throw ValidationError("class index out of range");
    ++confusion[truth[i]][predicted[i]];
  }
  return report_from_confusion(std::move(confusion));
}

std::string report_json(const EvalReport& report) { return report_to_json(report).dump(); }

std::vector<Example> prepare_examples(const std::vector<data::UtteranceRecord>& records,
                                      const data::EmbeddingTable& table, bool parallel) {
  std::vector<Example> out(records.size());
  std::vector<int> rates(records.size());
  for_each_index(records.size(), parallel, [&](std::size_t i) {
    const auto& r = records[i];
    try {
      const auto audio = r.load_audio();
      rates[i] = audio.sample_rate;
      out[i] = make_example(r, audio, table);
    } catch (const IoError&) {
      throw;
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      if (msg.find(r.id) != std::string::npos) throw;
      throw ValidationError("utterance '" + r.id + "': " + msg);
    }
  });
  // No resampling: one corpus, one rate.
  for (std::size_t i = 1; i < rates.size(); ++i) {
    if (rates[i] != rates[0]) {
      throw ValidationError("utterance '" + records[i].id + "' has sample rate " + std::to_string(rates[i]) +
                            " Hz but '" + records[0].id + "' has " + std::to_string(rates[0]) + " Hz");
    }
  }
  return out;
}

std::vector<Example> prepare_synthetic(const std::vector<data::SyntheticUtterance>& utterances,
                                       const data::EmbeddingTable& table, bool parallel) {
  std::vector<Example> out(utterances.size());
  for_each_index(utterances.size(), parallel,
                 [&](std::size_t i) { out[i] = make_example(utterances[i].record, utterances[i].audio, table); });
  return out;
}

std::vector<std::string> build_vocab(const std::vector<Example>& examples) {
  std::vector<std::string> vocab;
  for (const auto& ex : examples) vocab.insert(vocab.end(), ex.tokens.begin(), ex.tokens.end());
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
  return vocab;
}

void assign_token_ids(std::vector<Example>& examples, const std::vector<std::string>& vocab) {
  for (auto& ex : examples) {
    ex.token_ids.clear();
    for (const auto& tok : ex.tokens) {
      auto it = std::lower_bound(vocab.begin(), vocab.end(), tok);
      ex.token_ids.push_back(it != vocab.end() && *it == tok ? static_cast<int>(it - vocab.begin()) : -1);
    }
  }
}

Split split_by_session(const std::vector<Example>& examples, int holdout_session, double val_fraction,
                       std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("validation fraction must be in [0, 1)");
  Split split;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].session && *examples[i].session == holdout_session) {
      split.test.push_back(i);
    } else {
      rest.push_back(i);
    }
  }
  auto rng = Rng::stream(seed, "split.val");
  rng.shuffle(rest);
  auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(rest.size())));
  if (val_fraction > 0.0 && n_val == 0 && rest.size() >= 2) n_val = 1;
  split.val.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

ModelConfig RunConfig::model_config(std::size_t vocab_size) const {
  ModelConfig m;
  m.variant = variant;
  m.embed_dim = embed_dim;
  m.hidden = hidden;
  m.heads = heads;
  m.vocab_size = freeze_embeddings ? 0 : vocab_size;
  m.validate();
  return m;
}

void RunConfig::validate() const {
  if (batch == 0) throw ValidationError("batch size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("learning rate must be positive");
  if (clip < 0.0) throw ValidationError("clip norm must be nonnegative");
  if (!(init_scale > 0.0)) throw ValidationError("init scale must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("validation fraction must be in [0, 1)");
  model_config(0);
}

std::string epoch_json(const EpochLog& log) {
  Json j;
  j["epoch"] = log.epoch;
  j["loss"] = log.loss;
  if (log.train) {
    j["train_wa"] = log.train->wa;
    j["train_ua"] = log.train->ua;
  }
  if (log.val) {
    j["val_wa"] = log.val->wa;
    j["val_ua"] = log.val->ua;
  }
  j["improved"] = log.improved;
  return j.dump();
}

// ---------------------------------------------------------------------------

template <typename T>
Session<T>::Session(const RunConfig& config, const std::vector<Example>& examples,
                    const std::vector<std::string>& vocab, const data::EmbeddingTable* table)
    : config_(config),
      examples_(&examples),
      vocab_(config.freeze_embeddings ? std::vector<std::string>{} : vocab),
      model_(config.model_config(vocab_.size())) {
  config_.validate();
  if (table && table->dim != config_.embed_dim) {
    throw ShapeError("embedding table has dimension " + std::to_string(table->dim) + " but the model expects " +
                     std::to_string(config_.embed_dim));
  }
  if (!config_.freeze_embeddings && vocab_.empty()) {
    throw ValidationError("trainable embeddings need a vocabulary");
  }
  features_.reserve(examples.size());
  embeddings_.reserve(examples.size());
  for (const auto& ex : examples) {
    features_.push_back(ex.features.template cast<T>());
    embeddings_.push_back(ex.embeddings.template cast<T>());
    if (!config_.freeze_embeddings && ex.token_ids.size() != ex.tokens.size()) {
      throw ValidationError("utterance '" + ex.id + "': token ids not assigned");
    }
  }
  auto rng = Rng::stream(config_.seed, "init");
  model_.init(rng, config_.init_scale);
  if (auto e = model_.embedding_index(); e && table) {
    auto& t = model_.params().value(*e);
    for (std::size_t w = 0; w < vocab_.size(); ++w) {
      const auto v = table->lookup(vocab_[w]);
      for (std::size_t d = 0; d < t.cols(); ++d) t(w, d) = static_cast<T>(v[d]);
    }
  }
}

template <typename T>
ExampleView<T> Session<T>::view(std::size_t i) const {
  const auto& ex = (*examples_)[i];
  ExampleView<T> v;
  v.features = &features_[i];
  v.frames = ex.frames();
  v.embeddings = &embeddings_[i];
  v.words = ex.words();
  v.token_ids = ex.token_ids;
  v.spans = ex.spans;
  v.label = ex.label;
  v.id = ex.id;
  return v;
}

template <typename T>
double Session<T>::batch_gradients_serial(std::span<const std::size_t> batch, nn::GradSpan<T> out) const {
  auto buffer = model_.params().make_grad_buffer();
  ForwardCache<T> cache;
  double loss = 0.0;
  for (std::size_t idx : batch) {
    for (auto& g : buffer) g.zero();
    loss += static_cast<double>(model_.forward(view(idx), cache).loss.value);
    model_.backward(cache, buffer);
    for (std::size_t p = 0; p < out.size(); ++p) out[p] += buffer[p];
  }
  return loss;
}

template <typename T>
double Session<T>::batch_gradients(std::span<const std::size_t> batch, nn::GradSpan<T> out) const {
  const auto slots = std::min<std::size_t>(static_cast<std::size_t>(omp_get_max_threads()), batch.size());
  if (!config_.parallel || slots <= 1) return batch_gradients_serial(batch, out);
  std::vector<std::vector<Tensor<T>>> buffers(slots);
  std::vector<ForwardCache<T>> caches(slots);
  std::vector<double> losses(slots);
  for (auto& b : buffers) b = model_.params().make_grad_buffer();
  double loss = 0.0;
  for (std::size_t start = 0; start < batch.size(); start += slots) {
    const std::size_t wave = std::min(slots, batch.size() - start);
    for_each_index(wave, true, [&](std::size_t s) {
      for (auto& g : buffers[s]) g.zero();
      losses[s] = static_cast<double>(model_.forward(view(batch[start + s]), caches[s]).loss.value);
      model_.backward(caches[s], buffers[s]);
    });
    for (std::size_t s = 0; s < wave; ++s) {
      loss += losses[s];
      for (std::size_t p = 0; p < out.size(); ++p) out[p] += buffers[s][p];
    }
  }
  return loss;
}

template <typename T>
std::vector<std::size_t> Session<T>::predict_serial(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(model_.forward(view(i)).prediction.label);
  return out;
}

template <typename T>
std::vector<std::size_t> Session<T>::predict(std::span<const std::size_t> indices) const {
  if (!config_.parallel) return predict_serial(indices);
  std::vector<std::size_t> out(indices.size());
  for_each_index(indices.size(), true,
                 [&](std::size_t k) { out[k] = model_.forward(view(indices[k])).prediction.label; });
  return out;
}

template <typename T>
EvalReport Session<T>::evaluate(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> truth;
  truth.reserve(indices.size());
  for (std::size_t i : indices) truth.push_back((*examples_)[i].label);
  return compute_report(truth, predict(indices), model_.config().classes);
}

template <typename T>
TrainResult Session<T>::train(const Split& split, std::ostream* log, const EpochCallback& callback) {
  TrainResult result;
  if (config_.epochs == 0) return result;
  if (split.train.empty()) throw ValidationError("no training utterances");
  auto& params = model_.params();
  nn::AdamState<T> adam(params, config_.lr);

  std::vector<std::size_t> frames, words;
  for (std::size_t i : split.train) {
    frames.push_back((*examples_)[i].frames());
    words.push_back((*examples_)[i].words());
  }
  std::vector<Tensor<T>> best(params.values().begin(), params.values().end());
  std::size_t since_best = 0;
  auto shuffle_rng = Rng::stream(config_.seed, "shuffle");

  for (std::size_t epoch = 1; epoch <= config_.epochs; ++epoch) {
    const auto batches = data::make_batches(frames, words, config_.batch, shuffle_rng.next());
    double loss_sum = 0.0;
    std::size_t step = 0;
    for (const auto& b : batches) {
      ++step;
      std::vector<std::size_t> members;
      for (std::size_t k : b.indices) members.push_back(split.train[k]);
      params.zero_grad();
      double batch_loss = 0.0;
      try {
        batch_loss = batch_gradients(members, params.grads());
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " + e.what());
      }
      const T scale = static_cast<T>(1.0 / static_cast<double>(members.size()));
      for (auto& g : params.grads())
        for (T& x : g.flat()) x *= scale;
      if (config_.clip > 0.0) nn::clip_grad_norm(params, config_.clip);
      nn::adam_step(adam, params);
      loss_sum += batch_loss;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / static_cast<double>(split.train.size());
    if (config_.eval_train) entry.train = evaluate(split.train);
    if (!split.val.empty()) entry.val = evaluate(split.val);
    const double score = entry.val ? entry.val->ua : static_cast<double>(epoch);
    if (score > result.best_val_ua || result.best_epoch == 0) {
      result.best_val_ua = score;
      result.best_epoch = epoch;
      std::copy(params.values().begin(), params.values().end(), best.begin());
      entry.improved = true;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (log) *log << epoch_json(entry) << '\n' << std::flush;
    result.epochs.push_back(entry);
    if (callback && callback(entry)) break;
    if (entry.val && config_.patience > 0 && since_best >= config_.patience) {
      result.stopped_early = true;
      break;
    }
  }
  if (split.val.empty()) result.best_val_ua = -1.0;
  std::copy(best.begin(), best.end(), params.values().begin());
  return result;
}

template <typename T>
std::map<std::string, std::string> Session<T>::checkpoint_meta() const {
  const auto& m = model_.config();
  std::map<std::string, std::string> meta{
      {"variant", std::string(to_string(m.variant))},
      {"hidden", std::to_string(m.hidden)},
      {"heads", std::to_string(m.heads)},
      {"feature_dim", std::to_string(m.feature_dim)},
      {"embed_dim", std::to_string(m.embed_dim)},
      {"classes", std::to_string(m.classes)},
      {"precision", config_.double_precision ? "f64" : "f32"},
      {"seed", std::to_string(config_.seed)},
      {"freeze_embeddings", config_.freeze_embeddings ? "1" : "0"},
  };
  if (!vocab_.empty()) {
    std::string joined;
    for (const auto& w : vocab_) joined += (joined.empty() ? "" : " ") + w;
    meta["vocab"] = joined;
  }
  return meta;
}

template <typename T>
void Session<T>::save(const std::filesystem::path& path) const {
  nn::save_checkpoint(path, model_.params(), checkpoint_meta());
}

template class Session<float>;
template class Session<double>;

// ---------------------------------------------------------------------------

RunConfig config_from_checkpoint(const nn::Checkpoint& ckpt) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end()) throw ValidationError("checkpoint is missing meta '" + key + "'");
    return it->second;
  };
  RunConfig c;
  try {
    c.variant = parse_variant(get("variant"));
    c.hidden = std::stoul(get("hidden"));
    c.heads = std::stoul(get("heads"));
    c.embed_dim = std::stoul(get("embed_dim"));
    c.double_precision = get("precision") == "f64";
    c.freeze_embeddings = get("freeze_embeddings") != "0";
    c.seed = std::stoull(get("seed"));
  } catch (const std::logic_error&) {
    throw ValidationError("checkpoint meta is malformed");
  }
  return c;
}

std::vector<std::string> vocab_from_checkpoint(const nn::Checkpoint& ckpt) {
  std::vector<std::string> vocab;
  auto it = ckpt.meta.find("vocab");
  if (it == ckpt.meta.end()) return vocab;
  std::istringstream in(it->second);
  std::string w;
  while (in >> w) vocab.push_back(w);
  return vocab;
}

}  // namespace crossalign::train
