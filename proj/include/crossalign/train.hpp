#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crossalign/adam.hpp"
#include "crossalign/checkpoint.hpp"
#include "crossalign/data.hpp"
#include "crossalign/model.hpp"

namespace crossalign::train {

struct EvalReport {
  double wa = 0.0;
  double ua = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t n = 0;
};

/// UA averages recall over the classes that occur in `truth`.
EvalReport compute_report(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                          std::size_t classes = kNumClasses);
EvalReport report_from_confusion(std::vector<std::vector<std::size_t>> confusion);
std::string report_json(const EvalReport& report);

/// One utterance after feature extraction and embedding lookup.
struct Example {
  std::string id;
  nn::Tensor<double> features;    // frames x 34, standardized
  std::vector<std::string> tokens;
  nn::Tensor<double> embeddings;  // words x embed_dim
  std::vector<int> token_ids;     // filled by assign_token_ids
  std::vector<WordSpan> spans;
  std::size_t label = 0;
  std::optional<int> session;
  std::optional<std::size_t> trigger;

  std::size_t frames() const { return features.rows(); }
  std::size_t words() const { return tokens.size(); }
};

/// Reads audio, extracts and standardizes features, looks up embeddings.
/// Files are processed in parallel unless `parallel` is false; errors carry
/// the utterance id.
std::vector<Example> prepare_examples(const std::vector<data::UtteranceRecord>& records,
                                      const data::EmbeddingTable& table, bool parallel = true);
/// Same, from in-memory synthetic utterances.
std::vector<Example> prepare_synthetic(const std::vector<data::SyntheticUtterance>& utterances,
                                       const data::EmbeddingTable& table, bool parallel = true);

/// Sorted distinct tokens.
std::vector<std::string> build_vocab(const std::vector<Example>& examples);
/// Tokens missing from `vocab` get id -1.
void assign_token_ids(std::vector<Example>& examples, const std::vector<std::string>& vocab);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Utterances of `holdout_session` form the test set. A seeded fraction of
/// the rest becomes the validation set. Untagged utterances train.
Split split_by_session(const std::vector<Example>& examples, int holdout_session, double val_fraction,
                       std::uint64_t seed);

struct RunConfig {
  Variant variant = Variant::kProposed;
  std::size_t hidden = 100;
  std::size_t heads = 5;
  std::size_t embed_dim = data::kEmbeddingDim;
  double lr = 0.001;
  std::size_t batch = 32;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  bool double_precision = false;
  bool freeze_embeddings = true;
  double clip = 0.0;  // max gradient norm, 0 = off
  std::size_t patience = 10;
  double val_fraction = 0.1;
  int holdout_session = 5;
  double init_scale = 1.0;
  bool parallel = true;
  bool eval_train = true;  // log train WA/UA each epoch

  ModelConfig model_config(std::size_t vocab_size) const;
  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<EvalReport> train;
  std::optional<EvalReport> val;
  bool improved = false;
};

std::string epoch_json(const EpochLog& log);

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;  // 0 = initial weights
  double best_val_ua = -1.0;
  bool stopped_early = false;
};

/// Returning true from the callback ends training after that epoch.
using EpochCallback = std::function<bool(const EpochLog&)>;

/// A model plus its examples converted to the working precision.
template <typename T>
class Session {
 public:
  /// `vocab` and `table` are needed only when embeddings are trainable; the
  /// table then seeds "embed.table".
  Session(const RunConfig& config, const std::vector<Example>& examples, const std::vector<std::string>& vocab = {},
          const data::EmbeddingTable* table = nullptr);

  const RunConfig& config() const { return config_; }
  Model<T>& model() { return model_; }
  const Model<T>& model() const { return model_; }
  const std::vector<std::string>& vocab() const { return vocab_; }
  std::size_t size() const { return examples_->size(); }

  ExampleView<T> view(std::size_t i) const;

  /// Sum over `batch` of per-example gradients, added into `out` in batch
  /// order. The parallel version computes examples in waves of one per
  /// thread and produces bit-identical sums. Returns the summed loss.
  double batch_gradients(std::span<const std::size_t> batch, nn::GradSpan<T> out) const;
  double batch_gradients_serial(std::span<const std::size_t> batch, nn::GradSpan<T> out) const;

  std::vector<std::size_t> predict(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> predict_serial(std::span<const std::size_t> indices) const;
  EvalReport evaluate(std::span<const std::size_t> indices) const;

  /// Adam on mean batch loss with early stopping on validation UA. The
  /// parameters end at the best epoch's values. `log` receives one JSON line
  /// per epoch.
  TrainResult train(const Split& split, std::ostream* log = nullptr, const EpochCallback& callback = {});

  std::map<std::string, std::string> checkpoint_meta() const;
  void save(const std::filesystem::path& path) const;

 private:
  RunConfig config_;
  const std::vector<Example>* examples_;
  std::vector<Tensor<T>> features_;
  std::vector<Tensor<T>> embeddings_;
  std::vector<std::string> vocab_;
  Model<T> model_;
};

/// Rebuilds the run configuration recorded in a checkpoint.
RunConfig config_from_checkpoint(const nn::Checkpoint& ckpt);
std::vector<std::string> vocab_from_checkpoint(const nn::Checkpoint& ckpt);

}  // namespace crossalign::train
