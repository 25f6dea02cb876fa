#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "crossalign/align.hpp"
#include "crossalign/dsp.hpp"
#include "crossalign/fusion.hpp"

namespace crossalign::data {

inline constexpr std::size_t kEmbeddingDim = 300;

/// Index into kClassNames; throws ValidationError naming unknown labels.
std::size_t parse_label(std::string_view name);

struct UtteranceRecord {
  std::string id;
  std::filesystem::path audio_path;   // resolved against the manifest directory
  std::vector<double> inline_samples;  // used when no path is given
  int sample_rate = 16000;             // for inline samples
  std::vector<std::string> tokens;
  std::size_t label = 0;
  std::vector<WordSpan> spans;
  std::optional<int> session;
  std::optional<std::size_t> trigger;  // synthetic corpora: index of the trigger word

  dsp::AudioBuffer load_audio() const;
};

/// Lowercase, strip punctuation, split on whitespace.
std::vector<std::string> tokenize(std::string_view text);

/// JSON-lines manifest: one object per line with id, audio, tokens, label and
/// optionally spans, session, trigger. Blank lines are skipped.
std::vector<UtteranceRecord> load_manifest(const std::filesystem::path& path);
std::vector<UtteranceRecord> parse_manifest(std::istream& in, const std::filesystem::path& base_dir);
std::string manifest_line(const UtteranceRecord& record, const std::filesystem::path& base_dir);

struct EmbeddingTable {
  std::size_t dim = kEmbeddingDim;
  std::unordered_map<std::string, std::vector<double>> vectors;
  std::vector<std::string> warnings;

  bool contains(const std::string& word) const { return vectors.contains(word); }
  /// Zero vector for out-of-vocabulary words.
  std::vector<double> lookup(const std::string& word) const;
  nn::Tensor<double> embed(const std::vector<std::string>& tokens) const;
};

/// GloVe text format: a word followed by `dim` reals per line. When `filter`
/// is given, only those words are kept. Duplicate words: last one wins, with a
/// warning recorded.
EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t dim = kEmbeddingDim,
                               const std::vector<std::string>* filter = nullptr);
EmbeddingTable parse_embeddings(std::istream& in, std::size_t dim, const std::vector<std::string>* filter);
void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Each utterance is a word sequence with exactly one trigger word. Trigger
/// words come in two identity groups; under the trigger word the audio
/// carries one of two spectral cues. label = 2 * group + cue, so text alone
/// identifies two of the four classes and so does audio alone.
struct SyntheticSpec {
  std::size_t n_utterances = 2000;
  std::size_t min_words = 3;
  std::size_t max_words = 6;
  std::size_t min_frames_per_word = 6;
  std::size_t max_frames_per_word = 12;
  std::size_t content_vocab = 40;
  double cue_strength = 1.0;
  double noise_level = 0.05;
  std::uint64_t seed = 1;
  int sample_rate = 16000;
  std::size_t embed_dim = kEmbeddingDim;

  void validate() const;
};

SyntheticSpec synthetic_spec_from_json(const std::string& json_text);
std::string synthetic_spec_to_json(const SyntheticSpec& spec);

inline constexpr std::size_t kTriggerGroups = 2;
inline constexpr std::size_t kCueKinds = 2;

/// Trigger words: group g owns trigger_words()[2g] and [2g + 1].
const std::array<std::string, 4>& trigger_words();

/// Generator label table: label for (trigger group, cue).
std::size_t synthetic_label(std::size_t group, std::size_t cue);

struct SyntheticUtterance {
  UtteranceRecord record;
  dsp::AudioBuffer audio;
  std::size_t group = 0;
  std::size_t cue = 0;
};

/// In-memory generation; deterministic under spec.seed.
std::vector<SyntheticUtterance> generate_utterances(const SyntheticSpec& spec);
EmbeddingTable synthetic_embeddings(const SyntheticSpec& spec);

struct SyntheticCorpus {
  std::filesystem::path manifest;
  std::filesystem::path spans;
  std::filesystem::path embeddings;
  std::size_t utterances = 0;
};

/// Writes wav/<id>.wav, manifest.jsonl, spans.tsv and embeddings.txt under
/// `out_dir`.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  std::vector<std::size_t> indices;
  std::size_t padded_frames = 0;
  std::size_t padded_words = 0;
  std::vector<std::size_t> frames;  // valid lengths
  std::vector<std::size_t> words;
  std::vector<std::vector<std::uint8_t>> frame_mask;  // 1 = valid
  std::vector<std::vector<std::uint8_t>> word_mask;
};

/// Shuffles example indices with `seed`, cuts them into batches of at most
/// `batch_size` and records per-batch padding and validity masks.
std::vector<Batch> make_batches(const std::vector<std::size_t>& frame_counts,
                                const std::vector<std::size_t>& word_counts, std::size_t batch_size,
                                std::uint64_t seed);

}  // namespace crossalign::data
