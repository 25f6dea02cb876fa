#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "crossalign/grad_check.hpp"
#include "crossalign/train.hpp"

// Subcommand bodies of the command-line tool. Each writes a human-readable
// summary to `out` and throws crossalign::Error subclasses on failure.
namespace crossalign::commands {

struct ExtractOptions {
  std::filesystem::path input;  // a WAV file or a directory of them
  std::filesystem::path out;    // CSV file, or a directory when input is one
  bool standardize = false;
};
/// One CSV per file: a header of feature names, then one row per frame.
void cmd_extract(const ExtractOptions& options, std::ostream& out);

data::SyntheticCorpus cmd_synth(const data::SyntheticSpec& spec, const std::filesystem::path& out_dir,
                                std::ostream& out);

struct TrainOptions {
  train::RunConfig run;
  std::filesystem::path manifest;
  std::filesystem::path embeddings;
  std::filesystem::path out;  // directory: model.ckpt, train_log.jsonl, test_report.json
};
train::TrainResult cmd_train(const TrainOptions& options, std::ostream& out);

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  std::filesystem::path embeddings;
  std::optional<std::filesystem::path> out;  // JSON report
  bool parallel = true;
};
train::EvalReport cmd_eval(const EvalOptions& options, std::ostream& out);

struct AlignOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  std::filesystem::path embeddings;
  std::filesystem::path out;  // directory: <id>.txt per utterance, summary.json
};

struct AlignSummary {
  std::size_t utterances = 0;
  /// Mean attention mass that trigger words place inside their own span;
  /// absent when the manifest has no spans or trigger annotations.
  std::optional<double> trigger_span_mass;
  /// Same statistic over all words with spans.
  std::optional<double> word_span_mass;
  /// Mass a uniform alignment would put inside the trigger span.
  std::optional<double> trigger_uniform_mass;
};
AlignSummary cmd_align(const AlignOptions& options, std::ostream& out);

struct GradcheckOptions {
  Variant variant = Variant::kProposed;
  std::uint64_t seed = 1;
  bool freeze_embeddings = true;
  double tolerance = 1e-4;
};
/// Tiny model (3 hidden units per direction, 2 heads) on two synthetic
/// utterances, double precision.
nn::GradCheckReport gradcheck_report(const GradcheckOptions& options);
nn::GradCheckReport cmd_gradcheck(const GradcheckOptions& options, std::ostream& out);

}  // namespace crossalign::commands
