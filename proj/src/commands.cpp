#include "crossalign/commands.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

#include "json.hpp"

namespace crossalign::commands {
namespace fs = std::filesystem;
namespace {

using Json = nlohmann::ordered_json;

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

void write_feature_csv(const fs::path& wav, const fs::path& csv, bool standardize) {
  const auto audio = dsp::read_wav(wav);
  auto values = dsp::extract_features(audio).values;
  if (standardize) values = dsp::standardize(values);
  auto f = open_out(csv);
  const auto& names = dsp::feature_names();
  for (std::size_t c = 0; c < names.size(); ++c) f << (c ? "," : "") << names[c];
  f << '\n';
  char buf[32];
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", values(r, c));
      f << (c ? "," : "") << buf;
    }
    f << '\n';
  }
  if (!f) throw IoError("failed writing " + csv.string());
}

std::vector<std::string> corpus_tokens(const std::vector<data::UtteranceRecord>& records) {
  std::vector<std::string> tokens;
  for (const auto& r : records) tokens.insert(tokens.end(), r.tokens.begin(), r.tokens.end());
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  return tokens;
}

std::string format_report(const train::EvalReport& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "WA %.4f  UA %.4f  (n=%zu)\n", r.wa, r.ua, r.n);
  std::string s = buf;
  s += "confusion (rows true, cols predicted):\n";
  for (std::size_t t = 0; t < r.confusion.size(); ++t) {
    std::snprintf(buf, sizeof buf, "  %-8s", std::string(kClassNames[t]).c_str());
    s += buf;
    for (auto c : r.confusion[t]) {
      std::snprintf(buf, sizeof buf, " %6zu", c);
      s += buf;
    }
    s += '\n';
  }
  return s;
}

void write_report(const fs::path& path, const train::EvalReport& r) {
  auto f = open_out(path);
  f << train::report_json(r) << '\n';
}

// Loaded checkpoint plus the examples it should run on.
struct Restored {
  nn::Checkpoint ckpt;
  train::RunConfig run;
  std::vector<std::string> vocab;
  data::EmbeddingTable table;
  std::vector<train::Example> examples;
};

Restored restore(const fs::path& checkpoint, const fs::path& manifest, const fs::path& embeddings, bool parallel) {
  Restored r;
  r.ckpt = nn::read_checkpoint(checkpoint);
  r.run = train::config_from_checkpoint(r.ckpt);
  r.run.parallel = parallel;
  r.vocab = train::vocab_from_checkpoint(r.ckpt);
  const auto records = data::load_manifest(manifest);
  const auto tokens = corpus_tokens(records);
  r.table = data::load_embeddings(embeddings, r.run.embed_dim, &tokens);
  r.examples = train::prepare_examples(records, r.table, parallel);
  if (!r.vocab.empty()) train::assign_token_ids(r.examples, r.vocab);
  return r;
}

template <typename T>
train::Session<T> restored_session(const Restored& r) {
  train::Session<T> session(r.run, r.examples, r.vocab, &r.table);
  nn::load_into(r.ckpt, session.model().params());
  return session;
}

template <typename T>
train::TrainResult train_impl(const TrainOptions& o, std::vector<train::Example>& examples,
                              const data::EmbeddingTable& table, std::ostream& out) {
  std::vector<std::string> vocab;
  if (!o.run.freeze_embeddings) {
    vocab = train::build_vocab(examples);
    train::assign_token_ids(examples, vocab);
  }
  const auto split = train::split_by_session(examples, o.run.holdout_session, o.run.val_fraction, o.run.seed);
  out << "train " << split.train.size() << "  val " << split.val.size() << "  test " << split.test.size() << '\n';
  train::Session<T> session(o.run, examples, vocab, &table);
  std::error_code ec;
  fs::create_directories(o.out, ec);
  auto log = open_out(o.out / "train_log.jsonl");
  const auto result = session.train(split, &log);
  session.save(o.out / "model.ckpt");
  out << "best epoch " << result.best_epoch << " of " << result.epochs.size() << '\n';
  if (!split.test.empty()) {
    const auto report = session.evaluate(split.test);
    out << "test " << format_report(report);
    write_report(o.out / "test_report.json", report);
  }
  return result;
}

template <typename T>
AlignSummary align_impl(const Restored& r, const fs::path& dir, std::ostream& out) {
  const auto session = restored_session<T>(r);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
  AlignSummary summary;
  double trig_mass = 0.0, trig_uniform = 0.0, word_mass = 0.0;
  std::size_t trig_n = 0, word_n = 0;
  char buf[32];
  for (std::size_t u = 0; u < r.examples.size(); ++u) {
    const auto& ex = r.examples[u];
    const auto result = session.model().forward(session.view(u));
    const auto& map = *result.attention;
    const std::size_t M = map.valid_words, N = map.valid_frames, H = map.heads();
    auto f = open_out(dir / (ex.id + ".txt"));
    for (std::size_t j = 0; j < M; ++j) {
      f << ex.tokens[j];
      std::vector<double> avg(N, 0.0);
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t h = 0; h < H; ++h) avg[i] += static_cast<double>(map.at(h, j, i));
        avg[i] /= static_cast<double>(H);
        std::snprintf(buf, sizeof buf, " %.6f", avg[i]);
        f << buf;
      }
      f << '\n';
      if (ex.spans.size() == M) {
        const auto& s = ex.spans[j];
        double mass = 0.0;
        for (std::size_t i = s.start_frame - 1; i < std::min(s.end_frame, N); ++i) mass += avg[i];
        word_mass += mass;
        ++word_n;
        if (ex.trigger && *ex.trigger == j) {
          trig_mass += mass;
          trig_uniform += static_cast<double>(s.end_frame - s.start_frame + 1) / static_cast<double>(N);
          ++trig_n;
        }
      }
    }
    if (!f) throw IoError("failed writing alignment for " + ex.id);
  }
  summary.utterances = r.examples.size();
  if (word_n) summary.word_span_mass = word_mass / static_cast<double>(word_n);
  if (trig_n) {
    summary.trigger_span_mass = trig_mass / static_cast<double>(trig_n);
    summary.trigger_uniform_mass = trig_uniform / static_cast<double>(trig_n);
  }
  Json j;
  j["utterances"] = summary.utterances;
  if (summary.word_span_mass) j["word_span_mass"] = *summary.word_span_mass;
  if (summary.trigger_span_mass) {
    j["trigger_span_mass"] = *summary.trigger_span_mass;
    j["trigger_uniform_mass"] = *summary.trigger_uniform_mass;
  }
  open_out(dir / "summary.json") << j.dump(2) << '\n';
  out << "wrote " << summary.utterances << " alignment files to " << dir.string() << '\n';
  if (summary.trigger_span_mass) {
    std::snprintf(buf, sizeof buf, "%.4f", *summary.trigger_span_mass);
    out << "trigger span mass " << buf;
    std::snprintf(buf, sizeof buf, "%.4f", *summary.trigger_uniform_mass);
    out << " (uniform " << buf << ")\n";
  }
  return summary;
}

}  // namespace

void cmd_extract(const ExtractOptions& o, std::ostream& out) {
  if (fs::is_directory(o.input)) {
    std::vector<fs::path> wavs;
    for (const auto& e : fs::directory_iterator(o.input))
      if (e.is_regular_file() && e.path().extension() == ".wav") wavs.push_back(e.path());
    std::sort(wavs.begin(), wavs.end());
    std::error_code ec;
    fs::create_directories(o.out, ec);
    if (ec) throw IoError("cannot create " + o.out.string());
    for (const auto& w : wavs) write_feature_csv(w, o.out / (w.stem().string() + ".csv"), o.standardize);
    out << "extracted " << wavs.size() << " files to " << o.out.string() << '\n';
    return;
  }
  if (!fs::exists(o.input)) throw IoError("no such file: " + o.input.string());
  write_feature_csv(o.input, o.out, o.standardize);
  out << "wrote " << o.out.string() << '\n';
}

data::SyntheticCorpus cmd_synth(const data::SyntheticSpec& spec, const fs::path& out_dir, std::ostream& out) {
  auto corpus = data::generate_synthetic(spec, out_dir);
  out << "wrote " << corpus.utterances << " utterances to " << out_dir.string() << '\n';
  return corpus;
}

train::TrainResult cmd_train(const TrainOptions& o, std::ostream& out) {
  o.run.validate();
  const auto records = data::load_manifest(o.manifest);
  if (records.empty()) throw ValidationError("manifest " + o.manifest.string() + " has no utterances");
  const auto tokens = corpus_tokens(records);
  const auto table = data::load_embeddings(o.embeddings, o.run.embed_dim, &tokens);
  for (const auto& w : table.warnings) out << "warning: " << w << '\n';
  auto examples = train::prepare_examples(records, table, o.run.parallel);
  return o.run.double_precision ? train_impl<double>(o, examples, table, out)
                                : train_impl<float>(o, examples, table, out);
}

train::EvalReport cmd_eval(const EvalOptions& o, std::ostream& out) {
  const auto r = restore(o.checkpoint, o.manifest, o.embeddings, o.parallel);
  std::vector<std::size_t> all(r.examples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto report = r.run.double_precision ? restored_session<double>(r).evaluate(all)
                                             : restored_session<float>(r).evaluate(all);
  out << format_report(report);
  if (o.out) write_report(*o.out, report);
  return report;
}

AlignSummary cmd_align(const AlignOptions& o, std::ostream& out) {
  const auto ckpt_run = train::config_from_checkpoint(nn::read_checkpoint(o.checkpoint));
  if (!has_alignment_map(ckpt_run.variant)) {
    throw ValidationError("checkpoint variant '" + std::string(to_string(ckpt_run.variant)) +
                          "' has no word-to-frame attention; alignment dumps need a proposed-variant model");
  }
  const auto r = restore(o.checkpoint, o.manifest, o.embeddings, true);
  return r.run.double_precision ? align_impl<double>(r, o.out, out) : align_impl<float>(r, o.out, out);
}

nn::GradCheckReport gradcheck_report(const GradcheckOptions& o) {
  data::SyntheticSpec spec;
  spec.n_utterances = 2;
  spec.min_words = 2;
  spec.max_words = 3;
  spec.min_frames_per_word = 2;
  spec.max_frames_per_word = 3;
  spec.content_vocab = 4;
  spec.embed_dim = 6;
  spec.seed = o.seed;
  const auto table = data::synthetic_embeddings(spec);
  auto examples = train::prepare_synthetic(data::generate_utterances(spec), table, false);

  train::RunConfig run;
  run.variant = o.variant;
  run.hidden = 3;
  run.heads = 2;
  run.embed_dim = spec.embed_dim;
  run.double_precision = true;
  run.freeze_embeddings = o.freeze_embeddings;
  run.seed = o.seed;
  run.parallel = false;
  std::vector<std::string> vocab;
  if (!o.freeze_embeddings) {
    vocab = train::build_vocab(examples);
    train::assign_token_ids(examples, vocab);
  }
  train::Session<double> session(run, examples, vocab, &table);
  std::vector<std::size_t> all(examples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  // Differencing the loss less its constant log(C) offset keeps central
  // differences clear of the rounding error of a value near log(4).
  auto loss = [&] {
    double total = 0.0;
    for (std::size_t i : all) {
      const auto logits = session.model().forward(session.view(i)).prediction.logits;
      total += nn::cross_entropy_excess<double>(logits, examples[i].label);
    }
    return total;
  };
  auto analytic = [&](nn::GradSpan<double> grads) { session.batch_gradients_serial(all, grads); };
  return nn::grad_check(session.model().params(), loss, analytic, o.tolerance);
}

nn::GradCheckReport cmd_gradcheck(const GradcheckOptions& o, std::ostream& out) {
  const auto report = gradcheck_report(o);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %6s %12s  %s\n", "parameter", "size", "max rel err", "result");
  out << buf;
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof buf, "%-22s %6zu %12.3e  %s%s\n", e.name.c_str(), e.size, e.max_rel_error,
                  e.passed ? "PASS" : "FAIL", e.nan_count ? " (non-finite)" : "");
    out << buf;
  }
  out << (report.passed() ? "all parameters pass" : "gradient check FAILED") << " (tolerance " << report.tolerance
      << ")\n";
  if (!report.passed()) {
    std::string failed;
    for (const auto& e : report.entries)
      if (!e.passed) failed += (failed.empty() ? "" : ", ") + e.name;
    throw NumericError("gradient check failed for " + failed);
  }
  return report;
}

}  // namespace crossalign::commands
