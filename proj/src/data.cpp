#include "crossalign/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include "crossalign/rng.hpp"

namespace crossalign::data {
namespace {

using Json = nlohmann::ordered_json;

std::string at_line(std::size_t line) { return "manifest line " + std::to_string(line) + ": "; }

std::string normalize_token(std::string_view raw) {
  std::string out;
  for (unsigned char ch : raw) {
    if (std::ispunct(ch)) continue;
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

UtteranceRecord parse_record(const Json& j, std::size_t line, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ValidationError(at_line(line) + "expected a JSON object");
  for (const char* field : {"id", "audio", "tokens", "label"}) {
    if (!j.contains(field)) throw ValidationError(at_line(line) + "missing field '" + field + "'");
  }
  UtteranceRecord r;
  if (!j["id"].is_string()) throw ValidationError(at_line(line) + "'id' must be a string");
  r.id = j["id"].get<std::string>();

  const auto& audio = j["audio"];
  if (audio.is_string()) {
    std::filesystem::path p = audio.get<std::string>();
    r.audio_path = p.is_absolute() ? p : base_dir / p;
  } else if (audio.is_array()) {
    for (const auto& s : audio) {
      if (!s.is_number()) throw ValidationError(at_line(line) + "inline audio must be numeric");
      r.inline_samples.push_back(s.get<double>());
    }
    if (j.contains("sample_rate")) r.sample_rate = j["sample_rate"].get<int>();
  } else {
    throw ValidationError(at_line(line) + "'audio' must be a path or a sample array");
  }

  const auto& tokens = j["tokens"];
  if (tokens.is_string()) {
    r.tokens = tokenize(tokens.get<std::string>());
  } else if (tokens.is_array()) {
    for (const auto& t : tokens) {
      if (!t.is_string()) throw ValidationError(at_line(line) + "tokens must be strings");
      auto tok = normalize_token(t.get<std::string>());
      if (!tok.empty()) r.tokens.push_back(std::move(tok));
    }
  } else {
    throw ValidationError(at_line(line) + "'tokens' must be a string or an array");
  }
  if (r.tokens.empty()) throw ValidationError(at_line(line) + "utterance has no tokens");

  if (!j["label"].is_string()) throw ValidationError(at_line(line) + "'label' must be a string");
  try {
    r.label = parse_label(j["label"].get<std::string>());
  } catch (const ValidationError& e) {
    throw ValidationError(at_line(line) + e.what());
  }

  if (j.contains("spans")) {
    for (const auto& s : j["spans"]) {
      if (!s.is_array() || s.size() != 2) throw ValidationError(at_line(line) + "each span must be [start, end]");
      r.spans.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>()});
    }
    if (r.spans.size() != r.tokens.size()) {
      throw ValidationError(at_line(line) + std::to_string(r.spans.size()) + " spans for " +
                            std::to_string(r.tokens.size()) + " tokens");
    }
    for (std::size_t w = 0; w < r.spans.size(); ++w) {
      const auto& s = r.spans[w];
      if (s.start_frame < 1 || s.end_frame < s.start_frame ||
          (w > 0 && s.start_frame <= r.spans[w - 1].end_frame)) {
        throw ValidationError(at_line(line) + "span of word " + std::to_string(w) +
                              " is empty, reversed or overlaps the previous word");
      }
    }
  }
  if (j.contains("session")) r.session = j["session"].get<int>();
  if (j.contains("trigger")) r.trigger = j["trigger"].get<std::size_t>();
  return r;
}

}  // namespace

std::size_t parse_label(std::string_view name) {
  for (std::size_t c = 0; c < kClassNames.size(); ++c)
    if (kClassNames[c] == name) return c;
  throw ValidationError("unknown label '" + std::string(name) + "'");
}

dsp::AudioBuffer UtteranceRecord::load_audio() const {
  if (!audio_path.empty()) return dsp::read_wav(audio_path);
  return dsp::AudioBuffer{inline_samples, sample_rate};
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    auto tok = normalize_token(word);
    if (!tok.empty()) out.push_back(std::move(tok));
  }
  return out;
}

std::vector<UtteranceRecord> parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  std::vector<UtteranceRecord> records;
  std::set<std::string> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    Json j;
    try {
      j = Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(at_line(line) + "malformed JSON (" + e.what() + ")");
    }
    UtteranceRecord r;
    try {
      r = parse_record(j, line, base_dir);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(at_line(line) + "bad field type (" + e.what() + ")");
    }
    if (!seen.insert(r.id).second) throw ValidationError(at_line(line) + "duplicate id '" + r.id + "'");
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<UtteranceRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  return parse_manifest(in, path.parent_path());
}

std::string manifest_line(const UtteranceRecord& r, const std::filesystem::path& base_dir) {
  Json j;
  j["id"] = r.id;
  if (!r.audio_path.empty()) {
    j["audio"] = r.audio_path.lexically_relative(base_dir).generic_string();
  } else {
    j["audio"] = r.inline_samples;
    j["sample_rate"] = r.sample_rate;
  }
  j["tokens"] = r.tokens;
  j["label"] = std::string(kClassNames[r.label]);
  if (!r.spans.empty()) {
    Json spans = Json::array();
    for (const auto& s : r.spans) spans.push_back({s.start_frame, s.end_frame});
    j["spans"] = std::move(spans);
  }
  if (r.session) j["session"] = *r.session;
  if (r.trigger) j["trigger"] = *r.trigger;
  return j.dump();
}

// ---------------------------------------------------------------------------

std::vector<double> EmbeddingTable::lookup(const std::string& word) const {
  auto it = vectors.find(word);
  if (it == vectors.end()) return std::vector<double>(dim, 0.0);
  return it->second;
}

nn::Tensor<double> EmbeddingTable::embed(const std::vector<std::string>& tokens) const {
  if (tokens.empty()) throw ValidationError("cannot embed an empty token sequence");
  nn::Tensor<double> out({tokens.size(), dim});
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    auto it = vectors.find(tokens[j]);
    if (it != vectors.end()) std::copy(it->second.begin(), it->second.end(), out.row(j).begin());
  }
  return out;
}

EmbeddingTable parse_embeddings(std::istream& in, std::size_t dim, const std::vector<std::string>* filter) {
  EmbeddingTable table;
  table.dim = dim;
  std::set<std::string> wanted;
  if (filter) wanted.insert(filter->begin(), filter->end());
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    const auto word_end = text.find(' ');
    if (text.empty()) continue;
    const std::string word = text.substr(0, word_end);
    std::vector<double> vec;
    vec.reserve(dim);
    if (word_end != std::string::npos) {
      const char* p = text.data() + word_end;
      const char* end = text.data() + text.size();
      while (p < end) {
        while (p < end && *p == ' ') ++p;
        if (p == end) break;
        double v = 0.0;
        auto [next, ec] = std::from_chars(p, end, v);
        if (ec != std::errc() || !std::isfinite(v)) {
          throw ValidationError("embeddings line " + std::to_string(line) + ": bad number");
        }
        vec.push_back(v);
        p = next;
      }
    }
    if (vec.size() != dim) {
      throw ValidationError("embeddings line " + std::to_string(line) + ": expected " + std::to_string(dim) +
                            " values, got " + std::to_string(vec.size()));
    }
    if (filter && !wanted.contains(word)) continue;
    if (table.vectors.contains(word)) {
      table.warnings.push_back("embeddings line " + std::to_string(line) + ": duplicate word '" + word +
                               "', keeping the last occurrence");
    }
    table.vectors[word] = std::move(vec);
  }
  return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t dim,
                               const std::vector<std::string>* filter) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings: " + path.string());
  return parse_embeddings(in, dim, filter);
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::vector<std::string> words;
  for (const auto& [w, v] : table.vectors) words.push_back(w);
  std::sort(words.begin(), words.end());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write embeddings: " + path.string());
  char buf[64];
  for (const auto& w : words) {
    out << w;
    for (double v : table.vectors.at(w)) {
      std::snprintf(buf, sizeof buf, " %.6f", v);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing embeddings: " + path.string());
}

// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (n_utterances == 0 || min_words == 0 || max_words < min_words || min_frames_per_word == 0 ||
      max_frames_per_word < min_frames_per_word || content_vocab == 0 || sample_rate <= 0 || embed_dim == 0) {
    throw ValidationError("synthetic spec: counts must be positive and ranges ordered");
  }
  if (!(noise_level >= 0.0) || !(cue_strength >= 0.0)) {
    throw ValidationError("synthetic spec: noise_level and cue_strength must be nonnegative");
  }
}

SyntheticSpec synthetic_spec_from_json(const std::string& json_text) {
  SyntheticSpec s;
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synthetic spec: malformed JSON (") + e.what() + ")");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  try {
    get("n_utterances", s.n_utterances);
    get("min_words", s.min_words);
    get("max_words", s.max_words);
    get("min_frames_per_word", s.min_frames_per_word);
    get("max_frames_per_word", s.max_frames_per_word);
    get("content_vocab", s.content_vocab);
    get("cue_strength", s.cue_strength);
    get("noise_level", s.noise_level);
    get("seed", s.seed);
    get("sample_rate", s.sample_rate);
    get("embed_dim", s.embed_dim);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synthetic spec: bad field type (") + e.what() + ")");
  }
  s.validate();
  return s;
}

std::string synthetic_spec_to_json(const SyntheticSpec& s) {
  Json j;
  j["n_utterances"] = s.n_utterances;
  j["min_words"] = s.min_words;
  j["max_words"] = s.max_words;
  j["min_frames_per_word"] = s.min_frames_per_word;
  j["max_frames_per_word"] = s.max_frames_per_word;
  j["content_vocab"] = s.content_vocab;
  j["cue_strength"] = s.cue_strength;
  j["noise_level"] = s.noise_level;
  j["seed"] = s.seed;
  j["sample_rate"] = s.sample_rate;
  j["embed_dim"] = s.embed_dim;
  return j.dump(2);
}

const std::array<std::string, 4>& trigger_words() {
  static const std::array<std::string, 4> words = {"ember", "blaze", "frost", "sleet"};
  return words;
}

std::size_t synthetic_label(std::size_t group, std::size_t cue) { return 2 * group + cue; }

namespace {

std::string content_word(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "w%03zu", k);
  return buf;
}

// Partial frequencies (Hz) of the two acoustic cues. Word bodies use
// 600-2400 Hz, so the cues sit in otherwise empty bands.
constexpr std::array<std::array<double, 2>, kCueKinds> kCueTones = {{{250.0, 375.0}, {3500.0, 4200.0}}};
constexpr double kGain = 0.5;

}  // namespace

std::vector<SyntheticUtterance> generate_utterances(const SyntheticSpec& spec) {
  spec.validate();
  const int sr = spec.sample_rate;
  const dsp::FrameSpec frames;
  const std::size_t W = frames.window_samples(sr);
  const std::size_t hop = frames.hop_samples(sr);
  const double ramp = 0.005 * sr;

  std::vector<std::size_t> labels(spec.n_utterances);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % kNumClasses;
  auto label_rng = Rng::stream(spec.seed, "synth.labels");
  label_rng.shuffle(labels);

  std::vector<SyntheticUtterance> out(spec.n_utterances);
  for (std::size_t u = 0; u < spec.n_utterances; ++u) {
    auto rng = Rng::stream(spec.seed, "synth.utt." + std::to_string(u));
    auto& utt = out[u];
    auto& r = utt.record;
    char id[32];
    std::snprintf(id, sizeof id, "syn%05zu", u);
    r.id = id;
    r.label = labels[u];
    r.session = static_cast<int>(u % 5) + 1;
    utt.group = r.label / 2;
    utt.cue = r.label % 2;

    const std::size_t M = rng.between(spec.min_words, spec.max_words);
    const std::size_t trig = rng.below(M);
    r.trigger = trig;
    std::vector<std::size_t> word_frames(M);
    for (std::size_t j = 0; j < M; ++j) {
      r.tokens.push_back(j == trig ? trigger_words()[2 * utt.group + rng.below(2)]
                                   : content_word(rng.below(spec.content_vocab)));
      word_frames[j] = rng.between(spec.min_frames_per_word, spec.max_frames_per_word);
    }

    std::size_t total_frames = 0;
    for (std::size_t f : word_frames) total_frames += f;
    utt.audio.sample_rate = sr;
    utt.audio.samples.assign(total_frames * hop + (W - hop), 0.0);

    std::size_t frame_offset = 0;
    for (std::size_t j = 0; j < M; ++j) {
      r.spans.push_back({frame_offset + 1, frame_offset + word_frames[j]});
      const std::size_t start = frame_offset * hop;
      const std::size_t len = word_frames[j] * hop + (j + 1 == M ? W - hop : 0);
      frame_offset += word_frames[j];

      std::vector<std::array<double, 3>> partials;  // freq, amp, phase
      for (int p = 0; p < 3; ++p) {
        partials.push_back({rng.uniform(600.0, 2400.0), rng.uniform(0.15, 0.35), rng.uniform(0.0, 2 * std::numbers::pi)});
      }
      if (j == trig && spec.cue_strength > 0.0) {
        for (double f : kCueTones[utt.cue]) {
          partials.push_back({f, 0.3 * spec.cue_strength, rng.uniform(0.0, 2 * std::numbers::pi)});
        }
      }
      for (std::size_t t = 0; t < len; ++t) {
        const double env = std::min({1.0, (t + 1) / ramp, (len - t) / ramp});
        double s = 0.0;
        for (const auto& [f, a, ph] : partials) s += a * std::sin(2 * std::numbers::pi * f * t / sr + ph);
        utt.audio.samples[start + t] = kGain * env * s;
      }
    }
    for (auto& s : utt.audio.samples) {
      s += spec.noise_level * rng.normal();
      // Quantize to the PCM16 grid so the in-memory audio equals the WAV.
      const long q = std::clamp(std::lround(std::clamp(s, -1.0, 1.0) * 32768.0), -32768L, 32767L);
      s = static_cast<double>(q) / 32768.0;
    }
  }
  return out;
}

EmbeddingTable synthetic_embeddings(const SyntheticSpec& spec) {
  spec.validate();
  auto rng = Rng::stream(spec.seed, "synth.embed");
  EmbeddingTable table;
  table.dim = spec.embed_dim;
  auto quantize = [](double v) { return std::round(v * 1e6) / 1e6; };
  for (std::size_t k = 0; k < spec.content_vocab; ++k) {
    std::vector<double> v(spec.embed_dim);
    for (auto& x : v) x = quantize(0.4 * rng.normal());
    table.vectors[content_word(k)] = std::move(v);
  }
  // Synonymous triggers share a group centroid.
  for (std::size_t g = 0; g < kTriggerGroups; ++g) {
    std::vector<double> centroid(spec.embed_dim);
    for (auto& x : centroid) x = 0.4 * rng.normal();
    for (std::size_t s = 0; s < 2; ++s) {
      std::vector<double> v(spec.embed_dim);
      for (std::size_t d = 0; d < v.size(); ++d) v[d] = quantize(centroid[d] + 0.1 * rng.normal());
      table.vectors[trigger_words()[2 * g + s]] = std::move(v);
    }
  }
  return table;
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  const auto utterances = generate_utterances(spec);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "wav", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "wav").string() + ": " + ec.message());

  SyntheticCorpus corpus{out_dir / "manifest.jsonl", out_dir / "spans.tsv", out_dir / "embeddings.txt",
                         utterances.size()};
  std::ofstream manifest(corpus.manifest, std::ios::trunc);
  std::ofstream spans(corpus.spans, std::ios::trunc);
  if (!manifest || !spans) throw IoError("cannot write corpus files under " + out_dir.string());
  spans << "id\tword\ttoken\tstart_frame\tend_frame\ttrigger\n";
  for (const auto& utt : utterances) {
    auto record = utt.record;
    record.audio_path = out_dir / "wav" / (record.id + ".wav");
    dsp::write_wav(record.audio_path, utt.audio);
    manifest << manifest_line(record, out_dir) << '\n';
    for (std::size_t j = 0; j < record.tokens.size(); ++j) {
      spans << record.id << '\t' << j << '\t' << record.tokens[j] << '\t' << record.spans[j].start_frame << '\t'
            << record.spans[j].end_frame << '\t' << (record.trigger == j ? 1 : 0) << '\n';
    }
  }
  write_embeddings(corpus.embeddings, synthetic_embeddings(spec));
  std::ofstream(out_dir / "spec.json", std::ios::trunc) << synthetic_spec_to_json(spec) << '\n';
  if (!manifest || !spans) throw IoError("failed writing corpus files under " + out_dir.string());
  return corpus;
}

// ---------------------------------------------------------------------------

std::vector<Batch> make_batches(const std::vector<std::size_t>& frame_counts,
                                const std::vector<std::size_t>& word_counts, std::size_t batch_size,
                                std::uint64_t seed) {
  if (frame_counts.size() != word_counts.size()) throw ValidationError("make_batches: length mismatch");
  if (batch_size == 0) throw ValidationError("make_batches: batch size must be positive");
  std::vector<std::size_t> order(frame_counts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    const std::size_t end = std::min(order.size(), start + batch_size);
    b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    for (std::size_t i : b.indices) {
      b.frames.push_back(frame_counts[i]);
      b.words.push_back(word_counts[i]);
      b.padded_frames = std::max(b.padded_frames, frame_counts[i]);
      b.padded_words = std::max(b.padded_words, word_counts[i]);
    }
    for (std::size_t k = 0; k < b.indices.size(); ++k) {
      std::vector<std::uint8_t> fm(b.padded_frames, 0), wm(b.padded_words, 0);
      std::fill_n(fm.begin(), b.frames[k], 1);
      std::fill_n(wm.begin(), b.words[k], 1);
      b.frame_mask.push_back(std::move(fm));
      b.word_mask.push_back(std::move(wm));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace crossalign::data
