#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "crossalign/data.hpp"
#include "oracles.hpp"

using namespace crossalign;
using namespace crossalign::data;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<UtteranceRecord> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_manifest(in, "/corpus");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

// Mean power of the tones nearest `freqs` over a segment, by direct DFT.
double tone_power(std::span<const double> x, int sr, std::initializer_list<double> freqs) {
  double p = 0;
  for (double f : freqs) {
    std::complex<double> acc = 0;
    for (std::size_t n = 0; n < x.size(); ++n) acc += x[n] * std::polar(1.0, -2 * std::numbers::pi * f * n / sr);
    p += std::norm(acc);
  }
  return p / x.size();
}

}  // namespace

TEST_CASE("tokenization") {
  CHECK(tokenize("Hello, World!  it's") == std::vector<std::string>{"hello", "world", "its"});
  CHECK(tokenize(" ... ").empty());
}

TEST_CASE("manifest parsing") {
  CHECK(parse("").empty());
  CHECK(parse("\n  \n").empty());

  const auto recs = parse(
      R"({"id":"a","audio":"wav/a.wav","tokens":["Hi","there"],"label":"happy","spans":[[1,3],[4,5]],"session":2})"
      "\n"
      R"({"id":"b","audio":[0.0,0.5,-0.5],"sample_rate":8000,"tokens":"so sad.","label":"sad"})"
      "\n\n"
      R"({"id":"c","audio":"/abs/c.wav","tokens":["x"],"label":"angry"})"
      "\n");
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].id == "a");
  CHECK(recs[0].audio_path == fs::path("/corpus/wav/a.wav"));
  CHECK(recs[0].tokens == std::vector<std::string>{"hi", "there"});
  CHECK(recs[0].label == 1);
  CHECK(recs[0].spans == std::vector<WordSpan>{{1, 3}, {4, 5}});
  CHECK(recs[0].session == 2);
  CHECK(recs[1].inline_samples == std::vector<double>{0.0, 0.5, -0.5});
  CHECK(recs[1].sample_rate == 8000);
  CHECK(recs[1].load_audio().samples.size() == 3);
  CHECK(recs[1].tokens == std::vector<std::string>{"so", "sad"});
  CHECK(recs[2].audio_path == fs::path("/abs/c.wav"));
  CHECK(recs[2].label == 0);
  CHECK_FALSE(recs[2].session.has_value());
}

TEST_CASE("manifest errors name the line and the problem") {
  const std::string good = R"({"id":"a","audio":"a.wav","tokens":["x"],"label":"sad"})";
  auto err = error_of(good + "\n" + R"({"id":"b","audio":"b.wav","tokens":["x"]})");
  CHECK(err.find("line 2") != std::string::npos);
  CHECK(err.find("label") != std::string::npos);

  err = error_of(R"({"id":"a","audio":"a.wav","tokens":["x"],"label":"excited"})");
  CHECK(err.find("excited") != std::string::npos);

  err = error_of(good + "\n" + good);
  CHECK(err.find("line 2") != std::string::npos);
  CHECK(err.find("duplicate") != std::string::npos);

  err = error_of("{not json");
  CHECK(err.find("line 1") != std::string::npos);

  err = error_of(R"({"id":"a","audio":"a.wav","tokens":["x","y"],"label":"sad","spans":[[3,4],[2,5]]})");
  CHECK(err.find("word 1") != std::string::npos);
  CHECK_FALSE(error_of(R"({"id":"a","audio":"a.wav","tokens":["x"],"label":"sad","spans":[[1,2],[3,4]]})").empty());
  CHECK_FALSE(error_of(R"({"id":"a","audio":"a.wav","tokens":["!!"],"label":"sad"})").empty());
  CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.jsonl"), IoError);
}

TEST_CASE("manifest lines round trip") {
  UtteranceRecord r;
  r.id = "u1";
  r.audio_path = "/corpus/wav/u1.wav";
  r.tokens = {"a", "b"};
  r.label = 3;
  r.spans = {{1, 2}, {3, 3}};
  r.session = 4;
  r.trigger = 1;
  const auto back = parse(manifest_line(r, "/corpus"));
  REQUIRE(back.size() == 1);
  CHECK(back[0].audio_path == r.audio_path);
  CHECK(back[0].tokens == r.tokens);
  CHECK(back[0].label == 3);
  CHECK(back[0].spans == r.spans);
  CHECK(back[0].session == 4);
  CHECK(back[0].trigger == 1);
}

TEST_CASE("embedding tables") {
  std::istringstream three("cat 1 2 3\ndog 4 5 6\nowl 0.5 -1e-3 7\n");
  auto t = parse_embeddings(three, 3, nullptr);
  CHECK(t.vectors.size() == 3);
  CHECK(t.lookup("owl") == std::vector<double>{0.5, -1e-3, 7});
  CHECK(t.lookup("emu") == std::vector<double>{0, 0, 0});
  const auto m = t.embed({"dog", "emu"});
  CHECK(m(0, 1) == 5.0);
  CHECK(m(1, 2) == 0.0);

  std::istringstream dup("cat 1 2 3\ncat 9 9 9\n");
  t = parse_embeddings(dup, 3, nullptr);
  CHECK(t.lookup("cat") == std::vector<double>{9, 9, 9});
  REQUIRE(t.warnings.size() == 1);
  CHECK(t.warnings[0].find("cat") != std::string::npos);

  std::istringstream filtered("cat 1 2 3\ndog 4 5 6\n");
  const std::vector<std::string> keep = {"dog"};
  t = parse_embeddings(filtered, 3, &keep);
  CHECK(t.vectors.size() == 1);
  CHECK(t.contains("dog"));

  for (const char* bad : {"cat 1 2 3\ndog 4 5\n", "cat 1 2 3\ndog 4 5 x\n", "cat 1 2 3\ndog 4 5 6 7\n"}) {
    std::istringstream in(bad);
    try {
      parse_embeddings(in, 3, nullptr);
      FAIL("expected an error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
}

TEST_CASE("synthetic spec validation and json") {
  SyntheticSpec s;
  s.n_utterances = 12;
  s.cue_strength = 0.25;
  const auto back = synthetic_spec_from_json(synthetic_spec_to_json(s));
  CHECK(back.n_utterances == 12);
  CHECK(back.cue_strength == 0.25);
  CHECK(synthetic_spec_from_json("{}").n_utterances == SyntheticSpec{}.n_utterances);
  s.noise_level = -1;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = {};
  s.min_words = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  CHECK_THROWS_AS(synthetic_spec_from_json(R"({"n_utterances": "many"})"), ValidationError);
}

TEST_CASE("synthetic utterances follow the generator contract") {
  SyntheticSpec spec;
  spec.n_utterances = 1000;
  spec.seed = 7;
  const auto utts = generate_utterances(spec);
  std::array<std::size_t, 4> counts{};
  std::set<std::string> triggers(trigger_words().begin(), trigger_words().end());
  for (const auto& u : utts) {
    const auto& r = u.record;
    ++counts[r.label];
    CHECK(r.label == synthetic_label(u.group, u.cue));
    REQUIRE(r.trigger.has_value());
    std::size_t n_trig = 0;
    for (std::size_t j = 0; j < r.tokens.size(); ++j) n_trig += triggers.count(r.tokens[j]);
    CHECK(n_trig == 1);
    CHECK(triggers.count(r.tokens[*r.trigger]) == 1);
    const auto& word = r.tokens[*r.trigger];
    CHECK((word == trigger_words()[2 * u.group] || word == trigger_words()[2 * u.group + 1]));
    CHECK(r.tokens.size() >= spec.min_words);
    CHECK(r.tokens.size() <= spec.max_words);
    CHECK(r.session >= 1);
    CHECK(r.session <= 5);
    // Frame count of the audio equals the last span end.
    const auto f = dsp::frame_count(u.audio.samples.size(), 320, 160);
    CHECK(f == r.spans.back().end_frame);
    validate_spans(r.spans, f);
  }
  for (std::size_t c : counts) CHECK(std::abs(static_cast<double>(c) / utts.size() - 0.25) <= 0.02);
}

TEST_CASE("unimodal ceilings from the label table") {
  // Enumerate the joint (trigger group, cue) table. Text reveals only the
  // group, audio only the cue; the best unimodal decision picks one label of
  // the two consistent with the observation.
  SyntheticSpec spec;
  spec.n_utterances = 2000;
  const auto utts = generate_utterances(spec);
  std::map<std::size_t, std::array<std::size_t, 4>> by_group, by_cue, by_both, by_nothing;
  for (const auto& u : utts) {
    ++by_group[u.group][u.record.label];
    ++by_cue[u.cue][u.record.label];
    ++by_both[2 * u.group + u.cue][u.record.label];
    ++by_nothing[0][u.record.label];
  }
  auto ceiling = [&](const auto& table) {
    double hit = 0;
    for (const auto& [key, row] : table) hit += *std::max_element(row.begin(), row.end());
    return hit / utts.size();
  };
  CHECK(ceiling(by_group) <= 0.5 + 0.02);
  CHECK(ceiling(by_cue) <= 0.5 + 0.02);
  CHECK(ceiling(by_both) == 1.0);
  // Without an audible cue the audio observation is constant, so the
  // multimodal ceiling equals the text ceiling.
  CHECK(ceiling(by_group) == doctest::Approx(0.5).epsilon(0.04));
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t c = 0; c < 2; ++c) CHECK(synthetic_label(g, c) == 2 * g + c);
}

TEST_CASE("cue strength controls whether audio carries the label") {
  for (double strength : {1.0, 0.0}) {
    SyntheticSpec spec;
    spec.n_utterances = 200;
    spec.cue_strength = strength;
    std::size_t decoded = 0;
    for (const auto& u : generate_utterances(spec)) {
      const auto span = u.record.spans[*u.record.trigger];
      const std::size_t a = (span.start_frame - 1) * 160, b = (span.end_frame - 1) * 160 + 160;
      std::span<const double> seg(u.audio.samples.data() + a, b - a);
      const double low = tone_power(seg, 16000, {250, 375}), high = tone_power(seg, 16000, {3500, 4200});
      decoded += (high > low) == (u.cue == 1);
    }
    const double acc = decoded / 200.0;
    if (strength > 0) CHECK(acc > 0.95);
    else CHECK(std::abs(acc - 0.5) < 0.12);
  }
}

TEST_CASE("synthetic corpus on disk is deterministic") {
  const auto root = fs::temp_directory_path() / "crossalign_test_synth";
  fs::remove_all(root);
  SyntheticSpec spec;
  spec.n_utterances = 6;
  spec.embed_dim = 8;
  spec.seed = 3;
  const auto a = generate_synthetic(spec, root / "a");
  generate_synthetic(spec, root / "b");
  CHECK(a.utterances == 6);
  for (const char* f : {"manifest.jsonl", "spans.tsv", "embeddings.txt", "spec.json"}) {
    CHECK(slurp(root / "a" / f) == slurp(root / "b" / f));
  }
  std::size_t wavs = 0;
  for (const auto& e : fs::directory_iterator(root / "a" / "wav")) {
    ++wavs;
    CHECK(slurp(e.path()) == slurp(root / "b" / "wav" / e.path().filename()));
  }
  CHECK(wavs == 6);

  // Loading back reproduces the in-memory audio and spans.
  const auto recs = load_manifest(a.manifest);
  const auto mem = generate_utterances(spec);
  REQUIRE(recs.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(recs[i].load_audio().samples == mem[i].audio.samples);
    CHECK(recs[i].spans == mem[i].record.spans);
    const auto feats = dsp::extract_features(recs[i].load_audio());
    CHECK(feats.frames() == recs[i].spans.back().end_frame);
  }
  const auto table = load_embeddings(a.embeddings, 8);
  CHECK(table.vectors.size() == spec.content_vocab + 4);
  CHECK(table.lookup("ember") == synthetic_embeddings(spec).lookup("ember"));

  std::ifstream spans(a.spans);
  std::string header;
  std::getline(spans, header);
  CHECK(header == "id\tword\ttoken\tstart_frame\tend_frame\ttrigger");

  SyntheticSpec other = spec;
  other.seed = 4;
  generate_synthetic(other, root / "c");
  CHECK(slurp(root / "a" / "manifest.jsonl") != slurp(root / "c" / "manifest.jsonl"));
  fs::remove_all(root);
}

TEST_CASE("batching") {
  const std::vector<std::size_t> frames = {5, 9, 3, 7, 2}, words = {2, 3, 1, 2, 1};
  auto one = make_batches(frames, words, 10, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].indices.size() == 5);
  CHECK(one[0].padded_frames == 9);
  CHECK(one[0].padded_words == 3);

  const auto a = make_batches(frames, words, 2, 42);
  const auto b = make_batches(frames, words, 2, 42);
  REQUIRE(a.size() == 3);
  std::vector<std::size_t> seen;
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].indices == b[k].indices);
    seen.insert(seen.end(), a[k].indices.begin(), a[k].indices.end());
    for (std::size_t e = 0; e < a[k].indices.size(); ++e) {
      const auto& fm = a[k].frame_mask[e];
      const auto invalid = std::count(fm.begin(), fm.end(), 0);
      CHECK(static_cast<std::size_t>(invalid) == a[k].padded_frames - frames[a[k].indices[e]]);
      const auto& wm = a[k].word_mask[e];
      CHECK(static_cast<std::size_t>(std::count(wm.begin(), wm.end(), 0)) ==
            a[k].padded_words - words[a[k].indices[e]]);
      CHECK(fm.front() == 1);
    }
  }
  std::sort(seen.begin(), seen.end());
  CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK_THROWS_AS(make_batches(frames, words, 0, 1), ValidationError);
}
