#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "crossalign/tensor.hpp"

namespace crossalign::dsp {

inline constexpr std::size_t kFeatureDim = 34;
inline constexpr std::size_t kNumMfcc = 13;
inline constexpr std::size_t kNumMelFilters = 26;
inline constexpr std::size_t kNumChroma = 12;
inline constexpr double kEps = 1e-10;
inline constexpr double kRolloffFraction = 0.90;

/// Column names of the feature matrix, in order.
const std::array<std::string_view, kFeatureDim>& feature_names();

enum FeatureColumn : std::size_t {
  kZcr = 0,
  kEnergy = 1,
  kEnergyEntropy = 2,
  kSpectralCentroid = 3,
  kSpectralSpread = 4,
  kSpectralEntropy = 5,
  kSpectralFlux = 6,
  kSpectralRolloff = 7,
  kMfccBegin = 8,
  kChromaBegin = 21,
  kChromaStd = 33,
};

struct AudioBuffer {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  void validate() const;
};

struct FrameSpec {
  double window_ms = 20.0;
  double hop_ms = 10.0;

  void validate() const;
  std::size_t window_samples(int sample_rate) const;
  std::size_t hop_samples(int sample_rate) const;
};

/// N x 34 per-frame features.
struct FeatureSequence {
  nn::Tensor<double> values;
  FrameSpec frame_spec;
  int sample_rate = 16000;

  std::size_t frames() const { return values.rows(); }
};

/// floor((len - W) / hop) + 1, or 0 if the signal is shorter than a window.
std::size_t frame_count(std::size_t length, std::size_t window, std::size_t hop);

/// Frames of W samples starting at multiples of hop; the tail remainder is
/// dropped. Throws ValidationError when the audio is shorter than one window.
std::vector<std::vector<double>> frame_signal(const AudioBuffer& audio, const FrameSpec& spec);

/// |DFT_k(frame)| for k = 0 .. floor(W/2) - 1.
std::vector<double> magnitude_spectrum(std::span<const double> frame);

/// 13 MFCCs from a power spectrum whose bin k lies at k * sr / (2 * len).
/// 26 triangular mel filters spanning 0 Hz to Nyquist, natural log with an
/// additive floor, orthonormal DCT-II.
std::vector<double> mfcc(std::span<const double> power_spectrum, int sample_rate);

/// Fraction of spectral energy per pitch class (A = 0), bins below 27.5 Hz
/// excluded.
std::array<double, kNumChroma> chroma_vector(std::span<const double> power_spectrum, int sample_rate);

/// Hamming window of length n (symmetric).
std::vector<double> hamming(std::size_t n);

/// Features for one frame given its raw samples and the previous frame's
/// magnitude spectrum (empty for the first frame, giving zero flux).
std::array<double, kFeatureDim> frame_features(std::span<const double> frame, std::span<const double> magnitude,
                                               std::span<const double> previous_magnitude, int sample_rate);

/// Per-frame feature extraction, parallel over frames.
FeatureSequence extract_features(const AudioBuffer& audio, const FrameSpec& spec = {});

/// Single-threaded reference for extract_features; results are bit-identical.
FeatureSequence extract_features_serial(const AudioBuffer& audio, const FrameSpec& spec = {});

/// Zero mean, unit variance per column over the utterance, (x - mean) / (std + eps).
nn::Tensor<double> standardize(const nn::Tensor<double>& values);

/// RIFF/WAVE, PCM 16-bit little-endian, mono.
AudioBuffer read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio);

}  // namespace crossalign::dsp
