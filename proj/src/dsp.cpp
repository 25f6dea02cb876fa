#include "crossalign/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>

namespace crossalign::dsp {
namespace {

// FFTW plans are created once per frame length. Planning is not thread-safe,
// execution through fftw_execute_dft_r2c on caller-owned arrays is.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(std::size_t n) {
    std::lock_guard lock(mu_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    std::vector<double> in(n);
    std::vector<fftw_complex> out(n / 2 + 1);
    // FFTW_ESTIMATE keeps the algorithm choice, and therefore the rounding,
    // independent of run-time measurements.
    fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), out.data(),
                                          FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_PRESERVE_INPUT);
    plans_.emplace(n, plan);
    return plan;
  }

  ~PlanCache() {
    for (auto& [n, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  std::mutex mu_;
  std::map<std::size_t, fftw_plan> plans_;
};

double sub_block_entropy(std::span<const double> values, std::size_t blocks, bool square) {
  double total = 0.0;
  for (double v : values) total += square ? v * v : v;
  const std::size_t len = values.size() / blocks;
  if (len == 0) return 0.0;
  double entropy = 0.0;
  for (std::size_t b = 0; b < blocks; ++b) {
    double e = 0.0;
    for (std::size_t i = b * len; i < (b + 1) * len; ++i) e += square ? values[i] * values[i] : values[i];
    const double s = e / (total + kEps);
    entropy -= s * std::log2(s + kEps);
  }
  return entropy;
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

template <typename Fn>
void for_each_frame(std::size_t n, bool parallel, Fn&& fn) {
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
}

FeatureSequence extract(const AudioBuffer& audio, const FrameSpec& spec, bool parallel) {
  audio.validate();
  const auto frames = frame_signal(audio, spec);
  const std::size_t n = frames.size();
  std::vector<std::vector<double>> mags(n);
  const auto window = hamming(frames.front().size());
  for_each_frame(n, parallel, [&](std::size_t i) {
    std::vector<double> w(frames[i].size());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = frames[i][k] * window[k];
    mags[i] = magnitude_spectrum(w);
  });
  FeatureSequence out{nn::Tensor<double>({n, kFeatureDim}), spec, audio.sample_rate};
  for_each_frame(n, parallel, [&](std::size_t i) {
    const std::span<const double> prev = i ? std::span<const double>(mags[i - 1]) : std::span<const double>();
    const auto f = frame_features(frames[i], mags[i], prev, audio.sample_rate);
    std::copy(f.begin(), f.end(), out.values.row(i).begin());
  });
  return out;
}

}  // namespace

const std::array<std::string_view, kFeatureDim>& feature_names() {
  static const std::array<std::string_view, kFeatureDim> names = {
      "zcr",       "energy",    "energy_entropy", "spectral_centroid", "spectral_spread", "spectral_entropy",
      "spectral_flux", "spectral_rolloff", "mfcc_1", "mfcc_2",  "mfcc_3",  "mfcc_4",  "mfcc_5",  "mfcc_6",
      "mfcc_7",    "mfcc_8",    "mfcc_9",    "mfcc_10",   "mfcc_11",   "mfcc_12",   "mfcc_13",   "chroma_1",
      "chroma_2",  "chroma_3",  "chroma_4",  "chroma_5",  "chroma_6",  "chroma_7",  "chroma_8",  "chroma_9",
      "chroma_10", "chroma_11", "chroma_12", "chroma_std"};
  return names;
}

void AudioBuffer::validate() const {
  if (sample_rate <= 0) throw ValidationError("sample rate must be positive");
  for (double s : samples)
    if (!std::isfinite(s)) throw ValidationError("audio contains non-finite samples");
}

void FrameSpec::validate() const {
  if (!(hop_ms > 0.0) || !(hop_ms <= window_ms)) {
    throw ValidationError("frame spec requires 0 < hop <= window");
  }
}

std::size_t FrameSpec::window_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::llround(window_ms * sample_rate / 1000.0));
}

std::size_t FrameSpec::hop_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::llround(hop_ms * sample_rate / 1000.0));
}

std::size_t frame_count(std::size_t length, std::size_t window, std::size_t hop) {
  if (window == 0 || hop == 0 || length < window) return 0;
  return (length - window) / hop + 1;
}

std::vector<std::vector<double>> frame_signal(const AudioBuffer& audio, const FrameSpec& spec) {
  spec.validate();
  if (audio.sample_rate <= 0) throw ValidationError("sample rate must be positive");
  const std::size_t W = spec.window_samples(audio.sample_rate);
  const std::size_t hop = spec.hop_samples(audio.sample_rate);
  if (W < 2 || hop == 0) throw ValidationError("frame spec too short for the sample rate");
  const std::size_t n = frame_count(audio.samples.size(), W, hop);
  if (n == 0) {
    throw ValidationError("audio of " + std::to_string(audio.samples.size()) +
                          " samples is shorter than one window of " + std::to_string(W));
  }
  std::vector<std::vector<double>> frames(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto begin = audio.samples.begin() + static_cast<std::ptrdiff_t>(i * hop);
    frames[i].assign(begin, begin + static_cast<std::ptrdiff_t>(W));
  }
  return frames;
}

std::vector<double> magnitude_spectrum(std::span<const double> frame) {
  if (frame.size() < 2) throw ValidationError("magnitude_spectrum needs at least 2 samples");
  const std::size_t n = frame.size();
  fftw_plan plan = PlanCache::instance().get(n);
  std::vector<double> in(frame.begin(), frame.end());
  std::vector<fftw_complex> out(n / 2 + 1);
  fftw_execute_dft_r2c(plan, in.data(), out.data());
  std::vector<double> mag(n / 2);
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
  return mag;
}

std::vector<double> hamming(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return w;
}

std::vector<double> mfcc(std::span<const double> power_spectrum, int sample_rate) {
  const std::size_t bins = power_spectrum.size();
  for (double p : power_spectrum)
    if (!(p >= 0.0)) throw ValidationError("mfcc: power spectrum must be nonnegative");
  const double nyquist = sample_rate / 2.0;
  const double bin_hz = nyquist / static_cast<double>(bins);
  const double mel_max = hz_to_mel(nyquist);

  std::array<double, kNumMelFilters + 2> edges{};
  for (std::size_t m = 0; m < edges.size(); ++m) {
    edges[m] = mel_to_hz(mel_max * static_cast<double>(m) / static_cast<double>(kNumMelFilters + 1));
  }

  std::array<double, kNumMelFilters> log_energy{};
  for (std::size_t m = 0; m < kNumMelFilters; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    double e = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double w = 0.0;
      if (f > lo && f <= mid) {
        w = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        w = (hi - f) / (hi - mid);
      }
      e += w * power_spectrum[k];
    }
    log_energy[m] = std::log(e + kEps);
  }

  std::vector<double> coeffs(kNumMfcc);
  const double M = static_cast<double>(kNumMelFilters);
  for (std::size_t n = 0; n < kNumMfcc; ++n) {
    double s = 0.0;
    for (std::size_t m = 0; m < kNumMelFilters; ++m) {
      s += log_energy[m] * std::cos(std::numbers::pi * static_cast<double>(n) * (static_cast<double>(m) + 0.5) / M);
    }
    coeffs[n] = s * (n == 0 ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M));
  }
  return coeffs;
}

std::array<double, kNumChroma> chroma_vector(std::span<const double> power_spectrum, int sample_rate) {
  const std::size_t bins = power_spectrum.size();
  const double bin_hz = sample_rate / 2.0 / static_cast<double>(bins);
  std::array<double, kNumChroma> chroma{};
  double total = 0.0;
  for (double p : power_spectrum) total += p;
  for (std::size_t k = 1; k < bins; ++k) {
    const double f = static_cast<double>(k) * bin_hz;
    if (f < 27.5) continue;
    const long pc = std::lround(12.0 * std::log2(f / 27.5));
    chroma[static_cast<std::size_t>(((pc % 12) + 12) % 12)] += power_spectrum[k];
  }
  for (double& c : chroma) c /= (total + kEps);
  return chroma;
}

std::array<double, kFeatureDim> frame_features(std::span<const double> frame, std::span<const double> magnitude,
                                               std::span<const double> previous_magnitude, int sample_rate) {
  std::array<double, kFeatureDim> f{};
  const std::size_t W = frame.size();
  const std::size_t L = magnitude.size();
  const double nyquist = sample_rate / 2.0;

  // Zero crossings as a frequency in cycles per sample (0.5 at Nyquist).
  auto sgn = [](double v) { return (v > 0.0) - (v < 0.0); };
  double changes = 0.0;
  for (std::size_t i = 1; i < W; ++i) changes += std::abs(sgn(frame[i]) - sgn(frame[i - 1]));
  f[kZcr] = changes / (4.0 * static_cast<double>(W - 1));

  double energy = 0.0;
  for (double v : frame) energy += v * v;
  f[kEnergy] = energy / static_cast<double>(W);
  f[kEnergyEntropy] = sub_block_entropy(frame, 10, true);

  const double peak = *std::max_element(magnitude.begin(), magnitude.end());
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < L; ++k) {
    const double xt = peak > 0.0 ? magnitude[k] / peak : 0.0;
    num += static_cast<double>(k) * (nyquist / L) * xt;
    den += xt;
  }
  den += kEps;
  const double centroid = num / den;
  double spread = 0.0;
  for (std::size_t k = 0; k < L; ++k) {
    const double xt = peak > 0.0 ? magnitude[k] / peak : 0.0;
    const double d = static_cast<double>(k) * (nyquist / L) - centroid;
    spread += d * d * xt;
  }
  f[kSpectralCentroid] = centroid / nyquist;
  f[kSpectralSpread] = std::sqrt(spread / den) / nyquist;
  f[kSpectralEntropy] = sub_block_entropy(magnitude, 10, true);

  if (!previous_magnitude.empty()) {
    double s = kEps, sp = kEps;
    for (double v : magnitude) s += v;
    for (double v : previous_magnitude) sp += v;
    double flux = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
      const double d = magnitude[k] / s - previous_magnitude[k] / sp;
      flux += d * d;
    }
    f[kSpectralFlux] = flux;
  }

  std::vector<double> power(L);
  double spec_energy = 0.0;
  for (std::size_t k = 0; k < L; ++k) {
    power[k] = magnitude[k] * magnitude[k] / static_cast<double>(W);
    spec_energy += magnitude[k] * magnitude[k];
  }
  double cumulative = 0.0;
  for (std::size_t k = 0; k < L; ++k) {
    cumulative += magnitude[k] * magnitude[k];
    if (cumulative + kEps > kRolloffFraction * spec_energy) {
      f[kSpectralRolloff] = static_cast<double>(k) / static_cast<double>(L);
      break;
    }
  }

  const auto cep = mfcc(power, sample_rate);
  std::copy(cep.begin(), cep.end(), f.begin() + kMfccBegin);

  const auto chroma = chroma_vector(power, sample_rate);
  std::copy(chroma.begin(), chroma.end(), f.begin() + kChromaBegin);
  double mean = 0.0;
  for (double c : chroma) mean += c;
  mean /= kNumChroma;
  double var = 0.0;
  for (double c : chroma) var += (c - mean) * (c - mean);
  f[kChromaStd] = std::sqrt(var / kNumChroma);
  return f;
}

FeatureSequence extract_features(const AudioBuffer& audio, const FrameSpec& spec) {
  return extract(audio, spec, true);
}

FeatureSequence extract_features_serial(const AudioBuffer& audio, const FrameSpec& spec) {
  return extract(audio, spec, false);
}

nn::Tensor<double> standardize(const nn::Tensor<double>& values) {
  nn::Tensor<double> out = values;
  const std::size_t n = values.rows(), d = values.cols();
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += values(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) var += (values(r, c) - mean) * (values(r, c) - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t r = 0; r < n; ++r) out(r, c) = (values(r, c) - mean) / (sd + kEps);
  }
  return out;
}

}  // namespace crossalign::dsp
