// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

#include "trnk/frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>

#include "trnk/binary_io.hpp"

namespace trnk {

namespace {

// FFTW's planner is not re-entrant; execution is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class PowerSpectrum {
 public:
  explicit PowerSpectrum(std::size_t n) : n_(n), in_(n, 0.0), out_(n / 2 + 1) {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.data(),
                                 reinterpret_cast<fftw_complex*>(out_.data()), FFTW_ESTIMATE);
  }
  ~PowerSpectrum() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }
  PowerSpectrum(const PowerSpectrum&) = delete;
  PowerSpectrum& operator=(const PowerSpectrum&) = delete;

  // Zero-pads `frame` to the transform size; returns |X_k|^2 for k = 0..n/2.
  const std::vector<double>& operator()(std::span<const double> frame) {
    std::fill(in_.begin(), in_.end(), 0.0);
    std::copy(frame.begin(), frame.end(), in_.begin());
    fftw_execute(plan_);
    power_.resize(out_.size());
    for (std::size_t k = 0; k < out_.size(); ++k) power_[k] = std::norm(out_[k]);
    return power_;
  }

 private:
  std::size_t n_;
  std::vector<double> in_;
  std::vector<std::complex<double>> out_;
  std::vector<double> power_;
  fftw_plan plan_;
};

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

struct Framing {
  std::size_t win = 0;
  std::size_t shift = 0;
  std::size_t frames = 0;
};

Framing framing_for(const Waveform& w, const FbankOptions& opts) {
  if (w.sample_rate_hz < 8000) throw std::invalid_argument("sample rate must be at least 8 kHz");
  Framing f;
  f.win = static_cast<std::size_t>(std::lround(opts.win_ms * w.sample_rate_hz / 1000.0));
  f.shift = static_cast<std::size_t>(std::lround(opts.shift_ms * w.sample_rate_hz / 1000.0));
  if (f.win == 0 || f.shift == 0) throw std::invalid_argument("window and shift must be positive");
  if (w.samples.size() < f.win) throw std::invalid_argument("waveform shorter than one analysis window");
  f.frames = 1 + (w.samples.size() - f.win) / f.shift;
  return f;
}

// Triangular filters over FFT bins: weights[m] holds (bin, weight) pairs.
std::vector<std::vector<std::pair<std::size_t, double>>> mel_bank(const FbankOptions& opts, int rate,
                                                                  std::size_t fft_size) {
  const double nyquist = rate / 2.0;
  const double high = opts.high_hz > 0.0 ? std::min(opts.high_hz, nyquist) : nyquist;
  const double mel_lo = hz_to_mel(opts.low_hz), mel_hi = hz_to_mel(high);
  const std::size_t M = opts.n_mels;
  std::vector<double> edges(M + 2);
  for (std::size_t i = 0; i < M + 2; ++i) {
    edges[i] = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(M + 1);
  }
  std::vector<std::vector<std::pair<std::size_t, double>>> bank(M);
  for (std::size_t k = 0; k <= fft_size / 2; ++k) {
    const double mel = hz_to_mel(static_cast<double>(k) * rate / static_cast<double>(fft_size));
    for (std::size_t m = 0; m < M; ++m) {
      const double l = edges[m], c = edges[m + 1], r = edges[m + 2];
      double wgt = 0.0;
      if (mel > l && mel <= c) wgt = (mel - l) / (c - l);
      else if (mel > c && mel < r) wgt = (r - mel) / (r - c);
      if (wgt > 0.0) bank[m].emplace_back(k, wgt);
    }
  }
  return bank;
}

std::vector<double> hamming(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return w;
}

// Log mel energies; shared by fbank and MFCC.
FeatureMatrix log_mel(const Waveform& w, const FbankOptions& opts, FeatureKind kind) {
  const Framing fr = framing_for(w, opts);
  const std::size_t fft_size = next_pow2(fr.win);
  const auto bank = mel_bank(opts, w.sample_rate_hz, fft_size);
  const auto window = hamming(fr.win);
  PowerSpectrum spectrum(fft_size);

  FeatureMatrix out(fr.frames, opts.n_mels, kind, opts.shift_ms);
  std::vector<double> frame(fr.win);
  for (std::size_t t = 0; t < fr.frames; ++t) {
    const double* x = w.samples.data() + t * fr.shift;
    for (std::size_t i = fr.win; i-- > 0;) {
      const double prev = i > 0 ? x[i - 1] : x[0];
      frame[i] = (x[i] - opts.preemphasis * prev) * window[i];
    }
    const auto& power = spectrum(frame);
    for (std::size_t m = 0; m < opts.n_mels; ++m) {
      double e = 0.0;
      for (const auto& [k, wgt] : bank[m]) e += wgt * power[k];
      out.at(t, m) = std::log(std::max(e, kLogFloor));
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::fbank80: return "fbank80";
    case FeatureKind::fbank80_pitch3: return "fbank80_pitch3";
    case FeatureKind::mfcc40_hires: return "mfcc40_hires";
    case FeatureKind::pitch3: return "pitch3";
    case FeatureKind::generic: return "generic";
  }
  return "generic";
}

FeatureKind parse_feature_kind(const std::string& name) {
  if (name == "fbank" || name == "fbank80") return FeatureKind::fbank80;
  if (name == "fbank_pitch" || name == "fbank+pitch" || name == "fbank80_pitch3") return FeatureKind::fbank80_pitch3;
  if (name == "mfcc_hires" || name == "hires" || name == "mfcc40_hires") return FeatureKind::mfcc40_hires;
  if (name == "pitch" || name == "pitch3") return FeatureKind::pitch3;
  throw std::invalid_argument("unknown feature kind: " + name);
}

std::size_t feature_kind_dim(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::fbank80: return 80;
    case FeatureKind::fbank80_pitch3: return 83;
    case FeatureKind::mfcc40_hires: return 40;
    case FeatureKind::pitch3: return 3;
    case FeatureKind::generic: return 0;
  }
  return 0;
}

FeatureKind kind_for_dim(std::size_t dim) {
  switch (dim) {
    case 80: return FeatureKind::fbank80;
    case 83: return FeatureKind::fbank80_pitch3;
    case 40: return FeatureKind::mfcc40_hires;
    case 3: return FeatureKind::pitch3;
    default: return FeatureKind::generic;
  }
}

FeatureMatrix::FeatureMatrix(std::size_t frames, std::size_t width, FeatureKind k, double shift_ms)
    : num_frames(frames), dim(width), values(frames * width, 0.0), frame_shift_ms(shift_ms), kind(k) {}

void FeatureMatrix::validate() const {
  if (num_frames < 1) throw std::invalid_argument("feature matrix has no frames");
  if (values.size() != num_frames * dim) throw std::invalid_argument("feature matrix layout mismatch");
  const std::size_t expect = feature_kind_dim(kind);
  if (expect != 0 && expect != dim) {
    throw std::invalid_argument("feature width " + std::to_string(dim) + " does not match kind " + to_string(kind));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite feature value");
  }
}

Tensor FeatureMatrix::to_tensor() const { return Tensor::from({num_frames, dim}, values); }

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::size_t num_frames_for(std::size_t num_samples, int sample_rate_hz, double win_ms, double shift_ms) {
  const auto win = static_cast<std::size_t>(std::lround(win_ms * sample_rate_hz / 1000.0));
  const auto shift = static_cast<std::size_t>(std::lround(shift_ms * sample_rate_hz / 1000.0));
  if (num_samples < win) return 0;
  return 1 + (num_samples - win) / shift;
}

std::vector<double> mel_center_frequencies(const FbankOptions& opts, int sample_rate_hz) {
  const double nyquist = sample_rate_hz / 2.0;
  const double high = opts.high_hz > 0.0 ? std::min(opts.high_hz, nyquist) : nyquist;
  const double mel_lo = hz_to_mel(opts.low_hz), mel_hi = hz_to_mel(high);
  std::vector<double> c(opts.n_mels);
  for (std::size_t m = 0; m < opts.n_mels; ++m) {
    c[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(m + 1) / static_cast<double>(opts.n_mels + 1));
  }
  return c;
}

FeatureMatrix compute_fbank(const Waveform& w, const FbankOptions& opts) {
  return log_mel(w, opts, opts.n_mels == 80 ? FeatureKind::fbank80 : FeatureKind::generic);
}

FeatureMatrix compute_mfcc_hires(const Waveform& w, const FbankOptions& opts) {
  FbankOptions o = opts;
  o.n_mels = 40;
  const FeatureMatrix mel = log_mel(w, o, FeatureKind::generic);
  const std::size_t M = 40;
  FeatureMatrix out(mel.num_frames, M, FeatureKind::mfcc40_hires, o.shift_ms);
  const double pi = std::numbers::pi;
  for (std::size_t t = 0; t < mel.num_frames; ++t) {
    for (std::size_t k = 0; k < M; ++k) {
      double acc = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        acc += mel.at(t, m) * std::cos(pi * static_cast<double>(k) * (static_cast<double>(m) + 0.5) / M);
      }
      out.at(t, k) = acc * std::sqrt((k == 0 ? 1.0 : 2.0) / M);
    }
  }
  return out;
}

FeatureMatrix compute_pitch(const Waveform& w, const FbankOptions& opts) {
  const Framing fr = framing_for(w, opts);
  const double rate = w.sample_rate_hz;
  const auto lag_min = static_cast<std::size_t>(std::floor(rate / 400.0));
  const auto lag_max = std::min(static_cast<std::size_t>(std::ceil(rate / 60.0)), fr.win - 2);

  FeatureMatrix out(fr.frames, 3, FeatureKind::pitch3, opts.shift_ms);
  std::vector<double> x(fr.win), r(lag_max + 2, 0.0);
  std::vector<double> log_f0(fr.frames);
  for (std::size_t t = 0; t < fr.frames; ++t) {
    const double* s = w.samples.data() + t * fr.shift;
    const double mu = std::accumulate(s, s + fr.win, 0.0) / static_cast<double>(fr.win);
    for (std::size_t i = 0; i < fr.win; ++i) x[i] = s[i] - mu;

    double best_r = 0.0;
    for (std::size_t lag = lag_min; lag <= lag_max + 1 && lag < fr.win; ++lag) {
      double xy = 0.0, xx = 0.0, yy = 0.0;
      for (std::size_t n = 0; n + lag < fr.win; ++n) {
        xy += x[n] * x[n + lag];
        xx += x[n] * x[n];
        yy += x[n + lag] * x[n + lag];
      }
      r[lag] = (xx > 0.0 && yy > 0.0) ? xy / std::sqrt(xx * yy) : 0.0;
      if (lag <= lag_max) best_r = std::max(best_r, r[lag]);
    }
    // First local peak within 90% of the global maximum avoids octave errors.
    std::size_t chosen = 0;
    for (std::size_t lag = lag_min + 1; lag <= lag_max; ++lag) {
      if (r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1] && r[lag] >= 0.9 * best_r && r[lag] > 0.0) {
        chosen = lag;
        break;
      }
    }
    double lag_est = static_cast<double>(lag_max);
    double voicing = 0.0;
    if (chosen != 0) {
      const double a = r[chosen - 1], b = r[chosen], c = r[chosen + 1];
      const double denom = a - 2.0 * b + c;
      const double offset = denom < 0.0 ? 0.5 * (a - c) / denom : 0.0;
      lag_est = static_cast<double>(chosen) + std::clamp(offset, -0.5, 0.5);
      voicing = std::clamp(b, 0.0, 1.0);
    }
    out.at(t, 0) = voicing;
    log_f0[t] = std::log(rate / lag_est);
    out.at(t, 1) = log_f0[t];
  }
  for (std::size_t t = 0; t < fr.frames; ++t) {
    const std::size_t lo = t > 0 ? t - 1 : t;
    const std::size_t hi = t + 1 < fr.frames ? t + 1 : t;
    out.at(t, 2) = (log_f0[hi] - log_f0[lo]) / 2.0;
  }
  return out;
}

FeatureMatrix concat_features(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (b.dim == 0) return a;
  if (a.dim == 0) return b;
  if (a.num_frames != b.num_frames) {
    throw std::invalid_argument("concat_features: frame counts differ (" + std::to_string(a.num_frames) +
                                " vs " + std::to_string(b.num_frames) + ")");
  }
  FeatureKind kind = FeatureKind::generic;
  if (a.kind == FeatureKind::fbank80 && b.kind == FeatureKind::pitch3) kind = FeatureKind::fbank80_pitch3;
  FeatureMatrix out(a.num_frames, a.dim + b.dim, kind, a.frame_shift_ms);
  for (std::size_t t = 0; t < a.num_frames; ++t) {
    std::copy_n(a.values.begin() + static_cast<std::ptrdiff_t>(t * a.dim), a.dim,
                out.values.begin() + static_cast<std::ptrdiff_t>(t * out.dim));
    std::copy_n(b.values.begin() + static_cast<std::ptrdiff_t>(t * b.dim), b.dim,
                out.values.begin() + static_cast<std::ptrdiff_t>(t * out.dim + a.dim));
  }
  return out;
}

FeatureMatrix compute_features(const Waveform& w, FeatureKind kind) {
  switch (kind) {
    case FeatureKind::fbank80: return compute_fbank(w);
    case FeatureKind::fbank80_pitch3: return concat_features(compute_fbank(w), compute_pitch(w));
    case FeatureKind::mfcc40_hires: return compute_mfcc_hires(w);
    case FeatureKind::pitch3: return compute_pitch(w);
    case FeatureKind::generic: break;
  }
  throw std::invalid_argument("cannot extract generic features from audio");
}

FeatureMatrix cmvn(const FeatureMatrix& f) {
  if (f.num_frames < 2) throw std::invalid_argument("cmvn needs at least two frames");
  FeatureMatrix out = f;
  const double n = static_cast<double>(f.num_frames);
  for (std::size_t d = 0; d < f.dim; ++d) {
    double mu = 0.0;
    for (std::size_t t = 0; t < f.num_frames; ++t) mu += f.at(t, d);
    mu /= n;
    double var = 0.0;
    for (std::size_t t = 0; t < f.num_frames; ++t) var += (f.at(t, d) - mu) * (f.at(t, d) - mu);
    var = std::max(var / n, 1e-8);
    const double inv = 1.0 / std::sqrt(var);
    for (std::size_t t = 0; t < f.num_frames; ++t) out.at(t, d) = (f.at(t, d) - mu) * inv;
  }
  return out;
}

SpecAugmentResult apply_specaugment_with_masks(const FeatureMatrix& f, const SpecAugmentPolicy& policy,
                                               Rng& rng) {
  if (policy.num_freq_masks > 0 && policy.max_freq_width >= f.dim && policy.max_freq_width > 0) {
    throw std::invalid_argument("SpecAugment frequency width must be below the feature dimension");
  }
  if (policy.num_time_masks > 0 && policy.max_time_width >= f.num_frames && policy.max_time_width > 0) {
    throw std::invalid_argument("SpecAugment time width must be below the frame count");
  }
  SpecAugmentResult res{f, {}, {}};
  const double fill = policy.mask_value == MaskValue::zero
                          ? 0.0
                          : std::accumulate(f.values.begin(), f.values.end(), 0.0) /
                                static_cast<double>(std::max<std::size_t>(f.values.size(), 1));
  for (std::size_t i = 0; i < policy.num_freq_masks; ++i) {
    const auto width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(policy.max_freq_width)));
    const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(f.dim - width)));
    res.freq_bands.push_back({start, width});
    for (std::size_t t = 0; t < f.num_frames; ++t)
      for (std::size_t d = start; d < start + width; ++d) res.features.at(t, d) = fill;
  }
  for (std::size_t i = 0; i < policy.num_time_masks; ++i) {
    const auto width = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(policy.max_time_width)));
    const auto start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(f.num_frames - width)));
    res.time_bands.push_back({start, width});
    for (std::size_t t = start; t < start + width; ++t)
      for (std::size_t d = 0; d < f.dim; ++d) res.features.at(t, d) = fill;
  }
  return res;
}

FeatureMatrix apply_specaugment(const FeatureMatrix& f, const SpecAugmentPolicy& policy, Rng& rng) {
  return apply_specaugment_with_masks(f, policy, rng).features;
}

// ---------------------------------------------------------------------------
// WAV

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open audio file " + path.string());
  io::expect_magic(is, "RIFF");
  (void)io::get_u32(is);
  io::expect_magic(is, "WAVE");
  Waveform w;
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  while (is) {
    char id[4];
    if (!is.read(id, 4)) break;
    const std::uint32_t size = io::get_u32(is);
    const std::string chunk(id, 4);
    if (chunk == "fmt ") {
      const auto format = io::get_le<std::uint16_t>(is);
      channels = io::get_le<std::uint16_t>(is);
      w.sample_rate_hz = static_cast<int>(io::get_u32(is));
      (void)io::get_u32(is);
      (void)io::get_le<std::uint16_t>(is);
      bits = io::get_le<std::uint16_t>(is);
      if (size > 16) is.ignore(size - 16);
      if (format != 1) throw io::FormatError(path.string() + ": only PCM WAV is supported");
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) throw io::FormatError(path.string() + ": data chunk before fmt chunk");
      if (channels != 1 || bits != 16) throw io::FormatError(path.string() + ": expected mono 16-bit PCM");
      if (w.sample_rate_hz != 8000 && w.sample_rate_hz != 16000) {
        throw io::FormatError(path.string() + ": sample rate must be 8 or 16 kHz");
      }
      w.samples.resize(size / 2);
      for (double& s : w.samples) s = static_cast<std::int16_t>(io::get_le<std::uint16_t>(is)) / 32768.0;
      if (w.samples.empty()) throw io::FormatError(path.string() + ": no samples");
      return w;
    } else {
      is.ignore(size + (size & 1));
    }
  }
  throw io::FormatError(path.string() + ": missing data chunk");
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  os.write("RIFF", 4);
  io::put_u32(os, 36 + 2 * n);
  os.write("WAVEfmt ", 8);
  io::put_u32(os, 16);
  io::put_le<std::uint16_t>(os, 1);
  io::put_le<std::uint16_t>(os, 1);
  io::put_u32(os, static_cast<std::uint32_t>(w.sample_rate_hz));
  io::put_u32(os, static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  io::put_le<std::uint16_t>(os, 2);
  io::put_le<std::uint16_t>(os, 16);
  os.write("data", 4);
  io::put_u32(os, 2 * n);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    io::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
  }
}

// ---------------------------------------------------------------------------
// FEAT

void write_feat(std::ostream& os, const FeatureMatrix& f) {
  os.write("FEAT", 4);
  io::put_u32(os, static_cast<std::uint32_t>(f.num_frames));
  io::put_u32(os, static_cast<std::uint32_t>(f.dim));
  for (double v : f.values) io::put_f32(os, static_cast<float>(v));
}

FeatureMatrix read_feat(std::istream& is) {
  io::expect_magic(is, "FEAT");
  const std::size_t T = io::get_u32(is), D = io::get_u32(is);
  FeatureMatrix f(T, D, kind_for_dim(D));
  for (double& v : f.values) v = io::get_f32(is);
  return f;
}

void write_feat(const std::filesystem::path& path, const FeatureMatrix& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_feat(os, f);
}

FeatureMatrix read_feat(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open feature file " + path.string());
  return read_feat(is);
}

}  // namespace trnk
