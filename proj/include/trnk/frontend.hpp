// Copyright 2026 The trnk Authors
// SPDX-License-Identifier: Apache-2.0

// Acoustic front end: log-Mel filterbanks, a 3-dim pitch track, hires MFCC,
// mean/variance normalisation and SpecAugment masking, plus the WAV and FEAT
// file formats.

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trnk/numerics.hpp"

namespace trnk {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate_hz = 16000;
};

enum class FeatureKind { fbank80, fbank80_pitch3, mfcc40_hires, pitch3, generic };

std::string to_string(FeatureKind kind);
/// Accepts "fbank", "fbank_pitch", "mfcc_hires" and the enum spellings.
FeatureKind parse_feature_kind(const std::string& name);
/// Expected column count, or 0 for `generic` (any declared width).
std::size_t feature_kind_dim(FeatureKind kind);

/// T x D frame-major matrix of acoustic features.
struct FeatureMatrix {
  std::size_t num_frames = 0;
  std::size_t dim = 0;
  std::vector<double> values;  // num_frames * dim, row-major
  double frame_shift_ms = 10.0;
  FeatureKind kind = FeatureKind::generic;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t frames, std::size_t width, FeatureKind k = FeatureKind::generic,
                double shift_ms = 10.0);

  double& at(std::size_t t, std::size_t d) { return values[t * dim + d]; }
  double at(std::size_t t, std::size_t d) const { return values[t * dim + d]; }
  std::span<const double> row(std::size_t t) const { return {values.data() + t * dim, dim}; }
  /// Throws if the layout or kind invariants do not hold.
  void validate() const;
  Tensor to_tensor() const;
};

struct FbankOptions {
  std::size_t n_mels = 80;
  double win_ms = 25.0;
  double shift_ms = 10.0;
  double preemphasis = 0.97;
  double low_hz = 20.0;
  double high_hz = 0.0;  // 0 means Nyquist
};

inline constexpr double kLogFloor = 1e-10;

std::size_t num_frames_for(std::size_t num_samples, int sample_rate_hz, double win_ms, double shift_ms);
/// Centre frequencies (Hz) of the triangular filters, ascending.
std::vector<double> mel_center_frequencies(const FbankOptions& opts, int sample_rate_hz);
double hz_to_mel(double hz);
double mel_to_hz(double mel);

FeatureMatrix compute_fbank(const Waveform& w, const FbankOptions& opts = {});
/// (voicing confidence, log f0, delta log f0) per frame; same framing as fbank.
FeatureMatrix compute_pitch(const Waveform& w, const FbankOptions& opts = {});
/// 40 cepstra from 40 mel log-energies via an orthonormal DCT-II.
FeatureMatrix compute_mfcc_hires(const Waveform& w, const FbankOptions& opts = {});
/// Columns of a first. A zero-width operand is neutral.
FeatureMatrix concat_features(const FeatureMatrix& a, const FeatureMatrix& b);
FeatureMatrix compute_features(const Waveform& w, FeatureKind kind);
FeatureMatrix cmvn(const FeatureMatrix& f);

enum class MaskValue { zero, utterance_mean };

struct SpecAugmentPolicy {
  std::size_t num_freq_masks = 2;
  std::size_t max_freq_width = 10;
  std::size_t num_time_masks = 2;
  std::size_t max_time_width = 20;
  MaskValue mask_value = MaskValue::zero;
};

struct MaskBand {
  std::size_t start = 0;
  std::size_t width = 0;
};

struct SpecAugmentResult {
  FeatureMatrix features;
  std::vector<MaskBand> freq_bands;
  std::vector<MaskBand> time_bands;
};

/// Each mask draws a width uniformly in [0, max] and a uniform start.
/// Requires max widths below the corresponding axis extent (unless no mask of
/// that kind is requested).
SpecAugmentResult apply_specaugment_with_masks(const FeatureMatrix& f, const SpecAugmentPolicy& policy,
                                               Rng& rng);
FeatureMatrix apply_specaugment(const FeatureMatrix& f, const SpecAugmentPolicy& policy, Rng& rng);

// File formats --------------------------------------------------------------

/// RIFF/WAVE, PCM 16-bit little-endian, mono, 8 or 16 kHz.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& w);

/// "FEAT" magic, u32 T, u32 D, T*D little-endian f32 values.
void write_feat(std::ostream& os, const FeatureMatrix& f);
FeatureMatrix read_feat(std::istream& is);
void write_feat(const std::filesystem::path& path, const FeatureMatrix& f);
FeatureMatrix read_feat(const std::filesystem::path& path);
/// Kind implied by a stored width (80, 83, 40, 3, otherwise generic).
FeatureKind kind_for_dim(std::size_t dim);

}  // namespace trnk
