#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "echolocate/acoustics.hpp"
#include "echolocate/fft.hpp"

namespace echolocate {

struct FeatureConfig {
    double f_s = 16000.0;
    int win = 512;   // power of two
    int hop = 256;
    int n_mels = 64;
    double log_floor = 1e-10;
    double f_min = 0.0;
    double f_max = 8000.0;  // f_s / 2

    void validate() const {
        if (win < 2 || (win & (win - 1)) != 0)
            throw std::invalid_argument("win must be a power of two >= 2");
        if (hop < 1 || hop > win) throw std::invalid_argument("hop must be in [1, win]");
        if (n_mels < 1) throw std::invalid_argument("n_mels must be >= 1");
        if (log_floor <= 0) throw std::invalid_argument("log_floor must be positive");
        if (f_s <= 0) throw std::invalid_argument("f_s must be positive");
        if (!(f_min >= 0 && f_min < f_max && f_max <= f_s / 2 + 1e-9))
            throw std::invalid_argument("mel range must satisfy 0 <= f_min < f_max <= f_s/2");
    }
};

// K x n_mels x frames, channel-major then mel-major.
struct FeatureMap {
    int channels = 0;
    int mels = 0;
    int frames = 0;
    std::vector<float> data;

    float& at(int c, int m, int t) {
        return data[(size_t(c) * mels + m) * frames + t];
    }
    float at(int c, int m, int t) const {
        return data[(size_t(c) * mels + m) * frames + t];
    }
    size_t size() const { return data.size(); }
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular, peak-normalized filterbank sampled on the rfft bin grid.
// weights[b * n_bins + k].
inline std::vector<double> mel_filterbank(const FeatureConfig& cfg) {
    int n_bins = cfg.win / 2 + 1;
    std::vector<double> edges(size_t(cfg.n_mels) + 2);
    double m_lo = hz_to_mel(cfg.f_min), m_hi = hz_to_mel(cfg.f_max);
    for (int i = 0; i < cfg.n_mels + 2; ++i)
        edges[size_t(i)] = mel_to_hz(m_lo + (m_hi - m_lo) * double(i) / double(cfg.n_mels + 1));
    std::vector<double> w(size_t(cfg.n_mels) * n_bins, 0.0);
    for (int b = 0; b < cfg.n_mels; ++b) {
        double lo = edges[size_t(b)], mid = edges[size_t(b) + 1], hi = edges[size_t(b) + 2];
        double peak = 0.0;
        for (int k = 0; k < n_bins; ++k) {
            double f = double(k) * cfg.f_s / double(cfg.win);
            double v = 0.0;
            if (f > lo && f < hi) v = (f <= mid) ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
            w[size_t(b) * n_bins + k] = v;
            peak = std::max(peak, v);
        }
        if (peak > 0.0)
            for (int k = 0; k < n_bins; ++k) w[size_t(b) * n_bins + k] /= peak;
    }
    return w;
}

// Hann-windowed frames -> power spectrum -> mel filterbank -> log10 with floor.
inline FeatureMap logmel(const Observation& wave, const FeatureConfig& cfg) {
    cfg.validate();
    if (wave.samples < cfg.win)
        throw std::invalid_argument("logmel: input shorter than the analysis window");
    int frames = 1 + (wave.samples - cfg.win) / cfg.hop;
    int n_bins = cfg.win / 2 + 1;
    FeatureMap fm;
    fm.channels = wave.channels;
    fm.mels = cfg.n_mels;
    fm.frames = frames;
    fm.data.assign(size_t(wave.channels) * cfg.n_mels * frames, 0.0f);

    static thread_local std::vector<double> fb;
    static thread_local FeatureConfig fb_cfg;
    if (fb.empty() || fb_cfg.win != cfg.win || fb_cfg.n_mels != cfg.n_mels ||
        fb_cfg.f_s != cfg.f_s || fb_cfg.f_min != cfg.f_min || fb_cfg.f_max != cfg.f_max) {
        fb = mel_filterbank(cfg);
        fb_cfg = cfg;
    }
    std::vector<float> frame(size_t(cfg.win));
    std::vector<double> hann(size_t(cfg.win));
    for (int i = 0; i < cfg.win; ++i)
        hann[size_t(i)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * double(i) / double(cfg.win - 1)));
    std::vector<double> power;
    for (int ch = 0; ch < wave.channels; ++ch) {
        const float* x = wave.channel(ch);
        for (int t = 0; t < frames; ++t) {
            const float* seg = x + size_t(t) * cfg.hop;
            for (int i = 0; i < cfg.win; ++i) frame[size_t(i)] = float(seg[i] * hann[size_t(i)]);
            real_power_spectrum(frame.data(), size_t(cfg.win), power);
            for (int b = 0; b < cfg.n_mels; ++b) {
                const double* wrow = fb.data() + size_t(b) * n_bins;
                double acc = 0.0;
                for (int k = 0; k < n_bins; ++k) acc += wrow[k] * power[size_t(k)];
                fm.at(ch, b, t) = float(std::log10(std::max(acc, cfg.log_floor)));
            }
        }
    }
    return fm;
}

}  // namespace echolocate
