#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "echolocate/common.hpp"
#include "echolocate/fft.hpp"
#include "echolocate/geometry.hpp"
#include "echolocate/wav.hpp"

namespace echolocate {

struct AcousticParams {
    double c = 343.0;       // speed of sound, m/s
    int max_order = 0;      // reflection order; 0 = anechoic
    double f_s = 16000.0;
    int frac_delay_len = 81;  // taps of the windowed-sinc fractional delay, odd

    void validate() const {
        if (c <= 0) throw std::invalid_argument("speed of sound must be positive");
        if (max_order < 0) throw std::invalid_argument("max_order must be >= 0");
        if (f_s <= 0) throw std::invalid_argument("f_s must be positive");
        if (frac_delay_len < 1 || frac_delay_len % 2 == 0)
            throw std::invalid_argument("frac_delay_len must be odd and positive");
    }
};

struct SourceSignal {
    int id = 0;
    std::vector<float> samples;  // mono at f_s
    bool loop = true;            // tile to the clip length each step
};

struct ImageSource {
    Vec3 position;
    double reflection_gain = 1.0;  // product of per-wall reflection coefficients
};

// Per-mic tap sequence at f_s.
using ImpulseResponse = std::vector<float>;

// Mirror-image construction for a shoebox room. Images whose accumulated
// reflection gain is zero (fully absorbing wall) are dropped.
inline std::vector<ImageSource> enumerate_image_sources(const RoomSpec& room,
                                                        const Vec3& src,
                                                        int max_order) {
    room.validate();
    if (!room.strictly_contains(src))
        throw std::invalid_argument("source must lie strictly inside the room");
    if (max_order < 0) throw std::invalid_argument("max_order must be >= 0");

    // beta = sqrt(1 - energy absorption) per wall
    double beta[6];
    for (int i = 0; i < 6; ++i) beta[i] = std::sqrt(1.0 - room.wall_absorption[i]);

    const double L[3] = {room.dims.x, room.dims.y, room.dims.z};
    const double s[3] = {src.x, src.y, src.z};

    struct AxisImage {
        double pos;
        int count;    // reflections along this axis
        double gain;  // beta_lo^{|n-q|} * beta_hi^{|n|}
    };
    std::vector<AxisImage> axis[3];
    for (int ax = 0; ax < 3; ++ax) {
        for (int n = -max_order - 1; n <= max_order + 1; ++n) {
            for (int q = 0; q <= 1; ++q) {
                int count = std::abs(n - q) + std::abs(n);
                if (count > max_order) continue;
                double pos = (1 - 2 * q) * s[ax] + 2.0 * n * L[ax];
                double gain = std::pow(beta[2 * ax], std::abs(n - q)) *
                              std::pow(beta[2 * ax + 1], std::abs(n));
                axis[ax].push_back({pos, count, gain});
            }
        }
    }
    std::vector<ImageSource> out;
    for (const auto& ix : axis[0])
        for (const auto& iy : axis[1])
            for (const auto& iz : axis[2]) {
                int total = ix.count + iy.count + iz.count;
                if (total > max_order) continue;
                double gain = ix.gain * iy.gain * iz.gain;
                if (gain <= 0.0) continue;
                out.push_back({{ix.pos, iy.pos, iz.pos}, gain});
            }
    return out;
}

namespace detail {

// Hann-windowed sinc centered at fractional position t0, support
// [t0 - half, t0 + half].
inline double sinc_tap(double x, int half) {
    double w = 0.5 * (1.0 + std::cos(M_PI * x / double(half + 1)));
    if (x == 0.0) return w;
    return w * std::sin(M_PI * x) / (M_PI * x);
}

}  // namespace detail

// Sum of fractionally delayed, 1/d-attenuated taps over all images, for one mic.
inline ImpulseResponse render_rir(const std::vector<ImageSource>& images, const Vec3& mic,
                                  const AcousticParams& params) {
    params.validate();
    if (images.empty()) throw std::invalid_argument("render_rir: no image sources");
    int half = params.frac_delay_len / 2;
    double max_delay = 0;
    for (const auto& im : images) {
        double d = distance(im.position, mic);
        if (d <= 0.0)
            throw std::runtime_error("render_rir: degenerate geometry (mic on image)");
        max_delay = std::max(max_delay, d * params.f_s / params.c);
    }
    ImpulseResponse h(size_t(std::ceil(max_delay)) + half + 1, 0.0f);
    for (const auto& im : images) {
        double d = distance(im.position, mic);
        double t0 = d * params.f_s / params.c;
        double amp = im.reflection_gain / d;
        int lo = std::max(0, int(std::ceil(t0 - half)));
        int hi = std::min(int(h.size()) - 1, int(std::floor(t0 + half)));
        for (int n = lo; n <= hi; ++n)
            h[size_t(n)] += float(amp * detail::sinc_tap(double(n) - t0, half));
    }
    return h;
}

// Deterministic band-limited (200 Hz - 6 kHz) pseudo-noise burst for a signal
// id; used when no WAV is substituted.
inline SourceSignal make_default_signal(int id, double f_s, double seconds = 1.0,
                                        double f_lo = 200.0, double f_hi = 6000.0) {
    size_t n = size_t(std::lround(seconds * f_s));
    size_t m = next_pow2(std::max<size_t>(n, 2));
    std::vector<std::complex<double>> spec(m, {0.0, 0.0});
    Rng rng(mix_seed(0x51674a11u, uint64_t(id)));
    size_t k_lo = size_t(std::ceil(f_lo * double(m) / f_s));
    size_t k_hi = std::min(m / 2 - 1, size_t(std::floor(f_hi * double(m) / f_s)));
    for (size_t k = k_lo; k <= k_hi; ++k) {
        double phase = rng.uniform(0.0, 2.0 * M_PI);
        spec[k] = std::polar(1.0, phase);
        spec[m - k] = std::conj(spec[k]);
    }
    fft_inplace(spec, /*inverse=*/true);
    SourceSignal sig;
    sig.id = id;
    sig.samples.resize(n);
    double peak = 0;
    for (size_t i = 0; i < n; ++i) peak = std::max(peak, std::abs(spec[i].real()));
    double scale = peak > 0 ? 0.9 / peak : 0.0;
    for (size_t i = 0; i < n; ++i) sig.samples[i] = float(spec[i].real() * scale);
    return sig;
}

// Lazily built map from signal id to waveform. WAV files may be registered to
// replace the default pseudo-noise bursts.
class SignalBank {
public:
    explicit SignalBank(double f_s = 16000.0) : f_s_(f_s) {}

    const SourceSignal& get(int id) const {
        auto it = signals_.find(id);
        if (it == signals_.end()) {
            auto sig = make_default_signal(id, f_s_);
            it = signals_.emplace(id, std::move(sig)).first;
        }
        return it->second;
    }

    void register_wav(int id, const std::string& path) {
        AudioClip clip = read_wav(path);
        if (clip.channels != 1) throw std::runtime_error("signal bank expects mono WAV");
        if (clip.sample_rate != int(f_s_))
            throw std::runtime_error("signal WAV sample rate does not match f_s");
        if (clip.samples.empty()) throw std::runtime_error("signal WAV is empty");
        SourceSignal sig;
        sig.id = id;
        sig.samples = clip.samples;
        signals_[id] = std::move(sig);
    }

    double sample_rate() const { return f_s_; }

private:
    double f_s_;
    mutable std::map<int, SourceSignal> signals_;
};

// K-channel waveform for one step; channel-major storage.
struct Observation {
    int channels = 0;
    int samples = 0;
    std::vector<float> data;  // data[ch * samples + i]

    float* channel(int ch) { return data.data() + size_t(ch) * samples; }
    const float* channel(int ch) const { return data.data() + size_t(ch) * samples; }
};

namespace detail {

// out[i] += sum over the image's sinc taps of amp * tap * sig[i - n]. Iterates
// taps only, so anechoic scenes stay cheap.
inline void add_delayed_signal(float* out, int n_out, const std::vector<float>& sig,
                               double t0, double amp, int half) {
    int lo = std::max(0, int(std::ceil(t0 - half)));
    int hi = int(std::floor(t0 + half));
    int n_sig = int(sig.size());
    for (int n = lo; n <= hi; ++n) {
        float tap = float(amp * sinc_tap(double(n) - t0, half));
        if (tap == 0.0f) continue;
        int i0 = n;
        int i1 = std::min(n_out, n + n_sig);
        const float* s = sig.data() - n;
        for (int i = i0; i < i1; ++i) out[i] += tap * s[i];
    }
}

}  // namespace detail

// Per mic: sum over active sources of (signal convolved with the RIR at the
// current pose), truncated to clip_seconds * f_s samples. This re-synthesises
// the full clip from scratch at every pose.
inline Observation render_observation(const RoomSpec& room,
                                      const std::vector<SourceSpec>& active_sources,
                                      const AgentPose& agent, const MicArraySpec& mics,
                                      const SignalBank& bank, const AcousticParams& params,
                                      double clip_seconds) {
    params.validate();
    Observation obs;
    obs.channels = mics.channels();
    obs.samples = int(std::lround(clip_seconds * params.f_s));
    obs.data.assign(size_t(obs.channels) * obs.samples, 0.0f);
    int half = params.frac_delay_len / 2;
    for (const auto& src : active_sources) {
        auto images = enumerate_image_sources(room, src.position, params.max_order);
        const SourceSignal& raw = bank.get(src.signal_id);
        // tile or truncate the source signal to the clip length
        std::vector<float> sig(size_t(obs.samples), 0.0f);
        if (raw.loop) {
            for (int i = 0; i < obs.samples; ++i)
                sig[size_t(i)] = raw.samples[size_t(i) % raw.samples.size()];
        } else {
            int n = std::min<int>(obs.samples, int(raw.samples.size()));
            std::copy(raw.samples.begin(), raw.samples.begin() + n, sig.begin());
        }
        for (int ch = 0; ch < obs.channels; ++ch) {
            Vec3 mic = agent.centre + mics.offsets[size_t(ch)];
            float* out = obs.channel(ch);
            for (const auto& im : images) {
                double d = distance(im.position, mic);
                if (d <= 0.0)
                    throw std::runtime_error(
                        "render_observation: degenerate geometry (mic on image)");
                double t0 = d * params.f_s / params.c;
                detail::add_delayed_signal(out, obs.samples, sig, t0,
                                           im.reflection_gain / d, half);
            }
        }
    }
    return obs;
}

}  // namespace echolocate
